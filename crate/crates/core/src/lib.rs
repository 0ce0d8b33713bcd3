//! Reflectance-field toolkit for light-stage captures: rig geometry and
//! lighting weights, HDR image I/O, motion-compensated OLAT set assembly,
//! linear relighting, parameter-stream normalisation, image metrics and a
//! synthetic capture generator.

pub mod align;
pub mod geom;
pub mod imageio;
pub mod metrics;
pub mod normalize;
pub mod relight;
pub mod rig;
pub mod synth;

pub use geom::Vec3;
pub use imageio::{AlphaMatte, NormalMap, Plane, RadianceImage};
pub use relight::OlatSet;
pub use rig::{EnvironmentMap, LightRig, LightWeights};
