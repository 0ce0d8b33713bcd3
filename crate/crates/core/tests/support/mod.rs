//! Oracles shared by the integration and acceptance tests. They restate the
//! definitions directly and share no code with the library.

#![allow(dead_code)]

pub mod reference;
