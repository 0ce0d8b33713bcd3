use std::fs;
use std::path::Path;

use super::{checked_len, write_atomic, ImageError, Result};

/// Decoded PFM payload in top-to-bottom row order, samples untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Reads a `PF` (RGB) or `Pf` (grey) portable float map of either endianness.
pub fn read_pfm_raw(path: &Path) -> Result<RawPfm> {
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    parse_pfm(path, &bytes)
}

fn parse_pfm(path: &Path, bytes: &[u8]) -> Result<RawPfm> {
    // Header is three whitespace-terminated tokens groups: magic, "w h", scale.
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(ImageError::Truncated(path.to_path_buf()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let channels = match token(&mut pos)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(ImageError::malformed(path, format!("bad magic {other:?}"))),
    };
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::malformed(path, "bad width"))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::malformed(path, "bad height"))?;
    let scale: f32 = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::malformed(path, "bad scale"))?;
    if width == 0 || height == 0 {
        return Err(ImageError::malformed(path, "zero image dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImageError::malformed(path, "scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() {
        return Err(ImageError::Truncated(path.to_path_buf()));
    }
    pos += 1;

    let n = checked_len(width, height, channels)?;
    let payload = &bytes[pos..];
    if payload.len() < n * 4 {
        return Err(ImageError::Truncated(path.to_path_buf()));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0f32; n];
    for (file_row, chunk) in payload[..n * 4].chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        let dst = &mut data[y * row_len..(y + 1) * row_len];
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let b = [b[0], b[1], b[2], b[3]];
            *d = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(RawPfm {
        width,
        height,
        channels,
        data,
    })
}

pub(crate) fn encode_pfm(width: usize, height: usize, channels: usize, data: &[f32]) -> Vec<u8> {
    let magic = if channels == 1 { "Pf" } else { "PF" };
    let header = format!("{magic}\n{width} {height}\n-1.0\n");
    let row_len = width * channels;
    let mut out = Vec::with_capacity(header.len() + data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..height).rev() {
        for v in &data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes a little-endian PFM with `channels` of 1 or 3, top-to-bottom `data`.
pub fn write_pfm_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    assert!(channels == 1 || channels == 3);
    if checked_len(width, height, channels)? != data.len() {
        return Err(ImageError::LengthMismatch {
            width,
            height,
            channels,
            got: data.len(),
        });
    }
    write_atomic(path, &encode_pfm(width, height, channels, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{read_image, write_image, Encoding, RadianceImage};
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_pfm(2, 1, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(bytes.starts_with(b"PF\n2 1\n-1.0\n"));
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rows_are_stored_bottom_to_top() {
        let bytes = encode_pfm(1, 2, 1, &[7.0, 9.0]);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &9.0f32.to_le_bytes());
        assert_eq!(&body[4..], &7.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_files_are_read() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.25f32, 0.5, 2.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let raw = parse_pfm(Path::new("x.pfm"), &bytes).unwrap();
        assert_eq!(raw.data, vec![0.25, 0.5, 2.0]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let mut bytes = encode_pfm(4, 4, 3, &[0.5; 48]);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            parse_pfm(Path::new("t.pfm"), &bytes),
            Err(ImageError::Truncated(_))
        ));
        assert!(matches!(
            parse_pfm(Path::new("t.pfm"), b"PF\n4"),
            Err(ImageError::Truncated(_))
        ));
    }

    #[test]
    fn absurd_header_overflows_instead_of_allocating() {
        let bytes = format!("PF\n{} {}\n-1.0\n", usize::MAX, 2);
        assert!(matches!(
            parse_pfm(Path::new("o.pfm"), bytes.as_bytes()),
            Err(ImageError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn negative_samples_are_clamped_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.pfm");
        write_pfm_raw(&path, 2, 1, 3, &[-1.0, 0.5, 0.25, -0.5, 1.0, -2.0]).unwrap();
        let (img, clamped) = read_image(&path).unwrap();
        assert_eq!(clamped, 3);
        assert_eq!(img.data(), &[0.0, 0.5, 0.25, 0.0, 1.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn float_round_trip_is_bitwise(
            (w, h, data) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(0f32..1e6, w * h * 3))
            })
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.pfm");
            let img = RadianceImage::from_vec(w, h, data).unwrap();
            write_image(&path, &img, Encoding::Float).unwrap();
            let (back, clamped) = read_image(&path).unwrap();
            prop_assert_eq!(clamped, 0);
            prop_assert_eq!(back.dims(), img.dims());
            for (a, b) in back.data().iter().zip(img.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
