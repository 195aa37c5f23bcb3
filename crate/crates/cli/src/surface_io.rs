//! Surface and image files handled by the command line.
//!
//! HDMS surface: `"HDMS"`, version `u32`, grid side `G` as `u32`, then
//! `G * G * 3` little-endian `f32` coordinates in row-major grid order.
//! Input images are binary PPM (`P6`, maxval 255) or headerless RGB8.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::CliError;

pub const SURFACE_MAGIC: &[u8; 4] = b"HDMS";
pub const SURFACE_VERSION: u32 = 1;
pub const SURFACE_HEADER_BYTES: usize = 12;

pub fn encode_surface(grid_side: usize, coords: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SURFACE_HEADER_BYTES + coords.len() * 4);
    out.extend_from_slice(SURFACE_MAGIC);
    out.extend_from_slice(&SURFACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid_side as u32).to_le_bytes());
    for &c in coords {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    out
}

#[cfg(test)]
pub fn decode_surface(bytes: &[u8]) -> Result<(usize, Vec<f32>), String> {
    if bytes.len() < SURFACE_HEADER_BYTES || &bytes[..4] != SURFACE_MAGIC {
        return Err("not an HDMS surface file".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
    if word(4) != SURFACE_VERSION {
        return Err(format!("unsupported HDMS version {}", word(4)));
    }
    let g = word(8) as usize;
    let body = &bytes[SURFACE_HEADER_BYTES..];
    if body.len() != g * g * 3 * 4 {
        return Err(format!("HDMS body holds {} bytes, grid {g} needs {}", body.len(), g * g * 12));
    }
    Ok((g, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()))
}

/// Wavefront OBJ: one vertex per grid node, two triangles per grid cell.
pub fn surface_obj(grid_side: usize, coords: &[f64]) -> String {
    let g = grid_side;
    let mut out = format!("# {g}x{g} surface grid\n");
    for p in coords.chunks_exact(3) {
        writeln!(out, "v {} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for i in 0..g - 1 {
        for j in 0..g - 1 {
            // OBJ indices are 1-based
            let k = i * g + j + 1;
            writeln!(out, "f {} {} {}", k, k + 1, k + g).unwrap();
            writeln!(out, "f {} {} {}", k + g, k + 1, k + g + 1).unwrap();
        }
    }
    out
}

/// Binary PGM of a raster with values in `[0, 1]`.
pub fn raster_pgm(side: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads an RGB8 image of exactly `side x side` pixels.
pub fn read_image(path: &Path, side: usize) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (w, h, pixels) = if bytes.starts_with(b"P6") {
        parse_ppm(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else if bytes.len() == side * side * 3 {
        (side, side, bytes.as_slice())
    } else {
        return Err(CliError::Usage(format!(
            "{}: expected a P6 PPM or {} raw RGB bytes ({side}x{side}), found {} bytes",
            path.display(),
            side * side * 3,
            bytes.len()
        )));
    };
    if (w, h) != (side, side) {
        return Err(CliError::Usage(format!(
            "{}: image is {w}x{h}, the model expects {side}x{side}",
            path.display()
        )));
    }
    Ok(pixels.to_vec())
}

fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, &[u8]), String> {
    let mut fields = Vec::with_capacity(3);
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        fields.push(text.parse::<usize>().map_err(|_| "malformed PPM header".to_string())?);
    }
    // exactly one whitespace byte separates the header from the pixels
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(format!("PPM maxval {maxval} is not supported, only 255"));
    }
    let pixels = bytes.get(pos..).unwrap_or_default();
    if pixels.len() != w * h * 3 {
        return Err(format!("PPM holds {} pixel bytes, {w}x{h} needs {}", pixels.len(), w * h * 3));
    }
    Ok((w, h, pixels))
}

#[cfg(test)]
pub fn encode_ppm(side: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_round_trip_and_size() {
        let coords: Vec<f64> = (0..27).map(|k| k as f64 * 0.25 - 3.0).collect();
        let bytes = encode_surface(3, &coords);
        assert_eq!(bytes.len(), SURFACE_HEADER_BYTES + 3 * 3 * 3 * 4);
        let (g, back) = decode_surface(&bytes).unwrap();
        assert_eq!(g, 3);
        assert!(back.iter().zip(&coords).all(|(a, b)| *a as f64 == *b));
        assert!(decode_surface(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn obj_counts() {
        let obj = surface_obj(4, &vec![0.0; 48]);
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 16);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 18);
        assert!(obj.contains("f 1 2 5\nf 5 2 6\n"));
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let rgb: Vec<u8> = (0..12).collect();
        let mut ppm = b"P6\n# made by hand\n2 2\n255\n".to_vec();
        ppm.extend_from_slice(&rgb);
        assert_eq!(parse_ppm(&ppm).unwrap(), (2, 2, rgb.as_slice()));
        assert_eq!(parse_ppm(&encode_ppm(2, &rgb)).unwrap().2, rgb.as_slice());
        assert!(parse_ppm(b"P6\n2 2\n65535\n").is_err());
    }
}
