//! Affinity-map export: one 8-bit PGM per channel plus a lossless `TVTENSOR`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{write_tensor_file, Tensor};

/// Min-max normalises one `h x w` plane to 0..=255; constant planes map to 128.
pub fn to_gray8(plane: &[f64]) -> Vec<u8> {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![128; plane.len()];
    }
    plane
        .iter()
        .map(|&v| (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary (P5) greyscale PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 PGM written by [`encode_pgm`]; returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("not a binary 8-bit PGM".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(bad)?.to_vec();
    Ok((w, h, pixels))
}

/// Writes `<prefix>_ch<i>.pgm` for every channel and `<prefix>.tvt`.
/// Returns the written paths.
pub fn export_affinity(maps: &Tensor, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let (c, h, w) = maps.chw("affinity maps")?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(c + 1);
    for ch in 0..c {
        let plane = &maps.data()[ch * h * w..(ch + 1) * h * w];
        let path = dir.join(format!("{prefix}_ch{ch}.pgm"));
        fs::write(&path, encode_pgm(w, h, &to_gray8(plane))).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let raw = dir.join(format!("{prefix}.tvt"));
    write_tensor_file(maps, &raw)?;
    written.push(raw);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_is_mid_gray() {
        assert_eq!(to_gray8(&[1.0; 6]), vec![128; 6]);
    }

    #[test]
    fn ramp_spans_full_range() {
        assert_eq!(to_gray8(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn pgm_roundtrip() {
        let px = vec![0, 10, 200, 255, 7, 9];
        let enc = encode_pgm(3, 2, &px);
        assert!(enc.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_pgm(&enc).unwrap(), (3, 2, px));
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
