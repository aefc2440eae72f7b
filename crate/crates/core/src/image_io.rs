//! PPM output and PFM (portable float map) panoramas.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::write_atomically;

/// Linear RGB float image, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Panorama {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::input(format!(
            "expected {} bytes for {width}x{height} RGB, got {}",
            3 * width * height,
            rgb.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_atomically(path, &encode_ppm(width, height, rgb)?)
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::parse_at(i as u64, "truncated image header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates header and payload
    if i >= bytes.len() {
        return Err(Error::parse_at(i as u64, "missing image payload"));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(tok: &str, offset: usize) -> Result<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::parse_at(offset as u64, format!("bad image dimension {tok:?}")))
}

/// Returns `(width, height, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (t, start) = header_tokens(bytes, 4)?;
    if t[0] != "P6" {
        return Err(Error::parse_at(0, format!("not a binary PPM (magic {:?})", t[0])));
    }
    if t[3] != "255" {
        return Err(Error::parse_at(0, "only maxval 255 is supported"));
    }
    let (w, h) = (parse_dim(&t[1], 0)?, parse_dim(&t[2], 0)?);
    let body = &bytes[start..];
    if body.len() != 3 * w * h {
        return Err(Error::parse_at(
            (start + body.len().min(3 * w * h)) as u64,
            format!("expected {} payload bytes, got {}", 3 * w * h, body.len()),
        ));
    }
    Ok((w, h, body.to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_ppm(&std::fs::read(path)?).map_err(|e| e.with_path(path))
}

/// Color PFM, little-endian, rows stored bottom to top as the format requires.
pub fn encode_pfm(img: &Panorama) -> Result<Vec<u8>> {
    if img.data.len() != 3 * img.width * img.height {
        return Err(Error::input("panorama data length does not match dimensions"));
    }
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = 3 * img.width;
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Accepts color (`PF`) and grayscale (`Pf`) maps of either endianness;
/// grayscale is replicated to three channels.
pub fn decode_pfm(bytes: &[u8]) -> Result<Panorama> {
    let (t, start) = header_tokens(bytes, 4)?;
    let channels = match t[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(Error::parse_at(0, format!("not a PFM (magic {m:?})"))),
    };
    let (w, h) = (parse_dim(&t[1], 0)?, parse_dim(&t[2], 0)?);
    let scale: f64 = t[3]
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::parse_at(0, format!("bad PFM scale {:?}", t[3])))?;
    let little = scale < 0.0;
    let body = &bytes[start..];
    let need = 4 * channels * w * h;
    if body.len() != need {
        return Err(Error::parse_at(
            (start + body.len().min(need)) as u64,
            format!("expected {need} payload bytes, got {}", body.len()),
        ));
    }
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(3 * w * h);
    for r in (0..h).rev() {
        let src = &vals[r * w * channels..(r + 1) * w * channels];
        if channels == 3 {
            data.extend_from_slice(src);
        } else {
            data.extend(src.iter().flat_map(|&v| [v, v, v]));
        }
    }
    Ok(Panorama {
        width: w,
        height: h,
        data,
    })
}

pub fn write_pfm(path: &Path, img: &Panorama) -> Result<()> {
    write_atomically(path, &encode_pfm(img)?)
}

pub fn read_pfm_panorama(path: &Path) -> Result<Panorama> {
    decode_pfm(&std::fs::read(path)?).map_err(|e| e.with_path(path))
}
