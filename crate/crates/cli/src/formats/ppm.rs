//! Binary portable pixmaps (P6, maxval 255).

use std::path::Path;

use oclbench_core::data::RgbImage;

use crate::error::{CliError, Result};

pub fn encode(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let bad = |detail: &str| CliError::invalid(path, format!("not a P6 pixmap: {}", detail));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields
            .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("magic number"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("header field is not a number"))
    };
    let (cols, rows, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if pixels.len() != rows * cols * 3 {
        return Err(bad(&format!(
            "raster has {} bytes, expected {}",
            pixels.len(),
            rows * cols * 3
        )));
    }
    Ok(RgbImage {
        rows,
        cols,
        pixels: pixels.to_vec(),
    })
}

pub fn read(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_comments() {
        let img = RgbImage {
            rows: 2,
            cols: 3,
            pixels: (0..18).collect(),
        };
        let bytes = encode(&img);
        assert_eq!(decode(&bytes, Path::new("x")).unwrap(), img);
        let mut commented = b"P6\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend(0..18u8);
        assert_eq!(decode(&commented, Path::new("x")).unwrap(), img);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }
}
