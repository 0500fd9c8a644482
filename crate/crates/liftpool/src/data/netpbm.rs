//! Binary netpbm codec: PGM (P5) grayscale and PPM (P6) color, maxval 255
//! only. Headers may contain `#` comments; write-then-read is bit-exact.

use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB triplets, row-major.
    pub pixels: Vec<u8>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &'static str) -> Result<usize, DataError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(DataError::malformed(self.format, field, "expected a decimal number"));
        }
        // Bound the digit count so absurd sizes fail before any arithmetic.
        if self.pos - start > 9 {
            return Err(DataError::malformed(self.format, field, "value too large"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ascii");
        text.parse::<usize>()
            .map_err(|_| DataError::malformed(self.format, field, "unparsable number"))
    }
}

fn parse_netpbm(
    bytes: &[u8],
    magic: &[u8; 2],
    format: &'static str,
    channels: usize,
) -> Result<(usize, usize, Vec<u8>), DataError> {
    if bytes.len() < 2 || &bytes[0..2] != magic {
        return Err(DataError::malformed(
            format,
            "magic",
            format!("expected {}", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut reader = HeaderReader {
        bytes,
        pos: 2,
        format,
    };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(DataError::malformed(format, "size", "zero width or height"));
    }
    if maxval != 255 {
        return Err(DataError::malformed(
            format,
            "maxval",
            format!("only maxval 255 is supported, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if reader.pos >= bytes.len() || !bytes[reader.pos].is_ascii_whitespace() {
        return Err(DataError::malformed(format, "header", "missing raster separator"));
    }
    let raster_start = reader.pos + 1;
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| DataError::malformed(format, "size", "dimension product overflows"))?;
    let raster = &bytes[raster_start..];
    if raster.len() < expected {
        return Err(DataError::malformed(
            format,
            "raster",
            format!("expected {expected} bytes, got {}", raster.len()),
        ));
    }
    if raster.len() > expected {
        return Err(DataError::malformed(
            format,
            "raster",
            format!("{} trailing bytes after the raster", raster.len() - expected),
        ));
    }
    Ok((width, height, raster.to_vec()))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let (width, height, pixels) = parse_netpbm(bytes, b"P5", "pgm", 1)?;
    Ok(GrayImage { width, height, pixels })
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let (width, height, pixels) = parse_netpbm(bytes, b"P6", "ppm", 3)?;
    Ok(RgbImage { width, height, pixels })
}

pub fn pgm_bytes(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn ppm_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, DataError> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), DataError> {
    Ok(std::fs::write(path, pgm_bytes(img))?)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, DataError> {
    parse_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<(), DataError> {
    Ok(std::fs::write(path, ppm_bytes(img))?)
}

/// `[1, 1, H, W]` tensor scaled to `[0, 1]`.
pub fn gray_to_tensor<T: Scalar>(img: &GrayImage) -> Tensor<T> {
    let scale = T::one() / T::from_usize_lossy(255);
    Tensor::new(
        vec![1, 1, img.height, img.width],
        img.pixels
            .iter()
            .map(|&p| T::from_usize_lossy(p as usize) * scale)
            .collect(),
    )
    .expect("image dims validated at parse time")
}

/// Channel-averaged grayscale `[1, 1, H, W]` tensor in `[0, 1]`.
pub fn rgb_to_gray_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let scale = T::one() / T::from_f64_lossy(3.0 * 255.0);
    let data = img
        .pixels
        .chunks_exact(3)
        .map(|px| T::from_usize_lossy(px[0] as usize + px[1] as usize + px[2] as usize) * scale)
        .collect();
    Tensor::new(vec![1, 1, img.height, img.width], data).expect("image dims validated")
}
