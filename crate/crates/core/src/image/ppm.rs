//! Binary netpbm codec: P6 for RGB, P5 for single-channel images, maxval 255.
//!
//! Quantization is `floor(v * 255 + 0.5)` clamped to `[0, 255]`.

use std::fs;
use std::path::Path;

use super::{Image, ImageError};

#[inline]
fn quantize(v: f64) -> u8 {
    let q = (v * 255.0 + 0.5).floor();
    if q.is_nan() {
        0
    } else {
        q.clamp(0.0, 255.0) as u8
    }
}

pub fn encode_netpbm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len());
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, reason: impl Into<String>) -> ImageError {
        ImageError::Parse {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                self.err(format!("unexpected end of header while reading {what}"))
            } else {
                self.err(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Parse {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        cur.pos = bytes.len();
        return Err(cur.err("unexpected end of header while reading magic"));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(cur.err("expected magic P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!("maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => cur.pos += 1,
        Some(_) => return Err(cur.err("expected whitespace after maxval")),
        None => return Err(cur.err("unexpected end of header after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "raster truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    let data = raster[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_vec(width, height, channels, data)
}

fn check_extension(path: &Path) -> Result<(), ImageError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm" | "pgm" | "pnm") => Ok(()),
        other => Err(ImageError::UnsupportedFormat(
            other.unwrap_or("<none>").to_string(),
        )),
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    check_extension(path)?;
    fs::write(path, encode_netpbm(img))?;
    Ok(())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    check_extension(path)?;
    decode_netpbm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_pixel_bytes() {
        let img = Image::filled(1, 1, 3, 1.0).unwrap();
        assert_eq!(encode_netpbm(&img), b"P6\n1 1\n255\n\xff\xff\xff".to_vec());
    }

    #[test]
    fn rounding_is_half_up_and_clamped() {
        let img = Image::from_vec(4, 1, 1, vec![-0.3, 0.5 / 255.0, 127.5 / 255.0, 1.7]).unwrap();
        let bytes = encode_netpbm(&img);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 128, 255]);
    }

    #[test]
    fn truncated_header_reports_offset() {
        match decode_netpbm(b"P6\n12 ") {
            Err(ImageError::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_netpbm(b"P"), Err(ImageError::Parse { offset: 1, .. })));
        assert!(matches!(decode_netpbm(b"P3\n1 1\n255\n"), Err(ImageError::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncated_raster_is_an_error() {
        assert!(matches!(
            decode_netpbm(b"P6\n2 1\n255\n\x00\x01\x02"),
            Err(ImageError::Parse { .. })
        ));
    }

    #[test]
    fn comments_in_header() {
        let img = decode_netpbm(b"P5 # gray\n# another\n2 1 255\n\x00\xff").unwrap();
        assert_eq!(img.shape(), (2, 1, 1));
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn file_round_trip_and_extension_check() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(3, 2, 3, |x, y, c| ((x + 2 * y + c) * 31 % 256) as f64 / 255.0).unwrap();
        let path = dir.path().join("a.ppm");
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
        assert!(matches!(
            save_image(&img, dir.path().join("a.exr")),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    proptest! {
        #[test]
        fn quantized_round_trip_is_lossless(
            w in 1usize..6, h in 1usize..6, gray in any::<bool>(), seed in any::<u64>()
        ) {
            let ch = if gray { 1 } else { 3 };
            let mut s = seed;
            let img = Image::from_fn(w, h, ch, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 56) as u8) as f64 / 255.0
            }).unwrap();
            let bytes = encode_netpbm(&img);
            let back = decode_netpbm(&bytes).unwrap();
            prop_assert_eq!(encode_netpbm(&back), bytes);
            prop_assert_eq!(back, img);
        }
    }
}
