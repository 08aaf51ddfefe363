use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lfnet::write_atomic;

/// RGB image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Values rounded to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
            ..self.clone()
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::dim("ImageBuffer::from_rgb8", 3 * width * height, bytes.len()));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_rgb8());
    out
}

fn ppm_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8];
        if r.read(&mut byte)? == 0 {
            return Err(Error::format(path, "truncated PPM header"));
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut r = BufReader::new(bytes);
    if ppm_token(&mut r, path)? != "P6" {
        return Err(Error::format(path, "not a binary PPM (P6)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        ppm_token(&mut r, path)?
            .parse()
            .map_err(|_| Error::format(path, format!("bad PPM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("bad PPM maxval {maxval}")));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let bpc = if maxval < 256 { 1 } else { 2 };
    if raw.len() < 3 * w * h * bpc {
        return Err(Error::format(path, "truncated PPM pixel data"));
    }
    let scale = maxval as f64;
    let data = if bpc == 1 {
        raw[..3 * w * h].iter().map(|&b| b as f64 / scale).collect()
    } else {
        raw[..6 * w * h]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Ok(ImageBuffer { width: w, height: h, data })
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let sample = |i: usize| -> f64 {
        if sixteen {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
        } else {
            buf[i] as f64 / 255.0
        }
    };
    let mut data = Vec::with_capacity(3 * w * h);
    for p in 0..w * h {
        let base = p * channels;
        match channels {
            1 | 2 => data.extend([sample(base); 3]),
            3 | 4 => data.extend([sample(base), sample(base + 1), sample(base + 2)]),
            n => return Err(Error::format(path, format!("unsupported PNG channel count {n}"))),
        }
    }
    Ok(ImageBuffer { width: w, height: h, data })
}

pub fn decode_jpeg(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    ImageBuffer::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

/// Reads PPM (P6), PNG or JPEG, chosen by content.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes, path)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        decode_jpeg(&bytes, path)
    } else {
        Err(Error::Unsupported(format!("image format of {}", path.display())))
    }
}

/// Writes an 8-bit binary PPM; values are clamped to `[0, 1]`.
pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 0.3]).quantized();
        let back = decode_ppm(&encode_ppm(&img), Path::new("mem")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let bytes = b"P6\n# comment\n1 1\n255\n\xff\x00\x80";
        let img = decode_ppm(bytes, Path::new("mem")).unwrap();
        assert_eq!(img.get(0, 0), [1.0, 0.0, 128.0 / 255.0]);
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00", Path::new("mem")).is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0", Path::new("mem")).is_err());
    }
}
