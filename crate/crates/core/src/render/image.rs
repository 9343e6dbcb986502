//! Float images and their PFM / PPM encodings.

use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};

/// Row-major image with interleaved channels; row 0 is the top of the picture.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Portable float map: `PF` (RGB) or `Pf` (grey), negative scale for
    /// little-endian, rows stored bottom-to-top.
    pub fn write_pfm<W: Write>(&self, mut out: W) -> Result<()> {
        let tag = match self.channels {
            3 => "PF",
            1 => "Pf",
            c => return Err(Error::shape(format!("PFM holds 1 or 3 channels, not {c}"))),
        };
        write!(out, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row_len = self.width * self.channels;
        let mut buf = Vec::with_capacity(row_len * 4);
        for y in (0..self.height).rev() {
            buf.clear();
            for v in &self.data[y * row_len..(y + 1) * row_len] {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_pfm<R: BufRead>(mut input: R) -> Result<Image> {
        fn token<R: BufRead>(r: &mut R) -> Result<String> {
            let mut tok = Vec::new();
            let mut byte = [0u8; 1];
            loop {
                r.read_exact(&mut byte)?;
                if byte[0].is_ascii_whitespace() {
                    if tok.is_empty() {
                        continue;
                    }
                    break;
                }
                tok.push(byte[0]);
            }
            String::from_utf8(tok).map_err(|_| Error::shape("non-ascii PFM header"))
        }
        let bad = |what: &str| Error::shape(format!("malformed PFM header: {what}"));
        let channels = match token(&mut input)?.as_str() {
            "PF" => 3,
            "Pf" => 1,
            _ => return Err(bad("magic")),
        };
        let width: usize = token(&mut input)?.parse().map_err(|_| bad("width"))?;
        let height: usize = token(&mut input)?.parse().map_err(|_| bad("height"))?;
        let scale: f64 = token(&mut input)?.parse().map_err(|_| bad("scale"))?;
        let little = scale < 0.0;
        let row_len = width * channels;
        let mut data = vec![0.0; row_len * height];
        let mut raw = vec![0u8; row_len * 4];
        for y in (0..height).rev() {
            input.read_exact(&mut raw)?;
            for (i, c) in raw.chunks_exact(4).enumerate() {
                let b = [c[0], c[1], c[2], c[3]];
                let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                data[y * row_len + i] = v as f64;
            }
        }
        Image::from_data(width, height, channels, data)
    }

    /// 8-bit binary PPM preview with a 2.2 display gamma. Grey images are replicated to RGB.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.pixel_count() * 3);
        for i in 0..self.pixel_count() {
            let px = self.pixel(i);
            for c in 0..3 {
                let v = px[c.min(self.channels - 1)];
                bytes.push(encode_gamma(v));
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    /// Rescales a single-channel image to `[0, 1]` by its maximum, for previews.
    pub fn normalized(&self) -> Image {
        let max = self.data.iter().cloned().fold(0.0f64, f64::max);
        let k = if max > 0.0 { 1.0 / max } else { 0.0 };
        Image { data: self.data.iter().map(|v| v * k).collect(), ..self.clone() }
    }
}

pub fn encode_gamma(v: f64) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v.powf(1.0 / 2.2) * 255.0).round() as u8
}

pub fn write_file(
    path: &std::path::Path,
    f: impl FnOnce(&mut io::BufWriter<std::fs::File>) -> Result<()>,
) -> Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_and_layout() {
        let img = Image::from_data(2, 1, 1, vec![0.5, -2.0]).unwrap();
        let mut bytes = Vec::new();
        img.write_pfm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"Pf\n2 1\n-1.0\n"));
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &0.5f32.to_le_bytes());
        assert_eq!(&body[4..], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn pfm_rows_are_bottom_to_top_and_round_trip() {
        let img = Image::from_data(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut bytes = Vec::new();
        img.write_pfm(&mut bytes).unwrap();
        let header = b"PF\n1 2\n-1.0\n".len();
        assert_eq!(&bytes[header..header + 4], &4.0f32.to_le_bytes());
        let back = Image::read_pfm(&bytes[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_gamma_encoding() {
        assert_eq!(encode_gamma(0.0), 0);
        assert_eq!(encode_gamma(1.0), 255);
        assert_eq!(encode_gamma(0.5), 186);
        assert_eq!(encode_gamma(f64::NAN), 0);
        let img = Image::from_data(1, 1, 1, vec![1.0]).unwrap();
        let mut bytes = Vec::new();
        img.write_ppm(&mut bytes).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn data_length_is_checked() {
        assert!(Image::from_data(2, 2, 3, vec![0.0; 5]).is_err());
    }
}
