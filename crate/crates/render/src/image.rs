//! Linear RGB images, PFM round trip and an 8-bit PPM preview.

use std::fs;
use std::path::Path;

use psample_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, pixels: vec![[0.0; 3]; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for p in &self.pixels {
            for c in 0..3 {
                s[c] += p[c] as f64;
            }
        }
        s.map(|v| v / self.pixels.len().max(1) as f64)
    }

    /// PFM bytes: `PF`, little-endian (scale -1), rows bottom to top.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 12);
        for y in (0..self.height).rev() {
            for p in &self.pixels[y * self.width..(y + 1) * self.width] {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Malformed(format!("PFM: {m}"));
        // Three whitespace-separated header tokens, then one whitespace byte.
        let mut tokens = Vec::new();
        let mut i = 0;
        while tokens.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i || i >= bytes.len() {
                return Err(Error::Truncated("PFM header".into()));
            }
            tokens.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ASCII header"))?);
        }
        let data = &bytes[i + 1..];
        match tokens[0] {
            "PF" => {}
            "Pf" => return Err(bad("greyscale PFM is not supported")),
            t => return Err(bad(&format!("unknown magic {t:?}"))),
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
        if !(scale < 0.0) {
            return Err(bad(&format!("scale {scale} marks big-endian data; only little-endian is supported")));
        }
        let n = width.checked_mul(height).and_then(|n| n.checked_mul(12)).ok_or_else(|| bad("image too large"))?;
        if data.len() < n {
            return Err(Error::Truncated(format!("PFM data: {} of {n} bytes", data.len())));
        }
        if data.len() > n {
            return Err(bad("trailing bytes"));
        }
        let mut img = Image::new(width, height);
        let mut vals = data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        for y in (0..height).rev() {
            for x in 0..width {
                let p = [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()];
                img.set(x, y, p);
            }
        }
        Ok(img)
    }

    /// Binary PPM with gamma 2.2, clamped to [0, 1].
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            for v in p {
                let g = (v.max(0.0).min(1.0) as f64).powf(1.0 / 2.2);
                out.push((g * 255.0 + 0.5) as u8);
            }
        }
        out
    }
}

pub fn write_pfm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, img.to_pfm())?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    Image::from_pfm(&fs::read(path)?)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, img.to_ppm())?)
}
