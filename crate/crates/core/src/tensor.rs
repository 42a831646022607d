//! Dense real-valued containers, zero padding, channel reductions and the
//! `BTSR` fixture format.
//!
//! A `BTSR` file is the 4-byte magic `BTSR`, three little-endian `u32`
//! dimensions `(channels, height, width)`, then `channels * height * width`
//! little-endian binary32 values in channel-major, row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BTSR";
const HEADER_LEN: usize = 16;

/// Channel-major, row-major 3-D tensor. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = checked_volume(&[channels, height, width]).ok_or_else(|| {
            Error::ShapeMismatch(format!("{channels}x{height}x{width} overflows usize"))
        })?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Builds a tensor from a generator called in storage order.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Contiguous `height * width` slice of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Returns `λ·self`; fails if the product overflows to infinity.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Row-major 2-D plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor2 {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = height * width;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Surrounds every channel with a ring of `pad` zeros.
pub fn zero_pad(t: &Tensor3, pad: usize) -> Tensor3 {
    if pad == 0 {
        return t.clone();
    }
    let (c, h, w) = t.shape();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut data = vec![0.0; c * ph * pw];
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = &mut data[ch * ph * pw..(ch + 1) * ph * pw];
        for y in 0..h {
            let row = (y + pad) * pw + pad;
            dst[row..row + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Tensor3 {
        channels: c,
        height: ph,
        width: pw,
        data,
    }
}

/// `A[y][x] = (1/c) Σ_ch |t[ch][y][x]|`.
pub fn channel_abs_mean(t: &Tensor3) -> Tensor2 {
    let mut out = Tensor2::zeros(t.height, t.width);
    channel_abs_mean_into(t, out.data_mut());
    out
}

/// Writes the channel absolute mean into `out` (length `h * w`), summing
/// channels in index order.
pub fn channel_abs_mean_into(t: &Tensor3, out: &mut [f32]) {
    let plane = t.height * t.width;
    assert_eq!(out.len(), plane, "output plane has wrong length");
    let inv = 1.0 / t.channels as f32;
    for (o, v) in out.iter_mut().zip(t.channel(0)) {
        *o = v.abs();
    }
    for ch in 1..t.channels {
        for (o, v) in out.iter_mut().zip(t.channel(ch)) {
            *o += v.abs();
        }
    }
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn save_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_tensor(t)?)?;
    file.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

pub fn encode_tensor(t: &Tensor3) -> Result<Vec<u8>> {
    let dim = |d: usize| {
        u32::try_from(d).map_err(|_| {
            Error::ShapeMismatch(format!("dimension {d} does not fit the u32 file header"))
        })
    };
    let (c, h, w) = (dim(t.channels)?, dim(t.height)?, dim(t.width)?);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let overflow = Error::DimOverflow {
        channels: c,
        height: h,
        width: w,
    };
    // Anything whose byte size exceeds isize::MAX can never be allocated.
    let count = match checked_volume(&[c as usize, h as usize, w as usize]) {
        Some(n) if n.checked_mul(4).is_some_and(|b| b <= isize::MAX as usize) => n,
        _ => return Err(overflow),
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN + count * 4,
            found: bytes.len(),
        });
    }
    let data = payload[..count * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor3::new(c as usize, h as usize, w as usize, data)
}

fn checked_volume(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}
