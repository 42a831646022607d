//! Closed-form binary approximation: `W ≈ α·sign(W)` with `α = mean |W|`.
//!
//! `sign(0)` is `+1` everywhere in this crate, so a packed bit value of 1
//! always means `+1` and 0 always means `−1`.

use crate::error::{Error, Result};
use crate::tensor::{Tensor2, Tensor3};

/// Sign with the `sign(0) = +1` convention (`-0.0` included).
#[inline(always)]
pub fn sign(v: f32) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// A plane whose entries are exactly `+1` or `−1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPlane {
    height: usize,
    width: usize,
    signs: Vec<i8>,
}

impl SignPlane {
    pub fn new(height: usize, width: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: signs.len(),
            });
        }
        if let Some(bad) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::ShapeMismatch(format!(
                "sign plane entry {bad} is {}, expected +1 or -1",
                signs[bad]
            )));
        }
        Ok(Self {
            height,
            width,
            signs,
        })
    }

    pub fn filled(height: usize, width: usize, sign: i8) -> Self {
        assert!(sign == 1 || sign == -1);
        Self {
            height,
            width,
            signs: vec![sign; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> i8) -> Result<Self> {
        let mut signs = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                signs.push(f(y, x));
            }
        }
        Self::new(height, width, signs)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> i8 {
        self.signs[y * self.width + x]
    }

    /// Elementwise product of two sign planes.
    pub fn hadamard(&self, other: &SignPlane) -> Result<SignPlane> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(SignPlane {
            height: self.height,
            width: self.width,
            signs: self.signs.iter().zip(&other.signs).map(|(a, b)| a * b).collect(),
        })
    }

    /// Every entry flipped.
    pub fn negated(&self) -> SignPlane {
        SignPlane {
            height: self.height,
            width: self.width,
            signs: self.signs.iter().map(|s| -s).collect(),
        }
    }

    /// Surrounds the plane with `pad` entries of `sign(0) = +1`, which is what
    /// zero padding followed by binarization produces.
    pub fn padded(&self, pad: usize) -> SignPlane {
        let (h, w) = (self.height + 2 * pad, self.width + 2 * pad);
        let mut signs = vec![1i8; h * w];
        for y in 0..self.height {
            let dst = (y + pad) * w + pad;
            signs[dst..dst + self.width]
                .copy_from_slice(&self.signs[y * self.width..(y + 1) * self.width]);
        }
        SignPlane {
            height: h,
            width: w,
            signs,
        }
    }
}

/// Per-filter binary approximation: one sign plane per input channel and a
/// single scale shared by all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryWeightApprox {
    pub signs: Vec<SignPlane>,
    pub alpha: f32,
}

impl BinaryWeightApprox {
    pub fn channels(&self) -> usize {
        self.signs.len()
    }

    pub fn kernel_h(&self) -> usize {
        self.signs[0].height()
    }

    pub fn kernel_w(&self) -> usize {
        self.signs[0].width()
    }

    /// `α·B` as a dense tensor.
    pub fn reconstruct(&self) -> Tensor3 {
        let (kh, kw) = (self.kernel_h(), self.kernel_w());
        Tensor3::from_fn(self.channels(), kh, kw, |c, y, x| {
            self.alpha * self.signs[c].get(y, x) as f32
        })
        .expect("alpha and signs are finite")
    }
}

/// Binarizes a filter: `B = sign(W)`, `α = ‖W‖₁ / n` over all of its
/// channels. The sum runs sequentially in storage order.
pub fn sign_binarize(w: &Tensor3) -> BinaryWeightApprox {
    let (c, h, wd) = w.shape();
    assert!(c * h * wd > 0, "cannot binarize an empty filter");
    let l1: f64 = w.data().iter().map(|&v| v.abs() as f64).sum();
    let alpha = (l1 / (c * h * wd) as f64) as f32;
    let signs = (0..c)
        .map(|ch| SignPlane {
            height: h,
            width: wd,
            signs: w.channel(ch).iter().map(|&v| sign(v)).collect(),
        })
        .collect();
    BinaryWeightApprox { signs, alpha }
}

pub fn sign_plane(x: &Tensor2) -> SignPlane {
    SignPlane {
        height: x.height(),
        width: x.width(),
        signs: x.data().iter().map(|&v| sign(v)).collect(),
    }
}

/// One sign plane per channel of `t`.
pub fn sign_channels(t: &Tensor3) -> Vec<SignPlane> {
    (0..t.channels())
        .map(|c| SignPlane {
            height: t.height(),
            width: t.width(),
            signs: t.channel(c).iter().map(|&v| sign(v)).collect(),
        })
        .collect()
}

/// Combined input/weight scale `γ = β·α`.
pub fn gamma(alpha: f32, beta: f32) -> f32 {
    debug_assert!(alpha >= 0.0 && beta >= 0.0);
    alpha * beta
}
