//! Naive nested-loop convolutions. These are the ground truth for the packed
//! engine and the "vanilla" baseline it is timed against, so nothing here is
//! blocked, vectorised by hand or reassociated.

use rayon::prelude::*;

use crate::binarizer::{BinaryWeightApprox, SignPlane};
use crate::error::{Error, Result};
use crate::tensor::{Tensor2, Tensor3};
use crate::xnor::IntOutputPlane;

/// Output size of a unit-stride convolution with `pad` zeros per side.
pub fn output_dims(h: usize, w: usize, k_h: usize, k_w: usize, pad: usize) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if k_h == 0 || k_w == 0 || k_h > ph || k_w > pw {
        return Err(Error::ShapeMismatch(format!(
            "{k_h}x{k_w} kernel does not fit a {ph}x{pw} padded input"
        )));
    }
    Ok((ph - k_h + 1, pw - k_w + 1))
}

fn check_channels(input: usize, weights: usize) -> Result<()> {
    if input != weights {
        return Err(Error::ChannelMismatch {
            expected: input,
            actual: weights,
        });
    }
    Ok(())
}

/// Full-precision cross-correlation summed over channels.
pub fn conv2d_float(input: &Tensor3, weights: &Tensor3, pad: usize) -> Result<Tensor2> {
    let (oh, ow) = output_dims(input.height(), input.width(), weights.height(), weights.width(), pad)?;
    let mut out = Tensor2::zeros(oh, ow);
    conv2d_float_into(input, weights, pad, out.data_mut())?;
    Ok(out)
}

/// Single-threaded [`conv2d_float`] into a caller-owned buffer.
pub fn conv2d_float_into(input: &Tensor3, weights: &Tensor3, pad: usize, out: &mut [f32]) -> Result<()> {
    let ow = prepare(input, weights, pad, out)?;
    for (y, row) in out.chunks_mut(ow).enumerate() {
        conv_row(input, weights, pad, y, row);
    }
    Ok(())
}

/// Multi-threaded [`conv2d_float`]: output rows are distributed over the
/// current rayon pool. Each element is computed by the same code as the
/// sequential version, so results are bit-identical.
pub fn conv2d_float_par_into(input: &Tensor3, weights: &Tensor3, pad: usize, out: &mut [f32]) -> Result<()> {
    let ow = prepare(input, weights, pad, out)?;
    out.par_chunks_mut(ow)
        .enumerate()
        .for_each(|(y, row)| conv_row(input, weights, pad, y, row));
    Ok(())
}

fn prepare(input: &Tensor3, weights: &Tensor3, pad: usize, out: &[f32]) -> Result<usize> {
    check_channels(input.channels(), weights.channels())?;
    let (oh, ow) = output_dims(input.height(), input.width(), weights.height(), weights.width(), pad)?;
    if out.len() != oh * ow {
        return Err(Error::LengthMismatch {
            expected: oh * ow,
            actual: out.len(),
        });
    }
    Ok(ow)
}

fn conv_row(input: &Tensor3, weights: &Tensor3, pad: usize, y: usize, row: &mut [f32]) {
    let (c, h, w) = input.shape();
    let (kh, kw) = (weights.height(), weights.width());
    for (x, o) in row.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for ch in 0..c {
            for ky in 0..kh {
                let iy = (y + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (x + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc += input.get(ch, iy as usize, ix as usize) * weights.get(ch, ky, kx);
                }
            }
        }
        *o = acc;
    }
}

/// Integer cross-correlation of ±1 planes, summed over channels. Padding
/// positions take the value `sign(0) = +1`.
pub fn sign_conv2d_int(input_signs: &[SignPlane], weight_signs: &[SignPlane], pad: usize) -> Result<IntOutputPlane> {
    check_channels(input_signs.len(), weight_signs.len())?;
    let first = input_signs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no input channels".into()))?;
    let (h, w) = (first.height(), first.width());
    let (kh, kw) = (weight_signs[0].height(), weight_signs[0].width());
    if input_signs.iter().any(|p| (p.height(), p.width()) != (h, w))
        || weight_signs.iter().any(|p| (p.height(), p.width()) != (kh, kw))
    {
        return Err(Error::ShapeMismatch("channels differ in size".into()));
    }
    let (oh, ow) = output_dims(h, w, kh, kw, pad)?;
    let mut values = vec![0i32; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0i32;
            for (img, wt) in input_signs.iter().zip(weight_signs) {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (y + ky) as isize - pad as isize;
                        let ix = (x + kx) as isize - pad as isize;
                        let s = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            1
                        } else {
                            img.get(iy as usize, ix as usize)
                        };
                        acc += s as i32 * wt.get(ky, kx) as i32;
                    }
                }
            }
            values[y * ow + x] = acc;
        }
    }
    IntOutputPlane::new(oh, ow, values)
}

/// Binary-weight convolution: the full-precision input is accumulated with
/// additions and subtractions chosen by the weight signs, then scaled by α.
pub fn bwn_conv(input: &Tensor3, w: &BinaryWeightApprox, pad: usize) -> Result<Tensor2> {
    check_channels(input.channels(), w.channels())?;
    let (c, h, wd) = input.shape();
    let (kh, kw) = (w.kernel_h(), w.kernel_w());
    let (oh, ow) = output_dims(h, wd, kh, kw, pad)?;
    let mut out = Tensor2::zeros(oh, ow);
    let data = out.data_mut();
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0f32;
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (y + ky) as isize - pad as isize;
                        let ix = (x + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        let v = input.get(ch, iy as usize, ix as usize);
                        if w.signs[ch].get(ky, kx) > 0 {
                            acc += v;
                        } else {
                            acc -= v;
                        }
                    }
                }
            }
            data[y * ow + x] = acc * w.alpha;
        }
    }
    Ok(out)
}

/// Per-pixel input scale computed directly: the channel absolute mean at each
/// pixel, averaged over the zero-padded `k_h × k_w` window.
pub fn scale_field_naive(input: &Tensor3, k_h: usize, k_w: usize, pad: usize) -> Result<Tensor2> {
    let (c, h, w) = input.shape();
    let (oh, ow) = output_dims(h, w, k_h, k_w, pad)?;
    let mut out = Tensor2::zeros(oh, ow);
    let data = out.data_mut();
    for y in 0..oh {
        for x in 0..ow {
            let mut window = 0.0f64;
            for ky in 0..k_h {
                for kx in 0..k_w {
                    let iy = (y + ky) as isize - pad as isize;
                    let ix = (x + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    let mut pixel = 0.0f64;
                    for ch in 0..c {
                        pixel += input.get(ch, iy as usize, ix as usize).abs() as f64;
                    }
                    window += pixel / c as f64;
                }
            }
            data[y * ow + x] = (window / (k_h * k_w) as f64) as f32;
        }
    }
    Ok(out)
}
