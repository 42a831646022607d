//! Real-valued reconstruction factors: the per-pixel input scale `K` (the
//! channel absolute mean smoothed by a uniform box filter) and the final
//! `ints · K · α` product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use crate::xnor::IntOutputPlane;

/// Per-pixel input scale plus the filter scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingField {
    pub k: Tensor2,
    pub alpha: f32,
}

/// Uniform `k_h × k_w` kernel with entries `1 / (k_h·k_w)`.
pub fn box_kernel(k_h: usize, k_w: usize) -> Tensor2 {
    assert!(k_h >= 1 && k_w >= 1, "box kernel needs positive dimensions");
    let v = 1.0 / (k_h * k_w) as f32;
    Tensor2::from_fn(k_h, k_w, |_, _| v)
}

/// `K = A ∗ box(k_h, k_w)` with `pad` pixels of zero padding around `A`.
/// The output is `(h + 2·pad − k_h + 1) × (w + 2·pad − k_w + 1)`.
pub fn compute_k(a: &Tensor2, k_h: usize, k_w: usize, pad: usize) -> Result<Tensor2> {
    let (ph, pw) = (a.height() + 2 * pad, a.width() + 2 * pad);
    if k_h == 0 || k_w == 0 || ph < k_h || pw < k_w {
        return Err(Error::ShapeMismatch(format!(
            "{k_h}x{k_w} box does not fit a {ph}x{pw} padded plane"
        )));
    }
    let mut padded = vec![0.0; ph * pw];
    for y in 0..a.height() {
        let dst = (y + pad) * pw + pad;
        padded[dst..dst + a.width()].copy_from_slice(&a.data()[y * a.width()..(y + 1) * a.width()]);
    }
    let (oh, ow) = (ph - k_h + 1, pw - k_w + 1);
    let mut out = Tensor2::zeros(oh, ow);
    box_filter_padded(&padded, pw, k_h, k_w, out.data_mut(), ow);
    Ok(out)
}

/// Box-filters an already padded plane (row stride `pw`) into `out`
/// (row stride `ow`), summing columns first and then across each row window.
/// Output rows are independent and computed in parallel.
pub(crate) fn box_filter_padded(padded: &[f32], pw: usize, k_h: usize, k_w: usize, out: &mut [f32], ow: usize) {
    out.par_chunks_mut(ow)
        .enumerate()
        .for_each_init(|| vec![0.0f32; pw], |cols, (y, row)| box_row(padded, pw, k_h, k_w, y, cols, row));
}

/// Output row `y` of the box filter. `cols` is scratch of length `pw`.
pub(crate) fn box_row(
    padded: &[f32],
    pw: usize,
    k_h: usize,
    k_w: usize,
    y: usize,
    cols: &mut [f32],
    row: &mut [f32],
) {
    let area = (k_h * k_w) as f32;
    let ow = row.len();
    cols.copy_from_slice(&padded[y * pw..(y + 1) * pw]);
    for ky in 1..k_h {
        let src = &padded[(y + ky) * pw..(y + ky + 1) * pw];
        for (c, s) in cols.iter_mut().zip(src) {
            *c += s;
        }
    }
    row.copy_from_slice(&cols[..ow]);
    for kx in 1..k_w {
        for (o, c) in row.iter_mut().zip(&cols[kx..kx + ow]) {
            *o += c;
        }
    }
    for o in row.iter_mut() {
        *o /= area;
    }
}

/// `out[y][x] = ints[y][x] · K[y][x] · α`.
pub fn apply_scaling(ints: &IntOutputPlane, field: &ScalingField) -> Result<Tensor2> {
    if (ints.height(), ints.width()) != (field.k.height(), field.k.width()) {
        return Err(Error::ShapeMismatch(format!(
            "integer plane {}x{} vs K {}x{}",
            ints.height(),
            ints.width(),
            field.k.height(),
            field.k.width()
        )));
    }
    let mut out = Tensor2::zeros(ints.height(), ints.width());
    scale_into(ints.values(), field.k.data(), field.alpha, out.data_mut());
    Ok(out)
}

#[inline]
pub(crate) fn scale_into(ints: &[i32], k: &[f32], alpha: f32, out: &mut [f32]) {
    for ((o, &v), &kv) in out.iter_mut().zip(ints).zip(k) {
        *o = v as f32 * kv * alpha;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_box(a: &Tensor2, kh: usize, kw: usize, pad: usize) -> Vec<f64> {
        let (h, w) = (a.height() as isize, a.width() as isize);
        let (oh, ow) = (a.height() + 2 * pad - kh + 1, a.width() + 2 * pad - kw + 1);
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0f64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (y + ky) as isize - pad as isize;
                        let ix = (x + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h && ix >= 0 && ix < w {
                            s += a.get(iy as usize, ix as usize) as f64 / (kh * kw) as f64;
                        }
                    }
                }
                out[y * ow + x] = s;
            }
        }
        out
    }

    #[test]
    fn box_kernel_examples() {
        let k = box_kernel(3, 3);
        assert!(k.data().iter().all(|&v| v == 1.0 / 9.0));
        assert!((k.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(box_kernel(1, 1).data(), &[1.0]);
        let col = box_kernel(3, 1);
        assert_eq!((col.height(), col.width()), (3, 1));
        assert!(col.data().iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn constant_plane_edges() {
        let a = Tensor2::from_fn(6, 6, |_, _| 2.0);
        let k = compute_k(&a, 3, 3, 1).unwrap();
        assert_eq!((k.height(), k.width()), (6, 6));
        assert!((k.get(2, 3) - 2.0).abs() < 1e-6);
        assert!((k.get(0, 0) - 8.0 / 9.0).abs() < 1e-6);
        assert!((k.get(0, 3) - 12.0 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn impulse_response_is_kernel() {
        let a = Tensor2::from_fn(7, 7, |y, x| if (y, x) == (3, 3) { 1.0 } else { 0.0 });
        let k = compute_k(&a, 3, 3, 1).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&y) && (2..=4).contains(&x);
                let expected = if inside { 1.0 / 9.0 } else { 0.0 };
                assert!((k.get(y, x) - expected).abs() < 1e-7, "({y},{x})");
            }
        }
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (kh, kw, pad) in [(3, 3, 1), (1, 1, 0), (5, 3, 2), (3, 3, 0)] {
            let a = Tensor2::from_fn(17, 23, |_, _| rng.gen_range(0.0..2.0));
            let k = compute_k(&a, kh, kw, pad).unwrap();
            let oracle = naive_box(&a, kh, kw, pad);
            assert_eq!(k.data().len(), oracle.len());
            for (g, e) in k.data().iter().zip(&oracle) {
                assert!((*g as f64 - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scaling_examples() {
        let ints = IntOutputPlane::new(2, 2, vec![9; 4]).unwrap();
        let field = ScalingField { k: Tensor2::from_fn(2, 2, |_, _| 1.0), alpha: 0.5 };
        assert!(apply_scaling(&ints, &field).unwrap().data().iter().all(|&v| v == 4.5));
        let zero = ScalingField { alpha: 0.0, ..field.clone() };
        assert!(apply_scaling(&ints, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        let small = ScalingField { k: Tensor2::zeros(1, 2), alpha: 1.0 };
        assert!(apply_scaling(&ints, &small).is_err());
    }

    #[test]
    fn scaling_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let values: Vec<i32> = (0..12 * 9).map(|_| 2 * rng.gen_range(-4..=4) + 1).collect();
        let ints = IntOutputPlane::new(12, 9, values).unwrap();
        let field = ScalingField { k: Tensor2::from_fn(12, 9, |_, _| rng.gen_range(0.0..3.0)), alpha: 0.37 };
        let out = apply_scaling(&ints, &field).unwrap();
        for y in 0..12 {
            for x in 0..9 {
                let e = ints.get(y, x) as f64 * field.k.get(y, x) as f64 * 0.37f32 as f64;
                assert!((out.get(y, x) as f64 - e).abs() <= 1e-6 * e.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn k_is_non_negative_and_bounded(h in 1usize..20, w in 1usize..20, k in prop::sample::select(vec![1usize, 3, 5]), seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor2::from_fn(h, w, |_, _| rng.gen_range(0.0..10.0));
            let pad = (k - 1) / 2;
            let kf = compute_k(&a, k, k, pad).unwrap();
            let max_a = a.data().iter().cloned().fold(0.0f32, f32::max);
            prop_assert!(kf.data().iter().all(|&v| v >= 0.0));
            prop_assert!(kf.data().iter().all(|&v| v <= max_a * (1.0 + 1e-6)));
        }
    }
}
