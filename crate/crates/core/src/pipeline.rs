//! End-to-end approximate convolution:
//! `I ∗ W ≈ (sign(I) ⊛ sign(W)) ⊙ K · α`.
//!
//! The binary path (binarize, pack, XNOR + popcount) and the scale path
//! (channel absolute mean, box filter) share no data. Both are evaluated per
//! band of output rows, in parallel across bands, and meet only in the final
//! elementwise product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::packer::{pack_real_into, PackedTileGrid, RowBits, TileGeometry, WordBits};
use crate::reference::output_dims;
use crate::scaling::{box_row, scale_into};
use crate::tensor::Tensor3;
use crate::xnor::{accumulate_band, BinaryFilter};

/// A prepared XNOR convolution layer: packed filters plus padding.
#[derive(Debug, Clone)]
pub struct XnorConv {
    geometry: TileGeometry,
    pad: usize,
    in_channels: usize,
    filters: Vec<BinaryFilter>,
}

/// Reusable buffers for one input shape. Allocated once, outside any timed
/// region.
///
/// The integer sign-convolution planes and `K` only live in per-band scratch
/// unless [`Workspace::retain_intermediates`] was called.
#[derive(Debug, Clone)]
pub struct Workspace {
    in_shape: (usize, usize, usize),
    out_h: usize,
    out_w: usize,
    grids: Vec<PackedTileGrid>,
    rows: RowBits,
    retained: Option<(Vec<i32>, Vec<f32>)>,
}

impl Workspace {
    /// Keep full integer and `K` planes from every subsequent run.
    pub fn retain_intermediates(&mut self, out_channels: usize) {
        let plane = self.out_h * self.out_w;
        self.retained = Some((vec![0; out_channels * plane], vec![0.0; plane]));
    }

    /// Integer sign-convolution results of the last run, one plane per
    /// filter, if retained.
    pub fn ints(&self) -> Option<&[i32]> {
        self.retained.as_ref().map(|(i, _)| &i[..])
    }

    /// `K` from the last run, if retained.
    pub fn k(&self) -> Option<&[f32]> {
        self.retained.as_ref().map(|(_, k)| &k[..])
    }

    pub fn grids(&self) -> &[PackedTileGrid] {
        &self.grids
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }
}

/// One band of `stride_y` output rows, across every filter.
struct Band<'a> {
    out: Vec<&'a mut [f32]>,
    ints: Option<Vec<&'a mut [i32]>>,
    k: Option<&'a mut [f32]>,
}

#[derive(Default)]
struct Scratch {
    cols: Vec<f32>,
    abs: Vec<f32>,
    k: Vec<f32>,
    ints: Vec<i32>,
}

impl XnorConv {
    /// Binarizes every filter (each `channels × k × k`, all the same shape).
    pub fn new(filters: &[Tensor3], word_bits: WordBits, pad: usize) -> Result<Self> {
        let first = filters
            .first()
            .ok_or_else(|| Error::ShapeMismatch("at least one filter is required".into()))?;
        let shape = first.shape();
        if let Some(bad) = filters.iter().find(|f| f.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "filters differ in shape: {shape:?} vs {:?}",
                bad.shape()
            )));
        }
        let geometry = TileGeometry::new(word_bits, shape.1, shape.2)?;
        let filters = filters
            .iter()
            .map(|f| BinaryFilter::from_weights(f, geometry))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geometry,
            pad,
            in_channels: shape.0,
            filters,
        })
    }

    /// Splits a `(out_channels · in_channels) × k × k` tensor into filters.
    pub fn from_stacked(weights: &Tensor3, in_channels: usize, word_bits: WordBits, pad: usize) -> Result<Self> {
        if in_channels == 0 || !weights.channels().is_multiple_of(in_channels) {
            return Err(Error::ChannelMismatch {
                expected: in_channels,
                actual: weights.channels(),
            });
        }
        let (kh, kw) = (weights.height(), weights.width());
        let per = in_channels * kh * kw;
        let filters = weights
            .data()
            .chunks(per)
            .map(|chunk| Tensor3::new(in_channels, kh, kw, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&filters, word_bits, pad)
    }

    pub fn geometry(&self) -> &TileGeometry {
        &self.geometry
    }

    pub fn filters(&self) -> &[BinaryFilter] {
        &self.filters
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.filters.len()
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        output_dims(h, w, self.geometry.kernel_h(), self.geometry.kernel_w(), self.pad)
    }

    pub fn workspace(&self, h: usize, w: usize) -> Result<Workspace> {
        let (out_h, out_w) = self.output_dims(h, w)?;
        Ok(Workspace {
            in_shape: (self.in_channels, h, w),
            out_h,
            out_w,
            grids: vec![PackedTileGrid::new(self.geometry, out_h, out_w); self.in_channels],
            rows: RowBits::default(),
            retained: None,
        })
    }

    /// Runs the convolution on the current rayon pool, writing
    /// `out_channels × out_h × out_w` values into `out`.
    pub fn run_into(&self, input: &Tensor3, ws: &mut Workspace, out: &mut [f32]) -> Result<()> {
        if input.shape() != ws.in_shape {
            return Err(Error::ShapeMismatch(format!(
                "workspace built for {:?}, input is {:?}",
                ws.in_shape,
                input.shape()
            )));
        }
        let (out_h, out_w) = (ws.out_h, ws.out_w);
        let plane = out_h * out_w;
        if out.len() != self.filters.len() * plane {
            return Err(Error::LengthMismatch {
                expected: self.filters.len() * plane,
                actual: out.len(),
            });
        }
        if let Some((ints, _)) = &ws.retained {
            if ints.len() != out.len() {
                return Err(Error::LengthMismatch {
                    expected: out.len(),
                    actual: ints.len(),
                });
            }
        }
        let (_, h, w) = ws.in_shape;
        let pad = self.pad;
        let Workspace {
            grids, rows, retained, ..
        } = ws;

        for (c, grid) in grids.iter_mut().enumerate() {
            pack_real_into(input.channel(c), h, w, pad, grid, rows)?;
        }
        let grids: &[PackedTileGrid] = grids;

        let sy = self.geometry.stride_y();
        let band_len = sy * out_w;
        let mut bands: Vec<Band> = out
            .chunks_mut(plane)
            .next()
            .into_iter()
            .flat_map(|p| p.chunks_mut(band_len))
            .map(|_| Band {
                out: Vec::new(),
                ints: None,
                k: None,
            })
            .collect();
        for dst in out.chunks_mut(plane) {
            for (band, o) in bands.iter_mut().zip(dst.chunks_mut(band_len)) {
                band.out.push(o);
            }
        }
        if let Some((ints, k)) = retained {
            for (band, kk) in bands.iter_mut().zip(k.chunks_mut(band_len)) {
                band.k = Some(kk);
                band.ints = Some(Vec::new());
            }
            for src in ints.chunks_mut(plane) {
                for (band, i) in bands.iter_mut().zip(src.chunks_mut(band_len)) {
                    band.ints.as_mut().unwrap().push(i);
                }
            }
        }

        // Each band computes its own slice of K from the input and joins it
        // with the popcounts in the final product, so neither full plane is
        // ever written out.
        let (k_h, k_w) = (self.geometry.kernel_h(), self.geometry.kernel_w());
        let pw = w + 2 * pad;
        bands
            .par_iter_mut()
            .enumerate()
            .for_each_init(Scratch::default, |scratch, (ty, band)| {
                let n_rows = band.out[0].len() / out_w;
                let Scratch {
                    cols,
                    abs,
                    k: k_scratch,
                    ints: ints_scratch,
                } = scratch;
                cols.resize(pw, 0.0);
                abs_mean_band(input, pad, ty * sy, n_rows + k_h - 1, abs);
                let kk: &mut [f32] = match band.k.as_deref_mut() {
                    Some(k) => k,
                    None => {
                        k_scratch.resize(band_len, 0.0);
                        &mut k_scratch[..n_rows * out_w]
                    }
                };
                for (dy, row) in kk.chunks_mut(out_w).enumerate() {
                    box_row(abs, pw, k_h, k_w, dy, cols, row);
                }
                ints_scratch.resize(band_len, 0);
                for (f, (filter, o)) in self.filters.iter().zip(band.out.iter_mut()).enumerate() {
                    let ints: &mut [i32] = match band.ints.as_mut() {
                        Some(v) => v[f],
                        None => &mut ints_scratch[..n_rows * out_w],
                    };
                    accumulate_band(grids, filter.weight_words(), filter.base_mask(), &self.geometry, ty, ints);
                    scale_into(ints, kk, filter.alpha(), o);
                }
            });
        Ok(())
    }

    /// Allocating convenience wrapper around [`XnorConv::run_into`].
    pub fn run(&self, input: &Tensor3) -> Result<Tensor3> {
        let mut ws = self.workspace(input.height(), input.width())?;
        let mut out = vec![0.0; self.filters.len() * ws.out_h * ws.out_w];
        self.run_into(input, &mut ws, &mut out)?;
        Tensor3::new(self.filters.len(), ws.out_h, ws.out_w, out)
    }
}


/// Channel absolute mean written into the interior of a zero-bordered
/// buffer. Channels are summed in index order, as in `channel_abs_mean`.
/// Rows `y0 .. y0 + n` of the zero-padded channel absolute mean.
fn abs_mean_band(input: &Tensor3, pad: usize, y0: usize, n: usize, dst: &mut Vec<f32>) {
    let (c, h, w) = input.shape();
    let pw = w + 2 * pad;
    let inv = 1.0 / c as f32;
    dst.clear();
    dst.resize(n * pw, 0.0);
    for (r, row) in dst.chunks_mut(pw).enumerate() {
        let py = y0 + r;
        if py < pad || py >= pad + h {
            continue;
        }
        let y = py - pad;
        let row = &mut row[pad..pad + w];
        for (o, v) in row.iter_mut().zip(&input.channel(0)[y * w..(y + 1) * w]) {
            *o = v.abs();
        }
        for ch in 1..c {
            for (o, v) in row.iter_mut().zip(&input.channel(ch)[y * w..(y + 1) * w]) {
                *o += v.abs();
            }
        }
        row.iter_mut().for_each(|v| *v *= inv);
    }
}
