//! Masked XNOR + popcount convolution over packed tiles.
//!
//! The filter's sign bits sit at the top-left `k_h × k_w` corner of a word
//! laid out like an image tile. The window at offset `(dy, dx)` inside a tile
//! is aligned to that corner by a single right shift of `dy * tile_w + dx`
//! bits, so every output a tile owns is computed from the one image word.
//! XOR against the weight word counts disagreements `d`, and the signed dot
//! product of the window is `k² - 2d`.

use rayon::prelude::*;

use crate::binarizer::{sign_binarize, BinaryWeightApprox};
use crate::error::{Error, Result};
use crate::packer::{PackedTileGrid, TileGeometry};
use crate::tensor::Tensor3;

/// One output filter in packed form: a weight word and shared window mask per
/// input channel, plus the filter's scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFilter {
    geometry: TileGeometry,
    weight_words: Vec<u64>,
    base_mask: u64,
    alpha: f32,
}

impl BinaryFilter {
    pub fn new(approx: &BinaryWeightApprox, geometry: TileGeometry) -> Result<Self> {
        if approx.signs.is_empty() {
            return Err(Error::ShapeMismatch("filter has no channels".into()));
        }
        let (kh, kw) = (geometry.kernel_h(), geometry.kernel_w());
        let mut base_mask = 0u64;
        for r in 0..kh {
            for c in 0..kw {
                base_mask |= 1 << geometry.bit_index(r, c);
            }
        }
        let mut weight_words = Vec::with_capacity(approx.signs.len());
        for plane in &approx.signs {
            if (plane.height(), plane.width()) != (kh, kw) {
                return Err(Error::GeometryMismatch(format!(
                    "{}x{} weights for a {kh}x{kw} geometry",
                    plane.height(),
                    plane.width()
                )));
            }
            let mut word = 0u64;
            for r in 0..kh {
                for c in 0..kw {
                    if plane.get(r, c) > 0 {
                        word |= 1 << geometry.bit_index(r, c);
                    }
                }
            }
            weight_words.push(word);
        }
        Ok(Self {
            geometry,
            weight_words,
            base_mask,
            alpha: approx.alpha,
        })
    }

    /// Binarizes `weights` (`channels × k_h × k_w`) and packs the result.
    pub fn from_weights(weights: &Tensor3, geometry: TileGeometry) -> Result<Self> {
        Self::new(&sign_binarize(weights), geometry)
    }

    pub fn geometry(&self) -> &TileGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.weight_words.len()
    }

    pub fn weight_word(&self, channel: usize) -> u64 {
        self.weight_words[channel]
    }

    pub fn weight_words(&self) -> &[u64] {
        &self.weight_words
    }

    pub fn base_mask(&self) -> u64 {
        self.base_mask
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }
}

/// Integer sign-convolution output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntOutputPlane {
    height: usize,
    width: usize,
    values: Vec<i32>,
}

impl IntOutputPlane {
    pub fn new(height: usize, width: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> i32 {
        self.values[y * self.width + x]
    }

    /// Checks the bound `|v| ≤ c·k²` and the parity `v ≡ c·k² (mod 2)` that
    /// a sum of `c·k²` terms of ±1 must satisfy. Returns the first offending
    /// index.
    pub fn check_invariants(&self, channels: usize, kernel_area: usize) -> std::result::Result<(), usize> {
        let terms = (channels * kernel_area) as i64;
        match self
            .values
            .iter()
            .position(|&v| (v as i64).abs() > terms || (v as i64 - terms).rem_euclid(2) != 0)
        {
            Some(i) => Err(i),
            None => Ok(()),
        }
    }
}

/// Signed sum of `k_area` ±1 products given `p` agreeing positions.
#[inline(always)]
pub fn popcount_to_signed(p: u32, k_area: u32) -> i32 {
    debug_assert!(p <= k_area);
    2 * p as i32 - k_area as i32
}

/// All `stride_y × stride_x` window results of one tile, row-major.
pub fn xnor_tile(image_word: u64, weight_word: u64, base_mask: u64, geom: &TileGeometry) -> Vec<i32> {
    let (sy, sx) = (geom.stride_y(), geom.stride_x());
    let area = geom.kernel_area() as u32;
    let mut out = Vec::with_capacity(sy * sx);
    for dy in 0..sy {
        for dx in 0..sx {
            let shifted = image_word >> geom.bit_index(dy, dx);
            let agree = (!(shifted ^ weight_word) & base_mask).count_ones();
            out.push(popcount_to_signed(agree, area));
        }
    }
    out
}

fn check_grid(grid: &PackedTileGrid, filter: &BinaryFilter) -> Result<()> {
    if grid.geometry() != filter.geometry() {
        return Err(Error::GeometryMismatch(format!(
            "grid {:?} vs filter {:?}",
            grid.geometry(),
            filter.geometry()
        )));
    }
    Ok(())
}

/// Sign-convolution of one input channel with the matching filter channel.
pub fn xnor_conv2d(grid: &PackedTileGrid, filter: &BinaryFilter, channel: usize) -> Result<IntOutputPlane> {
    check_grid(grid, filter)?;
    if channel >= filter.channels() {
        return Err(Error::ChannelMismatch {
            expected: filter.channels(),
            actual: channel + 1,
        });
    }
    let mut values = vec![0; grid.out_h() * grid.out_w()];
    accumulate_plane(std::slice::from_ref(grid), &filter.weight_words[channel..=channel], filter, &mut values);
    IntOutputPlane::new(grid.out_h(), grid.out_w(), values)
}

/// Sign-convolution summed over input channels, in channel order.
pub fn xnor_conv_multichannel(grids: &[PackedTileGrid], filter: &BinaryFilter) -> Result<IntOutputPlane> {
    let first = grids.first().ok_or(Error::ChannelMismatch {
        expected: filter.channels(),
        actual: 0,
    })?;
    let mut values = vec![0; first.out_h() * first.out_w()];
    xnor_conv_multichannel_into(grids, filter, &mut values)?;
    IntOutputPlane::new(first.out_h(), first.out_w(), values)
}

/// Like [`xnor_conv_multichannel`] but writes into a caller-owned plane.
/// Tile rows are processed in parallel on the current rayon pool; every
/// output element is written by exactly one task.
pub fn xnor_conv_multichannel_into(
    grids: &[PackedTileGrid],
    filter: &BinaryFilter,
    out: &mut [i32],
) -> Result<()> {
    if grids.len() != filter.channels() {
        return Err(Error::ChannelMismatch {
            expected: filter.channels(),
            actual: grids.len(),
        });
    }
    let first = &grids[0];
    for g in grids {
        check_grid(g, filter)?;
        if (g.out_h(), g.out_w()) != (first.out_h(), first.out_w()) {
            return Err(Error::GeometryMismatch("input channels differ in size".into()));
        }
    }
    if out.len() != first.out_h() * first.out_w() {
        return Err(Error::LengthMismatch {
            expected: first.out_h() * first.out_w(),
            actual: out.len(),
        });
    }
    accumulate_plane(grids, &filter.weight_words, filter, out);
    Ok(())
}

fn accumulate_plane(grids: &[PackedTileGrid], weights: &[u64], filter: &BinaryFilter, out: &mut [i32]) {
    let geom = *filter.geometry();
    let out_w = grids[0].out_w();
    let mask = filter.base_mask;
    out.par_chunks_mut(geom.stride_y() * out_w)
        .enumerate()
        .for_each(|(ty, rows)| accumulate_band(grids, weights, mask, &geom, ty, rows));
}

/// Sums every channel's tile row `ty` into `rows`, the matching band of
/// output rows. Grids must already be checked against the filter.
pub(crate) fn accumulate_band(
    grids: &[PackedTileGrid],
    weights: &[u64],
    mask: u64,
    geom: &TileGeometry,
    ty: usize,
    rows: &mut [i32],
) {
    let out_w = grids[0].out_w();
    rows.fill(0);
    for (grid, &weight) in grids.iter().zip(weights) {
        let words = &grid.words()[ty * grid.tiles_x()..(ty + 1) * grid.tiles_x()];
        tile_row(words, weight, mask, geom, out_w, rows);
    }
}

/// Adds the results of one row of tiles into the `rows` band of the output.
#[inline]
fn tile_row(words: &[u64], weight: u64, mask: u64, geom: &TileGeometry, out_w: usize, rows: &mut [i32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the popcnt feature was detected at runtime.
            unsafe { tile_row_popcnt(words, weight, mask, geom, out_w, rows) };
            return;
        }
    }
    tile_row_generic(words, weight, mask, geom, out_w, rows);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn tile_row_popcnt(words: &[u64], weight: u64, mask: u64, geom: &TileGeometry, out_w: usize, rows: &mut [i32]) {
    tile_row_generic(words, weight, mask, geom, out_w, rows)
}

#[inline(always)]
fn tile_row_generic(words: &[u64], weight: u64, mask: u64, geom: &TileGeometry, out_w: usize, rows: &mut [i32]) {
    // Monomorphise the window loop for the strides of the common geometries
    // (k = 3 and k = 1 on 8×8 and 8×4 tiles) so it fully unrolls.
    match geom.stride_x() {
        6 => tile_row_strided::<6>(words, weight, mask, geom, out_w, rows),
        2 => tile_row_strided::<2>(words, weight, mask, geom, out_w, rows),
        8 => tile_row_strided::<8>(words, weight, mask, geom, out_w, rows),
        4 => tile_row_strided::<4>(words, weight, mask, geom, out_w, rows),
        _ => tile_row_any(words, weight, mask, geom, out_w, rows),
    }
}

#[inline(always)]
fn tile_row_strided<const SX: usize>(
    words: &[u64],
    weight: u64,
    mask: u64,
    geom: &TileGeometry,
    out_w: usize,
    rows: &mut [i32],
) {
    debug_assert_eq!(geom.stride_x(), SX);
    let tile_w = geom.tile_w();
    let area = geom.kernel_area() as i32;
    let band_h = rows.len() / out_w;
    let full = out_w / SX;
    for dy in 0..band_h {
        let row = &mut rows[dy * out_w..(dy + 1) * out_w];
        let (body, tail) = row.split_at_mut(full * SX);
        for (acc, &word) in body.chunks_exact_mut(SX).zip(words) {
            let line = word >> (dy * tile_w);
            let mut vals = [0i32; SX];
            for (dx, v) in vals.iter_mut().enumerate() {
                *v = area - 2 * (((line >> dx) ^ weight) & mask).count_ones() as i32;
            }
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v;
            }
        }
        if !tail.is_empty() {
            let line = words[full] >> (dy * tile_w);
            for (dx, a) in tail.iter_mut().enumerate() {
                *a += area - 2 * (((line >> dx) ^ weight) & mask).count_ones() as i32;
            }
        }
    }
}

fn tile_row_any(words: &[u64], weight: u64, mask: u64, geom: &TileGeometry, out_w: usize, rows: &mut [i32]) {
    let (sx, tile_w) = (geom.stride_x(), geom.tile_w());
    let area = geom.kernel_area() as i32;
    let band_h = rows.len() / out_w;
    for (tx, &word) in words.iter().enumerate() {
        let x0 = tx * sx;
        let cols = sx.min(out_w - x0);
        for dy in 0..band_h {
            let row = &mut rows[dy * out_w + x0..dy * out_w + x0 + cols];
            let line = word >> (dy * tile_w);
            for (dx, acc) in row.iter_mut().enumerate() {
                let disagree = ((line >> dx) ^ weight) & mask;
                *acc += area - 2 * disagree.count_ones() as i32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarizer::SignPlane;
    use crate::packer::{pack, WordBits};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(bits: WordBits, k: usize) -> TileGeometry {
        TileGeometry::new(bits, k, k).unwrap()
    }

    fn random_signs(h: usize, w: usize, rng: &mut ChaCha8Rng) -> SignPlane {
        SignPlane::from_fn(h, w, |_, _| if rng.gen() { 1 } else { -1 }).unwrap()
    }

    fn filter_from(planes: Vec<SignPlane>, g: TileGeometry) -> BinaryFilter {
        BinaryFilter::new(&BinaryWeightApprox { signs: planes, alpha: 1.0 }, g).unwrap()
    }

    /// Direct Σ sign_I · sign_W over each window of a padded sign image.
    fn scalar_conv(img: &SignPlane, w: &SignPlane) -> Vec<i32> {
        let (oh, ow) = (img.height() - w.height() + 1, img.width() - w.width() + 1);
        let mut out = vec![0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0;
                for r in 0..w.height() {
                    for c in 0..w.width() {
                        s += img.get(y + r, x + c) as i32 * w.get(r, c) as i32;
                    }
                }
                out[y * ow + x] = s;
            }
        }
        out
    }

    #[test]
    fn decode_examples() {
        assert_eq!(popcount_to_signed(9, 9), 9);
        assert_eq!(popcount_to_signed(0, 9), -9);
        assert_eq!(popcount_to_signed(5, 9), 1);
    }

    #[test]
    fn filter_mask_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bits in [WordBits::W32, WordBits::W64] {
            for k in [1, 3] {
                let g = geom(bits, k);
                let f = filter_from(vec![random_signs(k, k, &mut rng); 2], g);
                assert_eq!(f.base_mask().count_ones() as usize, k * k);
                assert!(f.weight_words().iter().all(|w| w & !f.base_mask() == 0));
            }
        }
    }

    #[test]
    fn uniform_tiles() {
        let g = geom(WordBits::W64, 3);
        let f = filter_from(vec![SignPlane::filled(3, 3, 1)], g);
        let all = xnor_tile(u64::MAX, f.weight_word(0), f.base_mask(), &g);
        assert_eq!(all, vec![9; 36]);
        let none = xnor_tile(0, f.weight_word(0), f.base_mask(), &g);
        assert_eq!(none, vec![-9; 36]);
    }

    #[test]
    fn tile_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for bits in [WordBits::W32, WordBits::W64] {
            let g = geom(bits, 3);
            let (th, tw) = bits.tile_dims();
            for _ in 0..50 {
                let tile = random_signs(th, tw, &mut rng);
                let w = random_signs(3, 3, &mut rng);
                let word = pack(&tile, &g).unwrap().word(0, 0);
                let f = filter_from(vec![w.clone()], g);
                let got = xnor_tile(word, f.weight_word(0), f.base_mask(), &g);
                assert_eq!(got.len(), g.stride_y() * g.stride_x());
                assert_eq!(got, scalar_conv(&tile, &w));
            }
        }
    }

    #[test]
    fn uniform_image_with_padding() {
        let g = geom(WordBits::W64, 3);
        let img = SignPlane::filled(16, 16, 1).padded(1);
        let f = filter_from(vec![SignPlane::filled(3, 3, 1)], g);
        let out = xnor_conv2d(&pack(&img, &g).unwrap(), &f, 0).unwrap();
        assert_eq!((out.height(), out.width()), (16, 16));
        assert!(out.values().iter().all(|&v| v == 9));
    }

    #[test]
    fn single_negative_pixel() {
        let g = geom(WordBits::W64, 3);
        let img = SignPlane::from_fn(18, 18, |y, x| if (y, x) == (9, 5) { -1 } else { 1 }).unwrap();
        let f = filter_from(vec![SignPlane::filled(3, 3, 1)], g);
        let out = xnor_conv2d(&pack(&img, &g).unwrap(), &f, 0).unwrap();
        let expected = scalar_conv(&img, &SignPlane::filled(3, 3, 1));
        assert_eq!(out.values(), &expected[..]);
        assert_eq!(out.values().iter().filter(|&&v| v == 7).count(), 9);
        assert_eq!(out.values().iter().filter(|&&v| v == 9).count(), 16 * 16 - 9);
        for y in 7..=9 {
            for x in 3..=5 {
                assert_eq!(out.get(y, x), 7);
            }
        }
    }

    #[test]
    fn multichannel_linearity_and_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = geom(WordBits::W32, 3);
        let img = random_signs(30, 22, &mut rng);
        let w = random_signs(3, 3, &mut rng);
        let grid = pack(&img, &g).unwrap();
        let single = xnor_conv2d(&grid, &filter_from(vec![w.clone()], g), 0).unwrap();

        let twice = xnor_conv_multichannel(&[grid.clone(), grid.clone()], &filter_from(vec![w.clone(); 2], g)).unwrap();
        assert!(twice.values().iter().zip(single.values()).all(|(a, b)| *a == 2 * b));

        let opposite = pack(&img.negated(), &g).unwrap();
        let zero = xnor_conv_multichannel(&[grid, opposite], &filter_from(vec![w; 2], g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn negation_flips_every_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for bits in [WordBits::W32, WordBits::W64] {
            let g = geom(bits, 3);
            let img = random_signs(25, 31, &mut rng);
            let f = filter_from(vec![random_signs(3, 3, &mut rng)], g);
            let a = xnor_conv2d(&pack(&img, &g).unwrap(), &f, 0).unwrap();
            let b = xnor_conv2d(&pack(&img.negated(), &g).unwrap(), &f, 0).unwrap();
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| *x == -y));
        }
    }

    #[test]
    fn window_and_weights_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = geom(WordBits::W64, 3);
        for _ in 0..50 {
            let window = random_signs(3, 3, &mut rng);
            let weights = random_signs(3, 3, &mut rng);
            let a = xnor_conv2d(&pack(&window, &g).unwrap(), &filter_from(vec![weights.clone()], g), 0).unwrap();
            let b = xnor_conv2d(&pack(&weights, &g).unwrap(), &filter_from(vec![window], g), 0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn odd_strides_use_fallback_path() {
        // k = 5 on 8×8 tiles gives stride 4 rows / 4 cols; k = 2 gives 7.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [2, 5, 7] {
            let g = geom(WordBits::W64, k);
            let img = random_signs(29, 23, &mut rng);
            let w = random_signs(k, k, &mut rng);
            let out = xnor_conv2d(&pack(&img, &g).unwrap(), &filter_from(vec![w.clone()], g), 0).unwrap();
            assert_eq!(out.values(), &scalar_conv(&img, &w)[..]);
        }
    }

    #[test]
    fn invariant_check() {
        let ok = IntOutputPlane::new(1, 3, vec![9, -9, 1]).unwrap();
        assert_eq!(ok.check_invariants(1, 9), Ok(()));
        let bad = IntOutputPlane::new(1, 3, vec![9, 2, 1]).unwrap();
        assert_eq!(bad.check_invariants(1, 9), Err(1));
        let big = IntOutputPlane::new(1, 1, vec![11]).unwrap();
        assert_eq!(big.check_invariants(1, 9), Err(0));
        let even = IntOutputPlane::new(1, 2, vec![0, 18]).unwrap();
        assert_eq!(even.check_invariants(2, 9), Ok(()));
    }

    #[test]
    fn mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g64 = geom(WordBits::W64, 3);
        let g32 = geom(WordBits::W32, 3);
        let grid = pack(&random_signs(10, 10, &mut rng), &g64).unwrap();
        let f32_ = filter_from(vec![random_signs(3, 3, &mut rng)], g32);
        assert!(matches!(xnor_conv2d(&grid, &f32_, 0), Err(Error::GeometryMismatch(_))));

        let f = filter_from(vec![random_signs(3, 3, &mut rng); 2], g64);
        assert!(matches!(
            xnor_conv_multichannel(std::slice::from_ref(&grid), &f),
            Err(Error::ChannelMismatch { expected: 2, actual: 1 })
        ));
        assert!(BinaryFilter::new(
            &BinaryWeightApprox { signs: vec![SignPlane::filled(5, 5, 1)], alpha: 1.0 },
            g64
        )
        .is_err());
    }
}
