//! Overlapping bit tiles of a padded sign image.
//!
//! A tile is `tile_h` rows of `tile_w` pixels held in one machine word, bit
//! `r * tile_w + c` being the pixel at row `r`, column `c` of the tile (bit 0
//! is the top-left pixel). Tile origins sit `stride = tile - kernel + 1`
//! pixels apart, so neighbouring tiles overlap by `kernel - 1` pixels and
//! every convolution window lies entirely inside one tile. Bits that fall
//! past the padded image are 0.

use rayon::prelude::*;

use crate::binarizer::SignPlane;
use crate::error::{Error, Result};

/// Machine word width used for one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WordBits {
    /// 8 rows × 4 columns.
    W32,
    /// 8 rows × 8 columns.
    #[default]
    W64,
}

impl WordBits {
    pub fn bits(self) -> usize {
        match self {
            WordBits::W32 => 32,
            WordBits::W64 => 64,
        }
    }

    /// `(tile_h, tile_w)`.
    pub fn tile_dims(self) -> (usize, usize) {
        match self {
            WordBits::W32 => (8, 4),
            WordBits::W64 => (8, 8),
        }
    }

    pub fn from_bits(bits: usize) -> Result<Self> {
        match bits {
            32 => Ok(WordBits::W32),
            64 => Ok(WordBits::W64),
            other => Err(Error::InvalidGeometry(format!(
                "word size must be 32 or 64 bits, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileGeometry {
    word_bits: WordBits,
    tile_h: usize,
    tile_w: usize,
    kernel_h: usize,
    kernel_w: usize,
}

impl TileGeometry {
    pub fn new(word_bits: WordBits, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        let (tile_h, tile_w) = word_bits.tile_dims();
        if kernel_h == 0 || kernel_w == 0 {
            return Err(Error::InvalidGeometry("kernel dimensions must be >= 1".into()));
        }
        if kernel_h > tile_h || kernel_w > tile_w {
            return Err(Error::InvalidGeometry(format!(
                "{kernel_h}x{kernel_w} kernel does not fit a {tile_h}x{tile_w} tile"
            )));
        }
        Ok(Self {
            word_bits,
            tile_h,
            tile_w,
            kernel_h,
            kernel_w,
        })
    }

    pub fn word_bits(&self) -> WordBits {
        self.word_bits
    }

    pub fn tile_h(&self) -> usize {
        self.tile_h
    }

    pub fn tile_w(&self) -> usize {
        self.tile_w
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn stride_x(&self) -> usize {
        self.tile_w - self.kernel_w + 1
    }

    pub fn stride_y(&self) -> usize {
        self.tile_h - self.kernel_h + 1
    }

    #[inline(always)]
    pub fn bit_index(&self, row: usize, col: usize) -> usize {
        row * self.tile_w + col
    }
}

/// Number of tiles `(tiles_y, tiles_x)` needed to cover an `out_h × out_w`
/// convolution output.
pub fn tile_grid_shape(geom: &TileGeometry, out_h: usize, out_w: usize) -> (usize, usize) {
    (out_h.div_ceil(geom.stride_y()), out_w.div_ceil(geom.stride_x()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTileGrid {
    geometry: TileGeometry,
    tiles_y: usize,
    tiles_x: usize,
    out_h: usize,
    out_w: usize,
    words: Vec<u64>,
}

impl PackedTileGrid {
    /// Zeroed grid for an `out_h × out_w` output.
    pub fn new(geometry: TileGeometry, out_h: usize, out_w: usize) -> Self {
        let (tiles_y, tiles_x) = tile_grid_shape(&geometry, out_h, out_w);
        Self {
            geometry,
            tiles_y,
            tiles_x,
            out_h,
            out_w,
            words: vec![0; tiles_y * tiles_x],
        }
    }

    /// Wraps raw tile words; the word count must match the tile grid.
    pub fn from_words(
        geometry: TileGeometry,
        out_h: usize,
        out_w: usize,
        words: Vec<u64>,
    ) -> Result<Self> {
        let mut grid = Self::new(geometry, out_h, out_w);
        if words.len() != grid.words.len() {
            return Err(Error::LengthMismatch {
                expected: grid.words.len(),
                actual: words.len(),
            });
        }
        grid.words = words;
        Ok(grid)
    }

    pub fn geometry(&self) -> &TileGeometry {
        &self.geometry
    }

    pub fn tiles_y(&self) -> usize {
        self.tiles_y
    }

    pub fn tiles_x(&self) -> usize {
        self.tiles_x
    }

    pub fn out_h(&self) -> usize {
        self.out_h
    }

    pub fn out_w(&self) -> usize {
        self.out_w
    }

    /// Height of the padded sign image the grid was packed from.
    pub fn padded_h(&self) -> usize {
        self.out_h + self.geometry.kernel_h - 1
    }

    pub fn padded_w(&self) -> usize {
        self.out_w + self.geometry.kernel_w - 1
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    #[inline]
    pub fn word(&self, ty: usize, tx: usize) -> u64 {
        self.words[ty * self.tiles_x + tx]
    }

    /// Top-left pixel of tile `(ty, tx)` in padded-image coordinates.
    pub fn tile_origin(&self, ty: usize, tx: usize) -> (usize, usize) {
        (ty * self.geometry.stride_y(), tx * self.geometry.stride_x())
    }
}

/// Packs an already padded sign plane one bit at a time.
pub fn pack(signs: &SignPlane, geom: &TileGeometry) -> Result<PackedTileGrid> {
    let (ph, pw) = (signs.height(), signs.width());
    if ph < geom.kernel_h || pw < geom.kernel_w {
        return Err(Error::ShapeMismatch(format!(
            "{ph}x{pw} plane is smaller than the {}x{} kernel",
            geom.kernel_h, geom.kernel_w
        )));
    }
    let mut grid = PackedTileGrid::new(*geom, ph - geom.kernel_h + 1, pw - geom.kernel_w + 1);
    for ty in 0..grid.tiles_y {
        for tx in 0..grid.tiles_x {
            let (oy, ox) = grid.tile_origin(ty, tx);
            let mut word = 0u64;
            for r in 0..geom.tile_h {
                for c in 0..geom.tile_w {
                    let (y, x) = (oy + r, ox + c);
                    if y < ph && x < pw && signs.get(y, x) > 0 {
                        word |= 1 << geom.bit_index(r, c);
                    }
                }
            }
            grid.words[ty * grid.tiles_x + tx] = word;
        }
    }
    Ok(grid)
}

/// Inverse of [`pack`] over the `h × w` padded image. Every pixel covered by
/// several tiles must read the same bit in all of them.
pub fn unpack(grid: &PackedTileGrid, h: usize, w: usize) -> Result<SignPlane> {
    if h != grid.padded_h() || w != grid.padded_w() {
        return Err(Error::GeometryMismatch(format!(
            "grid covers a {}x{} padded image, asked for {h}x{w}",
            grid.padded_h(),
            grid.padded_w()
        )));
    }
    let geom = &grid.geometry;
    let mut seen: Vec<Option<i8>> = vec![None; h * w];
    for ty in 0..grid.tiles_y {
        for tx in 0..grid.tiles_x {
            let (oy, ox) = grid.tile_origin(ty, tx);
            let word = grid.word(ty, tx);
            for r in 0..geom.tile_h {
                for c in 0..geom.tile_w {
                    let (y, x) = (oy + r, ox + c);
                    if y >= h || x >= w {
                        continue;
                    }
                    let s = if word >> geom.bit_index(r, c) & 1 == 1 { 1 } else { -1 };
                    match seen[y * w + x] {
                        None => seen[y * w + x] = Some(s),
                        Some(prev) if prev != s => {
                            return Err(Error::InconsistentOverlap { y, x })
                        }
                        Some(_) => {}
                    }
                }
            }
        }
    }
    let signs = seen
        .into_iter()
        .map(|s| s.expect("tile grid covers the whole padded image"))
        .collect();
    SignPlane::new(h, w, signs)
}

/// Scratch bit rows for [`pack_real_into`]: one `u64` run per padded row,
/// bit `i` of a run being column `i`.
#[derive(Debug, Clone, Default)]
pub struct RowBits {
    words_per_row: usize,
    bits: Vec<u64>,
}

impl RowBits {
    fn reset(&mut self, rows: usize, words_per_row: usize) {
        self.words_per_row = words_per_row;
        self.bits.clear();
        self.bits.resize(rows * words_per_row, 0);
    }
}

/// Binarizes and packs one `h × w` real channel with `pad` pixels of implicit
/// zero padding, writing into `grid`.
///
/// Produces exactly the words [`pack`] would produce from the sign plane of
/// the zero-padded channel; padding binarizes to `sign(0) = +1`.
pub fn pack_real_into(
    plane: &[f32],
    h: usize,
    w: usize,
    pad: usize,
    grid: &mut PackedTileGrid,
    scratch: &mut RowBits,
) -> Result<()> {
    let geom = grid.geometry;
    if plane.len() != h * w {
        return Err(Error::LengthMismatch {
            expected: h * w,
            actual: plane.len(),
        });
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if ph != grid.padded_h() || pw != grid.padded_w() {
        return Err(Error::GeometryMismatch(format!(
            "grid expects a {}x{} padded image, input pads to {ph}x{pw}",
            grid.padded_h(),
            grid.padded_w()
        )));
    }

    let span_y = (grid.tiles_y - 1) * geom.stride_y() + geom.tile_h;
    let span_x = (grid.tiles_x - 1) * geom.stride_x() + geom.tile_w;
    // One spare word so a tile row can always be read as two adjacent words.
    let words_per_row = span_x.div_ceil(64) + 1;
    scratch.reset(span_y, words_per_row);

    scratch.bits[..ph * words_per_row]
        .par_chunks_mut(words_per_row)
        .enumerate()
        .for_each(|(py, row)| {
            if py < pad || py >= pad + h {
                set_ones(row, 0, pw);
                return;
            }
            set_ones(row, 0, pad);
            set_ones(row, pad + w, pad);
            let src = &plane[(py - pad) * w..(py - pad + 1) * w];
            for (i, chunk) in src.chunks(64).enumerate() {
                or_bits(row, pad + 64 * i, sign_mask(chunk));
            }
        });

    let rows = &scratch.bits;
    let tiles_x = grid.tiles_x;
    let (tile_h, tile_w) = (geom.tile_h, geom.tile_w);
    let (sy, sx) = (geom.stride_y(), geom.stride_x());
    grid.words
        .par_chunks_mut(tiles_x)
        .enumerate()
        .for_each(|(ty, out)| {
            let oy = ty * sy;
            for (tx, word) in out.iter_mut().enumerate() {
                let ox = tx * sx;
                let mut acc = 0u64;
                for r in 0..tile_h {
                    let row = &rows[(oy + r) * words_per_row..(oy + r + 1) * words_per_row];
                    acc |= extract(row, ox, tile_w) << (r * tile_w);
                }
                *word = acc;
            }
        });
    Ok(())
}

/// Convenience wrapper around [`pack_real_into`].
pub fn pack_real(
    plane: &[f32],
    h: usize,
    w: usize,
    pad: usize,
    geom: &TileGeometry,
) -> Result<PackedTileGrid> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if ph < geom.kernel_h || pw < geom.kernel_w {
        return Err(Error::ShapeMismatch(format!(
            "{ph}x{pw} padded plane is smaller than the {}x{} kernel",
            geom.kernel_h, geom.kernel_w
        )));
    }
    let mut grid = PackedTileGrid::new(*geom, ph - geom.kernel_h + 1, pw - geom.kernel_w + 1);
    pack_real_into(plane, h, w, pad, &mut grid, &mut RowBits::default())?;
    Ok(grid)
}

/// Bit `i` set iff `chunk[i] >= 0` (so `-0.0` maps to 1). At most 64 values.
#[inline]
fn sign_mask(chunk: &[f32]) -> u64 {
    debug_assert!(chunk.len() <= 64);
    #[cfg(target_arch = "x86_64")]
    if chunk.len() == 64 {
        // SAFETY: SSE2 is part of the x86_64 baseline and the chunk holds
        // exactly 16 groups of 4 floats.
        return unsafe { sign_mask64_sse2(chunk) };
    }
    sign_mask_scalar(chunk)
}

#[inline]
fn sign_mask_scalar(chunk: &[f32]) -> u64 {
    chunk
        .iter()
        .enumerate()
        .fold(0u64, |m, (b, &v)| m | ((v >= 0.0) as u64) << b)
}

#[cfg(target_arch = "x86_64")]
#[inline]
unsafe fn sign_mask64_sse2(chunk: &[f32]) -> u64 {
    use std::arch::x86_64::{_mm_cmpge_ps, _mm_loadu_ps, _mm_movemask_ps, _mm_setzero_ps};
    let zero = _mm_setzero_ps();
    let mut mask = 0u64;
    for g in 0..16 {
        let v = _mm_loadu_ps(chunk.as_ptr().add(4 * g));
        mask |= (_mm_movemask_ps(_mm_cmpge_ps(v, zero)) as u64) << (4 * g);
    }
    mask
}

fn set_ones(row: &mut [u64], start: usize, len: usize) {
    let mut pos = start;
    let end = start + len;
    while pos < end {
        let n = (end - pos).min(64 - pos % 64);
        let ones = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        row[pos / 64] |= ones << (pos % 64);
        pos += n;
    }
}

#[inline(always)]
fn or_bits(row: &mut [u64], pos: usize, bits: u64) {
    let (i, sh) = (pos / 64, pos % 64);
    row[i] |= bits << sh;
    if sh != 0 {
        row[i + 1] |= bits >> (64 - sh);
    }
}

#[inline(always)]
fn extract(row: &[u64], pos: usize, n: usize) -> u64 {
    let (i, sh) = (pos / 64, pos % 64);
    let mut v = row[i] >> sh;
    if sh != 0 {
        v |= row[i + 1] << (64 - sh);
    }
    v & ((1u64 << n) - 1)
}
