//! Shared fixtures for the criterion benchmarks.

use xnor_conv::harness::bench_inputs;
use xnor_conv::{Tensor3, WordBits, XnorConv};

pub const SEED: u64 = 0x5eed;

/// Square single-channel input, 3×3 filter, and a prepared XNOR layer.
pub fn fixture(size: usize, word_bits: WordBits) -> (Tensor3, Tensor3, XnorConv) {
    let (input, weights) = bench_inputs(SEED, 1, 3, size);
    let conv = XnorConv::new(std::slice::from_ref(&weights), word_bits, 1).expect("valid 3x3 filter");
    (input, weights, conv)
}
