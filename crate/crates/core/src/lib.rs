//! Bit-packed XNOR convolution.
//!
//! Inputs and weights are reduced to their signs, packed into overlapping
//! machine-word tiles, and convolved with XOR + popcount. Magnitude is
//! restored afterwards with a per-pixel input scale `K` and a per-filter
//! weight scale `α`:
//!
//! ```text
//! I ∗ W ≈ (sign(I) ⊛ sign(W)) ⊙ K · α
//! ```
//!
//! The [`reference`] module holds naive full-precision and integer
//! convolutions that serve both as test oracles and as the timing baseline
//! used by [`harness`].

pub mod binarizer;
pub mod error;
pub mod harness;
pub mod packer;
pub mod pipeline;
pub mod reference;
pub mod scaling;
pub mod tensor;
pub mod verify;
pub mod xnor;

pub use binarizer::{gamma, sign, sign_binarize, sign_channels, sign_plane, BinaryWeightApprox, SignPlane};
pub use error::{Error, Result};
pub use packer::{pack, pack_real, tile_grid_shape, unpack, PackedTileGrid, TileGeometry, WordBits};
pub use pipeline::{Workspace, XnorConv};
pub use scaling::{apply_scaling, box_kernel, compute_k, ScalingField};
pub use tensor::{channel_abs_mean, load_tensor, save_tensor, zero_pad, Tensor2, Tensor3};
pub use xnor::{popcount_to_signed, xnor_conv2d, xnor_conv_multichannel, xnor_tile, BinaryFilter, IntOutputPlane};
