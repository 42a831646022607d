//! Randomised equivalence between the packed engine and the naive integer
//! sign-convolution. Any difference at all is a failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binarizer::{sign_binarize, sign_channels, SignPlane};
use crate::packer::{pack, unpack, TileGeometry, WordBits};
use crate::pipeline::XnorConv;
use crate::reference::sign_conv2d_int;
use crate::tensor::Tensor3;
use crate::xnor::{xnor_conv2d, xnor_conv_multichannel, BinaryFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub cases: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { cases: 1000, seed: 0 }
    }
}

/// Shape of one randomised check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub pad: usize,
    pub word_bits: WordBits,
}

impl Instance {
    /// Height 8–64, width 8–64, 1–4 channels, k ∈ {1, 3}, either word size.
    pub fn random(rng: &mut impl Rng) -> Self {
        let kernel = if rng.gen() { 3 } else { 1 };
        Self {
            height: rng.gen_range(8..=64),
            width: rng.gen_range(8..=64),
            channels: rng.gen_range(1..=4),
            kernel,
            pad: rng.gen_range(0..=(kernel - 1) / 2),
            word_bits: if rng.gen() { WordBits::W64 } else { WordBits::W32 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub cases: usize,
    /// Number of integer outputs compared across all cases.
    pub outputs: usize,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_equivalence(cfg: VerifyConfig) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = VerifyReport::default();
    for case in 0..cfg.cases {
        let inst = Instance::random(&mut rng);
        match check_instance(&inst, &mut rng) {
            Ok(n) => report.outputs += n,
            Err(msg) => report.failures.push(format!("case {case} {inst:?}: {msg}")),
        }
        report.cases += 1;
    }
    report
}

/// Runs every packed route on one random instance and compares each against
/// the reference. Returns the number of outputs compared.
pub fn check_instance(inst: &Instance, rng: &mut impl Rng) -> Result<usize, String> {
    let Instance {
        height: h,
        width: w,
        channels: c,
        kernel: k,
        pad,
        word_bits,
    } = *inst;
    let input = Tensor3::from_fn(c, h, w, |_, _, _| {
        if rng.gen_bool(0.05) {
            0.0
        } else {
            rng.gen_range(-1.0..=1.0)
        }
    })
    .map_err(|e| e.to_string())?;
    let weights = Tensor3::from_fn(c, k, k, |_, _, _| rng.gen_range(-1.0..=1.0)).map_err(|e| e.to_string())?;
    let approx = sign_binarize(&weights);
    let signs = sign_channels(&input);

    let truth = sign_conv2d_int(&signs, &approx.signs, pad).map_err(|e| e.to_string())?;
    let area = k * k;
    truth
        .check_invariants(c, area)
        .map_err(|i| format!("reference violates parity/bound at {i}"))?;

    let geom = TileGeometry::new(word_bits, k, k).map_err(|e| e.to_string())?;
    let filter = BinaryFilter::new(&approx, geom).map_err(|e| e.to_string())?;
    let padded: Vec<SignPlane> = signs.iter().map(|p| p.padded(pad)).collect();
    let grids = padded
        .iter()
        .map(|p| pack(p, &geom))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;

    for (ch, (grid, plane)) in grids.iter().zip(&padded).enumerate() {
        let back = unpack(grid, plane.height(), plane.width()).map_err(|e| e.to_string())?;
        if &back != plane {
            return Err(format!("unpack(pack) differs on channel {ch}"));
        }
        let single = xnor_conv2d(grid, &filter, ch).map_err(|e| e.to_string())?;
        single
            .check_invariants(1, area)
            .map_err(|i| format!("channel {ch} output violates parity/bound at {i}"))?;
    }

    let summed = xnor_conv_multichannel(&grids, &filter).map_err(|e| e.to_string())?;
    if let Some(i) = first_difference(summed.values(), truth.values()) {
        return Err(format!(
            "multichannel output {} != reference {} at {i}",
            summed.values()[i],
            truth.values()[i]
        ));
    }
    summed
        .check_invariants(c, area)
        .map_err(|i| format!("summed output violates parity/bound at {i}"))?;

    // Fused path: binarize + pack straight from real data.
    let conv = XnorConv::new(std::slice::from_ref(&weights), word_bits, pad).map_err(|e| e.to_string())?;
    let mut ws = conv.workspace(h, w).map_err(|e| e.to_string())?;
    ws.retain_intermediates(1);
    let mut out = vec![0.0; truth.values().len()];
    conv.run_into(&input, &mut ws, &mut out).map_err(|e| e.to_string())?;
    if ws.grids() != &grids[..] {
        return Err("fused packing differs from sign-plane packing".into());
    }
    let ints = ws.ints().ok_or("integer planes not retained")?;
    if let Some(i) = first_difference(ints, truth.values()) {
        return Err(format!(
            "pipeline output {} != reference {} at {i}",
            ints[i],
            truth.values()[i]
        ));
    }
    Ok(truth.values().len())
}

fn first_difference(a: &[i32], b: &[i32]) -> Option<usize> {
    if a.len() != b.len() {
        return Some(a.len().min(b.len()));
    }
    a.iter().zip(b).position(|(x, y)| x != y)
}
