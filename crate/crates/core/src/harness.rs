//! Benchmark protocol: vanilla full-precision convolution against the packed
//! XNOR pipeline, single- and multi-threaded, over a list of square sizes.
//!
//! Buffers, packed filters and thread pools are set up before timing. The
//! timed region covers one compute call; for the XNOR pipeline that includes
//! binarizing and packing the input as well as the `K` path. Every size is
//! preceded by an oracle gate, and the run aborts if the gate fails.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use crate::binarizer::{sign_binarize, sign_channels};
use crate::error::{Error, Result};
use crate::packer::WordBits;
use crate::pipeline::XnorConv;
use crate::reference::{bwn_conv, conv2d_float, conv2d_float_into, conv2d_float_par_into, scale_field_naive, sign_conv2d_int};
use crate::tensor::Tensor3;

pub const VANILLA_1T: &str = "vanilla-1t";
pub const VANILLA_MT: &str = "vanilla-mt";
pub const XNOR_1T: &str = "xnor-1t";
pub const XNOR_MT: &str = "xnor-mt";
pub const IMPLEMENTATIONS: [&str; 4] = [VANILLA_1T, VANILLA_MT, XNOR_1T, XNOR_MT];

/// Relative agreement required by the oracle gate.
pub const GATE_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    #[default]
    All,
    Count(usize),
}

impl Threads {
    pub fn resolve(self) -> usize {
        match self {
            Threads::All => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Threads::Count(n) => n,
        }
    }
}

impl FromStr for Threads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Threads::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Threads::Count(n)),
            _ => Err(Error::InvalidConfig(format!("threads must be `all` or a positive integer, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("format must be `table` or `csv`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub kernel: usize,
    pub channels: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: Threads,
    pub word_bits: WordBits,
    pub seed: u64,
    pub format: ReportFormat,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256, 512, 1024, 2048],
            kernel: 3,
            channels: 1,
            repeats: 100,
            warmup: 10,
            threads: Threads::All,
            word_bits: WordBits::W64,
            seed: 0,
            format: ReportFormat::Table,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sizes.is_empty() {
            return fail("at least one size is required".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be >= 1".into());
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel must be odd, got {}", self.kernel));
        }
        let (tile_h, tile_w) = self.word_bits.tile_dims();
        if self.kernel > tile_h.min(tile_w) {
            return fail(format!(
                "kernel {} does not fit a {tile_h}x{tile_w} tile",
                self.kernel
            ));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if let Threads::Count(0) = self.threads {
            return fail("threads must be >= 1".into());
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s == 0) {
            return fail(format!("size must be positive, got {s}"));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "impl")]
    pub implementation: String,
    pub size: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Thread count used by the `-mt` implementations.
    pub threads: usize,
}

impl BenchReport {
    pub fn row(&self, implementation: &str, size: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.implementation == implementation && r.size == size)
    }

    pub fn speedup(&self, implementation: &str, size: usize) -> Option<f64> {
        self.row(implementation, size).map(|r| r.speedup)
    }
}

/// The vanilla implementation a row's speed-up is measured against: the
/// single-threaded baseline for `-1t` rows, the multi-threaded one otherwise.
pub fn baseline_of(implementation: &str) -> &'static str {
    if implementation.ends_with("-mt") {
        VANILLA_MT
    } else {
        VANILLA_1T
    }
}

/// Deterministic benchmark input (`channels × size × size`) and filter
/// (`channels × kernel × kernel`), uniform in [−1, 1].
pub fn bench_inputs(seed: u64, channels: usize, kernel: usize, size: usize) -> (Tensor3, Tensor3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (size as u64).rotate_left(32));
    let input = Tensor3::from_fn(channels, size, size, |_, _, _| rng.gen_range(-1.0..=1.0))
        .expect("uniform samples are finite");
    let weights = Tensor3::from_fn(channels, kernel, kernel, |_, _, _| rng.gen_range(-1.0..=1.0))
        .expect("uniform samples are finite");
    (input, weights)
}

fn build_pool(threads: usize) -> Result<ThreadPool> {
    ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build a {threads}-thread pool: {e}")))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let threads = cfg.threads.resolve();
    let single = build_pool(1)?;
    let multi = build_pool(threads)?;
    let pad = cfg.pad();

    sign_dominated_gate(cfg, &multi)?;

    let mut report = BenchReport {
        rows: Vec::with_capacity(cfg.sizes.len() * IMPLEMENTATIONS.len()),
        threads,
    };
    for &size in &cfg.sizes {
        let (input, weights) = bench_inputs(cfg.seed, cfg.channels, cfg.kernel, size);
        let conv = XnorConv::new(std::slice::from_ref(&weights), cfg.word_bits, pad)?;
        let mut ws = conv.workspace(size, size)?;
        let (oh, ow) = ws.out_dims();
        let mut out = [vec![0.0f32; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow]];

        let [van1, vanmt, x1, xmt] = &mut out;
        conv2d_float_into(&input, &weights, pad, van1)?;
        multi.install(|| conv2d_float_par_into(&input, &weights, pad, vanmt))?;
        single.install(|| conv.run_into(&input, &mut ws, x1))?;
        multi.install(|| conv.run_into(&input, &mut ws, xmt))?;
        data_gate(&input, &weights, pad, &out)?;

        let [van1, vanmt, x1, xmt] = &mut out;
        let timings = time_interleaved::<4>(cfg, |i| match i {
            0 => conv2d_float_into(&input, &weights, pad, van1),
            1 => multi.install(|| conv2d_float_par_into(&input, &weights, pad, vanmt)),
            2 => single.install(|| conv.run_into(&input, &mut ws, x1)),
            _ => multi.install(|| conv.run_into(&input, &mut ws, xmt)),
        })?;
        for (label, &(mean_ms, std_ms)) in IMPLEMENTATIONS.iter().zip(&timings) {
            let base = IMPLEMENTATIONS.iter().position(|l| *l == baseline_of(label)).unwrap();
            report.rows.push(BenchRow {
                implementation: label.to_string(),
                size,
                mean_ms,
                std_ms,
                speedup: timings[base].0 / mean_ms,
            });
        }
    }
    Ok(report)
}

/// Mean and population standard deviation in milliseconds for each of the
/// implementations `run(0..N)`. Repeats are round-robin across
/// implementations so slow phases of the host hit all of them alike.
fn time_interleaved<const N: usize>(
    cfg: &BenchConfig,
    mut run: impl FnMut(usize) -> Result<()>,
) -> Result<[(f64, f64); N]> {
    for _ in 0..cfg.warmup {
        for i in 0..N {
            run(i)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.repeats); N];
    for _ in 0..cfg.repeats {
        for (i, s) in samples.iter_mut().enumerate() {
            let start = Instant::now();
            run(i)?;
            s.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(std::array::from_fn(|i| {
        let s = &samples[i];
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }))
}

fn rel_close(got: f32, expected: f32, scale: f32) -> bool {
    (got - expected).abs() <= GATE_TOLERANCE * expected.abs().max(scale)
}

/// On inputs of constant magnitude the approximation is exact away from the
/// border, so the XNOR pipeline must agree with both full-precision routes.
fn sign_dominated_gate(cfg: &BenchConfig, pool: &ThreadPool) -> Result<()> {
    const SIZE: usize = 48;
    let (m, a) = (0.75f32, 0.5f32);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut signed = |v: f32| if rng.gen() { v } else { -v };
    let input = Tensor3::from_fn(cfg.channels, SIZE, SIZE, |_, _, _| signed(m))?;
    let weights = Tensor3::from_fn(cfg.channels, cfg.kernel, cfg.kernel, |_, _, _| signed(a))?;
    let pad = cfg.pad();

    let conv = XnorConv::new(std::slice::from_ref(&weights), cfg.word_bits, pad)?;
    let xnor = pool.install(|| conv.run(&input))?;
    let full = conv2d_float(&input, &weights, pad)?;
    let bwn = bwn_conv(&input, &sign_binarize(&weights), pad)?;

    let (oh, ow) = (full.height(), full.width());
    for y in pad..oh - pad {
        for x in pad..ow - pad {
            let got = xnor.get(0, y, x);
            for (name, expected) in [("vanilla", full.get(y, x)), ("bwn", bwn.get(y, x))] {
                if !rel_close(got, expected, m * a) {
                    return Err(Error::OracleGate(format!(
                        "xnor {got} vs {name} {expected} at ({y}, {x}) on sign-dominated input"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Checks the outputs the timed implementations produced on the real data:
/// threaded variants must be bit-identical to their single-threaded twins and
/// the XNOR result must match the naive composition of sign convolution, `K`
/// and `α`.
fn data_gate(input: &Tensor3, weights: &Tensor3, pad: usize, out: &[Vec<f32>; 4]) -> Result<()> {
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&out[0]) != bits(&out[1]) {
        return Err(Error::OracleGate("vanilla-mt differs from vanilla-1t".into()));
    }
    if bits(&out[2]) != bits(&out[3]) {
        return Err(Error::OracleGate("xnor-mt differs from xnor-1t".into()));
    }
    let approx = sign_binarize(weights);
    let ints = sign_conv2d_int(&sign_channels(input), &approx.signs, pad)?;
    let k = scale_field_naive(input, weights.height(), weights.width(), pad)?;
    for (i, (&v, &kv)) in ints.values().iter().zip(k.data()).enumerate() {
        let expected = v as f32 * kv * approx.alpha;
        if !rel_close(out[2][i], expected, f32::MIN_POSITIVE) {
            return Err(Error::OracleGate(format!(
                "xnor {} vs reference {expected} at flat index {i}",
                out[2][i]
            )));
        }
    }
    Ok(())
}

pub fn emit_report(report: &BenchReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(emit_table(report)),
        ReportFormat::Csv => emit_csv(report),
    }
}

fn emit_table(report: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| {:<11} | {:<10} | {:<10} | {:>13} | {:>10} | {:>9} | {:>9} |",
        "Input Size", "Impl", "Baseline", "Baseline (ms)", "Impl (ms)", "Std (ms)", "Speed-up"
    );
    let _ = writeln!(
        s,
        "|{}|{}|{}|{}|{}|{}|{}|",
        "-".repeat(13),
        "-".repeat(12),
        "-".repeat(12),
        "-".repeat(15),
        "-".repeat(12),
        "-".repeat(11),
        "-".repeat(11)
    );
    for row in &report.rows {
        let baseline = baseline_of(&row.implementation);
        let base_ms = report
            .row(baseline, row.size)
            .map_or_else(|| "-".to_string(), |b| format!("{:.3}", b.mean_ms));
        let _ = writeln!(
            s,
            "| {:<11} | {:<10} | {:<10} | {:>13} | {:>10.3} | {:>9.3} | {:>8.2}× |",
            format!("{0}x{0}", row.size),
            row.implementation,
            baseline,
            base_ms,
            row.mean_ms,
            row.std_ms,
            row.speedup
        );
    }
    s
}

fn emit_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["impl", "size", "mean_ms", "std_ms", "speedup"])?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses the CSV produced by [`emit_report`].
pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
