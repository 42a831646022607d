use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xnor_conv::harness::{emit_report, run_bench, BenchConfig, ReportFormat, Threads};
use xnor_conv::verify::{run_equivalence, VerifyConfig};
use xnor_conv::{load_tensor, save_tensor, Tensor3, WordBits, XnorConv};

/// Bit-packed XNOR convolution: benchmark, apply, verify.
#[derive(Debug, Parser)]
#[command(name = "xnor-conv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time vanilla and XNOR convolution over a list of input sizes.
    Bench(BenchArgs),
    /// Apply one XNOR convolution to a BTSR tensor file.
    Conv(ConvArgs),
    /// Check the packed engine against the naive sign convolution.
    Verify(VerifyArgs),
    /// Write a random BTSR tensor, uniform in [-1, 1].
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated square input sizes.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Worker threads for the multi-threaded variants: a number or `all`.
    #[arg(long, default_value = "all")]
    threads: Threads,
    #[arg(long, default_value_t = 64, value_parser = parse_word_bits)]
    word_bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `table` or `csv`.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct ConvArgs {
    /// Input tensor, `channels × height × width`.
    #[arg(long)]
    input: PathBuf,
    /// Filters stacked as `(out_channels · in_channels) × k × k`.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Zero padding per side; defaults to `(k - 1) / 2`.
    #[arg(long)]
    pad: Option<usize>,
    #[arg(long, default_value_t = 64, value_parser = parse_word_bits)]
    word_bits: usize,
    #[arg(long, default_value = "all")]
    threads: Threads,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    channels: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn parse_word_bits(s: &str) -> Result<usize, String> {
    let bits: usize = s.parse().map_err(|e| format!("{e}"))?;
    WordBits::from_bits(bits).map(|_| bits).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Bench(args) => bench(args),
        Command::Conv(args) => conv(args),
        Command::Verify(args) => verify(args),
        Command::Gen(args) => generate(args),
    }
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let cfg = BenchConfig {
        sizes: args.sizes,
        kernel: args.kernel,
        channels: args.channels,
        repeats: args.repeats,
        warmup: args.warmup,
        threads: args.threads,
        word_bits: WordBits::from_bits(args.word_bits)?,
        seed: args.seed,
        format: args.format,
    };
    let report = run_bench(&cfg)?;
    if cfg.format == ReportFormat::Table {
        println!(
            "kernel {k}x{k}, {} channel(s), {} repeats, {}-bit words, {} thread(s)\n",
            cfg.channels,
            cfg.repeats,
            args.word_bits,
            report.threads,
            k = cfg.kernel
        );
    }
    print!("{}", emit_report(&report, cfg.format)?);
    Ok(ExitCode::SUCCESS)
}

fn conv(args: ConvArgs) -> Result<ExitCode> {
    let input = load_tensor(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let weights = load_tensor(&args.weights).with_context(|| format!("reading {}", args.weights.display()))?;
    if weights.height() != weights.width() || weights.height() % 2 == 0 {
        bail!(
            "weights must be square with an odd kernel, got {}x{}",
            weights.height(),
            weights.width()
        );
    }
    let pad = args.pad.unwrap_or((weights.height() - 1) / 2);
    let layer = XnorConv::from_stacked(&weights, input.channels(), WordBits::from_bits(args.word_bits)?, pad)?;
    let pool = rayon_pool(args.threads)?;
    let out = pool.install(|| layer.run(&input))?;
    save_tensor(&out, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    eprintln!(
        "{}x{}x{} -> {}x{}x{}",
        input.channels(),
        input.height(),
        input.width(),
        out.channels(),
        out.height(),
        out.width()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let report = run_equivalence(VerifyConfig {
        cases: args.cases,
        seed: args.seed,
    });
    for failure in &report.failures {
        eprintln!("FAIL {failure}");
    }
    println!(
        "{} cases, {} outputs compared, {} mismatching case(s)",
        report.cases,
        report.outputs,
        report.failures.len()
    );
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn generate(args: GenArgs) -> Result<ExitCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let t = Tensor3::from_fn(args.channels, args.height, args.width, |_, _, _| {
        rng.gen_range(-1.0..=1.0)
    })?;
    save_tensor(&t, &args.output)?;
    Ok(ExitCode::SUCCESS)
}

fn rayon_pool(threads: Threads) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads.resolve())
        .build()?)
}
