use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use xnor_conv::harness::parse_csv;
use xnor_conv::{load_tensor, save_tensor, Tensor3, WordBits, XnorConv};

fn xnor_conv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xnor-conv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_conv_matches_library() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.btsr");
    let weights = dir.path().join("w.btsr");
    let output = dir.path().join("out.btsr");

    let gen = |file: &Path, c: &str, h: &str, seed: &str| {
        let o = xnor_conv(&["gen", "--channels", c, "--height", h, "--width", h, "--seed", seed, "--output", path(file)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    gen(&input, "2", "30", "1");
    // Three filters over two input channels, stacked.
    gen(&weights, "6", "3", "2");

    let o = xnor_conv(&[
        "conv", "--input", path(&input), "--weights", path(&weights), "--output", path(&output), "--threads", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = load_tensor(&output).unwrap();
    assert_eq!(out.shape(), (3, 30, 30));

    let layer = XnorConv::from_stacked(&load_tensor(&weights).unwrap(), 2, WordBits::W64, 1).unwrap();
    let expected = layer.run(&load_tensor(&input).unwrap()).unwrap();
    assert_eq!(out.data(), expected.data());
}

#[test]
fn conv_word_sizes_agree_with_explicit_pad() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.btsr");
    let weights = dir.path().join("w.btsr");
    save_tensor(&Tensor3::from_fn(1, 12, 9, |_, y, x| (y as f32 - x as f32) / 7.0).unwrap(), &input).unwrap();
    save_tensor(&Tensor3::from_fn(1, 3, 3, |_, y, x| if (y + x) % 2 == 0 { 0.5 } else { -0.25 }).unwrap(), &weights)
        .unwrap();
    let mut results = Vec::new();
    for bits in ["64", "32"] {
        let output = dir.path().join(format!("out{bits}.btsr"));
        let o = xnor_conv(&[
            "conv", "--input", path(&input), "--weights", path(&weights), "--output", path(&output),
            "--pad", "0", "--word-bits", bits,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        results.push(load_tensor(&output).unwrap());
    }
    assert_eq!(results[0].shape(), (1, 10, 7));
    assert_eq!(results[0], results[1]);
}

#[test]
fn conv_rejects_bad_inputs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.btsr");
    let weights = dir.path().join("w.btsr");
    let output = dir.path().join("out.btsr");
    save_tensor(&Tensor3::zeros(2, 8, 8), &input).unwrap();

    // Even kernel.
    save_tensor(&Tensor3::zeros(2, 2, 2), &weights).unwrap();
    let o = xnor_conv(&["conv", "--input", path(&input), "--weights", path(&weights), "--output", path(&output)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("odd kernel"));

    // Filter channels not a multiple of input channels.
    save_tensor(&Tensor3::zeros(3, 3, 3), &weights).unwrap();
    let o = xnor_conv(&["conv", "--input", path(&input), "--weights", path(&weights), "--output", path(&output)]);
    assert!(!o.status.success());

    // Not a tensor file.
    std::fs::write(&weights, b"nope").unwrap();
    let o = xnor_conv(&["conv", "--input", path(&input), "--weights", path(&weights), "--output", path(&output)]);
    assert!(!o.status.success());
    assert!(!output.exists());
}

#[test]
fn verify_exits_zero() {
    let o = xnor_conv(&["verify", "--cases", "50", "--seed", "9"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("50 cases"), "{stdout}");
    assert!(stdout.contains("0 mismatching"), "{stdout}");
}

#[test]
fn bench_csv_parses() {
    let o = xnor_conv(&[
        "bench", "--sizes", "16,32", "--repeats", "2", "--warmup", "1", "--threads", "2", "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("impl,size,mean_ms,std_ms,speedup\n"));
    let rows = parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.mean_ms > 0.0 && r.speedup > 0.0));
}

#[test]
fn bench_table_has_header_and_rows() {
    let o = xnor_conv(&["bench", "--sizes", "16", "--repeats", "1", "--warmup", "0", "--word-bits", "32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("32-bit words"));
    assert!(text.contains("| Input Size "));
    assert_eq!(text.lines().filter(|l| l.starts_with("| 16x16")).count(), 4, "{text}");
}

#[test]
fn invalid_flags_fail() {
    for args in [
        &["bench", "--word-bits", "16"][..],
        &["bench", "--kernel", "4", "--sizes", "16"],
        &["bench", "--repeats", "0", "--sizes", "16"],
        &["bench", "--threads", "many"],
        &["bench", "--format", "xml"],
        &["frobnicate"],
    ] {
        let o = xnor_conv(args);
        assert!(!o.status.success(), "{args:?} should fail");
    }
}
