use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use xnor_conv::packer::{pack_real_into, PackedTileGrid, RowBits};
use xnor_conv::reference::conv2d_float_into;
use xnor_conv::xnor::xnor_conv_multichannel_into;
use xnor_conv::WordBits;
use xnor_conv_bench::fixture;

const SIZES: [usize; 3] = [256, 512, 1024];

fn vanilla_vs_xnor(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for size in SIZES {
        group.throughput(Throughput::Elements((size * size) as u64));
        let (input, weights, conv) = fixture(size, WordBits::W64);
        let mut out = vec![0.0f32; size * size];
        group.bench_with_input(BenchmarkId::new("vanilla", size), &size, |b, _| {
            b.iter(|| conv2d_float_into(black_box(&input), &weights, 1, &mut out).unwrap())
        });
        for bits in [WordBits::W64, WordBits::W32] {
            let (_, _, conv) = if bits == WordBits::W64 { (input.clone(), weights.clone(), conv.clone()) } else { fixture(size, bits) };
            let mut ws = conv.workspace(size, size).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("xnor-{}", bits.bits()), size), &size, |b, _| {
                b.iter(|| conv.run_into(black_box(&input), &mut ws, &mut out).unwrap())
            });
        }
    }
    group.finish();
}

fn stages(c: &mut Criterion) {
    let size = 1024;
    let (input, _, conv) = fixture(size, WordBits::W64);
    let geom = *conv.geometry();
    let mut grid = PackedTileGrid::new(geom, size, size);
    let mut rows = RowBits::default();
    let mut group = c.benchmark_group("stages-1024");
    group.bench_function("pack", |b| {
        b.iter(|| pack_real_into(black_box(input.channel(0)), size, size, 1, &mut grid, &mut rows).unwrap())
    });
    let mut ints = vec![0i32; size * size];
    group.bench_function("xnor-popcount", |b| {
        b.iter(|| {
            xnor_conv_multichannel_into(std::slice::from_ref(black_box(&grid)), &conv.filters()[0], &mut ints).unwrap()
        })
    });
    let mut out = vec![0.0f32; size * size];
    let mut ws = conv.workspace(size, size).unwrap();
    group.bench_function("pipeline", |b| b.iter(|| conv.run_into(black_box(&input), &mut ws, &mut out).unwrap()));
    group.finish();
}

criterion_group!(benches, vanilla_vs_xnor, stages);
criterion_main!(benches);
