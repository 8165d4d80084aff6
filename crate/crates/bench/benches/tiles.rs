use criterion::{criterion_group, criterion_main, Criterion};
use image::{Rgb, RgbImage};
use inkwash_core::simulator::{build_benchmark, synthesize_clean_tiles};
use inkwash_core::tiles::{reassemble, slice_slide};

fn tiling(c: &mut Criterion) {
    let slide = RgbImage::from_fn(4000, 3000, |x, y| {
        Rgb([(x % 251) as u8, (y % 241) as u8, ((x ^ y) % 256) as u8])
    });
    c.bench_function("slice 4000x3000 @1578", |b| {
        b.iter(|| slice_slide(&slide, 1578, "s").unwrap())
    });
    let (tiles, manifest) = slice_slide(&slide, 1578, "s").unwrap();
    c.bench_function("reassemble 4000x3000 @1578", |b| {
        b.iter(|| reassemble(&tiles, &manifest).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let clean = synthesize_clean_tiles(8, 256, 3);
    c.bench_function("synthesize 8 tiles @256", |b| {
        b.iter(|| synthesize_clean_tiles(8, 256, 3))
    });
    c.bench_function("ink 8 pairs @256", |b| {
        b.iter(|| build_benchmark(&clean, 8, 4).unwrap())
    });
}

criterion_group!(benches, tiling, simulation);
criterion_main!(benches);
