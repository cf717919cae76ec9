use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use zombihub_bench::{hub_with_listeners, motion_envelope};
use zombihub_core::osc::{encode_osc, OscArg};
use zombihub_core::{decode_envelope, encode_envelope, TransportClock};

fn codec(c: &mut Criterion) {
    let env = motion_envelope(42);
    let text = encode_envelope(&env).unwrap();
    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("encode motion", |b| b.iter(|| encode_envelope(black_box(&env)).unwrap()));
    g.bench_function("decode motion", |b| b.iter(|| decode_envelope(black_box(&text)).unwrap()));
    g.finish();
}

fn fan_out(c: &mut Criterion) {
    let mut g = c.benchmark_group("publish fan-out");
    for listeners in [1usize, 8, 31] {
        let (mut hub, mut seq) = hub_with_listeners(listeners);
        g.throughput(Throughput::Elements(listeners as u64));
        g.bench_with_input(BenchmarkId::from_parameter(listeners), &listeners, |b, _| {
            b.iter(|| {
                let text = encode_envelope(&motion_envelope(seq)).unwrap();
                seq += 1;
                hub.on_frame(0, &text, seq);
                black_box(hub.take_outputs())
            })
        });
    }
    g.finish();
}

fn osc(c: &mut Criterion) {
    let args = [OscArg::Float(0.12), OscArg::Float(-9.79), OscArg::Float(0.4)];
    c.bench_function("osc encode 3 floats", |b| {
        b.iter(|| encode_osc(black_box("/motion/tilt"), black_box(&args)).unwrap())
    });
}

fn clock(c: &mut Criterion) {
    let clock = TransportClock::new(133.7, 4, 16, 1_000, 3).unwrap();
    let mut t = 0u64;
    c.bench_function("clock step_at", |b| {
        b.iter(|| {
            t = t.wrapping_add(7_919);
            clock.step_at(black_box(t))
        })
    });
}

criterion_group!(benches, codec, fan_out, osc, clock);
criterion_main!(benches);
