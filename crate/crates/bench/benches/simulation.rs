// SPDX-License-Identifier: Apache-2.0

use asrn_core::asrn::InterestWindow;
use asrn_core::experiment::{preset, run_agent};
use asrn_core::{AsrnConfig, AsrnState, RngStream};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn window(c: &mut Criterion) {
    c.bench_function("interest_window_push_median_k1000", |b| {
        let mut w = InterestWindow::new(1000);
        let mut rng = RngStream::new(1);
        b.iter(|| {
            w.push(rng.uniform());
            black_box(w.median())
        })
    });
    c.bench_function("interest_window_push_upper_rms_k10000", |b| {
        let mut w = InterestWindow::new(10_000);
        let mut rng = RngStream::new(1);
        for _ in 0..10_000 {
            w.push(rng.uniform());
        }
        b.iter(|| {
            w.push(rng.uniform());
            black_box(w.upper_rms())
        })
    });
}

fn filter(c: &mut Criterion) {
    c.bench_function("asrn_filter_reward", |b| {
        let mut s = AsrnState::new(AsrnConfig::default(), 2, &mut RngStream::new(0)).unwrap();
        let mut rng = RngStream::new(2);
        let mut t = 0usize;
        b.iter(|| {
            t += 1;
            black_box(s.filter_reward(t % 2, (t % 7) as f64, &mut rng).unwrap())
        })
    });
}

fn agent_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_agent_2000_steps");
    for name in ["fig1_no_asrn", "fig1_asrn"] {
        let mut cfg = preset(name).unwrap().remove(0);
        cfg.n_steps = 2000;
        group.bench_function(name, |b| b.iter(|| black_box(run_agent(&cfg, 0).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, window, filter, agent_run);
criterion_main!(benches);
