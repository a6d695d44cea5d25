use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use rand::Rng;
use ris_core::channels::{synth_bs_ris, BsPlacement, DirectChannel, Link, LosChannel};
use ris_core::codebook::{build_codebook, DEFAULT_REFERENCE};
use ris_core::estimator::{PilotRecord, SearchPlan, SearchSettings};
use ris_core::simulator::experiments::trial_rng;
use ris_core::{ArrayGeometry, CVector, ChannelPoint};

const PILOTS: usize = 6;

fn geometry(n: usize) -> ArrayGeometry {
    ArrayGeometry::at_frequency(n, n, 28e9, 2.0).unwrap()
}

fn record(geom: &ArrayGeometry, link: &Link) -> PilotRecord {
    let mut rng = trial_rng(1, 0);
    let mut rec = PilotRecord::new(geom.len(), 1, 1.0, 0.1).unwrap();
    for _ in 0..PILOTS {
        let theta = CVector::from_fn(geom.len(), |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)));
        let y = link.observe(&mut rng, &theta, 1.0, 0.1);
        rec.push(theta, y.as_slice()).unwrap();
    }
    rec
}

fn codebook(c: &mut Criterion) {
    let mut g = c.benchmark_group("codebook");
    g.sample_size(10);
    for n in [16, 32] {
        let geom = geometry(n);
        let bs = synth_bs_ris(&geom, &BsPlacement::default(), 1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| build_codebook(&geom, &bs, DEFAULT_REFERENCE).unwrap())
        });
    }
    g.finish();
}

fn estimation(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate");
    g.sample_size(10);
    for n in [16, 32] {
        let geom = geometry(n);
        let bs = synth_bs_ris(&geom, &BsPlacement::default(), 1).unwrap();
        let los = LosChannel { beta: 1.0, omega: 0.3, point: ChannelPoint::far(0.4, -0.2).unwrap() };
        let link = Link::new(bs.clone(), los.dense(&geom), DirectChannel::from_polar(2.0, 1.0).coeffs).unwrap();
        let rec = record(&geom, &link);
        let plan = SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap();
        g.bench_with_input(BenchmarkId::new("plan", n), &n, |b, _| {
            b.iter(|| SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("batch", n), &n, |b, _| {
            b.iter(|| plan.estimate(black_box(&rec), &bs).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("incremental", n), &n, |b, _| {
            b.iter(|| {
                let mut t = plan.tracker(&bs, 1.0, 0.1).unwrap();
                for l in 0..rec.len() {
                    t.push(rec.configs()[l].clone(), &[rec.sample(l, 0)]).unwrap();
                }
                t.estimate().unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, codebook, estimation);
criterion_main!(benches);
