//! Microbenchmarks for the operations that dominate training time: the
//! receiver capacity model, the per-carrier Lagrangian maximization, the
//! truncated-Gaussian policy primitives, one MLP forward/backward pair, and
//! one full iteration of each solver.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rofso_core::capacity::{capacity, AnalyticOracle, SystemParams, Weights};
use rofso_core::channel::ChannelParams;
use rofso_core::mlp;
use rofso_core::pddl::{self, PddlConfig};
use rofso_core::policy::TruncatedGaussian;
use rofso_core::rng::{stream_rng, Stream};
use rofso_core::sdg::{self, primal_step, SdgConfig};

fn channel(m: usize) -> ChannelParams {
    ChannelParams::new(
        ChannelParams::wavelength_grid(m, 1.52e-6, 5e-9),
        1e-4,
        1000.0,
        0.05,
        0.1,
        0.1,
        3e9,
    )
    .unwrap()
}

fn bench_capacity(c: &mut Criterion) {
    let sys = SystemParams::default();
    c.bench_function("capacity_eval", |b| {
        b.iter(|| capacity(black_box(0.17), black_box(1.2e-8), &sys))
    });
}

fn bench_primal_step(c: &mut Criterion) {
    let sys = SystemParams::default();
    let cfg = SdgConfig::defaults_for(1.2);
    c.bench_function("sdg_primal_step", |b| {
        b.iter(|| {
            primal_step(
                black_box(6.5),
                black_box(1.2e-8),
                black_box(0.7),
                &sys,
                0.3,
                &cfg,
            )
        })
    });
}

fn bench_policy_primitives(c: &mut Criterion) {
    let dist = TruncatedGaussian::new(0.11, 0.04, 0.0, 0.3).unwrap();
    let mut rng = stream_rng(1, Stream::Eval);
    c.bench_function("truncated_gaussian_sample", |b| {
        b.iter(|| dist.sample(&mut rng))
    });
    c.bench_function("truncated_gaussian_grad_log_pdf", |b| {
        b.iter(|| dist.grad_log_pdf(black_box(0.13)).unwrap())
    });
}

fn bench_mlp(c: &mut Criterion) {
    let spec = mlp::MlpSpec::new(vec![1, 20, 10, 5, 2]).unwrap();
    let mut rng = stream_rng(2, Stream::PddlInit);
    let params = mlp::init(&spec, &mut rng);
    c.bench_function("mlp_forward_backward", |b| {
        b.iter(|| {
            let (out, cache) = mlp::forward(&spec, &params, &[black_box(0.4)]).unwrap();
            mlp::backward(&spec, &params, &cache, &[out[0], out[1]]).unwrap()
        })
    });
}

fn bench_solver_iterations(c: &mut Criterion) {
    let chan = channel(8);
    let sys = SystemParams::default();
    let mut wrng = stream_rng(3, Stream::Weights);
    let weights = Weights::random_uniform(8, &mut wrng);

    let mut sdg_cfg = SdgConfig::defaults_for(1.2);
    sdg_cfg.iterations = 1;
    c.bench_function("sdg_iteration_m8_s32", |b| {
        b.iter(|| {
            let mut rng = stream_rng(4, Stream::SdgTrain);
            sdg::run(&sdg_cfg, &chan, &sys, &weights, 1.2, 0.3, &mut rng, None).unwrap()
        })
    });

    let mut pddl_cfg = PddlConfig::defaults_for(1.2);
    pddl_cfg.iterations = 1;
    pddl_cfg.warmup_batches = 1;
    c.bench_function("pddl_iteration_m8_s32", |b| {
        b.iter(|| {
            let oracle = AnalyticOracle::new(sys.clone());
            let mut init = stream_rng(5, Stream::PddlInit);
            let mut train = stream_rng(5, Stream::PddlTrain);
            pddl::run(
                &pddl_cfg,
                &chan,
                &weights,
                1.2,
                0.3,
                &oracle,
                &mut init,
                &mut train,
                None,
            )
            .unwrap()
        })
    });
}

fn bench_csi_sampling(c: &mut Criterion) {
    let chan = channel(8);
    let mut rng = stream_rng(6, Stream::SdgTrain);
    c.bench_function("sample_csi_m8_s32", |b| {
        b.iter(|| chan.sample_csi(&mut rng, 32))
    });
    // Keep `rand::Rng` in use for direct draws alongside the channel API.
    c.bench_function("raw_uniform_draw", |b| b.iter(|| rng.random::<f64>()));
}

criterion_group!(
    benches,
    bench_capacity,
    bench_primal_step,
    bench_policy_primitives,
    bench_mlp,
    bench_solver_iterations,
    bench_csi_sampling
);
criterion_main!(benches);
