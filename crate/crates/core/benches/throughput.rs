//! Throughput benches for the data-parallel pipeline stages.
//!
//! Build once with the default `parallel` feature and once with
//! `--no-default-features` to compare the rayon path against the sequential
//! fallback, e.g.:
//!
//! ```text
//! cargo bench -p wmdagger-core -- --save-baseline parallel
//! cargo bench -p wmdagger-core --no-default-features -- --baseline parallel
//! ```
//!
//! Work items derive their RNG streams from their index, so both builds
//! produce identical outputs.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use wmdagger_core::envsim::{initial_state, Renderer, SimParams, TaskId};
use wmdagger_core::filtering::{filter_batch, FilterCandidate, HandcraftedEmbedder};
use wmdagger_core::harness::collect_demos;
use wmdagger_core::policy::{self, PolicyTrainConfig};
use wmdagger_core::rng::stream;
use wmdagger_core::synthesis::{synthesize_batch, SynthesisConfig};
use wmdagger_core::worldmodel::{HallucinationConfig, OracleWm};

fn bench_render(c: &mut Criterion) {
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let mut rng = stream(1, "bench-render", 0);
    let state = initial_state(TaskId::Push, &params, &mut rng);
    c.bench_function("render_64x64", |b| b.iter(|| renderer.render(&state)));
}

fn bench_synthesis(c: &mut Criterion) {
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 2, 7, 0, &params, &renderer).unwrap();
    let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
    let cfg = SynthesisConfig {
        episodes: 64,
        seed: 3,
        ..SynthesisConfig::default()
    };
    c.bench_function("synthesize_64_episodes", |b| {
        b.iter(|| synthesize_batch(&demos, &wm, &cfg, 2, &params).unwrap())
    });
}

fn bench_filtering(c: &mut Criterion) {
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 2, 9, 0, &params, &renderer).unwrap();
    let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
    let cfg = SynthesisConfig {
        episodes: 64,
        seed: 5,
        ..SynthesisConfig::default()
    };
    let (episodes, _) = synthesize_batch(&demos, &wm, &cfg, 2, &params).unwrap();
    let embedder = HandcraftedEmbedder::new(64, 64);
    c.bench_function("filter_64_episodes", |b| {
        b.iter(|| {
            let candidates: Vec<FilterCandidate> = episodes
                .iter()
                .map(|e| {
                    let demo = demos.iter().find(|d| d.id == e.source_id).unwrap();
                    FilterCandidate {
                        id: e.recovery.id,
                        terminal: &e.terminal_frame,
                        anchor: &demo.steps[e.pivot as usize].frame,
                    }
                })
                .collect();
            filter_batch(&embedder, &candidates, "bench").unwrap()
        })
    });
}

fn bench_policy_training(c: &mut Criterion) {
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 3, 11, 0, &params, &renderer).unwrap();
    let cfg = PolicyTrainConfig {
        steps: 50,
        obs_size: 16,
        hidden: vec![32],
        ..PolicyTrainConfig::default()
    };
    let ds = policy::make_chunks(&demos, cfg.chunk_horizon, cfg.obs_size).unwrap();
    c.bench_function("policy_train_50_steps", |b| {
        b.iter_batched(
            || ds.clone(),
            |ds| policy::train_policy(&ds, &cfg, 64, 64).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_evaluation(c: &mut Criterion) {
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 2, 13, 0, &params, &renderer).unwrap();
    let cfg = PolicyTrainConfig {
        steps: 100,
        obs_size: 16,
        hidden: vec![32],
        ..PolicyTrainConfig::default()
    };
    let ds = policy::make_chunks(&demos, cfg.chunk_horizon, cfg.obs_size).unwrap();
    let (net, _) = policy::train_policy(&ds, &cfg, 64, 64).unwrap();
    c.bench_function("evaluate_16_episodes", |b| {
        b.iter(|| policy::evaluate(&net, TaskId::Push, 16, 17, 60, 4, &params).unwrap())
    });
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_render,
    bench_synthesis,
    bench_filtering,
    bench_policy_training,
    bench_evaluation
);
criterion_main!(benches);
