//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Oracles here are independent routes (full matrix
//! inversion, difference-then-normalize, finite differences, closed-form
//! flows) rather than the library's fast paths.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmdagger_core::config::Config;
use wmdagger_core::envsim::{replay, Frame, Renderer, SimParams, TaskId};
use wmdagger_core::filtering::{filter_batch, FilterCandidate, HandcraftedEmbedder};
use wmdagger_core::geometry::{dense_geo_condition, ray_grid, Action, CameraIntrinsics, CameraPose};
use wmdagger_core::harness::{collect_demos, run_experiment};
use wmdagger_core::math::{self, random_unit_quat, Vec3};
use wmdagger_core::nn::{finite_difference_grad, max_relative_error};
use wmdagger_core::policy;
use wmdagger_core::rng::{derive_seed, stream};
use wmdagger_core::stats::two_proportion_test;
use wmdagger_core::storage;
use wmdagger_core::synthesis::{mean_step_displacement, synthesize_batch, SynthesisConfig};
use wmdagger_core::trajectory::{Provenance, Trajectory};
use wmdagger_core::worldmodel::{
    rf_loss, rf_loss_grad, rf_noise, rf_train, FlowBatchItem, FlowConditions, FlowExample,
    FlowNet, FlowTrainConfig, HallucinationConfig, LambdaWeight, LatentFrame, OracleWm,
};

fn random_pose(rng: &mut impl Rng) -> CameraPose {
    CameraPose {
        rotation: random_unit_quat(rng).to_matrix(),
        origin: [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ],
    }
}

fn random_intrinsics(rng: &mut impl Rng) -> CameraIntrinsics {
    let w = rng.gen_range(2..=6u32);
    let h = rng.gen_range(2..=6u32);
    CameraIntrinsics::new(
        rng.gen_range(0.5..4.0),
        rng.gen_range(0.5..4.0),
        rng.gen_range(0.0..f64::from(w) - 1e-9),
        rng.gen_range(0.0..f64::from(h) - 1e-9),
        w,
        h,
    )
    .unwrap()
}

/// Independent ray route: full 3x3 inversion of K, rotate, normalize.
fn oracle_ray(pose: &CameraPose, k: &CameraIntrinsics, u: u32, v: u32) -> Vec3 {
    let k_inv = math::invert(&k.matrix(), 1e-15).unwrap();
    let cam = math::mat_vec(&k_inv, [f64::from(u), f64::from(v), 1.0]);
    math::normalize(math::mat_vec(&pose.rotation, cam), 0.0).unwrap()
}

#[test]
fn criterion_1_geometry_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst_ray = 0.0f64;
    let mut worst_cond = 0.0f64;

    for _ in 0..1000 {
        let pose_t = random_pose(&mut rng);
        let pose_i = random_pose(&mut rng);
        let k = random_intrinsics(&mut rng);
        let g = rng.gen_range(0.0..=1.0);

        let grid = ray_grid(&pose_t, &k).unwrap();
        let cond = dense_geo_condition(&pose_t, &pose_i, &k, g).unwrap();
        let delta_o = math::sub(pose_i.origin, pose_t.origin);

        for v in 0..k.height {
            for u in 0..k.width {
                let oracle = oracle_ray(&pose_t, &k, u, v);
                for c in 0..3 {
                    worst_ray =
                        worst_ray.max((grid[(v as usize, u as usize, c)] - oracle[c]).abs());
                }
                // Condition oracle: difference-then-normalize of the two
                // oracle rays, with the zero-motion convention.
                let d_t = oracle;
                let d_i = oracle_ray(&pose_i, &k, u, v);
                let shift =
                    math::normalize(math::sub(d_i, d_t), 1e-9).unwrap_or([0.0, 0.0, 0.0]);
                for c in 0..3 {
                    worst_cond = worst_cond
                        .max((cond.data[(v as usize, u as usize, c)] - delta_o[c]).abs());
                    worst_cond = worst_cond
                        .max((cond.data[(v as usize, u as usize, 3 + c)] - shift[c]).abs());
                }
                worst_cond = worst_cond.max((cond.data[(v as usize, u as usize, 6)] - g).abs());
            }
        }
    }
    assert!(worst_ray < 1e-9, "ray grid deviates {worst_ray}");
    assert!(worst_cond < 1e-9, "geo condition deviates {worst_cond}");

    // Pure translation: directional shift identically zero.
    for _ in 0..50 {
        let pose_t = random_pose(&mut rng);
        let pose_i = CameraPose {
            rotation: pose_t.rotation,
            origin: math::add(pose_t.origin, [0.1, -0.2, 0.3]),
        };
        let k = random_intrinsics(&mut rng);
        let cond = dense_geo_condition(&pose_t, &pose_i, &k, 0.5).unwrap();
        for v in 0..k.height as usize {
            for u in 0..k.width as usize {
                for c in 3..6 {
                    assert_eq!(cond.data[(v, u, c)], 0.0, "pure translation shift");
                }
            }
        }
        // Identity motion: all motion channels zero.
        let same = dense_geo_condition(&pose_t, &pose_t, &k, 0.5).unwrap();
        for v in 0..k.height as usize {
            for u in 0..k.width as usize {
                for c in 0..6 {
                    assert_eq!(same.data[(v, u, c)], 0.0, "identity motion");
                }
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1}s (budget 10s)");
    println!(
        "criterion 1: PASS (ray max dev {worst_ray:.2e}, condition max dev {worst_cond:.2e}, {elapsed:.1}s)"
    );
}

#[test]
fn criterion_2_rectified_flow_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);

    // Eq. 4 endpoints hold exactly for random latents.
    for _ in 0..200 {
        let x = LatentFrame::from_flat(
            &(0..16).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>(),
            4,
            4,
        );
        let eps = LatentFrame::from_flat(
            &(0..16).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>(),
            4,
            4,
        );
        assert_eq!(rf_noise(&x, 0.0, &eps).unwrap(), x);
        assert_eq!(rf_noise(&x, 1.0, &eps).unwrap(), eps);
    }

    // Perfect predictor: zero loss when the target velocity is zero.
    let mut zero_rng = stream(1, "acc-c2", 0);
    let mut zero_net = FlowNet::init(2, 2, 1, &[3], &mut zero_rng);
    for p in &mut zero_net.mlp.params {
        *p = 0.0;
    }
    let cond = FlowConditions {
        context: vec![0.2; 4],
        geo: [0.0; 8],
    };
    let same = FlowBatchItem {
        x: vec![0.4; 4],
        eps: vec![0.4; 4],
        lambda: 0.3,
        cond: cond.clone(),
    };
    assert_eq!(rf_loss(&zero_net, &[same], LambdaWeight::Constant), 0.0);

    // Analytic gradient vs central finite differences on a <= 100-param net.
    let net = FlowNet::init(2, 2, 1, &[3], &mut zero_rng);
    assert!(net.mlp.n_params() <= 100);
    let batch: Vec<FlowBatchItem> = (0..6)
        .map(|_| FlowBatchItem {
            x: (0..4).map(|_| zero_rng.gen_range(-1.0..1.0)).collect(),
            eps: (0..4).map(|_| zero_rng.gen_range(-1.0..1.0)).collect(),
            lambda: zero_rng.gen_range(0.0..=1.0),
            cond: cond.clone(),
        })
        .collect();
    let (_, analytic) = rf_loss_grad(&net, &batch, LambdaWeight::Constant);
    let numeric = finite_difference_grad(
        &net.mlp,
        |m| {
            let probe = FlowNet {
                mlp: m.clone(),
                ..net.clone()
            };
            rf_loss(&probe, &batch, LambdaWeight::Constant)
        },
        1e-5,
    );
    let grad_err = max_relative_error(&analytic, &numeric);
    assert!(grad_err < 1e-4, "gradient relative error {grad_err}");

    // Single-transition overfit below 10% of the initial loss within 2000
    // steps.
    let mut overfit_rng = stream(2, "acc-c2", 1);
    let mut overfit_net = FlowNet::init(2, 2, 1, &[24], &mut overfit_rng);
    let example = FlowExample {
        x: vec![0.7, 0.1, 0.4, 0.9],
        cond: cond.clone(),
    };
    let mut eval_rng = stream(3, "acc-c2", 2);
    let eval: Vec<FlowBatchItem> = (0..64)
        .map(|_| FlowBatchItem {
            x: example.x.clone(),
            eps: (0..4)
                .map(|_| {
                    use rand_distr::StandardNormal;
                    eval_rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
            lambda: eval_rng.gen_range(0.0..=1.0),
            cond: cond.clone(),
        })
        .collect();
    let initial = rf_loss(&overfit_net, &eval, LambdaWeight::Constant);
    rf_train(
        &mut overfit_net,
        &[example],
        &FlowTrainConfig {
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 5,
            heldout_frac: 0.0,
            weight: LambdaWeight::Constant,
            eval_every: 500,
        },
    )
    .unwrap();
    let trained = rf_loss(&overfit_net, &eval, LambdaWeight::Constant);
    assert!(
        trained < 0.1 * initial,
        "overfit loss {trained} vs initial {initial}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 took {elapsed:.1}s (budget 60s)");
    println!(
        "criterion 2: PASS (grad err {grad_err:.2e}, overfit {:.3}% of initial, {elapsed:.1}s)",
        100.0 * trained / initial
    );
}

#[test]
fn criterion_3_synthesis_invariants() {
    let start = Instant::now();
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 3, 0xC3, 0, &params, &renderer).unwrap();
    let wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
    let cfg = SynthesisConfig {
        deviation_horizon: 8,
        angular_threshold_deg: 120.0,
        pivot_margin: 2,
        episodes: 10_000,
        seed: 0xC3,
        enforce_direction: true,
    };
    let mean_delta = mean_step_displacement(&demos).unwrap();
    let (episodes, stats) = synthesize_batch(&demos, &wm, &cfg, 2, &params).unwrap();
    assert_eq!(episodes.len(), 10_000, "failed episodes: {}", stats.failed_episodes);

    let mut checked_pairs = 0usize;
    for e in &episodes {
        let demo = demos.iter().find(|d| d.id == e.source_id).unwrap();
        let pivot = &demo.steps[e.pivot as usize];
        // Angular constraint.
        let next = math::sub(pivot.action.translation, pivot.observed_pose.translation);
        let t_hat = math::normalize(next, 0.0).unwrap();
        assert!(
            math::dot(e.deviation_dir, t_hat) <= -0.5 + 1e-9,
            "angular violation"
        );
        // Anchor closure to 1e-12.
        let last = e.recovery.steps.last().unwrap();
        for c in 0..3 {
            assert!(
                (last.action.translation[c] - pivot.observed_pose.translation[c]).abs() < 1e-12
            );
        }
        // Step-norm conformance and anti-opposition of every kept pair.
        for s in &e.recovery.steps {
            let step_vec = math::sub(s.action.translation, s.observed_pose.translation);
            assert!((math::norm(step_vec) - mean_delta).abs() < 1e-12);
            // Recovery displacements never oppose the expert's next motion.
            assert!(math::dot(step_vec, t_hat) >= -1e-12, "opposing supervision");
            checked_pairs += 1;
        }
        assert_eq!(e.recovery.len(), cfg.deviation_horizon);
        assert_eq!(e.recovery.provenance, Provenance::Synthesized);
    }

    // No deviation-phase supervision reaches a training set: chunking the
    // retained trajectories yields exactly k pairs per episode, all tagged
    // synthesized (inwardness was asserted per pair above).
    let sample: Vec<Trajectory> = episodes[..64].iter().map(|e| e.recovery.clone()).collect();
    let ds = policy::make_chunks(&sample, 8, 16).unwrap();
    assert_eq!(ds.len(), 64 * cfg.deviation_horizon);
    assert!(ds
        .pairs
        .iter()
        .all(|p| p.provenance == Provenance::Synthesized));

    // Direction-acceptance rate within 3 sigma of the spherical-cap value.
    let rate = stats.acceptance_rate();
    let sigma = (0.25 * 0.75 / stats.direction_attempts as f64).sqrt();
    assert!(
        (rate - 0.25).abs() < 3.0 * sigma,
        "acceptance {rate} vs 0.25 +- {sigma}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 3 took {elapsed:.1}s (budget 60s)");
    println!(
        "criterion 3: PASS (10^4 episodes, {checked_pairs} pairs, acceptance {rate:.4}, {elapsed:.1}s)"
    );
}

#[test]
fn criterion_4_filtering_efficacy() {
    let start = Instant::now();
    let params = SimParams::default();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let embedder = HandcraftedEmbedder::new(64, 64);
    let demos = collect_demos(TaskId::Push, 3, 0xC4, 0, &params, &renderer).unwrap();
    let clean_wm = OracleWm::new(params.clone(), HallucinationConfig::clean());
    let mean_delta = mean_step_displacement(&demos).unwrap();
    let _ = mean_delta;

    let base = SynthesisConfig {
        deviation_horizon: 8,
        angular_threshold_deg: 120.0,
        pivot_margin: 2,
        episodes: 10,
        seed: 0,
        enforce_direction: true,
    };

    let mut corrupted_total = 0u32;
    let mut corrupted_discarded = 0u32;
    let mut clean_total = 0u32;
    let mut clean_discarded = 0u32;
    let mut all_clean_retained = 0usize;
    let mut all_clean_count = 0usize;

    for batch_idx in 0..50u64 {
        let corrupt_wm = OracleWm::new(
            params.clone(),
            HallucinationConfig {
                morph_amplitude: 0.5,
                drift_rate: 0.1,
                corruption_probability: 1.0,
                seed: derive_seed(0xC4, "hal", batch_idx),
            },
        );
        let cfg_a = SynthesisConfig {
            seed: derive_seed(0xC4, "batch-clean", batch_idx),
            ..base
        };
        let cfg_b = SynthesisConfig {
            seed: derive_seed(0xC4, "batch-corrupt", batch_idx),
            ..base
        };
        let (clean_eps, _) = synthesize_batch(&demos, &clean_wm, &cfg_a, 2, &params).unwrap();
        let (corrupt_eps, _) = synthesize_batch(&demos, &corrupt_wm, &cfg_b, 2, &params).unwrap();

        // Mixed batch: ids below 1000 are clean, above are corrupted.
        let mut candidates = Vec::new();
        let anchor_of = |e: &wmdagger_core::synthesis::SynthesizedTrajectory| -> &Frame {
            let demo = demos.iter().find(|d| d.id == e.source_id).unwrap();
            &demo.steps[e.pivot as usize].frame
        };
        for (i, e) in clean_eps.iter().enumerate() {
            candidates.push(FilterCandidate {
                id: i as u64,
                terminal: &e.terminal_frame,
                anchor: anchor_of(e),
            });
        }
        for (i, e) in corrupt_eps.iter().enumerate() {
            candidates.push(FilterCandidate {
                id: 1000 + i as u64,
                terminal: &e.terminal_frame,
                anchor: anchor_of(e),
            });
        }
        let report = filter_batch(&embedder, &candidates, "c4-mixed").unwrap();
        for id in &report.discarded {
            if *id >= 1000 {
                corrupted_discarded += 1;
            } else {
                clean_discarded += 1;
            }
        }
        corrupted_total += corrupt_eps.len() as u32;
        clean_total += clean_eps.len() as u32;

        // All-clean batches retain at least 95%.
        let clean_candidates: Vec<FilterCandidate> = clean_eps
            .iter()
            .enumerate()
            .map(|(i, e)| FilterCandidate {
                id: i as u64,
                terminal: &e.terminal_frame,
                anchor: anchor_of(e),
            })
            .collect();
        let clean_report = filter_batch(&embedder, &clean_candidates, "c4-clean").unwrap();
        all_clean_retained += clean_report.retained.len();
        all_clean_count += clean_candidates.len();
    }

    let test = two_proportion_test(
        corrupted_discarded,
        corrupted_total,
        clean_discarded,
        clean_total,
    );
    assert!(
        test.p_value < 0.05,
        "corrupted discard rate not significantly higher: p={} ({corrupted_discarded}/{corrupted_total} vs {clean_discarded}/{clean_total})",
        test.p_value
    );
    let clean_retention = all_clean_retained as f64 / all_clean_count as f64;
    assert!(
        clean_retention >= 0.95,
        "all-clean retention {clean_retention}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "criterion 4: PASS (corrupted discard {corrupted_discarded}/{corrupted_total}, clean discard {clean_discarded}/{clean_total}, p={:.2e}, clean retention {clean_retention:.3}, {elapsed:.1}s)",
        test.p_value
    );
}

#[test]
fn criterion_9_determinism_and_persistence() {
    let start = Instant::now();
    let text = r#"
master_seed = 77

[synthesis]
episodes = 12

[policy]
steps = 120
hidden = [16]
obs_size = 16

[harness]
eval_trials = 8
eval_max_steps = 50
train_seeds = [0]
expert_gate_scenes = 4

[[harness.methods]]
name = "bc"
label = "bc"
n_demos = 2
synth_episodes = 0

[[harness.methods]]
name = "wm_dagger"
label = "wm_dagger"
n_demos = 2
synth_episodes = 12
"#;
    let cfg = Config::from_toml_str(text).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir_a.path()).unwrap();
    run_experiment(&cfg, dir_b.path()).unwrap();
    let csv_a = std::fs::read(dir_a.path().join("report.csv")).unwrap();
    let csv_b = std::fs::read(dir_b.path().join("report.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "report.csv not byte-identical");

    // Dataset round trip is bit-exact.
    let params = cfg.sim_params().unwrap();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 3, 77, 0, &params, &renderer).unwrap();
    let ds_dir = tempfile::tempdir().unwrap();
    storage::save_dataset(
        &demos,
        ds_dir.path(),
        &storage::DatasetMeta {
            task: "push".into(),
            global_seed: 77,
            config_hash: cfg.hash(),
        },
    )
    .unwrap();
    let (loaded, _) = storage::load_dataset(ds_dir.path()).unwrap();
    assert_eq!(demos, loaded, "dataset round trip");

    // Checkpoint reload reproduces evaluation results exactly.
    let chunks = policy::make_chunks(&demos, 4, 16).unwrap();
    let pcfg = policy::PolicyTrainConfig {
        chunk_horizon: 4,
        execution_stride: 2,
        obs_size: 16,
        hidden: vec![16],
        activation: wmdagger_core::nn::Activation::Relu,
        steps: 150,
        batch_size: 32,
        learning_rate: 3e-3,
        seed: 7,
        heldout_frac: 0.0,
        eval_every: 50,
    };
    let (net, _) = policy::train_policy(&chunks, &pcfg, 64, 64).unwrap();
    let before = policy::evaluate(&net, TaskId::Push, 10, 99, 40, 2, &params).unwrap();

    let ckpt = ds_dir.path().join("policy.ckpt");
    storage::save_checkpoint(
        &ckpt,
        storage::CheckpointKind::Policy,
        net.config_hash(),
        &net.mlp.params,
    )
    .unwrap();
    let mut rng = stream(0, "reload", 0);
    let mut reloaded = policy::PolicyNet::init(&pcfg, 64, 64, &mut rng);
    reloaded.mlp.params =
        storage::load_checkpoint(&ckpt, storage::CheckpointKind::Policy, net.config_hash())
            .unwrap();
    assert_eq!(net.mlp.params, reloaded.mlp.params, "checkpoint params");
    let after = policy::evaluate(&reloaded, TaskId::Push, 10, 99, 40, 2, &params).unwrap();
    assert_eq!(before, after, "evaluation after reload");

    // Full-episode replay reproduces logged frames exactly.
    let demo = &demos[0];
    let actions: Vec<Action> = demo.steps.iter().map(|s| s.action).collect();
    let states = replay(demo.initial_state.as_ref().unwrap(), &actions, &params);
    for (step, state) in demo.steps.iter().zip(&states) {
        assert_eq!(step.frame, renderer.render(state), "replayed frame");
    }

    let elapsed = start.elapsed().as_secs_f64();
    println!("criterion 9: PASS (byte-identical reports, exact round trips, {elapsed:.1}s)");
}

// Criteria 5-8 share one seeded experiment; see the headline module.
mod headline;
