//! Trace rollouts of arms that collapse to zero.

use wmdagger_core::config::Config;
use wmdagger_core::envsim::{initial_state, step, success, Renderer, TaskId};
use wmdagger_core::geometry::Action;
use wmdagger_core::harness::{collect_demos, dmd_lite_augment};
use wmdagger_core::math;
use wmdagger_core::policy::{make_chunks, predict_chunk, train_policy, PolicyTrainConfig};
use wmdagger_core::rng::{derive_seed, stream};
use wmdagger_core::synthesis::mean_step_displacement;

fn main() {
    let cfg = Config::from_toml_str(
        "master_seed = 2024\n[policy]\nexecution_stride = 8\nsteps = 3500\nbatch_size = 48\nhidden = [96]\n",
    )
    .unwrap();
    let params = cfg.sim_params().unwrap();
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let demos = collect_demos(TaskId::Push, 5, 2024, 0, &params, &renderer).unwrap();
    let delta = mean_step_displacement(&demos).unwrap();
    let pairs = dmd_lite_augment(&demos, 400, derive_seed(2024, "dmd", 0), delta * 8.0, 2, &params).unwrap();
    println!("dmd pairs: {}", pairs.len());

    let mut training = demos.clone();
    training.extend(pairs);
    let pcfg = PolicyTrainConfig {
        chunk_horizon: 8,
        execution_stride: 8,
        obs_size: 32,
        hidden: vec![96],
        activation: wmdagger_core::nn::Activation::Relu,
        steps: 3500,
        batch_size: 48,
        learning_rate: 3e-3,
        seed: derive_seed(2024, "train:dmd@5", 0),
        heldout_frac: 0.05,
        eval_every: 500,
    };
    let ds = make_chunks(&training, 8, 32).unwrap();
    let (net, report) = train_policy(&ds, &pcfg, 64, 64).unwrap();
    println!("train curve: {:?}", report.train);

    // Trace two eval scenes.
    for trial in 0..2u64 {
        let mut rng = stream(derive_seed(2024, "eval", 0), "eval-scene", trial);
        let mut st = initial_state(TaskId::Push, &params, &mut rng);
        println!(
            "trial {trial}: start tip {:?} obj {:?} target {:?}",
            st.gripper.translation, st.scene.object_pos, st.scene.target_region.center()
        );
        'outer: for chunk_i in 0..15 {
            if success(&st, TaskId::Push) {
                println!("  SUCCESS");
                break;
            }
            let frame = renderer.render(&st);
            let chunk = predict_chunk(&net, &frame).unwrap();
            let obs = st.gripper.translation;
            for rel in chunk.iter().take(8) {
                let cmd = Action {
                    translation: math::add(obs, rel.translation),
                    orientation: rel.orientation,
                    gripper: rel.gripper,
                };
                st = step(&st, &cmd, &params);
                if success(&st, TaskId::Push) {
                    println!("  SUCCESS");
                    break 'outer;
                }
            }
            println!(
                "  chunk {chunk_i:2}: rel0=({:+.3},{:+.3},{:+.3}) rel7=({:+.3},{:+.3},{:+.3}) grip={:.2} -> tip=({:+.3},{:+.3},{:+.3}) obj=({:+.3},{:+.3})",
                chunk[0].translation[0], chunk[0].translation[1], chunk[0].translation[2],
                chunk[7].translation[0], chunk[7].translation[1], chunk[7].translation[2],
                chunk[0].gripper,
                st.gripper.translation[0], st.gripper.translation[1], st.gripper.translation[2],
                st.scene.object_pos[0], st.scene.object_pos[1]
            );
        }
    }
}
