//! Scratch calibration runs for the experiment harness.

use wmdagger_core::config::Config;
use wmdagger_core::harness::run_experiment;

fn main() {
    let text = r#"
master_seed = 2024

[wm.hallucination]
morph_amplitude = 0.5
drift_rate = 0.1
corruption_probability = 0.5

[policy]
execution_stride = 8
steps = 3500
batch_size = 48
hidden = [96]

[harness]
eval_trials = 100
eval_max_steps = 120
train_seeds = [0]
expert_gate_scenes = 20

[[harness.methods]]
name = "bc"
label = "bc@1"
n_demos = 1
synth_episodes = 0

[[harness.methods]]
name = "bc"
label = "bc@5"
n_demos = 5
synth_episodes = 0

[[harness.methods]]
name = "dmd_lite"
label = "dmd@5"
n_demos = 5
synth_episodes = 400

[[harness.methods]]
name = "wm_dagger"
label = "wm@1"
n_demos = 1
synth_episodes = 400

[[harness.methods]]
name = "wm_dagger_no_dir"
label = "wm_nodir@5"
n_demos = 5
synth_episodes = 400

[[harness.methods]]
name = "wm_dagger_no_filter"
label = "wm_nofilter@5"
n_demos = 5
synth_episodes = 400

[[harness.methods]]
name = "wm_dagger"
label = "wm5@800"
n_demos = 5
synth_episodes = 800

[[harness.methods]]
name = "wm_dagger"
label = "wm@5"
n_demos = 5
synth_episodes = 400

[[harness.methods]]
name = "wm_dagger"
label = "wm5@50"
n_demos = 5
synth_episodes = 50

[[harness.methods]]
name = "wm_dagger"
label = "wm5@150"
n_demos = 5
synth_episodes = 150

"#;
    let cfg = Config::from_toml_str(text).unwrap();
    let dir = std::env::temp_dir().join("wmdagger-scratch");
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = std::time::Instant::now();
    let report = run_experiment(&cfg, &dir).unwrap();
    for s in &report.summaries {
        println!(
            "{:14} demos={} synth={:4} -> {:3}/{} = {:.3}",
            s.label, s.n_demos, s.synth_episodes, s.successes, s.trials, s.success_rate
        );
    }
    for a in &report.arms {
        println!(
            "  {:14} seed{} loss={:.3e} conv={} pairs={}+{} retained={}",
            a.label, a.seed_index, a.final_train_loss, a.train_converged,
            a.expert_pairs, a.synthesized_pairs, a.retained_episodes
        );
    }
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
}
