//! Experiment records and report emission: JSON log, CSV summary table, and
//! SVG charts (success-rate bars plus the data-scaling curve).

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{HarnessError, MethodName};
use crate::config::Config;
use crate::filtering::FilterReport;
use crate::stats::{two_proportion_test, wilson_interval, ProportionTest};
use crate::storage::StorageError;

/// One (method, training seed) evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub method: MethodName,
    pub task: String,
    pub n_demos: usize,
    pub synth_episodes: usize,
    pub seed_index: u64,
    pub successes: u32,
    pub trials: u32,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub synthesized_episodes: usize,
    pub retained_episodes: usize,
    pub expert_pairs: usize,
    pub synthesized_pairs: usize,
    pub final_train_loss: f64,
    pub train_converged: bool,
}

/// Per-label aggregate over training seeds (pooled successes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub method: MethodName,
    pub task: String,
    pub n_demos: usize,
    pub synth_episodes: usize,
    pub seeds: Vec<u64>,
    pub successes: u32,
    pub trials: u32,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: u64,
    /// Effective configuration, canonically serialized.
    pub effective_config: String,
    pub arms: Vec<ArmResult>,
    pub summaries: Vec<MethodSummary>,
    pub filter_reports: Vec<FilterReport>,
}

impl ExperimentReport {
    pub fn assemble(
        cfg: &Config,
        arms: Vec<ArmResult>,
        filter_reports: Vec<FilterReport>,
    ) -> ExperimentReport {
        // Summaries in config order.
        let mut summaries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for arm in &arms {
            if !seen.insert(arm.label.clone()) {
                continue;
            }
            let group: Vec<&ArmResult> = arms.iter().filter(|a| a.label == arm.label).collect();
            let successes: u32 = group.iter().map(|a| a.successes).sum();
            let trials: u32 = group.iter().map(|a| a.trials).sum();
            let (ci_low, ci_high) = wilson_interval(successes, trials);
            summaries.push(MethodSummary {
                label: arm.label.clone(),
                method: arm.method,
                task: arm.task.clone(),
                n_demos: arm.n_demos,
                synth_episodes: arm.synth_episodes,
                seeds: group.iter().map(|a| a.seed_index).collect(),
                successes,
                trials,
                success_rate: f64::from(successes) / f64::from(trials.max(1)),
                ci_low,
                ci_high,
            });
        }
        ExperimentReport {
            config_hash: cfg.hash(),
            effective_config: cfg.to_toml_string(),
            arms,
            summaries,
            filter_reports,
        }
    }

    pub fn summary(&self, label: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// One-sided test of `label_a` beating `label_b` on pooled counts.
    pub fn compare(&self, label_a: &str, label_b: &str) -> Option<ProportionTest> {
        let a = self.summary(label_a)?;
        let b = self.summary(label_b)?;
        Some(two_proportion_test(
            a.successes,
            a.trials,
            b.successes,
            b.trials,
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,method,task,n_demos,synth_episodes,seeds,successes,trials,success_rate,ci_low,ci_high\n",
        );
        for s in &self.summaries {
            let seeds = s
                .seeds
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("|");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                s.label,
                s.method.as_str(),
                s.task,
                s.n_demos,
                s.synth_episodes,
                seeds,
                s.successes,
                s.trials,
                s.success_rate,
                s.ci_low,
                s.ci_high
            ));
        }
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Bar chart of summary success rates.
pub fn success_rate_svg(report: &ExperimentReport) -> String {
    let n = report.summaries.len().max(1);
    let (w, h) = (120 + n * 110, 360usize);
    let plot_h = 260.0f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(
        "<text x=\"20\" y=\"30\" font-family=\"sans-serif\" font-size=\"16\">Success rate by method</text>\n",
    );
    for (i, s) in report.summaries.iter().enumerate() {
        let x = 70 + i * 110;
        let bar_h = plot_h * s.success_rate;
        let y = 40.0 + plot_h - bar_h;
        let (lo, hi) = (s.ci_low, s.ci_high);
        let y_lo = 40.0 + plot_h - plot_h * lo;
        let y_hi = 40.0 + plot_h - plot_h * hi;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.1}\" width=\"70\" height=\"{bar_h:.1}\" fill=\"#4878cf\"/>\n"
        ));
        let cx = x + 35;
        svg.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{y_hi:.1}\" x2=\"{cx}\" y2=\"{y_lo:.1}\" stroke=\"#333333\" stroke-width=\"2\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{:.1}%</text>\n",
            y - 6.0,
            s.success_rate * 100.0
        ));
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"330\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line chart of success rate against synthesized-episode count over the
/// wm_dagger-named summaries; empty when fewer than two points exist.
pub fn scaling_svg(report: &ExperimentReport) -> Option<String> {
    let mut points: Vec<(usize, f64)> = report
        .summaries
        .iter()
        .filter(|s| s.method == MethodName::WmDagger)
        .map(|s| (s.synth_episodes, s.success_rate))
        .collect();
    points.sort_unstable_by_key(|(n, _)| *n);
    points.dedup_by_key(|(n, _)| *n);
    if points.len() < 2 {
        return None;
    }
    let (w, h) = (560usize, 360usize);
    let (x0, y0, pw, ph) = (70.0f64, 40.0f64, 440.0f64, 260.0f64);
    let max_n = points.last().unwrap().0 as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(
        "<text x=\"20\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\">Success rate vs synthesized episodes</text>\n",
    );
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333333\"/>\n",
        y0 + ph,
        x0 + pw,
        y0 + ph
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{:.1}\" stroke=\"#333333\"/>\n",
        y0 + ph
    ));
    let coords: Vec<(f64, f64)> = points
        .iter()
        .map(|(n, r)| (x0 + pw * (*n as f64) / max_n, y0 + ph - ph * r))
        .collect();
    let path = coords
        .iter()
        .map(|(x, y)| format!("{x:.1},{y:.1}"))
        .collect::<Vec<_>>()
        .join(" ");
    svg.push_str(&format!(
        "<polyline points=\"{path}\" fill=\"none\" stroke=\"#c44e52\" stroke-width=\"2\"/>\n"
    ));
    for ((n, r), (x, y)) in points.iter().zip(&coords) {
        svg.push_str(&format!(
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"#c44e52\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{n}: {:.1}%</text>\n",
            y - 10.0,
            r * 100.0
        ));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| {
            HarnessError::Storage(StorageError::Io {
                path: parent.to_path_buf(),
                source: e,
            })
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| {
        HarnessError::Storage(StorageError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Write `report.csv`, `report.json`, `filter_report.json`, and the figures
/// into the run directory.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<(), HarnessError> {
    write(&out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    write(&out_dir.join("report.json"), &json)?;
    let filters = serde_json::to_vec_pretty(&report.filter_reports).expect("filters serialize");
    write(&out_dir.join("filter_report.json"), &filters)?;
    write(
        &out_dir.join("figures/success_rates.svg"),
        success_rate_svg(report).as_bytes(),
    )?;
    if let Some(svg) = scaling_svg(report) {
        write(&out_dir.join("figures/scaling.svg"), svg.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ExperimentReport {
        let cfg = Config::default();
        let arm = |label: &str, method: MethodName, synth: usize, seed: u64, s: u32| ArmResult {
            label: label.into(),
            method,
            task: "push".into(),
            n_demos: 5,
            synth_episodes: synth,
            seed_index: seed,
            successes: s,
            trials: 20,
            success_rate: f64::from(s) / 20.0,
            ci_low: 0.0,
            ci_high: 1.0,
            synthesized_episodes: synth,
            retained_episodes: synth / 2,
            expert_pairs: 100,
            synthesized_pairs: synth * 8,
            final_train_loss: 1e-4,
            train_converged: true,
        };
        ExperimentReport::assemble(
            &cfg,
            vec![
                arm("bc", MethodName::Bc, 0, 0, 4),
                arm("bc", MethodName::Bc, 0, 1, 6),
                arm("wm@100", MethodName::WmDagger, 100, 0, 14),
                arm("wm@100", MethodName::WmDagger, 100, 1, 15),
                arm("wm@400", MethodName::WmDagger, 400, 0, 18),
                arm("wm@400", MethodName::WmDagger, 400, 1, 17),
            ],
            vec![],
        )
    }

    /// Minimal well-formedness check: tags balance and nest properly.
    fn assert_well_formed_xml(doc: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = doc;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed tag") + start;
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray </{name}>"));
                assert_eq!(open, name, "mismatched tag");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn summaries_pool_over_seeds_in_config_order() {
        let report = sample_report();
        assert_eq!(report.summaries.len(), 3);
        let bc = report.summary("bc").unwrap();
        assert_eq!(bc.successes, 10);
        assert_eq!(bc.trials, 40);
        assert_eq!(bc.seeds, vec![0, 1]);
        assert_eq!(report.summaries[0].label, "bc");
    }

    #[test]
    fn csv_has_one_row_per_method_plus_header() {
        let report = sample_report();
        let csv = report.to_csv();
        let rows: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(rows.len(), report.summaries.len() + 1);
        assert!(rows[0].starts_with("label,method,task"));
    }

    #[test]
    fn json_round_trips() {
        let report = sample_report();
        let json = serde_json::to_string(&report).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn svgs_are_well_formed_xml() {
        let report = sample_report();
        assert_well_formed_xml(&success_rate_svg(&report));
        let scaling = scaling_svg(&report).expect("two scaling points");
        assert_well_formed_xml(&scaling);
    }

    #[test]
    fn compare_runs_the_one_sided_test() {
        let report = sample_report();
        let t = report.compare("wm@400", "bc").unwrap();
        assert!(t.p_value < 0.05);
        assert!(report.compare("bc", "missing").is_none());
    }
}
