//! Frozen preset reproducing the four closed-loop curves of the cluster-count comparison.

use std::path::Path;

use kedmd_mpc::sim::compare_runs;
use kedmd_mpc::ClosedLoopTrace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{file_sha256, path_in, write_json, Provenance, TRACE_META_FILE};
use crate::config::{ExperimentConfig, Stage};
use crate::error::{CliError, CliResult};
use crate::pipeline::{run_all, TraceReport};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// `(label, d, pi_variant)` of each curve, in column order of the comparison CSV.
pub const RUNS: [(&str, usize, bool); 4] = [
    ("pi_kedmd_d1327", 1327, true),
    ("kedmd_d1327", 1327, false),
    ("pi_kedmd_d352", 352, true),
    ("kedmd_d352", 352, false),
];

/// Qualitative checks on the four curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Checks {
    /// PI, d = 1327 gets below `1e-3` and then keeps decreasing by at least a decade.
    pub pi_converges: bool,
    /// Plateau of plain kEDMD, d = 1327, over the PI plateau; must be at least 10.
    pub plateau_ratio: f64,
    pub plateau_separated: bool,
    /// PI final error, d = 1327 over d = 352; must be below 1.
    pub final_error_ratio: f64,
    pub finer_grid_better: bool,
}

impl Fig1Checks {
    pub fn passed(&self) -> bool {
        self.pi_converges && self.plateau_separated && self.finer_grid_better
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig1Summary {
    pub provenance: Provenance,
    pub runs: Vec<TraceReport>,
    pub checks: Fig1Checks,
}

/// Config of one curve: study defaults with the seed of `base`.
pub fn run_config(base: &ExperimentConfig, root: &Path, label: &str, d: usize, pi: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: base.seed, ..ExperimentConfig::default() };
    c.data.d = d;
    c.pi_variant = pi;
    c.out_dir = root.join(label);
    c
}

pub fn evaluate(
    pi_fine_trace: &ClosedLoopTrace,
    pi_fine: &TraceReport,
    plain_fine: &TraceReport,
    pi_coarse: &TraceReport,
) -> Fig1Checks {
    let norms = pi_fine_trace.norms();
    let first_hit = norms.iter().position(|&v| v <= 1e-3);
    let final_error = pi_fine.metrics.final_error;
    let pi_converges = first_hit.is_some_and(|k| final_error <= 0.1 * norms[k]);
    let plateau_ratio = plain_fine.metrics.plateau / pi_fine.metrics.plateau;
    let final_error_ratio = final_error / pi_coarse.metrics.final_error;
    Fig1Checks {
        pi_converges,
        plateau_ratio,
        plateau_separated: plateau_ratio >= 10.0,
        final_error_ratio,
        finer_grid_better: final_error_ratio < 1.0,
    }
}

/// Runs the four pipelines in parallel under `<out>/fig1` and writes the comparison.
pub fn reproduce_fig1(base: &ExperimentConfig) -> CliResult<Fig1Summary> {
    let root = base.out_dir.join("fig1");
    std::fs::create_dir_all(&root)?;
    let results: Vec<CliResult<(TraceReport, ClosedLoopTrace)>> = RUNS
        .par_iter()
        .map(|&(label, d, pi)| {
            let c = run_config(base, &root, label, d, pi);
            std::fs::create_dir_all(&c.out_dir)?;
            write_json(&path_in(&c.out_dir, CONFIG_FILE), &c)?;
            run_all(&c, label)
        })
        .collect();

    let mut runs = Vec::with_capacity(RUNS.len());
    let mut failures = Vec::new();
    for (result, (label, _, _)) in results.into_iter().zip(RUNS) {
        match result {
            Ok(r) => runs.push(r),
            Err(e) => failures.push((label, e)),
        }
    }
    if !failures.is_empty() {
        let certificate = failures.iter().all(|(_, e)| matches!(e, CliError::Certificate(_)));
        let msg = failures.iter().map(|(l, e)| format!("{l}: {e}")).collect::<Vec<_>>().join("; ");
        return Err(if certificate { CliError::Certificate(msg) } else { CliError::Input(msg) });
    }

    let traces: Vec<ClosedLoopTrace> = runs.iter().map(|(_, t)| t.clone()).collect();
    let reports: Vec<TraceReport> = runs.into_iter().map(|(r, _)| r).collect();
    compare_runs(std::fs::File::create(root.join(COMPARISON_FILE))?, &traces)?;

    let checks = evaluate(&traces[0], &reports[0], &reports[1], &reports[2]);
    let mut provenance = Provenance::new(base, Stage::Simulate);
    provenance.stage = "reproduce-fig1".into();
    let run_hashes: String = RUNS
        .iter()
        .map(|&(label, d, pi)| run_config(base, &root, label, d, pi).stage_hash(Stage::Simulate))
        .collect();
    provenance.config_hash = crate::config::sha256_hex(run_hashes.as_bytes());
    for (label, _, _) in RUNS {
        provenance.inputs.insert(format!("{label}/{TRACE_META_FILE}"), file_sha256(&root.join(label).join(TRACE_META_FILE))?);
    }
    provenance.outputs.insert(COMPARISON_FILE.into(), file_sha256(&root.join(COMPARISON_FILE))?);
    let summary = Fig1Summary { provenance, runs: reports, checks };
    write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
