//! Re-checks every artifact in an output directory against the config and its inputs.

use kedmd_mpc::ModelDocument;
use serde::Serialize;

use crate::artifact::*;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{BoundsBody, ControllerBody, DatasetBody, TraceReport, HELDOUT_RATE_LIMIT};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactStatus {
    pub file: String,
    /// `None` when the artifact is current.
    pub problem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub artifacts: Vec<ArtifactStatus>,
    /// Certificate failures recorded in current artifacts.
    pub certificate_failures: Vec<String>,
}

fn check<T: serde::de::DeserializeOwned>(
    config: &ExperimentConfig,
    file: &str,
    failures: &mut Vec<String>,
    inspect: impl Fn(&T, &mut Vec<String>),
) -> Option<ArtifactStatus> {
    let dir = config.out_dir.as_path();
    if !path_in(dir, file).exists() {
        return None;
    }
    let result = load_artifact::<T>(dir, file, config).map(|loaded| inspect(&loaded.value.body, failures));
    Some(ArtifactStatus { file: file.to_string(), problem: result.err().map(|e| e.to_string()) })
}

/// Stale or unreadable artifacts map to exit code 1, certificate failures to 2.
pub fn verify(config: &ExperimentConfig) -> CliResult<VerifyReport> {
    let dir = config.out_dir.as_path();
    let mut failures = Vec::new();
    let mut artifacts = Vec::new();

    artifacts.extend(check::<DatasetBody>(config, DATASET_FILE, &mut failures, |_, _| {}));
    if path_in(dir, MODEL_FILE).exists() {
        let r = load_with_embedded(dir, MODEL_FILE, config, |d: &ModelDocument| d.provenance.as_ref());
        artifacts.push(ArtifactStatus { file: MODEL_FILE.into(), problem: r.err().map(|e| e.to_string()) });
    }
    artifacts.extend(check::<BoundsBody>(config, BOUNDS_FILE, &mut failures, |b, f| {
        if let Some(h) = &b.bounds.heldout {
            if h.violation_rate > HELDOUT_RATE_LIMIT {
                f.push(format!("{BOUNDS_FILE}: held-out violation rate {:.3}%", 100.0 * h.violation_rate));
            }
        }
    }));
    artifacts.extend(check::<ControllerBody>(config, CONTROLLER_FILE, &mut failures, |c, f| {
        if c.mpc.horizon > c.horizon_limits.box_rule {
            f.push(format!("{CONTROLLER_FILE}: horizon {} above box-rule limit {}", c.mpc.horizon, c.horizon_limits.box_rule));
        }
        if !c.calibration.check.passed() {
            f.push(format!("{CONTROLLER_FILE}: terminal level check failed"));
        }
    }));
    artifacts.extend(check::<TraceReport>(config, TRACE_META_FILE, &mut failures, |t, f| {
        f.extend(t.failures().into_iter().map(|m| format!("{TRACE_META_FILE}: {m}")));
    }));

    if artifacts.is_empty() {
        return Err(CliError::Missing(dir.join(DATASET_FILE).display().to_string(), "generate"));
    }
    let report = VerifyReport { artifacts, certificate_failures: failures };
    let stale: Vec<&str> = report.artifacts.iter().filter(|a| a.problem.is_some()).map(|a| a.file.as_str()).collect();
    for a in &report.artifacts {
        match &a.problem {
            None => eprintln!("ok      {}", a.file),
            Some(p) => eprintln!("FAILED  {}: {p}", a.file),
        }
    }
    if !stale.is_empty() {
        return Err(CliError::Stale(format!("{} failed verification", stale.join(", "))));
    }
    if !report.certificate_failures.is_empty() {
        return Err(CliError::Certificate(report.certificate_failures.join("; ")));
    }
    Ok(report)
}
