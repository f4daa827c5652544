//! The stages of the experiment pipeline. Each reads its upstream artifacts
//! from the output directory, checks they are current, and writes its own.

use std::path::Path;

use kedmd_mpc::bounds::{certify, validate_heldout, write_verification_csv};
use kedmd_mpc::dataset::fill_distance;
use kedmd_mpc::padua::{build_observation_grid, degree_for_grid_size};
use kedmd_mpc::sim::{decrease_violations, write_trace_csv};
use kedmd_mpc::terminal::Calibration;
use kedmd_mpc::tightening::{max_feasible_horizon, max_horizon_box_rule};
use kedmd_mpc::{
    build_cluster_dataset, design_terminal, Dynamics, fit_control_affine, run_closed_loop, trace_metrics, AxisBox,
    CertifiedBounds, ClosedLoopTrace, ClusterDataset, KernelSpec, ModelDocument, MpcConfig, MpcController,
    OcpStatus, SurrogateModel, TerminalConfig, TraceMetrics,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::*;
use crate::config::{ExperimentConfig, Stage};
use crate::error::{CliError, CliResult};

/// Held-out violation rate above which the bounds are rejected.
pub const HELDOUT_RATE_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub plant_id: String,
    pub d: usize,
    pub triplets_per_cluster: usize,
    pub cluster_radius: f64,
    /// Fill distance of the cluster points in the sampling box.
    pub fill_distance: f64,
    pub successors_outside_domain: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBody {
    pub summary: DatasetSummary,
    pub dataset: ClusterDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsBody {
    pub bounds: CertifiedBounds,
    /// Largest error on the held-out grid of `S x {0}`.
    pub zero_input_max_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonLimits {
    /// Largest `N` with every tightened box nonempty.
    pub box_rule: usize,
    /// Largest `N` for which a terminal set also survives in the last tightened box.
    pub survival_rule: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerBody {
    pub horizon_limits: HorizonLimits,
    pub calibration: Calibration,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub label: String,
    pub steps: usize,
    pub pi_variant: bool,
    pub metrics: TraceMetrics,
    /// `|x(k)|` below which the decrease check is not applied.
    pub decrease_threshold: f64,
    pub decrease_violations: usize,
    pub infeasible_steps: usize,
    pub final_state: Vec<f64>,
    pub truncated_at: Option<usize>,
}

impl TraceReport {
    /// Certificate failures seen in the run, empty when all checks passed.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(k) = self.truncated_at {
            out.push(format!("OCP infeasible at step {k}"));
        }
        if self.infeasible_steps > 0 {
            out.push(format!("{} infeasible OCPs", self.infeasible_steps));
        }
        if self.metrics.constraint_margin_min < 0.0 {
            out.push(format!("state left S (margin {:.3e})", self.metrics.constraint_margin_min));
        }
        if self.metrics.deviation_violations > 0 {
            out.push(format!("{} deviation bound violations", self.metrics.deviation_violations));
        }
        if self.pi_variant && self.decrease_violations > 0 {
            out.push(format!("{} value decrease violations", self.decrease_violations));
        }
        out
    }
}

fn out_dir(config: &ExperimentConfig) -> CliResult<&Path> {
    let dir = config.out_dir.as_path();
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values))
}

/// Samples the cluster dataset.
pub fn generate(config: &ExperimentConfig) -> CliResult<DatasetSummary> {
    let dir = out_dir(config)?;
    let plant = &config.plant;
    let degree = degree_for_grid_size(config.data.d)?;
    let nodes = build_observation_grid(degree, &plant.sampling_box)?;
    let radius = config.data.radius();
    let dataset = build_cluster_dataset(plant, &nodes, radius, config.data.samples_per_cluster, config.seed)?;
    let summary = DatasetSummary {
        plant_id: dataset.plant_id.clone(),
        d: dataset.clusters.len(),
        triplets_per_cluster: config.data.samples_per_cluster,
        cluster_radius: radius,
        fill_distance: fill_distance(&nodes, &plant.sampling_box, config.data.fill_resolution)?,
        successors_outside_domain: dataset.successors_outside_domain,
    };
    let artifact = Artifact {
        provenance: Provenance::new(config, Stage::Generate),
        body: DatasetBody { summary: summary.clone(), dataset },
    };
    write_json(&path_in(dir, DATASET_FILE), &artifact)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub d: usize,
    pub support_radius: f64,
    pub pi_variant: bool,
    pub origin_drift: f64,
}

/// Fits the surrogate from the dataset.
pub fn identify(config: &ExperimentConfig) -> CliResult<IdentifyReport> {
    let dir = out_dir(config)?;
    let data: Loaded<Artifact<DatasetBody>> = load_artifact(dir, DATASET_FILE, config)?;
    let spec = KernelSpec::new(2).with_support_radius(config.support_radius()).with_jitter(config.kernel.jitter);
    let mut model = fit_control_affine(&data.value.body.dataset, &spec, config.pi_variant)?;
    model.seed = Some(config.seed);
    model.dataset_hash = Some(data.sha256.clone());
    model.cluster_radius = Some(config.data.radius());
    let report = IdentifyReport {
        d: model.node_count(),
        support_radius: spec.support_radius,
        pi_variant: config.pi_variant,
        origin_drift: model.raw_origin_drift().iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    let mut prov = Provenance::new(config, Stage::Identify);
    prov.inputs.insert(DATASET_FILE.into(), data.sha256);
    let mut doc = model.to_document();
    doc.provenance = Some(serde_json::to_value(&prov)?);
    write_json(&path_in(dir, MODEL_FILE), &doc)?;
    Ok(report)
}

fn load_model(dir: &Path, config: &ExperimentConfig) -> CliResult<(SurrogateModel, String)> {
    let doc: Loaded<ModelDocument> = load_with_embedded(dir, MODEL_FILE, config, |d: &ModelDocument| d.provenance.as_ref())?;
    Ok((SurrogateModel::from_document(&doc.value)?, doc.sha256))
}

/// Estimates the error certificate of the model against the plant.
///
/// The artifact is written before the held-out check so it can be inspected
/// when the check fails.
pub fn bounds(config: &ExperimentConfig) -> CliResult<BoundsBody> {
    let dir = out_dir(config)?;
    let (model, model_sha) = load_model(dir, config)?;
    let plant = &config.plant;
    let certified = certify(plant, &model, &plant.state_box, &plant.input_box, &config.bounds)?;
    let (_, heldout_samples) = validate_heldout(
        plant,
        &model,
        &certified,
        config.bounds.heldout_state_cells,
        config.bounds.heldout_input_cells,
    )?;
    let zero_input_max_error = plant
        .state_box
        .grid(config.bounds.heldout_state_cells)
        .par_iter()
        .map(|x| {
            let (p, m) = (plant.step(x, &[0.0]), model.step(x, &[0.0]));
            p.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .reduce(|| 0.0, f64::max);
    let body = BoundsBody { bounds: certified, zero_input_max_error };

    let csv_path = path_in(dir, HELDOUT_FILE);
    write_verification_csv(std::fs::File::create(&csv_path)?, &heldout_samples, &body.bounds)?;
    let mut prov = Provenance::new(config, Stage::Bounds);
    prov.inputs.insert(MODEL_FILE.into(), model_sha);
    prov.outputs.insert(HELDOUT_FILE.into(), file_sha256(&csv_path)?);
    write_json(&path_in(dir, BOUNDS_FILE), &Artifact { provenance: prov, body: body.clone() })?;

    if let Some(h) = &body.bounds.heldout {
        if h.violation_rate > HELDOUT_RATE_LIMIT {
            return Err(CliError::Certificate(format!(
                "held-out violation rate {:.3}% exceeds {:.0}%",
                100.0 * h.violation_rate,
                100.0 * HELDOUT_RATE_LIMIT
            )));
        }
    }
    Ok(body)
}

/// `(eta, lbar)` given on the command line in place of the bounds artifact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOverride {
    pub eta: f64,
    pub lbar: f64,
}

/// Designs the terminal ingredients and writes the controller.
///
/// Fails with a certificate violation when the configured horizon exceeds
/// either horizon limit, after reporting both.
pub fn terminal(config: &ExperimentConfig, overrides: Option<CertificateOverride>) -> CliResult<ControllerBody> {
    let dir = out_dir(config)?;
    let (model, model_sha) = load_model(dir, config)?;
    let mut prov = Provenance::new(config, Stage::Terminal);
    prov.inputs.insert(MODEL_FILE.into(), model_sha);
    let (eta, lbar) = match overrides {
        Some(o) => {
            prov.overrides.insert("eta".into(), o.eta);
            prov.overrides.insert("lbar".into(), o.lbar);
            (o.eta, o.lbar)
        }
        None => {
            let b: Loaded<Artifact<BoundsBody>> = load_artifact(dir, BOUNDS_FILE, config)?;
            prov.inputs.insert(BOUNDS_FILE.into(), b.sha256);
            (b.value.body.bounds.eta, b.value.body.bounds.lbar)
        }
    };
    if !(eta > 0.0 && lbar > 0.0) {
        return Err(CliError::Input(format!("eta and lbar must be positive, got {eta} and {lbar}")));
    }

    let plant = &config.plant;
    let q = diag(&config.control.q_diag);
    let r = diag(&config.control.r_diag);
    let tc = TerminalConfig {
        beta: config.control.beta,
        gain_input_weight: config.control.gain_input_weight,
        samples: config.control.terminal_samples,
        seed: config.seed,
    };
    let design = |n: usize| design_terminal(&model, &q, &r, &plant.state_box, &plant.input_box, eta, lbar, n, &tc);
    let limits = HorizonLimits {
        box_rule: max_horizon_box_rule(&plant.state_box, eta, lbar),
        survival_rule: max_feasible_horizon(&plant.state_box, eta, lbar, Some(|n: usize, _: &AxisBox| design(n).is_ok())),
    };
    eprintln!("N_max: box rule {}, terminal-survival rule {}", limits.box_rule, limits.survival_rule);

    let horizon = config.control.horizon;
    if horizon > limits.box_rule {
        return Err(CliError::Certificate(format!(
            "tightened state set empty at N={horizon} (box rule allows N <= {})",
            limits.box_rule
        )));
    }
    let (ingredients, calibration) = design(horizon)?;
    let mpc = MpcConfig {
        horizon,
        q,
        r,
        state_box: plant.state_box.clone(),
        input_box: plant.input_box.clone(),
        eta,
        lbar,
        terminal: ingredients,
        solver: config.control.solver,
    };
    mpc.validate()?;
    let body = ControllerBody { horizon_limits: limits, calibration, mpc };
    write_json(&path_in(dir, CONTROLLER_FILE), &Artifact { provenance: prov, body: body.clone() })?;
    Ok(body)
}

/// Runs the closed loop on the true plant; returns the report and the full trace.
pub fn simulate(config: &ExperimentConfig, label: &str) -> CliResult<(TraceReport, ClosedLoopTrace)> {
    let dir = out_dir(config)?;
    let (model, model_sha) = load_model(dir, config)?;
    let ctl: Loaded<Artifact<ControllerBody>> = load_artifact(dir, CONTROLLER_FILE, config)?;
    let mut controller = MpcController::new(&model, ctl.value.body.mpc.clone())?;
    let trace = run_closed_loop(&config.plant, &mut controller, &config.sim.x0, config.sim.steps, label)?;
    let metrics = trace_metrics(&trace)?;
    let threshold = 10.0 * metrics.plateau;
    let report = TraceReport {
        label: label.to_string(),
        steps: trace.steps.len(),
        pi_variant: model.is_pi_variant(),
        decrease_threshold: threshold,
        decrease_violations: decrease_violations(&trace, threshold),
        infeasible_steps: trace.steps.iter().filter(|s| s.status == OcpStatus::Infeasible).count(),
        final_state: trace.final_state.clone(),
        truncated_at: trace.truncated_at,
        metrics,
    };

    let csv_path = path_in(dir, TRACE_FILE);
    write_trace_csv(std::fs::File::create(&csv_path)?, &trace)?;
    let mut prov = Provenance::new(config, Stage::Simulate);
    prov.inputs.insert(MODEL_FILE.into(), model_sha);
    prov.inputs.insert(CONTROLLER_FILE.into(), ctl.sha256);
    prov.outputs.insert(TRACE_FILE.into(), file_sha256(&csv_path)?);
    write_json(&path_in(dir, TRACE_META_FILE), &Artifact { provenance: prov, body: report.clone() })?;

    let failures = report.failures();
    if !failures.is_empty() {
        return Err(CliError::Certificate(failures.join("; ")));
    }
    Ok((report, trace))
}

/// Every stage in order with certificates from the bounds stage.
pub fn run_all(config: &ExperimentConfig, label: &str) -> CliResult<(TraceReport, ClosedLoopTrace)> {
    generate(config)?;
    identify(config)?;
    bounds(config)?;
    terminal(config, None)?;
    simulate(config, label)
}
