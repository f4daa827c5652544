//! Closed-loop simulation of the true plant under the surrogate MPC, with the
//! per-step checks that back recursive feasibility and stability claims.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mpc::{predict_sequence, sequence_violation, shifted_sequence, MpcController, OcpStatus};
use crate::plant::{DifferentiableDynamics, Dynamics};
use crate::points::{dist, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub stage_cost: f64,
    /// Optimal value `V_N(x(k))`.
    pub value: f64,
    pub status: OcpStatus,
    pub kkt_residual: f64,
    /// Signed distance of `x(k)` to the faces of the state box.
    pub state_margin: f64,
    pub norm: f64,
    /// `|x(k+1) - f_eps(x(k), u(k))|`.
    pub model_error: f64,
    /// Largest `|x_{u+}(i; x+) - x_{u*}(i+1; x)| / (L^i eta)` over the horizon.
    pub deviation_ratio: f64,
    /// Constraint violation of the shifted candidate at the true successor.
    pub shifted_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub label: String,
    pub steps: Vec<StepRecord>,
    /// State after the last applied input.
    pub final_state: Vec<f64>,
    /// Set when the run stopped early on an infeasible OCP.
    pub truncated_at: Option<usize>,
}

impl ClosedLoopTrace {
    /// `|x(k)|` for every recorded step followed by the final state.
    pub fn norms(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.norm).collect();
        v.push(norm(&self.final_state));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub final_error: f64,
    pub plateau: f64,
    pub lyapunov_violations: usize,
    pub feasibility_rate: f64,
    pub constraint_margin_min: f64,
    pub deviation_violations: usize,
    pub shifted_infeasible: usize,
}

/// Tolerance of the shifted-candidate admissibility check.
pub const SHIFT_TOL: f64 = 1e-8;

/// Runs `steps` receding-horizon iterations from `x0` on the true plant.
pub fn run_closed_loop<M: DifferentiableDynamics>(
    plant: &dyn Dynamics,
    controller: &mut MpcController<M>,
    x0: &[f64],
    steps: usize,
    label: &str,
) -> Result<ClosedLoopTrace> {
    check_dim(plant.state_dim(), x0.len())?;
    let eta = controller.config.eta;
    let lbar = controller.config.lbar;
    let mut x = x0.to_vec();
    let mut records = Vec::with_capacity(steps);
    let mut truncated_at = None;
    for k in 0..steps {
        let (u, sol) = controller.feedback(&x)?;
        let state_margin = controller.config.state_box.margin(&x);
        if sol.status == OcpStatus::Infeasible {
            if k == 0 {
                return Err(Error::InitialInfeasible {
                    constraint: sol.violated.unwrap_or_default(),
                    violation: sol.max_violation,
                });
            }
            records.push(StepRecord {
                k,
                x: x.clone(),
                u: u.clone(),
                stage_cost: controller.config.stage_cost(&x, &u),
                value: sol.cost,
                status: sol.status,
                kkt_residual: sol.kkt_residual,
                state_margin,
                norm: norm(&x),
                model_error: f64::NAN,
                deviation_ratio: f64::NAN,
                shifted_violation: f64::NAN,
            });
            truncated_at = Some(k);
            break;
        }
        let next = plant.step(&x, &u);
        let model_error = dist(&next, &sol.states[1]);
        let candidate = shifted_sequence(&sol, &controller.config.terminal);
        let shifted_states = predict_sequence(&controller.model, &next, &candidate);
        let mut deviation_ratio: f64 = 0.0;
        let mut bound = eta;
        for i in 0..candidate.len() {
            let dev = dist(&shifted_states[i], &sol.states[i + 1]);
            let ratio = if bound > 0.0 { dev / bound } else if dev > 0.0 { f64::INFINITY } else { 0.0 };
            deviation_ratio = deviation_ratio.max(ratio);
            bound *= lbar;
        }
        let shifted_violation = if controller.config.state_box.contains(&next) {
            sequence_violation(&controller.model, &controller.config, &next, &candidate)?
        } else {
            f64::INFINITY
        };
        records.push(StepRecord {
            k,
            x: x.clone(),
            u: u.clone(),
            stage_cost: controller.config.stage_cost(&x, &u),
            value: sol.cost,
            status: sol.status,
            kkt_residual: sol.kkt_residual,
            state_margin,
            norm: norm(&x),
            model_error,
            deviation_ratio,
            shifted_violation,
        });
        x = next;
        if !controller.config.state_box.contains(&x) {
            truncated_at = Some(k + 1);
            break;
        }
    }
    Ok(ClosedLoopTrace { label: label.to_string(), steps: records, final_state: x, truncated_at })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn lyapunov_tolerance(v: f64) -> f64 {
    1e-6 * v.abs() + 1e-9
}

pub fn trace_metrics(trace: &ClosedLoopTrace) -> Result<TraceMetrics> {
    if trace.steps.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let norms = trace.norms();
    let window = (norms.len() / 5).max(1);
    let mut tail: Vec<f64> = norms[norms.len() - window..].to_vec();
    let plateau = median(&mut tail);
    let lyapunov_violations = trace
        .steps
        .windows(2)
        .filter(|w| w[1].value > w[0].value + lyapunov_tolerance(w[0].value))
        .count();
    let feasible = trace.steps.iter().filter(|s| s.status != OcpStatus::Infeasible).count();
    let margin = trace.steps.iter().map(|s| s.state_margin).fold(f64::INFINITY, f64::min);
    Ok(TraceMetrics {
        final_error: norm(&trace.final_state),
        plateau,
        lyapunov_violations,
        feasibility_rate: feasible as f64 / trace.steps.len() as f64,
        constraint_margin_min: margin,
        deviation_violations: trace.steps.iter().filter(|s| s.deviation_ratio > 1.0).count(),
        shifted_infeasible: trace.steps.iter().filter(|s| s.shifted_violation > SHIFT_TOL).count(),
    })
}

/// Steps with `|x(k)| >= threshold` where `V(k+1) - V(k) > -l(k) / 2`, up to [`lyapunov_tolerance`].
pub fn decrease_violations(trace: &ClosedLoopTrace, threshold: f64) -> usize {
    trace
        .steps
        .windows(2)
        .filter(|w| {
            w[0].norm >= threshold
                && w[1].value - w[0].value + 0.5 * w[0].stage_cost > lyapunov_tolerance(w[0].value)
        })
        .count()
}

/// Trace CSV with header `k,x1,x2,u,stage_cost,value,status`.
pub fn write_trace_csv<W: Write>(out: W, trace: &ClosedLoopTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = trace.final_state.len();
    let m = trace.steps.first().map_or(1, |s| s.u.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    if m == 1 {
        header.push("u".into());
    } else {
        header.extend((1..=m).map(|i| format!("u{i}")));
    }
    header.extend(["stage_cost", "value", "status"].map(String::from));
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut rec = vec![s.k.to_string()];
        rec.extend(s.x.iter().chain(&s.u).map(|v| v.to_string()));
        rec.push(s.stage_cost.to_string());
        rec.push(s.value.to_string());
        rec.push(s.status.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step `|x(k)|` per trace, shorter traces padded with their last value.
pub fn compare_runs<W: Write>(out: W, traces: &[ClosedLoopTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend(traces.iter().map(|t| t.label.clone()));
    w.write_record(&header)?;
    let columns: Vec<Vec<f64>> = traces.iter().map(ClosedLoopTrace::norms).collect();
    let len = columns.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..len {
        let mut rec = vec![k.to_string()];
        for c in &columns {
            let v = c.get(k).or(c.last()).copied().unwrap_or(f64::NAN);
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, norm: f64, value: f64, stage: f64) -> StepRecord {
        StepRecord {
            k,
            x: vec![norm, 0.0],
            u: vec![0.0],
            stage_cost: stage,
            value,
            status: OcpStatus::Optimal,
            kkt_residual: 0.0,
            state_margin: 1.0,
            norm,
            model_error: 0.0,
            deviation_ratio: 0.0,
            shifted_violation: 0.0,
        }
    }

    fn synthetic(values: &[f64]) -> ClosedLoopTrace {
        ClosedLoopTrace {
            label: "t".into(),
            steps: values.iter().enumerate().map(|(k, v)| record(k, *v, *v, *v)).collect(),
            final_state: vec![0.0, 0.0],
            truncated_at: None,
        }
    }

    #[test]
    fn zero_trace_metrics() {
        let m = trace_metrics(&synthetic(&[0.0; 10])).unwrap();
        assert_eq!(m.final_error, 0.0);
        assert_eq!(m.plateau, 0.0);
        assert_eq!(m.lyapunov_violations, 0);
        assert_eq!(m.feasibility_rate, 1.0);
    }

    #[test]
    fn decreasing_values_have_no_violations() {
        let vals: Vec<f64> = (0..50).map(|k| 0.9f64.powi(k)).collect();
        let t = synthetic(&vals);
        assert_eq!(trace_metrics(&t).unwrap().lyapunov_violations, 0);
        let mut up = vals.clone();
        up[10] = 2.0;
        assert_eq!(trace_metrics(&synthetic(&up)).unwrap().lyapunov_violations, 1);
    }

    #[test]
    fn plateau_is_tail_median() {
        let vals: Vec<f64> = (0..100).map(|k| 0.8f64.powi(k)).collect();
        let t = synthetic(&vals);
        let m = trace_metrics(&t).unwrap();
        let window_max = 0.8f64.powi(80);
        assert!(m.plateau <= window_max);
    }

    #[test]
    fn comparison_csv_shapes() {
        let a = synthetic(&[1.0, 0.5]);
        let mut buf = Vec::new();
        compare_runs(&mut buf, std::slice::from_ref(&a)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t");
        assert_eq!(lines.len(), 4);
        let b = synthetic(&[1.0, 0.5, 0.25, 0.1]);
        let mut buf = Vec::new();
        compare_runs(&mut buf, &[a.clone(), b, a]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 4);
            assert_eq!(cols[1], cols[3]);
        }
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &synthetic(&[1.0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,x1,x2,u,stage_cost,value,status\n"));
        assert!(text.contains(",optimal"));
    }
}
