//! End-to-end run on a linear plant, where every stage has an easy reference.

use kedmd_mpc::padua::build_observation_grid;
use kedmd_mpc::terminal::lqr_gain;
use kedmd_mpc::*;
use nalgebra::DMatrix;

fn plant() -> LinearPlant {
    let a = DMatrix::from_row_slice(2, 2, &[1.02, 0.05, 0.0, 0.98]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.05]);
    LinearPlant::new(a, b)
}

#[test]
fn linear_plant_is_identified_and_stabilized() {
    let p = plant();
    let nodes = build_observation_grid(14, &p.sampling_box).unwrap();
    let data = build_cluster_dataset(&p, &nodes, 1e-3, 10, 4).unwrap();
    let model = fit_control_affine(&data, &KernelSpec::new(2).with_support_radius(3.0), true).unwrap();

    let (a, b) = model.jacobians(&[0.0, 0.0], &[0.0]).unwrap();
    assert!((&a - &p.a).amax() < 5e-3, "A = {a}");
    assert!((&b - &p.b).amax() < 1e-3, "B = {b}");

    let bounds = bounds::certify(&p, &model, &p.state_box, &p.input_box, &BoundsConfig::default()).unwrap();
    assert!(bounds.eta < 0.02, "eta = {}", bounds.eta);
    assert_eq!(bounds.origin_error, 0.0);

    let q = DMatrix::identity(2, 2);
    let r = DMatrix::from_element(1, 1, 0.1);
    let tc = TerminalConfig { beta: 5.0, gain_input_weight: 1.0, samples: 2000, seed: 0 };
    let (terminal, cal) =
        design_terminal(&model, &q, &r, &p.state_box, &p.input_box, bounds.eta, bounds.lbar, 8, &tc).unwrap();
    assert!(cal.check.passed());
    // The gain comes from the model's linearization, so it stays close to the plant's LQR gain.
    let k_true = lqr_gain(&p.a, &p.b, &q, &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!((&terminal.k - &k_true).amax() < 0.5, "K = {} vs {}", terminal.k, k_true);

    let config = MpcConfig {
        horizon: 8,
        q,
        r,
        state_box: p.state_box.clone(),
        input_box: p.input_box.clone(),
        eta: bounds.eta,
        lbar: bounds.lbar,
        terminal,
        solver: SolverSettings::default(),
    };
    let mut ctl = MpcController::new(&model, config).unwrap();
    let trace = run_closed_loop(&p, &mut ctl, &[0.3, -0.2], 300, "linear").unwrap();
    let metrics = trace_metrics(&trace).unwrap();
    assert_eq!(trace.truncated_at, None);
    assert_eq!(metrics.feasibility_rate, 1.0);
    assert_eq!(metrics.deviation_violations, 0);
    assert!(metrics.final_error < 1e-6, "final {}", metrics.final_error);
}
