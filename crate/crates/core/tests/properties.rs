use std::sync::OnceLock;

use kedmd_mpc::kernel::kernel_eval;
use kedmd_mpc::padua::{build_observation_grid, degree_for_grid_size};
use kedmd_mpc::tightening::{cbar, max_horizon_box_rule};
use kedmd_mpc::*;
use proptest::prelude::*;

fn pi_model() -> &'static SurrogateModel {
    static MODEL: OnceLock<SurrogateModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(degree_for_grid_size(352).unwrap(), &plant.sampling_box).unwrap();
        let data = build_cluster_dataset(&plant, &nodes, 2f64.sqrt() / 352.0, 25, 0).unwrap();
        fit_control_affine(&data, &KernelSpec::new(2).with_support_radius(0.75), true).unwrap()
    })
}

fn coord() -> impl Strategy<Value = f64> {
    -1.9..1.9f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_is_symmetric_and_bounded_by_its_peak(
        x in prop::array::uniform2(-3.0..3.0f64),
        y in prop::array::uniform2(-3.0..3.0f64),
        sigma in 0.1..2.0f64,
    ) {
        let spec = KernelSpec::new(2).with_support_radius(sigma);
        let kxy = kernel_eval(&x, &y, &spec).unwrap();
        prop_assert_eq!(kxy, kernel_eval(&y, &x, &spec).unwrap());
        prop_assert!(kxy >= 0.0);
        prop_assert!(kxy <= kernel_eval(&x, &x, &spec).unwrap());
    }

    #[test]
    fn cbar_is_the_geometric_sum(k in 1usize..30, lbar in 1.01..3.0f64) {
        let closed = (lbar.powi(k as i32) - 1.0) / (lbar - 1.0);
        prop_assert!((cbar(k, lbar).unwrap() - closed).abs() <= 1e-9 * closed);
    }

    #[test]
    fn box_rule_never_grows_with_eta(eta in 1e-4..0.5f64, lbar in 1.0..3.0f64, factor in 1.0..10.0f64) {
        let s = AxisBox::symmetric(2, 1.9);
        prop_assert!(max_horizon_box_rule(&s, eta * factor, lbar) <= max_horizon_box_rule(&s, eta, lbar));
    }

    #[test]
    fn surrogate_is_affine_in_the_input(x1 in coord(), x2 in coord(), u in -2.0..2.0f64) {
        let m = pi_model();
        let x = [x1, x2];
        let f = m.predict(&x, &[u]).unwrap();
        let f0 = m.predict(&x, &[0.0]).unwrap();
        let g = m.input_matrix_at(&x);
        for i in 0..2 {
            prop_assert!((f[i] - f0[i] - g[(i, 0)] * u).abs() <= 1e-12);
        }
    }

    #[test]
    fn surrogate_jacobians_match_central_differences(x1 in coord(), x2 in coord(), u in -2.0..2.0f64) {
        let m = pi_model();
        let x = [x1, x2];
        let (a, b) = m.jacobians(&x, &[u]).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = m.predict(&xp, &[u]).unwrap();
            let fm = m.predict(&xm, &[u]).unwrap();
            for i in 0..2 {
                prop_assert!((a[(i, j)] - (fp[i] - fm[i]) / (2.0 * h)).abs() <= 1e-5);
            }
        }
        let fp = m.predict(&x, &[u + h]).unwrap();
        let fm = m.predict(&x, &[u - h]).unwrap();
        for i in 0..2 {
            prop_assert!((b[(i, 0)] - (fp[i] - fm[i]) / (2.0 * h)).abs() <= 1e-7);
        }
    }

    #[test]
    fn pi_error_vanishes_towards_the_origin(x1 in -1.0..1.0f64, x2 in -1.0..1.0f64, scale in 1e-8..1e-2f64) {
        let m = pi_model();
        let plant = VanDerPol::default();
        let x = [scale * x1, scale * x2];
        let e: f64 = m.predict(&x, &[0.0]).unwrap().iter().zip(plant.step(&x, &[0.0])).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        // Proportional error: bounded by a multiple of |x| near the origin.
        prop_assert!(e <= 0.1 * scale * 2f64.sqrt());
    }
}

#[test]
fn model_document_round_trip_is_bit_exact() {
    let m = pi_model();
    let text = serde_json::to_string(&m.to_document()).unwrap();
    let back = SurrogateModel::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
    for x in [[0.3, -0.7], [1.8, 1.8], [-0.01, 0.02]] {
        assert_eq!(m.predict(&x, &[0.4]).unwrap(), back.predict(&x, &[0.4]).unwrap());
    }
}
