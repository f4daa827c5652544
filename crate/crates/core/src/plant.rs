//! Discrete-time plants `x+ = f(x, u)` and the dynamics traits shared with surrogates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::sets::AxisBox;

/// A deterministic discrete-time map `x+ = f(x, u)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

/// Dynamics with Jacobians `(df/dx, df/du)` available at any point.
pub trait DifferentiableDynamics: Dynamics {
    fn step_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>);
}

/// Control-affine structure `f(x, u) = g0(x) + G(x) u`.
pub trait ControlAffine: Dynamics {
    fn drift(&self, x: &[f64]) -> Vec<f64>;
    /// `n x m` input matrix at `x`.
    fn input_matrix(&self, x: &[f64]) -> DMatrix<f64>;
}

/// A true plant together with its constraint and sampling sets.
pub trait Plant: DifferentiableDynamics {
    fn id(&self) -> String;
    /// State constraint set used by the controller.
    fn state_box(&self) -> &AxisBox;
    /// Domain on which data are sampled; contains the state box.
    fn sampling_box(&self) -> &AxisBox;
    fn input_box(&self) -> &AxisBox;
}

impl<T: Dynamics + ?Sized> Dynamics for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).step(x, u)
    }
}

impl<T: DifferentiableDynamics + ?Sized> DifferentiableDynamics for &T {
    fn step_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        (**self).step_with_jacobians(x, u)
    }
}

/// Euler discretization of the controlled van der Pol oscillator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VanDerPol {
    pub dt: f64,
    pub nu: f64,
    pub state_box: AxisBox,
    pub sampling_box: AxisBox,
    pub input_box: AxisBox,
}

impl Default for VanDerPol {
    fn default() -> Self {
        VanDerPol {
            dt: 0.05,
            nu: 0.1,
            state_box: AxisBox::symmetric(2, 1.9),
            sampling_box: AxisBox::symmetric(2, 2.0),
            input_box: AxisBox::symmetric(1, 2.0),
        }
    }
}

impl Dynamics for VanDerPol {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (x1, x2) = (x[0], x[1]);
        vec![
            x1 + self.dt * x2,
            x2 + self.dt * (self.nu * (1.0 - x1 * x1) * x2 - x1 + u[0]),
        ]
    }
}

impl DifferentiableDynamics for VanDerPol {
    fn step_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (x1, x2) = (x[0], x[1]);
        let dt = self.dt;
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0,
                dt,
                dt * (-2.0 * self.nu * x1 * x2 - 1.0),
                1.0 + dt * self.nu * (1.0 - x1 * x1),
            ],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
        (self.step(x, u), a, b)
    }
}

impl ControlAffine for VanDerPol {
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.step(x, &[0.0])
    }
    fn input_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.0, self.dt])
    }
}

impl Plant for VanDerPol {
    fn id(&self) -> String {
        format!("van_der_pol(dt={},nu={})", self.dt, self.nu)
    }
    fn state_box(&self) -> &AxisBox {
        &self.state_box
    }
    fn sampling_box(&self) -> &AxisBox {
        &self.sampling_box
    }
    fn input_box(&self) -> &AxisBox {
        &self.input_box
    }
}

/// Linear time-invariant map `x+ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_box: AxisBox,
    pub sampling_box: AxisBox,
    pub input_box: AxisBox,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        LinearPlant {
            a,
            b,
            state_box: AxisBox::symmetric(n, 1.0),
            sampling_box: AxisBox::symmetric(n, 1.0),
            input_box: AxisBox::symmetric(m, 1.0),
        }
    }

    pub fn with_boxes(mut self, state: AxisBox, sampling: AxisBox, input: AxisBox) -> Self {
        self.state_box = state;
        self.sampling_box = sampling;
        self.input_box = input;
        self
    }
}

impl Dynamics for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.a.nrows();
        (0..n)
            .map(|i| {
                let ax: f64 = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
                let bu: f64 = (0..self.b.ncols()).map(|j| self.b[(i, j)] * u[j]).sum();
                ax + bu
            })
            .collect()
    }
}

impl DifferentiableDynamics for LinearPlant {
    fn step_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.step(x, u), self.a.clone(), self.b.clone())
    }
}

impl ControlAffine for LinearPlant {
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.step(x, &vec![0.0; self.input_dim()])
    }
    fn input_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        self.b.clone()
    }
}

impl Plant for LinearPlant {
    fn id(&self) -> String {
        "linear".into()
    }
    fn state_box(&self) -> &AxisBox {
        &self.state_box
    }
    fn sampling_box(&self) -> &AxisBox {
        &self.sampling_box
    }
    fn input_box(&self) -> &AxisBox {
        &self.input_box
    }
}
