//! Fixed-step explicit integrators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// States whose magnitude exceeds this are treated as blown up.
pub const OVERFLOW_LIMIT: f64 = 1e12;

/// An autonomous vector field `ẋ = f(x)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; both slices have length [`dim`](Self::dim).
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

/// Wraps a closure as a vector field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Reusable stage buffers for one field dimension.
pub struct Stepper {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(dim: usize) -> Self {
        Stepper {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `x` in place by one step of size `h`.
    pub fn step<F: VectorField + ?Sized>(&mut self, field: &F, method: Integrator, x: &mut [f64], h: f64) {
        match method {
            Integrator::Euler => {
                field.eval_into(x, &mut self.k1);
                for (xi, k) in x.iter_mut().zip(&self.k1) {
                    *xi += h * k;
                }
            }
            Integrator::Rk4 => {
                let n = x.len();
                field.eval_into(x, &mut self.k1);
                for i in 0..n {
                    self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
                }
                field.eval_into(&self.tmp, &mut self.k2);
                for i in 0..n {
                    self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
                }
                field.eval_into(&self.tmp, &mut self.k3);
                for i in 0..n {
                    self.tmp[i] = x[i] + h * self.k3[i];
                }
                field.eval_into(&self.tmp, &mut self.k4);
                for i in 0..n {
                    x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
                }
            }
        }
    }
}

pub(crate) fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Data("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Data("time grid must be strictly increasing".into()));
    }
    Ok(())
}

fn blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_LIMIT)
}

/// Integrates from `x0` at `t_grid[0]` and records the state at every grid
/// time, taking `substeps` equal steps per grid interval. Returns `d × |t_grid|`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t_grid: &[f64],
    method: Integrator,
    substeps: usize,
) -> Result<DMatrix<f64>> {
    check_grid(t_grid)?;
    let d = field.dim();
    if x0.len() != d {
        return Err(Error::Shape(format!("initial state has {} entries, field has {d}", x0.len())));
    }
    let substeps = substeps.max(1);
    let mut out = DMatrix::zeros(d, t_grid.len());
    let mut x = x0.to_vec();
    out.set_column(0, &nalgebra::DVector::from_column_slice(&x));
    let mut stepper = Stepper::new(d);
    for (k, w) in t_grid.windows(2).enumerate() {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            stepper.step(field, method, &mut x, h);
        }
        if blown_up(&x) {
            return Err(Error::Divergence { time: w[1], step: k + 1 });
        }
        out.column_mut(k + 1).copy_from_slice(&x);
    }
    Ok(out)
}
