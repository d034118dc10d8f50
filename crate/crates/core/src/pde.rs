//! Learning evolution PDEs `∂ₜu = f(u, ∂ₓu, ∂ₓₓu, …)` on a 1-D uniform mesh.
//!
//! `f = αᵀφ` for an explicit feature map `φ`. Spatial derivatives come from
//! finite differences on a coarsened mesh; the per-interval time integrals of
//! `φ` use the two-point trapezoid rule.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{RandomFourierMap, RffConfig};
use crate::representer::{solve_regularized, RegularizedSystem};

/// Forecasts whose sup-norm exceeds this are reported as divergent.
pub const PDE_BLOWUP: f64 = 1e6;

/// Default stride of the coarsened spatial mesh.
pub const DEFAULT_COARSEN: usize = 4;

/// Samples `u(tⱼ, xᵢ)` on a uniform spatial mesh; `u` is `M × N` (time × space).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub u: DMatrix<f64>,
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    pub periodic: bool,
}

impl FieldGrid {
    pub fn new(u: DMatrix<f64>, ts: Vec<f64>, xs: Vec<f64>, periodic: bool) -> Result<Self> {
        if u.nrows() != ts.len() || u.ncols() != xs.len() {
            return Err(Error::Shape(format!(
                "field is {}×{} but there are {} times and {} positions",
                u.nrows(),
                u.ncols(),
                ts.len(),
                xs.len()
            )));
        }
        if ts.len() < 2 {
            return Err(Error::GridTooSmall(format!("{} time samples, need at least 2", ts.len())));
        }
        if xs.len() < 3 {
            return Err(Error::GridTooSmall(format!("{} spatial samples, need at least 3", xs.len())));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("times must be strictly increasing".into()));
        }
        let dx = xs[1] - xs[0];
        if !(dx > 0.0) {
            return Err(Error::Data("positions must be increasing".into()));
        }
        for (i, w) in xs.windows(2).enumerate() {
            if ((w[1] - w[0]) - dx).abs() > 1e-10 * dx.max(xs[i].abs()) {
                return Err(Error::Data(format!("spatial mesh is not uniform at index {}", i + 1)));
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("field contains non-finite values".into()));
        }
        Ok(FieldGrid { u, ts, xs, periodic })
    }

    pub fn dx(&self) -> f64 {
        (self.xs[self.xs.len() - 1] - self.xs[0]) / (self.xs.len() - 1) as f64
    }

    pub fn num_times(&self) -> usize {
        self.ts.len()
    }

    pub fn num_points(&self) -> usize {
        self.xs.len()
    }

    /// Keeps every `stride`-th spatial sample.
    pub fn coarsen(&self, stride: usize) -> Result<FieldGrid> {
        let idx = coarse_indices(self.num_points(), stride, self.periodic)?;
        FieldGrid::new(
            self.u.select_columns(&idx),
            self.ts.clone(),
            idx.iter().map(|&i| self.xs[i]).collect(),
            self.periodic,
        )
    }

    /// Rows `range` of the field as a new grid.
    pub fn time_slice(&self, range: std::ops::Range<usize>) -> Result<FieldGrid> {
        FieldGrid::new(
            self.u.rows(range.start, range.len()).into_owned(),
            self.ts[range].to_vec(),
            self.xs.clone(),
            self.periodic,
        )
    }
}

fn coarse_indices(n: usize, stride: usize, periodic: bool) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("coarsening stride must be positive".into()));
    }
    if periodic && !n.is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "periodic mesh of {n} points cannot be coarsened by {stride}"
        )));
    }
    Ok((0..n).step_by(stride).collect())
}

fn first_derivative(v: &[f64], dx: f64, periodic: bool, out: &mut [f64]) {
    let n = v.len();
    let inv = 1.0 / (2.0 * dx);
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) * inv;
    }
    if periodic {
        out[0] = (v[1] - v[n - 1]) * inv;
        out[n - 1] = (v[0] - v[n - 2]) * inv;
    } else {
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv;
        out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) * inv;
    }
}

fn second_derivative(v: &[f64], dx: f64, periodic: bool, out: &mut [f64]) {
    let n = v.len();
    let inv = 1.0 / (dx * dx);
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv;
    }
    if periodic {
        out[0] = (v[1] - 2.0 * v[0] + v[n - 1]) * inv;
        out[n - 1] = (v[0] - 2.0 * v[n - 1] + v[n - 2]) * inv;
    } else {
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) * inv;
        out[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) * inv;
    }
}

/// Smallest mesh that supports derivatives up to `max_order`.
pub fn min_points(max_order: usize, periodic: bool) -> usize {
    let central = 2 * max_order + 1;
    if periodic || max_order < 2 {
        central.max(3)
    } else {
        central.max(4)
    }
}

/// `u` and its derivatives of order `1..=max_order` on one spatial profile.
///
/// Order 1 uses the central first-difference stencil; order `k ≥ 2` applies
/// the three-point second-difference stencil to order `k − 2`.
pub fn derivative_stack(profile: &[f64], dx: f64, periodic: bool, max_order: usize) -> Result<Vec<Vec<f64>>> {
    let n = profile.len();
    let need = min_points(max_order, periodic);
    if n < need {
        return Err(Error::GridTooSmall(format!(
            "{n} points cannot support derivatives of order {max_order} (need {need})"
        )));
    }
    let mut stack = Vec::with_capacity(max_order + 1);
    stack.push(profile.to_vec());
    for k in 1..=max_order {
        let mut out = vec![0.0; n];
        if k == 1 {
            first_derivative(&stack[0], dx, periodic, &mut out);
        } else {
            second_derivative(&stack[k - 2], dx, periodic, &mut out);
        }
        stack.push(out);
    }
    Ok(stack)
}

/// `u` and its spatial derivatives up to `max_order` on the mesh coarsened by
/// `coarsen`; each entry is `M × N'`.
pub fn spatial_derivatives(grid: &FieldGrid, max_order: usize, coarsen: usize) -> Result<Vec<DMatrix<f64>>> {
    let coarse = grid.coarsen(coarsen)?;
    let dx = coarse.dx();
    let (m, n) = coarse.u.shape();
    let rows: Vec<Vec<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let profile: Vec<f64> = coarse.u.row(j).iter().copied().collect();
            derivative_stack(&profile, dx, grid.periodic, max_order)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![DMatrix::zeros(m, n); max_order + 1];
    for (j, stack) in rows.iter().enumerate() {
        for (k, v) in stack.iter().enumerate() {
            for (i, &val) in v.iter().enumerate() {
                out[k][(j, i)] = val;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureKind {
    /// All monomials of total degree `≤ degree` in `(u, ∂ₓu, …, ∂ₓᴰu)`, constant included.
    Polynomial { degree: usize },
    /// Gaussian random Fourier features of the derivative vector.
    RandomFourier {
        num_features: usize,
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// Highest spatial derivative order `D ≥ 1` fed to the features.
    pub max_order: usize,
    #[serde(default)]
    pub seed: u64,
}

impl FeatureSpec {
    pub fn polynomial(max_order: usize, degree: usize) -> Self {
        FeatureSpec {
            kind: FeatureKind::Polynomial { degree },
            max_order,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_order < 1 {
            return Err(Error::Config("derivative order must be at least 1".into()));
        }
        match self.kind {
            FeatureKind::Polynomial { degree } if degree > 3 => Err(Error::Config(format!(
                "polynomial features support total degree up to 3, got {degree}"
            ))),
            FeatureKind::RandomFourier { num_features, scale, .. } => {
                if num_features == 0 || num_features % 2 != 0 {
                    Err(Error::Config(format!(
                        "random Fourier feature count must be a positive even number, got {num_features}"
                    )))
                } else if !(scale > 0.0) {
                    Err(Error::Config(format!("feature scale must be positive, got {scale}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Evaluable form of a [`FeatureSpec`].
#[derive(Debug, Clone)]
pub enum FeatureMap {
    Polynomial { exponents: Vec<Vec<u8>> },
    RandomFourier(RandomFourierMap),
}

impl FeatureMap {
    pub fn new(spec: &FeatureSpec) -> Result<Self> {
        spec.validate()?;
        let vars = spec.max_order + 1;
        match spec.kind {
            FeatureKind::Polynomial { degree } => {
                let mut exponents = Vec::new();
                for total in 0..=degree {
                    push_monomials(vars, total as u8, &mut Vec::new(), &mut exponents);
                }
                Ok(FeatureMap::Polynomial { exponents })
            }
            FeatureKind::RandomFourier { num_features, scale, period } => {
                let cfg = RffConfig {
                    num_features,
                    period,
                    seed: spec.seed,
                };
                Ok(FeatureMap::RandomFourier(RandomFourierMap::new(scale, &cfg, vars)?))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FeatureMap::Polynomial { exponents } => exponents.len(),
            FeatureMap::RandomFourier(map) => map.num_features(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `φ(z)` into `out`, `z = (u, ∂ₓu, …)`.
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Polynomial { exponents } => {
                for (o, e) in out.iter_mut().zip(exponents) {
                    *o = e.iter().zip(z).map(|(&p, &v)| v.powi(p as i32)).product();
                }
            }
            FeatureMap::RandomFourier(map) => map.features_into(z, out),
        }
    }

    /// Human-readable feature names, e.g. `u*u_x`.
    pub fn names(&self) -> Vec<String> {
        match self {
            FeatureMap::Polynomial { exponents } => exponents
                .iter()
                .map(|e| {
                    let parts: Vec<String> = e
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0)
                        .map(|(k, &p)| {
                            let var = if k == 0 {
                                "u".to_string()
                            } else {
                                format!("u_{}", "x".repeat(k))
                            };
                            if p == 1 {
                                var
                            } else {
                                format!("{var}^{p}")
                            }
                        })
                        .collect();
                    if parts.is_empty() {
                        "1".into()
                    } else {
                        parts.join("*")
                    }
                })
                .collect(),
            FeatureMap::RandomFourier(map) => (0..map.num_features()).map(|k| format!("rff_{k}")).collect(),
        }
    }
}

/// Exponent vectors of total degree exactly `total`, in lexicographically descending order.
fn push_monomials(vars: usize, total: u8, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == vars - 1 {
        let mut e = prefix.clone();
        e.push(total);
        out.push(e);
        return;
    }
    for p in (0..=total).rev() {
        prefix.push(p);
        push_monomials(vars, total - p, prefix, out);
        prefix.pop();
    }
}

/// Regression matrices for the time-integrated feature model.
///
/// Column `j·N' + i` of `Φ` (`q × N'(M−1)`) is `Δtⱼ (φ(zⱼ,ᵢ) + φ(zⱼ₊₁,ᵢ)) / 2`
/// and the matching entry of `y` is `u(tⱼ₊₁, xᵢ) − u(tⱼ, xᵢ)`.
pub fn assemble_pde_system(
    grid: &FieldGrid,
    derivs: &[DMatrix<f64>],
    map: &FeatureMap,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, n) = derivs
        .first()
        .map(|d| d.shape())
        .ok_or_else(|| Error::Shape("empty derivative stack".into()))?;
    if m != grid.num_times() || derivs.iter().any(|d| d.shape() != (m, n)) {
        return Err(Error::Shape("derivative stack does not match the grid".into()));
    }
    let vars = derivs.len();
    if derivs.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite spatial derivatives".into()));
    }
    let q = map.len();
    // Features at every (time, point).
    let feats: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut row = vec![0.0; n * q];
            let mut z = vec![0.0; vars];
            for i in 0..n {
                for (k, d) in derivs.iter().enumerate() {
                    z[k] = d[(j, i)];
                }
                map.eval_into(&z, &mut row[i * q..(i + 1) * q]);
            }
            row
        })
        .collect();
    let cols = n * (m - 1);
    let mut phi = DMatrix::zeros(q, cols);
    let mut y = vec![0.0; cols];
    for j in 0..m - 1 {
        let dt = grid.ts[j + 1] - grid.ts[j];
        for i in 0..n {
            let c = j * n + i;
            for r in 0..q {
                phi[(r, c)] = 0.5 * dt * (feats[j][i * q + r] + feats[j + 1][i * q + r]);
            }
            y[c] = derivs[0][(j + 1, i)] - derivs[0][(j, i)];
        }
    }
    Ok((phi, y))
}

/// Trained PDE right-hand side `f = αᵀφ`.
#[derive(Debug, Clone)]
pub struct PdeModel {
    pub features: FeatureSpec,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub coarsen: usize,
    /// Spacing of the coarsened mesh the model operates on.
    pub dx: f64,
    pub periodic: bool,
    /// Accuracy order of the finite-difference stencils.
    pub fd_order: usize,
    map: FeatureMap,
}

impl PdeModel {
    pub fn new(
        features: FeatureSpec,
        alpha: Vec<f64>,
        lambda: f64,
        coarsen: usize,
        dx: f64,
        periodic: bool,
    ) -> Result<Self> {
        let map = FeatureMap::new(&features)?;
        if alpha.len() != map.len() {
            return Err(Error::Shape(format!(
                "{} coefficients for {} features",
                alpha.len(),
                map.len()
            )));
        }
        if !(dx > 0.0) {
            return Err(Error::Config(format!("mesh spacing must be positive, got {dx}")));
        }
        Ok(PdeModel {
            features,
            alpha,
            lambda,
            coarsen,
            dx,
            periodic,
            fd_order: 2,
            map,
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    /// `f̂` evaluated pointwise on a coarse-mesh profile.
    pub fn rhs(&self, profile: &[f64]) -> Result<Vec<f64>> {
        let stack = derivative_stack(profile, self.dx, self.periodic, self.features.max_order)?;
        let mut z = vec![0.0; stack.len()];
        let mut phi = vec![0.0; self.map.len()];
        Ok((0..profile.len())
            .map(|i| {
                for (k, s) in stack.iter().enumerate() {
                    z[k] = s[i];
                }
                self.map.eval_into(&z, &mut phi);
                phi.iter().zip(&self.alpha).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// One explicit Euler step.
    pub fn euler_step(&self, profile: &[f64], dt: f64) -> Result<Vec<f64>> {
        let f = self.rhs(profile)?;
        Ok(profile.iter().zip(&f).map(|(u, f)| u + dt * f).collect())
    }
}

/// Trains `α` from `(ΦΦᵀ + λI) α = Φy`.
pub fn train_pde(grid: &FieldGrid, features: &FeatureSpec, lambda: f64, coarsen: usize) -> Result<PdeModel> {
    let map = FeatureMap::new(features)?;
    let derivs = spatial_derivatives(grid, features.max_order, coarsen)?;
    let (phi, y) = assemble_pde_system(grid, &derivs, &map)?;
    let g = &phi * phi.transpose();
    let rhs = &phi * nalgebra::DVector::from_vec(y);
    let sys = RegularizedSystem::new((&g + g.transpose()) * 0.5, DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), lambda)?;
    let alpha = solve_regularized(&sys)?;
    PdeModel::new(
        *features,
        alpha.as_slice().to_vec(),
        lambda,
        coarsen,
        grid.dx() * coarsen as f64,
        grid.periodic,
    )
}

/// Explicit Euler rollout from `u0` (coarse mesh); returns `(steps + 1) × N'`.
pub fn forecast_pde(model: &PdeModel, u0: &[f64], dt: f64, steps: usize) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let n = u0.len();
    let mut out = DMatrix::zeros(steps + 1, n);
    let mut u = u0.to_vec();
    out.row_mut(0).copy_from_slice(&u);
    for k in 1..=steps {
        u = model.euler_step(&u, dt)?;
        if u.iter().any(|v| !v.is_finite() || v.abs() > PDE_BLOWUP) {
            return Err(Error::Divergence { time: k as f64 * dt, step: k });
        }
        out.row_mut(k).copy_from_slice(&u);
    }
    Ok(out)
}
