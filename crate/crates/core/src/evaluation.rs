//! Rollout (Err) and next-step (1-Err) RMSE, parameter counts, reports.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::integrate::{integrate, Integrator, VectorField};
use crate::ode::{RockModel, Trajectory, TrajectorySet};
use crate::pde::{FieldGrid, PdeModel, PDE_BLOWUP};

/// JSON has no infinity; divergent scores are written as `null`.
mod score {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    #[serde(with = "score")]
    pub err: f64,
    #[serde(with = "score")]
    pub one_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pooled RMSE of full rollouts from each initial sample; `∞` if any diverged.
    #[serde(with = "score")]
    pub err: f64,
    /// Pooled RMSE of one-interval forecasts from every observed sample.
    #[serde(with = "score")]
    pub one_err: f64,
    pub per_trajectory: Vec<TrajectoryScore>,
    pub model_size: usize,
}

impl EvalReport {
    pub fn diverged(&self) -> bool {
        !self.err.is_finite() || !self.one_err.is_finite()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column summary.
    pub fn to_table(&self) -> String {
        let fmt = |v: f64| if v.is_finite() { format!("{v:.6e}") } else { "diverged".into() };
        let mut rows = vec![("trajectory".to_string(), "err".to_string(), "one_err".to_string())];
        for (i, s) in self.per_trajectory.iter().enumerate() {
            rows.push((i.to_string(), fmt(s.err), fmt(s.one_err)));
        }
        rows.push(("pooled".into(), fmt(self.err), fmt(self.one_err)));
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (a, b, c) in rows {
            out.push_str(&format!("{a:<w0$}  {b:>w1$}  {c:>w2$}\n"));
        }
        out.push_str(&format!("model_size  {}\n", self.model_size));
        out
    }
}

/// Squared-error sum and sample count of one trajectory; `None` on divergence.
struct Residual {
    full: Option<(f64, usize)>,
    one: Option<(f64, usize)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn ode_residual<F: VectorField + Sync + ?Sized>(field: &F, traj: &Trajectory, method: Integrator) -> Residual {
    let d = traj.dim();
    let full = match integrate(field, &traj.state(0), &traj.ts, method, 1) {
        Ok(pred) => Some(((&pred - &traj.xs).norm_squared(), traj.len() * d)),
        Err(_) => None,
    };
    let mut one_sum = 0.0;
    let mut ok = true;
    for k in 0..traj.len() - 1 {
        match integrate(field, &traj.state(k), &traj.ts[k..k + 2], method, 1) {
            Ok(pred) => one_sum += sq_dist(pred.column(1).as_slice(), &traj.state(k + 1)),
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    Residual {
        full,
        one: ok.then_some((one_sum, (traj.len() - 1) * d)),
    }
}

fn pooled(parts: impl Iterator<Item = Option<(f64, usize)>>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for p in parts {
        match p {
            Some((s, c)) => {
                sum += s;
                n += c;
            }
            None => return f64::INFINITY,
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn rmse(p: &Option<(f64, usize)>) -> f64 {
    pooled(std::iter::once(*p))
}

fn report(residuals: &[Residual], model_size: usize) -> EvalReport {
    EvalReport {
        err: pooled(residuals.iter().map(|r| r.full)),
        one_err: pooled(residuals.iter().map(|r| r.one)),
        per_trajectory: residuals
            .iter()
            .map(|r| TrajectoryScore {
                err: rmse(&r.full),
                one_err: rmse(&r.one),
            })
            .collect(),
        model_size,
    }
}

fn check_dims<F: VectorField + ?Sized>(field: &F, test: &TrajectorySet) -> Result<()> {
    if field.dim() != test.dim() {
        return Err(Error::Shape(format!(
            "model has dimension {}, test data {}",
            field.dim(),
            test.dim()
        )));
    }
    Ok(())
}

/// Scores any vector field; divergent trajectories yield infinite scores.
pub fn evaluate_field<F: VectorField + Sync + ?Sized>(
    field: &F,
    test: &TrajectorySet,
    method: Integrator,
    model_size: usize,
) -> Result<EvalReport> {
    check_dims(field, test)?;
    let residuals: Vec<Residual> = test
        .trajectories()
        .par_iter()
        .map(|t| ode_residual(field, t, method))
        .collect();
    Ok(report(&residuals, model_size))
}

pub fn evaluate(model: &RockModel, test: &TrajectorySet, method: Integrator) -> Result<EvalReport> {
    evaluate_field(model, test, method, count_parameters(model))
}

pub fn full_trajectory_rmse<F: VectorField + Sync + ?Sized>(
    field: &F,
    test: &TrajectorySet,
    method: Integrator,
) -> Result<f64> {
    Ok(evaluate_field(field, test, method, 0)?.err)
}

pub fn next_step_rmse<F: VectorField + Sync + ?Sized>(field: &F, test: &TrajectorySet, method: Integrator) -> Result<f64> {
    Ok(evaluate_field(field, test, method, 0)?.one_err)
}

/// Number of coefficients of a model with `n_blocks` trajectory blocks.
pub fn parameter_count(n_blocks: usize, p: usize, d: usize) -> usize {
    n_blocks * p * d
}

pub fn count_parameters(model: &RockModel) -> usize {
    parameter_count(model.num_blocks(), model.p(), model.state_dim())
}

/// Two-significant-digit count with K/M suffix, e.g. `9.8M`, `.79M`, `66K`.
pub fn format_count(n: usize) -> String {
    let x = n as f64;
    if x >= 1e7 {
        format!("{:.0}M", x / 1e6)
    } else if x >= 1e6 {
        format!("{:.1}M", x / 1e6)
    } else if x >= 1e5 {
        let s = format!("{:.2}M", x / 1e6);
        s.trim_start_matches('0').to_string()
    } else if x >= 1e4 {
        format!("{:.0}K", x / 1e3)
    } else if x >= 1e3 {
        format!("{:.1}K", x / 1e3)
    } else {
        n.to_string()
    }
}

/// Scores a PDE model on a test field: one Euler step per sampling
/// interval on the model's coarse mesh.
pub fn evaluate_pde(model: &PdeModel, test: &FieldGrid) -> Result<EvalReport> {
    let coarse = test.coarsen(model.coarsen)?;
    if (coarse.dx() - model.dx).abs() > 1e-9 * model.dx {
        return Err(Error::Shape(format!(
            "test mesh spacing {} does not match the model's {}",
            coarse.dx(),
            model.dx
        )));
    }
    let (m, n) = coarse.u.shape();
    let row = |j: usize| -> Vec<f64> { coarse.u.row(j).iter().copied().collect() };
    let step = |u: &[f64], j: usize| -> Option<Vec<f64>> {
        let next = model.euler_step(u, coarse.ts[j + 1] - coarse.ts[j]).ok()?;
        next.iter().all(|v| v.is_finite() && v.abs() <= PDE_BLOWUP).then_some(next)
    };
    let mut full = Some((0.0, m * n));
    let mut u = row(0);
    for j in 0..m - 1 {
        match step(&u, j) {
            Some(next) => {
                if let Some((s, _)) = full.as_mut() {
                    *s += sq_dist(&next, &row(j + 1));
                }
                u = next;
            }
            None => {
                full = None;
                break;
            }
        }
    }
    let ones: Vec<Option<f64>> = (0..m - 1)
        .into_par_iter()
        .map(|j| step(&row(j), j).map(|next| sq_dist(&next, &row(j + 1))))
        .collect();
    let one = ones
        .iter()
        .try_fold(0.0, |acc, v| v.map(|s| acc + s))
        .map(|s| (s, (m - 1) * n));
    Ok(report(&[Residual { full, one }], model.alpha.len()))
}
