//! Scalar radial kernels and Gram matrices.
//!
//! Every vector-valued kernel used by the learners is separable,
//! `K(x, y) = k(‖x − y‖) I_d`, so only the scalar Gram matrix of `k` is ever
//! materialized.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Beyond this value of `r / γ` the Matérn product underflows and is returned as 0.
const MATERN_CUTOFF: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(−r² / 2σ²)`
    Gaussian,
    /// `exp(−r / γ)`
    Laplace,
    /// The C¹⁰ Matérn kernel (half-integer order 11/2).
    Matern10,
    /// Random Fourier feature approximation of the Gaussian kernel.
    RandomFourier,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplace => "laplace",
            KernelFamily::Matern10 => "matern10",
            KernelFamily::RandomFourier => "random_fourier",
        }
    }
}

/// Random Fourier feature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffConfig {
    /// Total feature count `q` (cos/sin pairs, so `q` must be even).
    pub num_features: usize,
    /// When set, frequencies lie on the lattice `2π/period · ℤ^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Kernel family plus scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// σ for Gaussian and random Fourier kernels, γ for Laplace and Matérn.
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rff: Option<RffConfig>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64) -> Result<Self> {
        if family == KernelFamily::RandomFourier {
            return Err(Error::Config(
                "random Fourier kernels need feature settings, use KernelSpec::random_fourier".into(),
            ));
        }
        let spec = KernelSpec { family, scale, rff: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn laplace(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplace, gamma)
    }

    pub fn matern10(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern10, gamma)
    }

    pub fn random_fourier(sigma: f64, rff: RffConfig) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::RandomFourier,
            scale: sigma,
            rff: Some(rff),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same family and feature settings with a different scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        let spec = KernelSpec { scale, ..*self };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("kernel scale must be positive, got {}", self.scale)));
        }
        match (self.family, &self.rff) {
            (KernelFamily::RandomFourier, None) => {
                Err(Error::Config("random Fourier kernel without feature settings".into()))
            }
            (KernelFamily::RandomFourier, Some(rff)) => {
                if rff.num_features < 1 {
                    return Err(Error::Config("random Fourier feature count must be at least 1".into()));
                }
                if !rff.num_features.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "random Fourier feature count must be even (cos/sin pairs), got {}",
                        rff.num_features
                    )));
                }
                if let Some(p) = rff.period {
                    if !(p > 0.0 && p.is_finite()) {
                        return Err(Error::Config(format!("period must be positive, got {p}")));
                    }
                }
                Ok(())
            }
            (_, Some(_)) => Err(Error::Config(format!(
                "feature settings given for the {} kernel",
                self.family.name()
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[inline]
fn radial(family: KernelFamily, scale: f64, r: f64) -> f64 {
    match family {
        KernelFamily::Gaussian => (-(r * r) / (2.0 * scale * scale)).exp(),
        KernelFamily::Laplace => (-r / scale).exp(),
        KernelFamily::Matern10 => {
            let u = r / scale;
            if u > MATERN_CUTOFF {
                return 0.0;
            }
            let poly = ((((u + 15.0) * u + 105.0) * u + 420.0) * u + 945.0) * u + 945.0;
            (-u).exp() * poly / 945.0
        }
        KernelFamily::RandomFourier => unreachable!("random Fourier kernels are not radial"),
    }
}

/// Evaluates the scalar kernel at distance `r`.
pub fn eval_scalar_kernel(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("kernel distance must be nonnegative, got {r}")));
    }
    if spec.family == KernelFamily::RandomFourier {
        return Err(Error::Unsupported(
            "random Fourier kernels have no radial form, use rff_gram".into(),
        ));
    }
    Ok(radial(spec.family, spec.scale, r))
}

fn squared_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm_squared()).collect()
}

/// Squared pairwise distances between the columns of `x` and `y`, clamped at 0.
pub fn squared_distances(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "point dimensions differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let x2 = squared_norms(x);
    let y2 = squared_norms(y);
    let mut d2 = x.transpose() * y;
    let rows = d2.nrows();
    if rows == 0 {
        return Ok(d2);
    }
    d2.as_mut_slice()
        .par_chunks_mut(rows)
        .zip(y2.par_iter())
        .for_each(|(col, &yy)| {
            for (v, &xx) in col.iter_mut().zip(&x2) {
                *v = (xx + yy - 2.0 * *v).max(0.0);
            }
        });
    Ok(d2)
}

/// Gram matrix `K[i, j] = k(‖x_i − y_j‖)` between the columns of `x` (d×M) and `y` (d×N).
///
/// Random Fourier kernels dispatch to [`rff_gram`].
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if spec.family == KernelFamily::RandomFourier {
        return rff_gram(spec, x, y);
    }
    let mut k = squared_distances(x, y)?;
    let (family, scale) = (spec.family, spec.scale);
    k.as_mut_slice().par_iter_mut().for_each(|v| {
        *v = match family {
            KernelFamily::Gaussian => (-*v / (2.0 * scale * scale)).exp(),
            _ => radial(family, scale, v.sqrt()),
        }
    });
    Ok(k)
}

/// Frequencies and phases of a random Fourier feature map.
#[derive(Debug, Clone)]
pub struct RandomFourierMap {
    /// One frequency per column, `dim × (q/2)`.
    frequencies: DMatrix<f64>,
    norm: f64,
}

impl RandomFourierMap {
    /// Draws `num_features / 2` frequencies from `N(0, σ⁻² I)`.
    ///
    /// With a period `P`, each frequency is rounded to the nearest point of
    /// `2π/P · ℤ^d`, so every feature is `P`-periodic in each coordinate.
    pub fn new(sigma: f64, rff: &RffConfig, dim: usize) -> Result<Self> {
        if rff.num_features < 1 || !rff.num_features.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "random Fourier feature count must be a positive even number, got {}",
                rff.num_features
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("kernel scale must be positive, got {sigma}")));
        }
        let pairs = rff.num_features / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(rff.seed);
        let mut frequencies = DMatrix::<f64>::zeros(dim, pairs);
        for v in frequencies.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z / sigma;
        }
        if let Some(period) = rff.period {
            let base = 2.0 * PI / period;
            frequencies.apply(|w| *w = (*w / base).round() * base);
        }
        Ok(RandomFourierMap {
            frequencies,
            norm: (2.0 / rff.num_features as f64).sqrt(),
        })
    }

    pub fn num_features(&self) -> usize {
        2 * self.frequencies.ncols()
    }

    pub fn dim(&self) -> usize {
        self.frequencies.nrows()
    }

    /// Feature matrix `q × M` for the columns of `x`: rows `2k` and `2k+1` hold
    /// `cos(w_kᵀx)` and `sin(w_kᵀx)`.
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "feature map expects dimension {}, got {}",
                self.dim(),
                x.nrows()
            )));
        }
        let proj = self.frequencies.transpose() * x;
        let mut out = DMatrix::zeros(self.num_features(), x.ncols());
        for j in 0..x.ncols() {
            for k in 0..proj.nrows() {
                let (s, c) = proj[(k, j)].sin_cos();
                out[(2 * k, j)] = self.norm * c;
                out[(2 * k + 1, j)] = self.norm * s;
            }
        }
        Ok(out)
    }

    /// Features of a single point, written into `out` (length `q`).
    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.num_features());
        for (k, w) in self.frequencies.column_iter().enumerate() {
            let phase: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            out[2 * k] = self.norm * c;
            out[2 * k + 1] = self.norm * s;
        }
    }
}

fn rff_map(spec: &KernelSpec, dim: usize) -> Result<RandomFourierMap> {
    match (spec.family, &spec.rff) {
        (KernelFamily::RandomFourier, Some(rff)) => RandomFourierMap::new(spec.scale, rff, dim),
        _ => Err(Error::Config(format!(
            "{} kernel has no random Fourier features",
            spec.family.name()
        ))),
    }
}

/// Random Fourier features `q × M` of the columns of `x`.
pub fn rff_features(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    rff_map(spec, x.nrows())?.features(x)
}

/// Gram matrix of the random Fourier feature inner product, `Φ(x)ᵀ Φ(y)`.
pub fn rff_gram(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "point dimensions differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let map = rff_map(spec, x.nrows())?;
    let fx = map.features(x)?;
    let fy = map.features(y)?;
    Ok(fx.transpose() * fy)
}

/// Median pairwise distance over at most `max_points` columns chosen with `seed`.
pub fn median_pairwise_distance(points: &DMatrix<f64>, max_points: usize, seed: u64) -> Result<f64> {
    let n = points.ncols();
    if n < 2 {
        return Err(Error::Data("need at least two points for a median distance".into()));
    }
    let subset = if n > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        let pick = Uniform::new(0usize, n);
        // Partial Fisher-Yates.
        for i in 0..max_points {
            let j = i + pick.sample(&mut rng) % (n - i);
            idx.swap(i, j);
        }
        idx.truncate(max_points);
        idx.sort_unstable();
        points.select_columns(&idx)
    } else {
        points.clone()
    };
    let d2 = squared_distances(&subset, &subset)?;
    let m = subset.ncols();
    let mut dists: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for i in 0..j {
            dists.push(d2[(i, j)].sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len().is_multiple_of(2) {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::Data("all sampled points coincide".into()))
    }
}
