//! Reference dynamical systems and data generators.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate, Integrator, VectorField};
use crate::ode::{Trajectory, TrajectorySet};
use crate::pde::FieldGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Lorenz63,
    Lorenz96,
    FitzHughNagumo,
    Rossler,
    DoublePendulum,
    Heat1d,
    KuramotoSivashinsky,
}

impl SystemName {
    pub fn is_pde(self) -> bool {
        matches!(self, SystemName::Heat1d | SystemName::KuramotoSivashinsky)
    }

    fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            SystemName::Lorenz63 => &[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
            SystemName::Lorenz96 => &[("forcing", 8.0)],
            SystemName::FitzHughNagumo => &[("a", 0.7), ("b", 0.8), ("tau", 12.5), ("current", 0.5)],
            SystemName::Rossler => &[("a", 0.2), ("b", 0.2), ("c", 5.7)],
            SystemName::DoublePendulum => &[("m1", 1.0), ("m2", 1.0), ("l1", 1.0), ("l2", 1.0), ("g", 9.81)],
            SystemName::Heat1d => &[("diffusivity", 0.1), ("length", 2.0 * PI), ("modes", 3.0)],
            SystemName::KuramotoSivashinsky => &[("length", 22.0)],
        }
    }

    fn default_dim(self) -> usize {
        match self {
            SystemName::Lorenz63 | SystemName::Rossler => 3,
            SystemName::Lorenz96 => 5,
            SystemName::FitzHughNagumo => 2,
            SystemName::DoublePendulum => 4,
            SystemName::Heat1d => 256,
            SystemName::KuramotoSivashinsky => 64,
        }
    }
}

/// A reference system with optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: SystemName,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// State dimension; number of mesh points for PDE systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub noise_std: f64,
}

impl SystemSpec {
    pub fn new(name: SystemName) -> Self {
        SystemSpec {
            name,
            params: BTreeMap::new(),
            dim: None,
            noise_std: 0.0,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or_else(|| self.name.default_dim())
    }

    /// Defaults merged with overrides.
    pub fn resolved_params(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> =
            self.name.default_params().iter().map(|(k, v)| (k.to_string(), *v)).collect();
        out.extend(self.params.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let defaults = self.name.default_params();
        for (k, v) in &self.params {
            if !defaults.iter().any(|(d, _)| d == k) {
                return Err(Error::Config(format!("unknown parameter {k:?} for {:?}", self.name)));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("parameter {k} must be finite")));
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        let dim = self.dim();
        let fixed = match self.name {
            SystemName::Lorenz63 | SystemName::Rossler => Some(3),
            SystemName::FitzHughNagumo => Some(2),
            SystemName::DoublePendulum => Some(4),
            _ => None,
        };
        if let Some(f) = fixed {
            if dim != f {
                return Err(Error::Config(format!("{:?} has dimension {f}, got {dim}", self.name)));
            }
        }
        if self.name == SystemName::Lorenz96 && dim < 4 {
            return Err(Error::Config(format!("Lorenz96 needs dimension at least 4, got {dim}")));
        }
        if self.name.is_pde() && dim < 8 {
            return Err(Error::Config(format!("PDE mesh needs at least 8 points, got {dim}")));
        }
        let p = self.resolved_params();
        let positive: &[&str] = match self.name {
            SystemName::DoublePendulum => &["m1", "m2", "l1", "l2"],
            SystemName::FitzHughNagumo => &["tau"],
            SystemName::Heat1d => &["diffusivity", "length", "modes"],
            SystemName::KuramotoSivashinsky => &["length"],
            _ => &[],
        };
        for k in positive {
            if !(p[*k] > 0.0) {
                return Err(Error::Config(format!("parameter {k} must be positive")));
            }
        }
        Ok(())
    }

    /// Evaluable right-hand side (method of lines for PDE systems).
    pub fn system(&self) -> Result<System> {
        self.validate()?;
        let p = self.resolved_params();
        let dim = self.dim();
        let mesh_dx = |len: f64| len / dim as f64;
        Ok(match self.name {
            SystemName::Lorenz63 => System::Lorenz63 {
                sigma: p["sigma"],
                rho: p["rho"],
                beta: p["beta"],
            },
            SystemName::Lorenz96 => System::Lorenz96 { forcing: p["forcing"], dim },
            SystemName::FitzHughNagumo => System::FitzHughNagumo {
                a: p["a"],
                b: p["b"],
                tau: p["tau"],
                current: p["current"],
            },
            SystemName::Rossler => System::Rossler {
                a: p["a"],
                b: p["b"],
                c: p["c"],
            },
            SystemName::DoublePendulum => System::DoublePendulum(Pendulum {
                m1: p["m1"],
                m2: p["m2"],
                l1: p["l1"],
                l2: p["l2"],
                g: p["g"],
            }),
            SystemName::Heat1d => System::Heat {
                diffusivity: p["diffusivity"],
                dx: mesh_dx(p["length"]),
                dim,
            },
            SystemName::KuramotoSivashinsky => System::Ks {
                dx: mesh_dx(p["length"]),
                dim,
            },
        })
    }
}

/// Double pendulum in canonical coordinates `(θ₁, θ₂, p₁, p₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Pendulum {
    pub fn hamiltonian(&self, x: &[f64]) -> f64 {
        let Pendulum { m1, m2, l1, l2, g } = *self;
        let (t1, t2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let d = t1 - t2;
        let den = 2.0 * m2 * l1 * l1 * l2 * l2 * (m1 + m2 * d.sin().powi(2));
        let kin = (m2 * l2 * l2 * p1 * p1 + (m1 + m2) * l1 * l1 * p2 * p2 - 2.0 * m2 * l1 * l2 * p1 * p2 * d.cos()) / den;
        kin - (m1 + m2) * g * l1 * t1.cos() - m2 * g * l2 * t2.cos()
    }

    fn field(&self, x: &[f64], out: &mut [f64]) {
        let Pendulum { m1, m2, l1, l2, g } = *self;
        let (t1, t2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let d = t1 - t2;
        let (s, c) = d.sin_cos();
        let w = m1 + m2 * s * s;
        out[0] = (l2 * p1 - l1 * p2 * c) / (l1 * l1 * l2 * w);
        out[1] = ((m1 + m2) * l1 * p2 - m2 * l2 * p1 * c) / (m2 * l1 * l2 * l2 * w);
        let c1 = p1 * p2 * s / (l1 * l2 * w);
        let c2 = (m2 * l2 * l2 * p1 * p1 + (m1 + m2) * l1 * l1 * p2 * p2 - 2.0 * m2 * l1 * l2 * p1 * p2 * c)
            * (2.0 * d).sin()
            / (2.0 * l1 * l1 * l2 * l2 * w * w);
        out[2] = -(m1 + m2) * g * l1 * t1.sin() - c1 + c2;
        out[3] = -m2 * g * l2 * t2.sin() + c1 - c2;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { forcing: f64, dim: usize },
    FitzHughNagumo { a: f64, b: f64, tau: f64, current: f64 },
    Rossler { a: f64, b: f64, c: f64 },
    DoublePendulum(Pendulum),
    /// `∂ₜu = c ∂ₓₓu`, periodic, second-order differences.
    Heat { diffusivity: f64, dx: f64, dim: usize },
    /// `∂ₜu = −u∂ₓu − ∂ₓₓu − ∂ₓₓₓₓu`, periodic, second-order differences.
    Ks { dx: f64, dim: usize },
}

impl VectorField for System {
    fn dim(&self) -> usize {
        match self {
            System::Lorenz63 { .. } | System::Rossler { .. } => 3,
            System::FitzHughNagumo { .. } => 2,
            System::DoublePendulum(_) => 4,
            System::Lorenz96 { dim, .. } | System::Heat { dim, .. } | System::Ks { dim, .. } => *dim,
        }
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            System::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            System::Lorenz96 { forcing, dim } => {
                for k in 0..dim {
                    let next = x[(k + 1) % dim];
                    let prev = x[(k + dim - 1) % dim];
                    let prev2 = x[(k + dim - 2) % dim];
                    out[k] = (next - prev2) * prev - x[k] + forcing;
                }
            }
            System::FitzHughNagumo { a, b, tau, current } => {
                let (v, w) = (x[0], x[1]);
                out[0] = v - v * v * v / 3.0 - w + current;
                out[1] = (v + a - b * w) / tau;
            }
            System::Rossler { a, b, c } => {
                out[0] = -x[1] - x[2];
                out[1] = x[0] + a * x[1];
                out[2] = b + x[2] * (x[0] - c);
            }
            System::DoublePendulum(p) => p.field(x, out),
            System::Heat { diffusivity, dx, dim } => {
                let s = diffusivity / (dx * dx);
                for i in 0..dim {
                    let l = x[(i + dim - 1) % dim];
                    let r = x[(i + 1) % dim];
                    out[i] = s * (l - 2.0 * x[i] + r);
                }
            }
            System::Ks { dx, dim } => {
                let at = |k: isize| x[(k.rem_euclid(dim as isize)) as usize];
                for i in 0..dim {
                    let k = i as isize;
                    let ux = (at(k + 1) - at(k - 1)) / (2.0 * dx);
                    let uxx = (at(k + 1) - 2.0 * at(k) + at(k - 1)) / (dx * dx);
                    let uxxxx = (at(k + 2) - 4.0 * at(k + 1) + 6.0 * at(k) - 4.0 * at(k - 1) + at(k - 2)) / dx.powi(4);
                    out[i] = -at(k) * ux - uxx - uxxxx;
                }
            }
        }
    }
}

/// `ẋ` at `x`.
pub fn vector_field(spec: &SystemSpec, x: &[f64]) -> Result<Vec<f64>> {
    let sys = spec.system()?;
    if x.len() != sys.dim() {
        return Err(Error::Shape(format!("state has {} entries, system has {}", x.len(), sys.dim())));
    }
    let mut out = vec![0.0; x.len()];
    sys.eval_into(x, &mut out);
    Ok(out)
}

/// What to generate: a system plus sampling layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub system: SystemSpec,
    /// Number of trajectories (ignored for PDE systems, which produce one field).
    #[serde(default = "one")]
    pub n_traj: usize,
    /// Samples per trajectory, including the initial one.
    pub samples: usize,
    pub dt: f64,
    /// Integration time discarded before the first sample.
    #[serde(default)]
    pub transient: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Ode(TrajectorySet),
    Pde(FieldGrid),
}

/// Internal RK4 step bound for ODE generation.
const ODE_MAX_STEP: f64 = 1e-3;

pub fn generate(gen: &Generator) -> Result<Dataset> {
    gen.system.validate()?;
    if gen.samples < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {}", gen.samples)));
    }
    if !(gen.dt > 0.0) || !gen.dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {}", gen.dt)));
    }
    if !(gen.transient >= 0.0) {
        return Err(Error::Config(format!("transient must be nonnegative, got {}", gen.transient)));
    }
    match gen.system.name {
        SystemName::Heat1d => generate_heat(gen).map(Dataset::Pde),
        SystemName::KuramotoSivashinsky => generate_ks(gen).map(Dataset::Pde),
        _ => generate_ode(gen).map(Dataset::Ode),
    }
}

/// Random source for trajectory `k`: an independent ChaCha stream of the master seed.
fn stream_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn initial_state(name: SystemName, dim: usize, forcing: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match name {
        SystemName::Lorenz63 => vec![
            rng.gen_range(-15.0..15.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(5.0..40.0),
        ],
        SystemName::Lorenz96 => (0..dim).map(|_| forcing + rng.gen_range(-1.0..1.0)).collect(),
        SystemName::FitzHughNagumo => vec![rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.5)],
        SystemName::Rossler => vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..1.0)],
        SystemName::DoublePendulum => vec![
            rng.gen_range(-PI / 2.0..PI / 2.0),
            rng.gen_range(-PI / 2.0..PI / 2.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ],
        SystemName::Heat1d | SystemName::KuramotoSivashinsky => unreachable!("PDE systems use field initial data"),
    }
}

fn add_noise(values: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("valid std");
        for v in values {
            *v += normal.sample(rng);
        }
    }
}

fn generate_ode(gen: &Generator) -> Result<TrajectorySet> {
    if gen.n_traj == 0 {
        return Err(Error::Config("need at least one trajectory".into()));
    }
    let spec = &gen.system;
    let sys = spec.system()?;
    let forcing = spec.resolved_params().get("forcing").copied().unwrap_or(0.0);
    let substeps = (gen.dt / ODE_MAX_STEP).ceil().max(10.0) as usize;
    let ts: Vec<f64> = (0..gen.samples).map(|k| k as f64 * gen.dt).collect();
    let trajectories: Vec<Trajectory> = (0..gen.n_traj)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(gen.seed, k);
            let mut x0 = initial_state(spec.name, sys.dim(), forcing, &mut rng);
            if gen.transient > 0.0 {
                let steps = (gen.transient / ODE_MAX_STEP).ceil().max(1.0) as usize;
                let warm = integrate(&sys, &x0, &[0.0, gen.transient], Integrator::Rk4, steps)?;
                x0 = warm.column(1).iter().copied().collect();
            }
            let mut xs = integrate(&sys, &x0, &ts, Integrator::Rk4, substeps)?;
            add_noise(xs.as_mut_slice(), spec.noise_std, &mut rng);
            Trajectory::new(ts.clone(), xs)
        })
        .collect::<Result<_>>()?;
    TrajectorySet::new(trajectories)
}

/// Oversampling of the generation mesh relative to the stored mesh.
const PDE_REFINE: usize = 4;

fn periodic_mesh(n: usize, len: f64) -> Vec<f64> {
    (0..n).map(|i| len * i as f64 / n as f64).collect()
}

fn generate_heat(gen: &Generator) -> Result<FieldGrid> {
    let spec = &gen.system;
    let p = spec.resolved_params();
    let (c, len) = (p["diffusivity"], p["length"]);
    let modes = p["modes"].round().max(1.0) as usize;
    let n = spec.dim();
    let nf = n * PDE_REFINE;
    let fine = periodic_mesh(nf, len);
    let mut rng = stream_rng(gen.seed, 0);
    // Σ (1/k) sin(kκx + φₖ), κ = 2π/len, φ₁ = 0.
    let kappa = 2.0 * PI / len;
    let phases: Vec<f64> = (1..=modes)
        .map(|k| if k == 1 { 0.0 } else { rng.gen_range(0.0..2.0 * PI) })
        .collect();
    let u0: Vec<f64> = fine
        .iter()
        .map(|&x| {
            (1..=modes)
                .map(|k| (k as f64 * kappa * x + phases[k - 1]).sin() / k as f64)
                .sum()
        })
        .collect();
    let sys = System::Heat {
        diffusivity: c,
        dx: len / nf as f64,
        dim: nf,
    };
    // RK4 is stable on the negative real axis up to about 2.78.
    let lam_max = 4.0 * c * (nf as f64 / len).powi(2);
    let h_max = 2.0 / lam_max;
    let substeps = (gen.dt / h_max).ceil().max(1.0) as usize;
    let mut start = u0;
    if gen.transient > 0.0 {
        let steps = (gen.transient / h_max).ceil().max(1.0) as usize;
        let warm = integrate(&sys, &start, &[0.0, gen.transient], Integrator::Rk4, steps)?;
        start = warm.column(1).iter().copied().collect();
    }
    let ts: Vec<f64> = (0..gen.samples).map(|k| k as f64 * gen.dt).collect();
    let traj = integrate(&sys, &start, &ts, Integrator::Rk4, substeps)?;
    let mut u = DMatrix::from_fn(gen.samples, n, |j, i| traj[(i * PDE_REFINE, j)]);
    add_noise(u.as_mut_slice(), spec.noise_std, &mut rng);
    FieldGrid::new(u, ts, periodic_mesh(n, len), true)
}

/// Exponential time-differencing RK4 for the periodic KS equation.
struct KsSolver {
    n: usize,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
    g: Vec<Complex64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl KsSolver {
    fn new(n: usize, len: f64, h: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let wave = |j: usize| -> f64 {
            let k = if j < n / 2 {
                j as f64
            } else if j == n / 2 {
                0.0
            } else {
                j as f64 - n as f64
            };
            2.0 * PI * k / len
        };
        const CONTOUR: usize = 32;
        let roots: Vec<Complex64> = (1..=CONTOUR)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / CONTOUR as f64))
            .collect();
        let mut s = KsSolver {
            n,
            e: vec![],
            e2: vec![],
            q: vec![],
            f1: vec![],
            f2: vec![],
            f3: vec![],
            g: vec![],
            fft,
            ifft,
        };
        for j in 0..n {
            let k = wave(j);
            let l = k * k - k.powi(4);
            s.e.push(Complex64::new((h * l).exp(), 0.0));
            s.e2.push(Complex64::new((h * l / 2.0).exp(), 0.0));
            let (mut q, mut f1, mut f2, mut f3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
            for r in &roots {
                let z = r + h * l;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z / 2.0).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let m = CONTOUR as f64;
            // Real part only: the contour is symmetric about the real axis.
            s.q.push(Complex64::new(h * (q / m).re, 0.0));
            s.f1.push(Complex64::new(h * (f1 / m).re, 0.0));
            s.f2.push(Complex64::new(h * (f2 / m).re, 0.0));
            s.f3.push(Complex64::new(h * (f3 / m).re, 0.0));
            s.g.push(Complex64::new(0.0, -0.5 * k));
        }
        s
    }

    fn to_physical(&self, v: &[Complex64]) -> Vec<f64> {
        let mut buf = v.to_vec();
        self.ifft.process(&mut buf);
        buf.iter().map(|c| c.re / self.n as f64).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let u = self.to_physical(v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        self.to_spectral(&sq).iter().zip(&self.g).map(|(a, g)| a * g).collect()
    }

    fn step(&self, v: &mut [Complex64]) {
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..self.n).map(|j| self.e2[j] * v[j] + self.q[j] * nv[j]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..self.n).map(|j| self.e2[j] * v[j] + self.q[j] * na[j]).collect();
        let nb = self.nonlinear(&b);
        let c: Vec<Complex64> = (0..self.n)
            .map(|j| self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]))
            .collect();
        let nc = self.nonlinear(&c);
        for j in 0..self.n {
            v[j] = self.e[j] * v[j] + nv[j] * self.f1[j] + 2.0 * (na[j] + nb[j]) * self.f2[j] + nc[j] * self.f3[j];
        }
    }
}

/// Internal step bound for the KS solver.
const KS_MAX_STEP: f64 = 0.025;

fn generate_ks(gen: &Generator) -> Result<FieldGrid> {
    let spec = &gen.system;
    let len = spec.resolved_params()["length"];
    let n = spec.dim();
    let nf = n * PDE_REFINE;
    let fine = periodic_mesh(nf, len);
    let mut rng = stream_rng(gen.seed, 0);
    let kappa = 2.0 * PI / len;
    let coef: Vec<(f64, f64)> = (1..=4)
        .map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let u0: Vec<f64> = fine
        .iter()
        .map(|&x| {
            coef.iter()
                .enumerate()
                .map(|(k, (a, ph))| a * ((k + 1) as f64 * kappa * x + ph).cos())
                .sum()
        })
        .collect();
    let substeps = (gen.dt / KS_MAX_STEP).ceil().max(1.0) as usize;
    let h = gen.dt / substeps as f64;
    let solver = KsSolver::new(nf, len, h);
    let mut v = solver.to_spectral(&u0);
    let warm_steps = (gen.transient / h).round() as usize;
    for _ in 0..warm_steps {
        solver.step(&mut v);
    }
    let mut u = DMatrix::zeros(gen.samples, n);
    for j in 0..gen.samples {
        if j > 0 {
            for _ in 0..substeps {
                solver.step(&mut v);
            }
        }
        let phys = solver.to_physical(&v);
        if phys.iter().any(|x| !x.is_finite() || x.abs() > 1e6) {
            return Err(Error::Divergence {
                time: j as f64 * gen.dt,
                step: j,
            });
        }
        for i in 0..n {
            u[(j, i)] = phys[i * PDE_REFINE];
        }
    }
    add_noise(u.as_mut_slice(), spec.noise_std, &mut rng);
    let ts = (0..gen.samples).map(|k| k as f64 * gen.dt).collect();
    FieldGrid::new(u, ts, periodic_mesh(n, len), true)
}
