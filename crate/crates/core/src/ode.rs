//! Occupation-kernel learning of ODE vector fields from sampled trajectories.
//!
//! The learned field is
//! `f(x) = Σᵢ ∫ k(x, xⁱ(t)) ψᵢ(t)ᵀ dt · Aᵢ`,
//! where `A` solves `(G + λI) A = Y` with
//! `G = QΦ K QΦᵀ` and `Y = (X QΦDᵀ)ᵀ`. The targets come from integrating
//! `∫ ψ ẋ dt` by parts, so no derivative of the data is ever estimated.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{integrate, Integrator, VectorField};
use crate::kernels::{gram, KernelFamily, KernelSpec, RandomFourierMap};
use crate::representer::{solve_regularized, RegularizedSystem};
use crate::test_space::TestBlock;

/// One sampled trajectory: `ts` strictly increasing, `xs` is `d × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ts: Vec<f64>,
    pub xs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(ts: Vec<f64>, xs: DMatrix<f64>) -> Result<Self> {
        if ts.len() != xs.ncols() {
            return Err(Error::Shape(format!("{} times but {} samples", ts.len(), xs.ncols())));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("sample times must be strictly increasing".into()));
        }
        Ok(Trajectory { ts, xs })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.nrows()
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.xs.column(k).iter().copied().collect()
    }

    /// Samples `range` as a new trajectory.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            ts: self.ts[range.clone()].to_vec(),
            xs: self.xs.columns(range.start, range.len()).into_owned(),
        }
    }
}

/// Trajectories of one system, all with the same state dimension and at least two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
    dim: usize,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Data("a trajectory set needs at least one trajectory".into()))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::Data("state dimension must be positive".into()));
        }
        for (index, t) in trajectories.iter().enumerate() {
            if t.dim() != dim {
                return Err(Error::Shape(format!(
                    "trajectory {index} has dimension {}, expected {dim}",
                    t.dim()
                )));
            }
            if t.len() < 2 {
                return Err(Error::TrajectoryTooShort { index, len: t.len() });
            }
            if t.ts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Data(format!("trajectory {index}: times not strictly increasing")));
            }
            if t.xs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("trajectory {index} contains non-finite states")));
            }
        }
        Ok(TrajectorySet { trajectories, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn total_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All samples side by side, `d × Σmᵢ`, in trajectory order.
    pub fn points(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.total_samples());
        let mut offset = 0;
        for t in &self.trajectories {
            out.columns_mut(offset, t.len()).copy_from(&t.xs);
            offset += t.len();
        }
        out
    }

    pub fn times(&self) -> Vec<&[f64]> {
        self.trajectories.iter().map(|t| t.ts.as_slice()).collect()
    }

    /// Trajectories selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<TrajectorySet> {
        TrajectorySet::new(indices.iter().map(|&i| self.trajectories[i].clone()).collect())
    }

    /// Concatenation of two sets of the same dimension.
    pub fn concat(&self, other: &TrajectorySet) -> Result<TrajectorySet> {
        let mut all = self.trajectories.clone();
        all.extend(other.trajectories.iter().cloned());
        TrajectorySet::new(all)
    }
}

/// Builds the Legendre/trapezoid test matrices on the sample times of `data`.
pub fn build_test_block(data: &TrajectorySet, p: usize) -> Result<TestBlock> {
    if p < 1 {
        return Err(Error::Config("at least one test feature is required".into()));
    }
    TestBlock::with_trapezoid(&data.times(), p - 1)
}

fn check_block(data: &TrajectorySet, tb: &TestBlock) -> Result<()> {
    let consistent = tb.num_blocks() == data.len()
        && tb
            .blocks()
            .iter()
            .zip(data.trajectories())
            .all(|(b, t)| b.samples.len() == t.len());
    if consistent {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "test block has {} blocks over {} samples, data has {} trajectories over {} samples",
            tb.num_blocks(),
            tb.total_samples(),
            data.len(),
            data.total_samples()
        )))
    }
}

/// `G = QΦ K QΦᵀ` with `K` the kernel Gram matrix of all samples.
pub fn assemble_gram(kernel: &KernelSpec, data: &TrajectorySet, tb: &TestBlock) -> Result<DMatrix<f64>> {
    check_block(data, tb)?;
    let x = data.points();
    let k = gram(kernel, &x, &x)?;
    let p = tb.p();
    // K QΦᵀ, one block column per trajectory.
    let cols: Vec<DMatrix<f64>> = tb
        .blocks()
        .par_iter()
        .map(|b| k.columns(b.samples.start, b.samples.len()) * b.qphi.transpose())
        .collect();
    let mut kq = DMatrix::zeros(k.nrows(), tb.rows());
    for (i, c) in cols.iter().enumerate() {
        kq.columns_mut(i * p, p).copy_from(c);
    }
    let g = tb.qphi_mul(&kq);
    Ok((&g + g.transpose()) * 0.5)
}

/// Integration-by-parts targets `X · QΦDᵀ`, returned `d × np`.
pub fn assemble_targets(data: &TrajectorySet, tb: &TestBlock) -> Result<DMatrix<f64>> {
    check_block(data, tb)?;
    Ok(tb.qphid_mul(&data.points().transpose()).transpose())
}

/// Quadratic objective `‖GA − Y‖²_F + λ tr(AᵀGA)` minimized by the trained coefficients.
///
/// `targets` is `np × d`.
pub fn regularized_objective(g: &DMatrix<f64>, targets: &DMatrix<f64>, coeffs: &DMatrix<f64>, lambda: f64) -> f64 {
    let ga = g * coeffs;
    let resid = (&ga - targets).norm_squared();
    resid + lambda * coeffs.dot(&ga)
}

#[derive(Debug, Clone)]
enum Expansion {
    /// `f(x) = Σ_s k(x, x_s) w_s`, weights `Σm × d`.
    Radial { weights: DMatrix<f64> },
    /// `f(x) = Wᵀ φ(x)`, `W` is `q × d`.
    Features { map: RandomFourierMap, weights: DMatrix<f64> },
}

/// A trained occupation-kernel vector field.
#[derive(Debug, Clone)]
pub struct RockModel {
    kernel: KernelSpec,
    lambda: f64,
    train_points: DMatrix<f64>,
    block_times: Vec<Vec<f64>>,
    test_block: TestBlock,
    coeffs: DMatrix<f64>,
    expansion: Expansion,
}

impl RockModel {
    /// Solves for the coefficients with caller-supplied targets (`np × d`).
    ///
    /// `kernel_data` supplies the states that enter the kernel and the sample
    /// times of the test functions.
    pub fn fit(
        kernel: KernelSpec,
        lambda: f64,
        kernel_data: &TrajectorySet,
        tb: TestBlock,
        gram_matrix: DMatrix<f64>,
        targets: DMatrix<f64>,
    ) -> Result<Self> {
        check_block(kernel_data, &tb)?;
        let sys = RegularizedSystem::new(gram_matrix, targets, lambda)?;
        let coeffs = solve_regularized(&sys)?;
        let block_times = kernel_data.times().iter().map(|t| t.to_vec()).collect();
        Self::from_parts(kernel, lambda, kernel_data.points(), block_times, tb, coeffs)
    }

    /// Reassembles a model from stored parts; the test block is rebuilt with trapezoid weights.
    pub fn from_stored(
        kernel: KernelSpec,
        lambda: f64,
        p: usize,
        block_times: Vec<Vec<f64>>,
        train_points: DMatrix<f64>,
        coeffs: DMatrix<f64>,
    ) -> Result<Self> {
        if p < 1 {
            return Err(Error::Config("at least one test feature is required".into()));
        }
        let refs: Vec<&[f64]> = block_times.iter().map(Vec::as_slice).collect();
        let tb = TestBlock::with_trapezoid(&refs, p - 1)?;
        Self::from_parts(kernel, lambda, train_points, block_times, tb, coeffs)
    }

    fn from_parts(
        kernel: KernelSpec,
        lambda: f64,
        train_points: DMatrix<f64>,
        block_times: Vec<Vec<f64>>,
        test_block: TestBlock,
        coeffs: DMatrix<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        if coeffs.nrows() != test_block.rows() || coeffs.ncols() != train_points.nrows() {
            return Err(Error::Shape(format!(
                "coefficients are {}×{}, expected {}×{}",
                coeffs.nrows(),
                coeffs.ncols(),
                test_block.rows(),
                train_points.nrows()
            )));
        }
        if train_points.ncols() != test_block.total_samples() {
            return Err(Error::Shape(format!(
                "{} training points for {} quadrature nodes",
                train_points.ncols(),
                test_block.total_samples()
            )));
        }
        let weights = test_block.qphi_tr_mul(&coeffs);
        let expansion = match (kernel.family, &kernel.rff) {
            (KernelFamily::RandomFourier, Some(rff)) => {
                let map = RandomFourierMap::new(kernel.scale, rff, train_points.nrows())?;
                let phi = map.features(&train_points)?;
                Expansion::Features {
                    weights: phi * weights,
                    map,
                }
            }
            _ => Expansion::Radial { weights },
        };
        Ok(RockModel {
            kernel,
            lambda,
            train_points,
            block_times,
            test_block,
            coeffs,
            expansion,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Test features per trajectory block.
    pub fn p(&self) -> usize {
        self.test_block.p()
    }

    pub fn num_blocks(&self) -> usize {
        self.test_block.num_blocks()
    }

    pub fn state_dim(&self) -> usize {
        self.train_points.nrows()
    }

    pub fn train_points(&self) -> &DMatrix<f64> {
        &self.train_points
    }

    pub fn block_times(&self) -> &[Vec<f64>] {
        &self.block_times
    }

    pub fn test_block(&self) -> &TestBlock {
        &self.test_block
    }

    /// The `np × d` coefficient matrix `A`.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `f` at the columns of `query` (`d × M`), returned `d × M`.
    pub fn eval_vector_field(&self, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if query.nrows() != self.state_dim() {
            return Err(Error::Shape(format!(
                "query points have dimension {}, model has {}",
                query.nrows(),
                self.state_dim()
            )));
        }
        match &self.expansion {
            Expansion::Radial { weights } => {
                let k = gram(&self.kernel, &self.train_points, query)?;
                Ok(weights.transpose() * k)
            }
            Expansion::Features { map, weights } => Ok(weights.transpose() * map.features(query)?),
        }
    }

    /// Integrates `ẋ = f(x)` from `x0` at `t_grid[0]`, one step per grid interval.
    pub fn forecast(&self, x0: &[f64], t_grid: &[f64], method: Integrator) -> Result<DMatrix<f64>> {
        integrate(self, x0, t_grid, method, 1)
    }
}

impl VectorField for RockModel {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match &self.expansion {
            Expansion::Radial { weights } => {
                let d = x.len();
                let (family, scale) = (self.kernel.family, self.kernel.scale);
                for (s, col) in self.train_points.column_iter().enumerate() {
                    let mut r2 = 0.0;
                    for i in 0..d {
                        let diff = x[i] - col[i];
                        r2 += diff * diff;
                    }
                    let kv = match family {
                        KernelFamily::Gaussian => (-r2 / (2.0 * scale * scale)).exp(),
                        KernelFamily::Laplace => (-r2.sqrt() / scale).exp(),
                        _ => crate::kernels::eval_scalar_kernel(&self.kernel, r2.sqrt()).unwrap_or(0.0),
                    };
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += kv * weights[(s, j)];
                    }
                }
            }
            Expansion::Features { map, weights } => {
                let mut phi = vec![0.0; map.num_features()];
                map.features_into(x, &mut phi);
                let phi = DVector::from_vec(phi);
                let f = weights.transpose() * phi;
                out.copy_from_slice(f.as_slice());
            }
        }
    }
}

/// Assembled training system for one `(kernel, p)` pair; `λ` can vary without reassembly.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub test_block: TestBlock,
    pub gram: DMatrix<f64>,
    /// `np × d`.
    pub targets: DMatrix<f64>,
}

impl AssembledSystem {
    pub fn new(data: &TrajectorySet, kernel: &KernelSpec, p: usize) -> Result<Self> {
        let test_block = build_test_block(data, p)?;
        let gram = assemble_gram(kernel, data, &test_block)?;
        let targets = assemble_targets(data, &test_block)?.transpose();
        Ok(AssembledSystem { test_block, gram, targets })
    }

    pub fn solve(&self, data: &TrajectorySet, kernel: &KernelSpec, lambda: f64) -> Result<RockModel> {
        RockModel::fit(
            *kernel,
            lambda,
            data,
            self.test_block.clone(),
            self.gram.clone(),
            self.targets.clone(),
        )
    }
}

/// Trains a model with `p` Legendre test features per trajectory.
pub fn train(data: &TrajectorySet, kernel: &KernelSpec, lambda: f64, p: usize) -> Result<RockModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("regularization must be positive, got {lambda}")));
    }
    AssembledSystem::new(data, kernel, p)?.solve(data, kernel, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representer::RidgeRegression;
    use crate::test_space::trapezoid_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    /// Trajectories of the damped rotation ẋ = (−0.1x − y, x − 0.1y).
    fn spiral_set(n: usize, m: usize, seed: u64) -> TrajectorySet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = (0..n)
            .map(|_| {
                let r0: f64 = rng.gen_range(0.5..2.0);
                let th0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let t0: f64 = rng.gen_range(0.0..1.0);
                let ts = uniform(t0, t0 + 2.0, m);
                let xs = DMatrix::from_fn(2, m, |i, k| {
                    let s = ts[k] - t0;
                    let r = r0 * (-0.1 * s).exp();
                    if i == 0 {
                        r * (th0 + s).cos()
                    } else {
                        r * (th0 + s).sin()
                    }
                });
                Trajectory::new(ts, xs).unwrap()
            })
            .collect();
        TrajectorySet::new(trajs).unwrap()
    }

    #[test]
    fn trajectory_set_validation() {
        let t = Trajectory::new(vec![0.0], DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(TrajectorySet::new(vec![t]), Err(Error::TrajectoryTooShort { .. })));
        assert!(Trajectory::new(vec![0.0, 0.0], DMatrix::zeros(1, 2)).is_err());
        let a = Trajectory::new(vec![0.0, 1.0], DMatrix::zeros(2, 2)).unwrap();
        let b = Trajectory::new(vec![0.0, 1.0], DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(TrajectorySet::new(vec![a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn gram_of_two_identical_points() {
        let ts = vec![0.0, 0.5];
        let xs = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let data = TrajectorySet::new(vec![Trajectory::new(ts.clone(), xs).unwrap()]).unwrap();
        let tb = build_test_block(&data, 1).unwrap();
        let w = trapezoid_weights(&ts).unwrap();
        let expect = (w.iter().sum::<f64>() / 0.5f64.sqrt()).powi(2);
        for kernel in [KernelSpec::gaussian(0.3).unwrap(), KernelSpec::laplace(2.0).unwrap()] {
            let g = assemble_gram(&kernel, &data, &tb).unwrap();
            assert!((g[(0, 0)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_matches_dense_product_and_is_psd() {
        let data = spiral_set(4, 15, 1);
        let tb = build_test_block(&data, 3).unwrap();
        let kernel = KernelSpec::matern10(0.8).unwrap();
        let g = assemble_gram(&kernel, &data, &tb).unwrap();
        let x = data.points();
        let q = tb.qphi_dense();
        let dense = &q * gram(&kernel, &x, &x).unwrap() * q.transpose();
        assert!((&g - dense).amax() < 1e-12);
        assert!((&g - g.transpose()).amax() < 1e-12);
        let min = g.clone().symmetric_eigenvalues().min();
        assert!(min >= -1e-8 * g.trace());
    }

    #[test]
    fn targets_of_simple_signals() {
        // Constant trajectory: zero targets.
        let ts = uniform(0.0, 1.0, 11);
        let c = DMatrix::from_fn(2, 11, |i, _| [3.0, -1.0][i]);
        let data = TrajectorySet::new(vec![Trajectory::new(ts.clone(), c).unwrap()]).unwrap();
        let tb = build_test_block(&data, 2).unwrap();
        assert!(assemble_targets(&data, &tb).unwrap().amax() < 1e-13);
        // With degree 3 only ψ₃ leaves a residual: the trapezoid error of a
        // quadratic, h²/12 · (ψ̈₃(1) − ψ̈₃(0)) = h²/12 · 120√7 per unit state.
        let tb = build_test_block(&data, 4).unwrap();
        let y = assemble_targets(&data, &tb).unwrap();
        let unit = 0.01 / 12.0 * 120.0 * 7f64.sqrt();
        for (i, c) in [3.0, -1.0].iter().enumerate() {
            for j in 0..3 {
                assert!(y[(i, j)].abs() < 1e-12);
            }
            assert!((y[(i, 3)] + c * unit).abs() < 1e-10, "{}", y[(i, 3)]);
        }

        // x(t) = t on [0, 1] with the constant feature gives y = 1.
        let lin = DMatrix::from_row_slice(1, 11, &ts);
        let data = TrajectorySet::new(vec![Trajectory::new(ts, lin).unwrap()]).unwrap();
        let tb = build_test_block(&data, 1).unwrap();
        let y = assemble_targets(&data, &tb).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn targets_are_linear_in_data() {
        let a = spiral_set(3, 12, 2);
        let b = spiral_set(3, 12, 2);
        let mixed: Vec<Trajectory> = a
            .trajectories()
            .iter()
            .zip(b.trajectories())
            .map(|(ta, tb)| Trajectory::new(ta.ts.clone(), &ta.xs * 2.0 - &tb.xs * 0.5).unwrap())
            .collect();
        let mixed = TrajectorySet::new(mixed).unwrap();
        let tbk = build_test_block(&a, 3).unwrap();
        let lhs = assemble_targets(&mixed, &tbk).unwrap();
        let rhs = assemble_targets(&a, &tbk).unwrap() * 2.0 - assemble_targets(&b, &tbk).unwrap() * 0.5;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn constant_trajectories_learn_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trajs = (0..5)
            .map(|_| {
                let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                Trajectory::new(uniform(0.0, 1.0, 20), DMatrix::from_fn(2, 20, |i, _| c[i])).unwrap()
            })
            .collect();
        let data = TrajectorySet::new(trajs).unwrap();
        let model = train(&data, &KernelSpec::gaussian(0.5).unwrap(), 1e-8, 3).unwrap();
        let f = model.eval_vector_field(&data.points()).unwrap();
        assert!(f.amax() <= 1e-6, "{}", f.amax());
    }

    #[test]
    fn zero_coefficients_give_zero_field_and_constant_forecast() {
        let data = spiral_set(2, 10, 3);
        let tb = build_test_block(&data, 2).unwrap();
        let np = tb.rows();
        let model = RockModel::from_parts(
            KernelSpec::gaussian(1.0).unwrap(),
            1.0,
            data.points(),
            data.times().iter().map(|t| t.to_vec()).collect(),
            tb,
            DMatrix::zeros(np, 2),
        )
        .unwrap();
        let q = DMatrix::from_fn(2, 7, |i, j| (i + j) as f64 * 0.3);
        assert_eq!(model.eval_vector_field(&q).unwrap().amax(), 0.0);
        let traj = model.forecast(&[0.4, -0.2], &uniform(0.0, 1.0, 11), Integrator::Rk4).unwrap();
        for c in traj.column_iter() {
            assert_eq!((c[0], c[1]), (0.4, -0.2));
        }
    }

    #[test]
    fn evaluation_is_linear_in_coefficients() {
        let data = spiral_set(3, 10, 5);
        let kernel = KernelSpec::gaussian(0.7).unwrap();
        let tb = build_test_block(&data, 2).unwrap();
        let np = tb.rows();
        let times: Vec<Vec<f64>> = data.times().iter().map(|t| t.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a1 = DMatrix::from_fn(np, 2, |_, _| rng.gen_range(-1.0..1.0));
        let a2 = DMatrix::from_fn(np, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mk = |a: DMatrix<f64>| {
            RockModel::from_parts(kernel, 1.0, data.points(), times.clone(), tb.clone(), a).unwrap()
        };
        let q = DMatrix::from_fn(2, 5, |i, j| (i as f64 - j as f64) * 0.2);
        let sum = mk(&a1 * 2.0 + &a2).eval_vector_field(&q).unwrap();
        let parts = mk(a1).eval_vector_field(&q).unwrap() * 2.0 + mk(a2).eval_vector_field(&q).unwrap();
        assert!((sum - parts).amax() < 1e-12);
    }

    #[test]
    fn pointwise_and_batched_evaluation_agree() {
        let data = spiral_set(3, 20, 7);
        for kernel in [
            KernelSpec::gaussian(0.6).unwrap(),
            KernelSpec::laplace(0.9).unwrap(),
            KernelSpec::matern10(0.9).unwrap(),
            KernelSpec::random_fourier(
                0.8,
                crate::kernels::RffConfig { num_features: 64, period: None, seed: 2 },
            )
            .unwrap(),
        ] {
            let model = train(&data, &kernel, 1e-4, 3).unwrap();
            let q = DMatrix::from_fn(2, 4, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
            let batch = model.eval_vector_field(&q).unwrap();
            for j in 0..4 {
                let mut out = [0.0; 2];
                model.eval_into(&[q[(0, j)], q[(1, j)]], &mut out);
                for i in 0..2 {
                    assert!((out[i] - batch[(i, j)]).abs() < 1e-7 * (1.0 + batch.amax()));
                }
            }
        }
    }

    #[test]
    fn learns_linear_spiral_field() {
        let data = spiral_set(12, 41, 8);
        let model = train(&data, &KernelSpec::gaussian(1.0).unwrap(), 1e-7, 4).unwrap();
        let q = data.points();
        let f = model.eval_vector_field(&q).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..q.ncols() {
            let (x, y) = (q[(0, j)], q[(1, j)]);
            let truth = [-0.1 * x - y, x - 0.1 * y];
            let err = ((f[(0, j)] - truth[0]).powi(2) + (f[(1, j)] - truth[1]).powi(2)).sqrt();
            worst = worst.max(err / (truth[0].hypot(truth[1])));
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn coefficient_norm_shrinks_with_lambda() {
        let data = spiral_set(5, 21, 9);
        let kernel = KernelSpec::gaussian(0.8).unwrap();
        let sys = AssembledSystem::new(&data, &kernel, 3).unwrap();
        let mut prev = f64::INFINITY;
        for e in -8..=2 {
            let lambda = 2f64.powi(e) * 1e-3;
            let n = sys.solve(&data, &kernel, lambda).unwrap().coeffs().norm();
            assert!(n <= prev * (1.0 + 1e-9), "λ = {lambda}: {n} > {prev}");
            prev = n;
        }
    }

    #[test]
    fn trajectory_order_does_not_change_field() {
        let data = spiral_set(5, 15, 10);
        let kernel = KernelSpec::laplace(1.1).unwrap();
        let a = train(&data, &kernel, 1e-4, 2).unwrap();
        let perm = [3, 0, 4, 2, 1];
        let shuffled = data.subset(&perm).unwrap();
        let b = train(&shuffled, &kernel, 1e-4, 2).unwrap();
        let q = DMatrix::from_fn(2, 9, |i, j| (i as f64 + 1.0) * (j as f64 - 4.0) * 0.2);
        let fa = a.eval_vector_field(&q).unwrap();
        let fb = b.eval_vector_field(&q).unwrap();
        assert!((fa - fb).amax() < 1e-10);
        // Coefficient blocks move with their trajectories.
        for (new, &old) in perm.iter().enumerate() {
            let ba = a.coeffs().rows(old * 2, 2);
            let bb = b.coeffs().rows(new * 2, 2);
            assert!((ba - bb).amax() < 1e-8);
        }
    }

    #[test]
    fn ridge_equivalence_in_degenerate_mode() {
        // Each "trajectory" sits at a single state x_i over [a, a + h]; the
        // signal is x_i + (t − a) y_i, so the constant-feature target is √h y_i
        // and G = h K. Hence (hK + λI)A = √h Y and f = Σ √h A_i k(·, x_i),
        // which is ridge regression on (x_i, y_i) with λ_ridge = λ / h.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 2.5;
        let lambda = 0.03;
        let n = 8;
        let xs: Vec<[f64; 3]> = (0..n).map(|_| [0.0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let ys: Vec<[f64; 3]> = (0..n).map(|_| [0.0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let mut states = Vec::new();
        let mut signal = Vec::new();
        for i in 0..n {
            let a = i as f64 * 10.0;
            let ts = vec![a, a + h];
            let x = DMatrix::from_fn(3, 2, |r, _| xs[i][r]);
            let s = DMatrix::from_fn(3, 2, |r, c| xs[i][r] + c as f64 * h * ys[i][r]);
            states.push(Trajectory::new(ts.clone(), x).unwrap());
            signal.push(Trajectory::new(ts, s).unwrap());
        }
        let states = TrajectorySet::new(states).unwrap();
        let signal = TrajectorySet::new(signal).unwrap();
        let kernel = KernelSpec::gaussian(0.9).unwrap();
        let tb = build_test_block(&states, 1).unwrap();
        let g = assemble_gram(&kernel, &states, &tb).unwrap();
        let y = assemble_targets(&signal, &tb).unwrap().transpose();
        let model = RockModel::fit(kernel, lambda, &states, tb, g, y).unwrap();

        let pts = DMatrix::from_fn(3, n, |r, i| xs[i][r]);
        let vals = DMatrix::from_fn(3, n, |r, i| ys[i][r]);
        let ridge = RidgeRegression::fit(kernel, &pts, &vals, lambda / h).unwrap();
        let q = DMatrix::from_fn(3, 6, |_, _| rng.gen_range(-1.5..1.5));
        let f_rock = model.eval_vector_field(&q).unwrap();
        let f_ridge = ridge.predict(&q).unwrap();
        assert!((&f_rock - &f_ridge).amax() <= 1e-8 * f_ridge.amax().max(1.0));
    }
}
