//! Regularized representer solves.
//!
//! With a separable kernel `k ⊗ I_d` and test features `ψ ⊗ I_d`, the
//! `npd × npd` system `(G ⊗ I + λI) α = y` is equivalent to the matrix
//! equation `(G + λI) A = Y` whose columns share one factorization.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};

/// Refuse to materialize Kronecker systems above this size.
pub const KRONECKER_ORACLE_LIMIT: usize = 500;

/// Extra jitter attempts after a failed factorization; the jitter doubles each time.
const JITTER_DOUBLINGS: usize = 3;

#[derive(Debug, Clone)]
pub struct RegularizedSystem {
    gram: DMatrix<f64>,
    targets: DMatrix<f64>,
    lambda: f64,
}

impl RegularizedSystem {
    /// `gram` is `np × np` symmetric PSD, `targets` is `np × d`.
    pub fn new(gram: DMatrix<f64>, targets: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("regularization must be positive, got {lambda}")));
        }
        if !gram.is_square() {
            return Err(Error::Shape(format!("gram is {}×{}", gram.nrows(), gram.ncols())));
        }
        if targets.nrows() != gram.nrows() {
            return Err(Error::Shape(format!(
                "targets have {} rows, gram has {}",
                targets.nrows(),
                gram.nrows()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entries in the linear system".into()));
        }
        let asym = (&gram - gram.transpose()).amax();
        if asym > 1e-10 * gram.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::Data(format!("gram matrix is not symmetric (deviation {asym:e})")));
        }
        Ok(RegularizedSystem { gram, targets, lambda })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn factor_with_jitter(mut mat: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = mat.nrows();
    let base = 10.0 * f64::EPSILON * mat.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    let mut attempted = Vec::new();
    let mut applied = 0.0;
    for attempt in 0..=JITTER_DOUBLINGS + 1 {
        if attempt > 0 {
            let jitter = base * 2f64.powi(attempt as i32 - 1);
            for i in 0..n {
                mat[(i, i)] += jitter - applied;
            }
            applied = jitter;
            attempted.push(jitter);
        }
        if let Some(chol) = Cholesky::new(mat.clone()) {
            return Ok(chol);
        }
    }
    Err(Error::Conditioning { jitters: attempted })
}

/// Solves `(G + λI) A = Y` for all columns of `Y` with one Cholesky factorization.
pub fn solve_regularized(sys: &RegularizedSystem) -> Result<DMatrix<f64>> {
    let n = sys.gram.nrows();
    let mut mat = sys.gram.clone();
    for i in 0..n {
        mat[(i, i)] += sys.lambda;
    }
    let chol = factor_with_jitter(mat.clone())?;
    let mut a = chol.solve(&sys.targets);
    // Iterative refinement against the unjittered matrix.
    for _ in 0..2 {
        let resid = &sys.targets - &mat * &a;
        a += chol.solve(&resid);
    }
    Ok(a)
}

/// Dense oracle: materializes `G ⊗ I_d` and solves `(G ⊗ I_d + λI) α = y` by LU.
///
/// `y_flat[i·d + j] = Y[i, j]`, the column stacking of `Yᵀ`.
pub fn solve_full_kronecker(g: &DMatrix<f64>, lambda: f64, y_flat: &[f64], d: usize) -> Result<Vec<f64>> {
    let np = g.nrows();
    let size = np * d;
    if size > KRONECKER_ORACLE_LIMIT {
        return Err(Error::Unsupported(format!(
            "Kronecker oracle limited to {KRONECKER_ORACLE_LIMIT} unknowns, got {size}"
        )));
    }
    if !g.is_square() || y_flat.len() != size || d == 0 {
        return Err(Error::Shape(format!(
            "gram {}×{}, d = {d}, rhs length {}",
            g.nrows(),
            g.ncols(),
            y_flat.len()
        )));
    }
    let mut big = g.kronecker(&DMatrix::<f64>::identity(d, d));
    for i in 0..size {
        big[(i, i)] += lambda;
    }
    let rhs = nalgebra::DVector::from_column_slice(y_flat);
    big.lu()
        .solve(&rhs)
        .map(|v| v.as_slice().to_vec())
        .ok_or(Error::Conditioning { jitters: Vec::new() })
}

/// Kernel ridge regression `f(x) = Σᵢ k(x, xᵢ) αᵢ` with `α = (K + λI)⁻¹ Y`.
#[derive(Debug, Clone)]
pub struct RidgeRegression {
    kernel: KernelSpec,
    points: DMatrix<f64>,
    /// `n × d_out`.
    coeffs: DMatrix<f64>,
}

impl RidgeRegression {
    /// `points` is `d × n`, `targets` is `d_out × n`.
    pub fn fit(kernel: KernelSpec, points: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = points.ncols();
        if n == 0 {
            return Err(Error::Data("ridge regression needs at least one point".into()));
        }
        if targets.ncols() != n {
            return Err(Error::Shape(format!("{n} points but {} targets", targets.ncols())));
        }
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("regularization must be positive, got {lambda}")));
        }
        let mut m = gram(&kernel, points, points)?;
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        let coeffs = m
            .lu()
            .solve(&targets.transpose())
            .ok_or(Error::Conditioning { jitters: Vec::new() })?;
        Ok(RidgeRegression {
            kernel,
            points: points.clone(),
            coeffs,
        })
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Fitted values `d_out × M` at the columns of `query`.
    pub fn predict(&self, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = gram(&self.kernel, &self.points, query)?;
        Ok(self.coeffs.transpose() * k)
    }
}
