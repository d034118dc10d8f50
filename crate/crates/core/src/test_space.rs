//! Shifted Legendre test functions, trapezoid weights and the block-diagonal
//! quadrature-weighted feature matrices.

use nalgebra::DMatrix;
use std::ops::Range;

use crate::error::{Error, Result};

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Interval { a, b });
    }
    Ok(())
}

/// Column `j` holds the degree-`j` Legendre polynomial shifted to `[a, b]` and
/// normalized in `L²([a, b])`, evaluated at each entry of `ts`.
pub fn legendre_features(ts: &[f64], max_degree: usize, a: f64, b: f64) -> Result<DMatrix<f64>> {
    Ok(legendre_features_with_derivatives(ts, max_degree, a, b)?.0)
}

/// Normalized shifted Legendre features together with their time derivatives.
pub fn legendre_features_with_derivatives(
    ts: &[f64],
    max_degree: usize,
    a: f64,
    b: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_interval(a, b)?;
    let m = ts.len();
    let cols = max_degree + 1;
    let mut vals = DMatrix::<f64>::zeros(m, cols);
    let mut ders = DMatrix::<f64>::zeros(m, cols);
    let slope = 2.0 / (b - a);
    let shift = (b + a) / (b - a);
    for (row, &t) in ts.iter().enumerate() {
        let x = slope * t - shift;
        vals[(row, 0)] = 1.0;
        if cols > 1 {
            vals[(row, 1)] = x;
            ders[(row, 1)] = 1.0;
        }
        for n in 1..max_degree {
            // (n+1) T_{n+1} = (2n+1) x T_n − n T_{n−1}
            let nf = n as f64;
            let c = 2.0 * nf + 1.0;
            vals[(row, n + 1)] = (c * x * vals[(row, n)] - nf * vals[(row, n - 1)]) / (nf + 1.0);
            ders[(row, n + 1)] =
                (c * vals[(row, n)] + c * x * ders[(row, n)] - nf * ders[(row, n - 1)]) / (nf + 1.0);
        }
    }
    let base = slope.sqrt();
    for j in 0..cols {
        let norm = ((2.0 * j as f64 + 1.0) / 2.0).sqrt() * base;
        vals.column_mut(j).scale_mut(norm);
        ders.column_mut(j).scale_mut(norm * slope);
    }
    Ok((vals, ders))
}

/// Composite trapezoid weights on a strictly increasing, possibly nonuniform grid.
pub fn trapezoid_weights(ts: &[f64]) -> Result<Vec<f64>> {
    let m = ts.len();
    if m < 2 {
        return Err(Error::TrajectoryTooShort { index: 0, len: m });
    }
    if let Some(k) = ts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Data(format!(
            "sample times must be strictly increasing (t[{}] = {}, t[{}] = {})",
            k,
            ts[k],
            k + 1,
            ts[k + 1]
        )));
    }
    let mut w = vec![0.0; m];
    for k in 0..m - 1 {
        let half = 0.5 * (ts[k + 1] - ts[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    Ok(w)
}

/// One trajectory's diagonal block of the test matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `p × m`, column `k` is `w_k ψ(t_k)`.
    pub qphi: DMatrix<f64>,
    /// `p × m`, column `k` is `−w_k ψ̇(t_k)` plus `−ψ(a)` on the first and `+ψ(b)` on the last column.
    pub qphid: DMatrix<f64>,
    /// Sample columns covered by this block in the flattened data matrix.
    pub samples: Range<usize>,
}

/// Block-diagonal `QΦ` and `QΦD`, each `np × Σmᵢ`. Only the diagonal blocks are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBlock {
    p: usize,
    blocks: Vec<Block>,
    total_samples: usize,
}

impl TestBlock {
    /// Builds the test matrices for `p_minus_1 + 1` Legendre features per
    /// trajectory, each shifted to that trajectory's `[t_first, t_last]`.
    pub fn build(ts_list: &[&[f64]], p_minus_1: usize, weights_list: &[Vec<f64>]) -> Result<Self> {
        if ts_list.len() != weights_list.len() {
            return Err(Error::Shape(format!(
                "{} time vectors but {} weight vectors",
                ts_list.len(),
                weights_list.len()
            )));
        }
        let p = p_minus_1 + 1;
        let mut blocks = Vec::with_capacity(ts_list.len());
        let mut offset = 0;
        for (index, (ts, w)) in ts_list.iter().zip(weights_list).enumerate() {
            let m = ts.len();
            if m < 2 {
                return Err(Error::TrajectoryTooShort { index, len: m });
            }
            if w.len() != m {
                return Err(Error::Shape(format!(
                    "trajectory {index}: {m} samples but {} weights",
                    w.len()
                )));
            }
            let (vals, ders) = legendre_features_with_derivatives(ts, p_minus_1, ts[0], ts[m - 1])?;
            let mut qphi = DMatrix::zeros(p, m);
            let mut qphid = DMatrix::zeros(p, m);
            for k in 0..m {
                for j in 0..p {
                    qphi[(j, k)] = w[k] * vals[(k, j)];
                    qphid[(j, k)] = -w[k] * ders[(k, j)];
                }
            }
            for j in 0..p {
                qphid[(j, 0)] -= vals[(0, j)];
                qphid[(j, m - 1)] += vals[(m - 1, j)];
            }
            blocks.push(Block {
                qphi,
                qphid,
                samples: offset..offset + m,
            });
            offset += m;
        }
        Ok(TestBlock {
            p,
            blocks,
            total_samples: offset,
        })
    }

    /// Builds the test matrices with trapezoid weights on each trajectory's own samples.
    pub fn with_trapezoid(ts_list: &[&[f64]], p_minus_1: usize) -> Result<Self> {
        let weights = ts_list
            .iter()
            .enumerate()
            .map(|(index, ts)| {
                trapezoid_weights(ts).map_err(|e| match e {
                    Error::TrajectoryTooShort { len, .. } => Error::TrajectoryTooShort { index, len },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(ts_list, p_minus_1, &weights)
    }

    /// Features per trajectory.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `n·p`, the row count of `QΦ`.
    pub fn rows(&self) -> usize {
        self.p * self.blocks.len()
    }

    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Dense `QΦ`.
    pub fn qphi_dense(&self) -> DMatrix<f64> {
        self.dense(|b| &b.qphi)
    }

    /// Dense `QΦD`.
    pub fn qphid_dense(&self) -> DMatrix<f64> {
        self.dense(|b| &b.qphid)
    }

    fn dense(&self, pick: impl Fn(&Block) -> &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows(), self.total_samples);
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((i * self.p, b.samples.start), (self.p, b.samples.len()))
                .copy_from(pick(b));
        }
        out
    }

    /// `QΦ · M` for a matrix `M` with `total_samples` rows.
    pub fn qphi_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.block_mul(m, |b| &b.qphi)
    }

    /// `QΦD · M` for a matrix `M` with `total_samples` rows.
    pub fn qphid_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.block_mul(m, |b| &b.qphid)
    }

    fn block_mul(&self, m: &DMatrix<f64>, pick: impl Fn(&Block) -> &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.total_samples, "row count must equal the sample count");
        let mut out = DMatrix::zeros(self.rows(), m.ncols());
        for (i, b) in self.blocks.iter().enumerate() {
            let rows = m.rows(b.samples.start, b.samples.len());
            out.view_mut((i * self.p, 0), (self.p, m.ncols()))
                .copy_from(&(pick(b) * rows));
        }
        out
    }

    /// `QΦᵀ · A` for `A` with `n·p` rows; result has `total_samples` rows.
    pub fn qphi_tr_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.rows(), "row count must equal n·p");
        let mut out = DMatrix::zeros(self.total_samples, a.ncols());
        for (i, b) in self.blocks.iter().enumerate() {
            let coeffs = a.rows(i * self.p, self.p);
            out.view_mut((b.samples.start, 0), (b.samples.len(), a.ncols()))
                .copy_from(&(b.qphi.transpose() * coeffs));
        }
        out
    }
}
