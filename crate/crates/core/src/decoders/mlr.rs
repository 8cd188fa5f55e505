use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, TargetMatrix};
use crate::error::{Error, Result};
use crate::nn::linalg::{gemm, View};

/// Ridge penalty used when the design matrix is rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Diagonal entries of `R` below this fraction of the largest are treated
/// as zero when judging rank.
const RANK_TOLERANCE: f64 = 1e-10;

/// `y_d = alpha_d + beta_d . x` for each axis `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel {
    pub alpha: [f64; 3],
    /// `3 x cols`, row-major.
    pub beta: Vec<f64>,
    pub cols: usize,
    /// Set when the ridge fallback was needed.
    pub rank_deficient: bool,
}

impl MlrModel {
    pub fn beta_row(&self, axis: usize) -> &[f64] {
        &self.beta[axis * self.cols..(axis + 1) * self.cols]
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<TargetMatrix> {
        if x.cols() != self.cols {
            return Err(Error::Shape(format!(
                "mLR fitted on {} columns, features have {}",
                self.cols,
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Ok(TargetMatrix::default());
        }
        let mut out: Vec<f64> = (0..x.rows()).flat_map(|_| self.alpha).collect();
        gemm(
            View::new(x.values(), x.rows(), self.cols),
            View::new(&self.beta, 3, self.cols).t(),
            1.0,
            &mut out,
        );
        Ok(TargetMatrix::new(out.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()))
    }
}

/// Accumulates `[R; block]` QR factorizations so only an `n x n` factor is
/// ever held.
struct StreamingQr {
    r: DMatrix<f64>,
    qty: DMatrix<f64>,
}

impl StreamingQr {
    fn new(n: usize) -> Self {
        Self { r: DMatrix::zeros(n, n), qty: DMatrix::zeros(n, 3) }
    }

    fn absorb(&mut self, a: DMatrix<f64>, y: DMatrix<f64>) {
        let n = self.r.ncols();
        let stacked_a = stack(&self.r, &a);
        let mut stacked_y = stack(&self.qty, &y);
        let qr = stacked_a.qr();
        qr.q_tr_mul(&mut stacked_y);
        self.r = qr.r();
        self.qty = stacked_y.rows(0, n).into_owned();
    }

    fn rank_deficient(&self) -> bool {
        let diag: Vec<f64> = self.r.diagonal().iter().map(|v| v.abs()).collect();
        let largest = diag.iter().copied().fold(0.0, f64::max);
        diag.iter().any(|&d| d <= RANK_TOLERANCE * largest)
    }

    fn solve(&self) -> Option<DMatrix<f64>> {
        self.r.solve_upper_triangular(&self.qty)
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Least-squares fit of `[1 X] theta = Y` by Householder QR, processed in
/// row blocks. A rank-deficient design is refit with ridge penalty
/// [`RIDGE_LAMBDA`] and flagged.
pub fn fit_mlr(x: &FeatureMatrix, y: &TargetMatrix) -> Result<MlrModel> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!("{} feature rows vs {} target rows", x.rows(), y.rows())));
    }
    if x.rows() == 0 {
        return Err(Error::Argument("cannot fit mLR on zero rows".into()));
    }
    let cols = x.cols();
    let n = cols + 1;
    let block = (4 * n).max(256);
    let mut qr = StreamingQr::new(n);
    for start in (0..x.rows()).step_by(block) {
        let rows = block.min(x.rows() - start);
        let a = DMatrix::from_fn(rows, n, |i, j| if j == 0 { 1.0 } else { x.row(start + i)[j - 1] });
        let t = DMatrix::from_fn(rows, 3, |i, d| y.as_rows()[start + i][d]);
        qr.absorb(a, t);
    }
    let rank_deficient = qr.rank_deficient();
    if rank_deficient {
        log::warn!("mLR design matrix is rank deficient; refitting with ridge {RIDGE_LAMBDA}");
        qr.absorb(DMatrix::identity(n, n) * RIDGE_LAMBDA.sqrt(), DMatrix::zeros(n, 3));
    }
    let theta = qr
        .solve()
        .ok_or_else(|| Error::Argument("mLR system is singular even with ridge".into()))?;
    let mut beta = vec![0.0; 3 * cols];
    for d in 0..3 {
        for c in 0..cols {
            beta[d * cols + c] = theta[(c + 1, d)];
        }
    }
    Ok(MlrModel {
        alpha: [theta[(0, 0)], theta[(0, 1)], theta[(0, 2)]],
        beta,
        cols,
        rank_deficient,
    })
}

/// Residual `Y - prediction` projected on each column of `[1 X]`, for
/// checking least-squares optimality.
pub fn residual_projections(model: &MlrModel, x: &FeatureMatrix, y: &TargetMatrix) -> Result<Vec<[f64; 3]>> {
    let pred = model.predict(x)?;
    let residual: Vec<[f64; 3]> = y
        .as_rows()
        .iter()
        .zip(pred.as_rows())
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        .collect();
    let mut out = vec![[0.0; 3]; x.cols() + 1];
    for (i, r) in residual.iter().enumerate() {
        for d in 0..3 {
            out[0][d] += r[d];
        }
        for (c, v) in x.row(i).iter().enumerate() {
            for d in 0..3 {
                out[c + 1][d] += r[d] * v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_rows(cols, 1, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn exact_linear_data() {
        let x = random_features(50, 3, 1);
        let y = TargetMatrix::new((0..50).map(|i| {
            let v = 2.0 * x.row(i)[0] + 1.0;
            [v, v, v]
        }).collect());
        let m = fit_mlr(&x, &y).unwrap();
        assert!(!m.rank_deficient);
        for d in 0..3 {
            assert!((m.alpha[d] - 1.0).abs() < 1e-9);
            assert!((m.beta_row(d)[0] - 2.0).abs() < 1e-9);
            assert!(m.beta_row(d)[1].abs() < 1e-9 && m.beta_row(d)[2].abs() < 1e-9);
        }
    }

    #[test]
    fn zero_row_predicts_alpha_and_single_row_shape() {
        let x = random_features(40, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = TargetMatrix::new((0..40).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
        let m = fit_mlr(&x, &y).unwrap();
        let zero = FeatureMatrix::from_rows(4, 1, vec![0.0; 4]).unwrap();
        let p = m.predict(&zero).unwrap();
        assert_eq!(p.rows(), 1);
        assert_eq!(p.as_rows()[0], m.alpha);
    }

    #[test]
    fn residuals_are_orthogonal_across_blocks() {
        // More rows than one block so several factorizations are chained.
        let x = random_features(2000, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = TargetMatrix::new(
            (0..2000)
                .map(|i| {
                    let r = x.row(i);
                    [r[0] - r[3] + rng.random_range(-0.1..0.1), r[1] * 3.0, rng.random()]
                })
                .collect(),
        );
        let m = fit_mlr(&x, &y).unwrap();
        for p in residual_projections(&m, &x, &y).unwrap() {
            for v in p {
                assert!(v.abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn duplicated_column_flags_rank_deficiency() {
        let base = random_features(60, 3, 6);
        let values = (0..60)
            .flat_map(|i| {
                let r = base.row(i);
                [r[0], r[1], r[2], r[1]]
            })
            .collect();
        let x = FeatureMatrix::from_rows(4, 1, values).unwrap();
        let y = TargetMatrix::new((0..60).map(|i| [x.row(i)[1], 1.0 + x.row(i)[0], 0.5]).collect());
        let m = fit_mlr(&x, &y).unwrap();
        assert!(m.rank_deficient);
        let p = m.predict(&x).unwrap();
        assert!(p.flat().iter().all(|v| v.is_finite()));
        for (a, b) in p.flat().iter().zip(y.flat()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn shifting_a_column_leaves_fitted_values() {
        let x = random_features(80, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = TargetMatrix::new((0..80).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
        let shifted = FeatureMatrix::from_rows(
            3,
            1,
            x.values().iter().enumerate().map(|(i, v)| if i % 3 == 1 { v + 5.0 } else { *v }).collect(),
        )
        .unwrap();
        let a = fit_mlr(&x, &y).unwrap().predict(&x).unwrap();
        let b = fit_mlr(&shifted, &y).unwrap().predict(&shifted).unwrap();
        for (p, q) in a.flat().iter().zip(b.flat()) {
            assert!((p - q).abs() < 1e-8);
        }
    }
}
