//! Small dense linear-algebra helpers shared by the basis, emulator and
//! calibration code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let s = svd.singular_values;

        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

        let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
        let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
        let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&k| s[k]));
        // Fix the sign so the largest-magnitude entry of each right singular
        // vector is positive; makes bases reproducible across platforms.
        let mut out = SortedSvd {
            u,
            singular_values,
            v_t,
        };
        out.canonicalize_signs();
        out
    }

    fn canonicalize_signs(&mut self) {
        for k in 0..self.singular_values.len() {
            let row = self.v_t.row(k);
            let (mut best, mut best_abs) = (0.0, -1.0);
            for &x in row.iter() {
                if x.abs() > best_abs {
                    best_abs = x.abs();
                    best = x;
                }
            }
            if best < 0.0 {
                self.v_t.row_mut(k).neg_mut();
                self.u.column_mut(k).neg_mut();
            }
        }
    }

    /// Numerical rank using the usual `max(m, n) * eps * s_max` cut-off.
    pub fn rank(&self, nrows: usize, ncols: usize) -> usize {
        let smax = self.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = nrows.max(ncols) as f64 * f64::EPSILON * smax;
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Smallest count whose cumulative share of `weights` reaches `fraction`.
pub fn count_for_fraction(weights: &[f64], fraction: f64) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if acc / total >= fraction - 1e-12 {
            return k + 1;
        }
    }
    weights.len()
}

pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `log |A|` from a Cholesky factor.
pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Zero-mean Gaussian log-density of `resid` under the factored covariance.
pub fn gaussian_logpdf(ch: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let alpha = ch.solve(resid);
    -0.5 * (resid.dot(&alpha) + chol_logdet(ch) + resid.len() as f64 * LN_2PI)
}
