use nalgebra::{DMatrix, DVector};

use crate::discrepancy::DiscrepancyBasis;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, gaussian_logpdf, LN_2PI};
use crate::pc_emulator::{PcBasis, PcEmulator};

/// Condition-number ceiling for the equilibrated Gram matrix `KᵀK`.
pub const MAX_CONDITION: f64 = 1e10;

/// Observation projected onto `K = [K_y, K_d^PC]`.
#[derive(Clone, Debug)]
pub struct ReducedObservation {
    pub z_r: DVector<f64>,
    /// `(KᵀK)⁻¹`.
    pub ktk_inv: DMatrix<f64>,
    pub n_y: usize,
    pub n_d: usize,
    /// Condition number of the diagonally equilibrated `KᵀK`.
    pub condition: f64,
}

impl ReducedObservation {
    pub fn dim(&self) -> usize {
        self.n_y + self.n_d
    }

    /// Emulator and discrepancy parts of `Z_R`.
    pub fn split(&self) -> (DVector<f64>, DVector<f64>) {
        (
            self.z_r.rows(0, self.n_y).into_owned(),
            self.z_r.rows(self.n_y, self.n_d).into_owned(),
        )
    }
}

pub fn joint_basis(k_y: &DMatrix<f64>, k_d: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match k_d {
        None => k_y.clone(),
        Some(kd) => {
            let (n, a, b) = (k_y.nrows(), k_y.ncols(), kd.ncols());
            let mut k = DMatrix::zeros(n, a + b);
            k.columns_mut(0, a).copy_from(k_y);
            k.columns_mut(a, b).copy_from(kd);
            k
        }
    }
}

/// `(KᵀK)⁻¹` with a collinearity check on the equilibrated Gram matrix.
pub fn gram_inverse(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let g = k.tr_mul(k);
    let m = g.nrows();
    let d: Vec<f64> = (0..m).map(|i| g[(i, i)]).collect();
    if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::CollinearBasis {
            condition: f64::INFINITY,
            columns: vec![i],
        });
    }
    let s: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let ge = DMatrix::from_fn(m, m, |i, j| g[(i, j)] * s[i] * s[j]);
    let eig = ge.clone().symmetric_eigen();
    let (mut imin, mut emin, mut emax) = (0, f64::INFINITY, 0.0f64);
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        if e < emin {
            emin = e;
            imin = i;
        }
        emax = emax.max(e);
    }
    let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        let v = eig.eigenvectors.column(imin);
        let vmax = v.amax();
        let columns = (0..m).filter(|&i| v[i].abs() >= 0.1 * vmax).collect();
        return Err(Error::CollinearBasis { condition, columns });
    }
    let inv_e = cholesky(ge, "equilibrated KᵀK")?.inverse();
    let inv = DMatrix::from_fn(m, m, |i, j| inv_e[(i, j)] * s[i] * s[j]);
    Ok((inv, condition))
}

/// Least-squares coordinates of `z - column_means` in `[K_y, K_d^PC]`.
pub fn reduce_observation(
    z: &DVector<f64>,
    basis: &PcBasis,
    disc: Option<&DiscrepancyBasis>,
    column_means: &DVector<f64>,
) -> Result<ReducedObservation> {
    reduce_with_matrices(z, &basis.k_y, disc.map(|d| &d.k_d_pc), column_means)
}

pub fn reduce_with_matrices(
    z: &DVector<f64>,
    k_y: &DMatrix<f64>,
    k_d: Option<&DMatrix<f64>>,
    column_means: &DVector<f64>,
) -> Result<ReducedObservation> {
    let n = k_y.nrows();
    for (what, len) in [("observation", z.len()), ("column means", column_means.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: n,
                got: len,
            });
        }
    }
    if let Some(kd) = k_d {
        if kd.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "discrepancy basis rows",
                expected: n,
                got: kd.nrows(),
            });
        }
    }
    let k = joint_basis(k_y, k_d);
    let (ktk_inv, condition) = gram_inverse(&k)?;
    let centred = z - column_means;
    let z_r = &ktk_inv * k.tr_mul(&centred);
    Ok(ReducedObservation {
        z_r,
        ktk_inv,
        n_y: k_y.ncols(),
        n_d: k_d.map_or(0, |m| m.ncols()),
        condition,
    })
}

/// Total covariance of `Z_R`: `blockdiag(diag(var_η), κ_d I) + σ² (KᵀK)⁻¹`.
pub fn reduced_covariance(zr: &ReducedObservation, var_eta: &DVector<f64>, sigma2: f64, kappa_d: f64) -> DMatrix<f64> {
    let mut c = &zr.ktk_inv * sigma2;
    for j in 0..zr.n_y {
        c[(j, j)] += var_eta[j];
    }
    for j in zr.n_y..zr.dim() {
        c[(j, j)] += kappa_d;
    }
    c
}

/// Gaussian log-density of `Z_R` with mean `(μ_η(θ), 0)`.
pub fn reduced_loglik(
    zr: &ReducedObservation,
    emulator: &PcEmulator,
    theta: &[f64],
    sigma2: f64,
    kappa_d: f64,
    kappa_y: &[f64],
) -> Result<f64> {
    if zr.n_y != emulator.n_components() {
        return Err(Error::DimensionMismatch {
            context: "emulator components",
            expected: zr.n_y,
            got: emulator.n_components(),
        });
    }
    if !(sigma2 > 0.0) || (zr.n_d > 0 && !(kappa_d > 0.0)) || kappa_y.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidInput(
            "variance parameters must be positive".to_string(),
        ));
    }
    let pred = emulator.predict(theta, Some(kappa_y))?;
    let c = reduced_covariance(zr, &pred.var, sigma2, kappa_d);
    let mut resid = zr.z_r.clone();
    for j in 0..zr.n_y {
        resid[j] -= pred.mean[j];
    }
    let ch = cholesky(c, "reduced covariance")?;
    Ok(gaussian_logpdf(&ch, &resid))
}

/// `reduced_loglik` with the discrepancy block of `(KᵀK)⁻¹` diagonalised
/// once. The discrepancy part of `Z_R` has zero mean and covariance
/// `σ² A_dd + κ_d I`, so only a `J_y × J_y` Schur complement is factored per
/// evaluation.
#[derive(Clone, Debug)]
pub struct ReducedLikelihood {
    n_y: usize,
    r_y: DVector<f64>,
    a_yy: DMatrix<f64>,
    /// Eigenvalues of `A_dd`.
    a_d: DVector<f64>,
    /// `A_yd U` with `A_dd = U diag(a_d) Uᵀ`.
    b: DMatrix<f64>,
    /// `Uᵀ Z_R,d`.
    r_d: DVector<f64>,
}

impl ReducedLikelihood {
    pub fn new(zr: &ReducedObservation) -> Self {
        let (ny, nd) = (zr.n_y, zr.n_d);
        let a = &zr.ktk_inv;
        let a_yy = a.view((0, 0), (ny, ny)).into_owned();
        let (r_y, r_d_raw) = zr.split();
        if nd == 0 {
            return ReducedLikelihood {
                n_y: ny,
                r_y,
                a_yy,
                a_d: DVector::zeros(0),
                b: DMatrix::zeros(ny, 0),
                r_d: DVector::zeros(0),
            };
        }
        let a_dd = a.view((ny, ny), (nd, nd)).into_owned();
        let eig = a_dd.symmetric_eigen();
        let u = eig.eigenvectors;
        ReducedLikelihood {
            n_y: ny,
            r_y,
            a_yy,
            b: a.view((0, ny), (ny, nd)) * &u,
            r_d: u.tr_mul(&r_d_raw),
            a_d: eig.eigenvalues,
        }
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Log-density given the emulator's predictive mean and variance.
    pub fn loglik(&self, mean: &DVector<f64>, var_eta: &DVector<f64>, sigma2: f64, kappa_d: f64) -> Result<f64> {
        let nd = self.a_d.len();
        let mut logdet = 0.0;
        let mut quad = 0.0;
        let mut w = DVector::zeros(nd);
        for k in 0..nd {
            let c = sigma2 * self.a_d[k] + kappa_d;
            if !(c > 0.0) {
                return Err(Error::NotPositiveDefinite("discrepancy block".to_string()));
            }
            w[k] = 1.0 / c;
            logdet += c.ln();
            quad += self.r_d[k] * self.r_d[k] / c;
        }
        let mut s = &self.a_yy * sigma2;
        let mut t = &self.r_y - mean;
        if nd > 0 {
            let bw = DMatrix::from_fn(self.n_y, nd, |i, k| self.b[(i, k)] * w[k]);
            s -= (&bw * self.b.transpose()) * (sigma2 * sigma2);
            t -= (&bw * &self.r_d) * sigma2;
        }
        for j in 0..self.n_y {
            s[(j, j)] += var_eta[j];
        }
        let ch = cholesky(s, "reduced covariance")?;
        let g = gaussian_logpdf(&ch, &t);
        Ok(g - 0.5 * (quad + logdet + nd as f64 * LN_2PI))
    }
}
