//! Zero-mean Gaussian process for one principal-component score column, with
//! squared-exponential correlation and a nugget on the diagonal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, LN_2PI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// Partial sill.
    pub kappa: f64,
    /// Nugget.
    pub zeta: f64,
    /// One range per parameter dimension.
    pub phis: Vec<f64>,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.zeta >= 0.0 && self.kappa + self.zeta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need kappa, zeta ≥ 0 with kappa + zeta > 0 (got {}, {})",
                self.kappa, self.zeta
            )));
        }
        if self.phis.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "range parameters must be positive, got {:?}",
                self.phis
            )));
        }
        Ok(())
    }

    /// `(ln κ, ln ζ, ln φ_1, …)`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.kappa.ln(), self.zeta.ln()];
        v.extend(self.phis.iter().map(|p| p.ln()));
        v
    }

    pub fn from_log(x: &[f64]) -> Self {
        GpHyperparams {
            kappa: x[0].exp(),
            zeta: x[1].exp(),
            phis: x[2..].iter().map(|v| v.exp()).collect(),
        }
    }
}

/// Squared-exponential correlation `exp(−Σ (Δ_i/φ_i)²)`.
#[inline]
pub fn sq_exp_corr(a: &[f64], b: &[f64], phis: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]) / phis[i];
        s += d * d;
    }
    (-s).exp()
}

/// `κ exp(−Σ|θ_k − θ_l|²/φ²) + ζ 1(θ_k = θ_l)`.
pub fn sq_exp_cov(theta_k: &[f64], theta_l: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    if theta_k.len() != hyper.phis.len() || theta_l.len() != hyper.phis.len() {
        return Err(Error::DimensionMismatch {
            context: "sq_exp_cov",
            expected: hyper.phis.len(),
            got: theta_k.len().max(theta_l.len()),
        });
    }
    hyper.validate()?;
    let nugget = if theta_k == theta_l { hyper.zeta } else { 0.0 };
    Ok(hyper.kappa * sq_exp_corr(theta_k, theta_l, &hyper.phis) + nugget)
}

pub fn correlation_matrix(thetas: &[Vec<f64>], phis: &[f64]) -> DMatrix<f64> {
    let p = thetas.len();
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..i {
            let v = sq_exp_corr(&thetas[i], &thetas[j], phis);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Log-likelihood of `y ~ N(0, κR + ζI)` and its gradient with respect to
/// `(ln κ, ln ζ, ln φ)`. Returns `None` when the covariance is not positive
/// definite.
pub fn loglik_and_grad(
    thetas: &[Vec<f64>],
    y: &DVector<f64>,
    log_params: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let h = GpHyperparams::from_log(log_params);
    let p = thetas.len();
    let q = h.phis.len();
    let r = correlation_matrix(thetas, &h.phis);
    let mut c = &r * h.kappa;
    for i in 0..p {
        c[(i, i)] += h.zeta;
    }
    let ch = c.cholesky()?;
    let alpha = ch.solve(y);
    let ll = -0.5 * (y.dot(&alpha) + chol_logdet(&ch) + p as f64 * LN_2PI);
    if !ll.is_finite() {
        return None;
    }
    let cinv = ch.inverse();
    // W = ααᵀ − C⁻¹; dL/dψ = ½ tr(W ∂C/∂ψ)
    let mut g = vec![0.0; 2 + q];
    for i in 0..p {
        for j in 0..p {
            let w = alpha[i] * alpha[j] - cinv[(i, j)];
            let kr = h.kappa * r[(i, j)];
            g[0] += w * kr;
            if i != j {
                for d in 0..q {
                    let delta = (thetas[i][d] - thetas[j][d]) / h.phis[d];
                    g[2 + d] += w * kr * 2.0 * delta * delta;
                }
            } else {
                g[1] += w * h.zeta;
            }
        }
    }
    for v in &mut g {
        *v *= 0.5;
    }
    Some((ll, g))
}

pub fn loglik(thetas: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyperparams) -> Option<f64> {
    loglik_and_grad(thetas, y, &hyper.to_log()).map(|(l, _)| l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Nugget floor relative to the score variance.
    pub min_nugget: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            max_iter: 400,
            min_nugget: 1e-10,
        }
    }
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

struct Outcome {
    x: Vec<f64>,
    f: f64,
    converged: bool,
}

/// Box-constrained quasi-Newton minimisation of `f` (projected BFGS).
fn projected_bfgs(
    f: &dyn Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: Vec<f64>,
    bounds: &Bounds,
    max_iter: usize,
) -> Option<Outcome> {
    let n = x0.len();
    let mut x = x0;
    bounds.clamp(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let active = |x: &[f64], g: &[f64], i: usize| {
        (x[i] <= bounds.lo[i] && g[i] > 0.0) || (x[i] >= bounds.hi[i] && g[i] < 0.0)
    };
    for _ in 0..max_iter {
        let free: Vec<bool> = (0..n).map(|i| !active(&x, &g, i)).collect();
        let pg: f64 = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg < 1e-6 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        let mut d = vec![0.0; n];
        for i in 0..n {
            if free[i] {
                d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
            }
        }
        let mut slope: f64 = (0..n).map(|i| d[i] * g[i]).sum();
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = (0..n).map(|i| d[i] * g[i]).sum();
        }
        let dmax = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if dmax > 2.0 {
            for v in &mut d {
                *v *= 2.0 / dmax;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            bounds.clamp(&mut xn);
            let dec: f64 = (0..n).map(|i| (xn[i] - x[i]) * g[i]).sum();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_ <= fx + 1e-4 * dec.min(0.0) {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let _ = slope;
        let Some((xn, fn_, gn)) = accepted else {
            // No descent possible along the projected direction.
            converged = true;
            break;
        };
        let s: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| xn[i] - x[i]));
        let yv: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| gn[i] - g[i]));
        let small_change = (fx - fn_).abs() < 1e-12 * (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - rho * &s * yv.transpose();
            let b = &i - rho * &yv * s.transpose();
            h = &a * &h * &b + rho * &s * s.transpose();
        }
        if small_change && s.amax() < 1e-9 {
            converged = true;
            break;
        }
    }
    Some(Outcome {
        x,
        f: fx,
        converged,
    })
}

/// Latin-hypercube points in the unit cube.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        for i in 0..n {
            pts[i][d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Maximum-likelihood hyperparameters for one score column.
///
/// `thetas` should already be rescaled to the unit cube. The search runs in
/// log space from `opts.restarts` Latin-hypercube starting points.
pub fn fit_component(
    thetas: &[Vec<f64>],
    scores: &DVector<f64>,
    opts: &FitOptions,
) -> Result<GpHyperparams> {
    let p = thetas.len();
    if p < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 design points to fit a component, got {p}"
        )));
    }
    if scores.len() != p {
        return Err(Error::DimensionMismatch {
            context: "fit_component",
            expected: p,
            got: scores.len(),
        });
    }
    let q = thetas[0].len();
    let var = scores.norm_squared() / p as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidInput("score column has zero variance".into()));
    }
    let lv = var.ln();
    let mut lo = vec![lv + 1e-6_f64.ln(), lv + opts.min_nugget.ln()];
    let mut hi = vec![lv + 1e3_f64.ln(), lv + 10.0_f64.ln()];
    lo.extend(std::iter::repeat_n(0.01_f64.ln(), q));
    hi.extend(std::iter::repeat_n(10.0_f64.ln(), q));
    let bounds = Bounds { lo, hi };

    // start ranges: κ ∈ [0.1, 2]·var, ζ ∈ [1e-6, 0.1]·var, φ ∈ [0.05, 2]
    let start_lo: Vec<f64> = [lv + 0.1f64.ln(), lv + 1e-6f64.ln()]
        .into_iter()
        .chain(std::iter::repeat_n(0.05f64.ln(), q))
        .collect();
    let start_hi: Vec<f64> = [lv + 2.0f64.ln(), lv + 0.1f64.ln()]
        .into_iter()
        .chain(std::iter::repeat_n(2.0f64.ln(), q))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts = latin_hypercube(opts.restarts.max(1), 2 + q, &mut rng);
    let objective = |x: &[f64]| {
        loglik_and_grad(thetas, scores, x).map(|(l, g)| (-l, g.into_iter().map(|v| -v).collect()))
    };

    let mut best: Option<Outcome> = None;
    let mut any_converged = false;
    for u in starts {
        let x0: Vec<f64> = (0..2 + q)
            .map(|i| start_lo[i] + u[i] * (start_hi[i] - start_lo[i]))
            .collect();
        if let Some(out) = projected_bfgs(&objective, x0, &bounds, opts.max_iter) {
            any_converged |= out.converged;
            if best.as_ref().is_none_or(|b| out.f < b.f) {
                best = Some(out);
            }
        }
    }
    match best {
        Some(b) if any_converged && b.f.is_finite() => Ok(GpHyperparams::from_log(&b.x)),
        Some(b) => Err(Error::Optimization {
            restarts: opts.restarts,
            best_loglik: -b.f,
            best_params: b.x.iter().map(|v| v.exp()).collect(),
            reason: "no restart met the convergence tolerance".into(),
        }),
        None => Err(Error::Optimization {
            restarts: opts.restarts,
            best_loglik: f64::NEG_INFINITY,
            best_params: vec![],
            reason: "covariance not positive definite at any starting point".into(),
        }),
    }
}
