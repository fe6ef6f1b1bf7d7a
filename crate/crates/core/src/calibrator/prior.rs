use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Inverse-gamma distribution with density `∝ x^{-(shape+1)} exp(-scale/x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "inverse-gamma needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(InvGamma { shape, scale })
    }

    /// The distribution whose mode is `mode`.
    pub fn with_mode(shape: f64, mode: f64) -> Result<Self> {
        Self::new(shape, mode * (shape + 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }

    pub fn mode(&self) -> f64 {
        self.scale / (self.shape + 1.0)
    }

    /// `None` when the shape is at most 1.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    /// `None` when the shape is at most 2.
    pub fn variance(&self) -> Option<f64> {
        (self.shape > 2.0).then(|| {
            let a = self.shape;
            self.scale * self.scale / ((a - 1.0) * (a - 1.0) * (a - 2.0))
        })
    }
}

pub const DEFAULT_KAPPA_Y_SHAPE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Uniform bounds for each calibration parameter.
    pub theta_bounds: Vec<(f64, f64)>,
    pub sigma2: InvGamma,
    pub kappa_d: InvGamma,
    /// One prior per emulator component.
    pub kappa_y: Vec<InvGamma>,
}

impl PriorSpec {
    /// κ_y priors get a common shape and scales chosen so each mode sits on
    /// the corresponding fitted sill.
    pub fn new(
        theta_bounds: Vec<(f64, f64)>,
        sigma2: InvGamma,
        kappa_d: InvGamma,
        kappa_y_shape: f64,
        fitted_sills: &[f64],
    ) -> Result<Self> {
        for (i, &(lo, hi)) in theta_bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "prior bounds for parameter {i} must be finite with lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        let kappa_y = fitted_sills
            .iter()
            .map(|&k| InvGamma::with_mode(kappa_y_shape, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorSpec {
            theta_bounds,
            sigma2,
            kappa_d,
            kappa_y,
        })
    }

    pub fn theta_in_bounds(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.theta_bounds)
            .all(|(&t, &(lo, hi))| t >= lo && t <= hi)
    }
}

/// Log prior density (up to the constant from the uniform bounds).
pub fn log_prior(theta: &[f64], sigma2: f64, kappa_d: f64, kappa_y: &[f64], priors: &PriorSpec) -> f64 {
    if theta.len() != priors.theta_bounds.len() || !priors.theta_in_bounds(theta) {
        return f64::NEG_INFINITY;
    }
    let mut lp = priors.sigma2.ln_pdf(sigma2) + priors.kappa_d.ln_pdf(kappa_d);
    for (k, p) in kappa_y.iter().zip(&priors.kappa_y) {
        lp += p.ln_pdf(*k);
    }
    lp
}
