use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrator::{equal_tailed_interval, kde, Density};
use crate::error::{Error, Result};

/// Monotone lookup from a parameter value to a downstream response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTable {
    pub theta: Vec<f64>,
    pub response: Vec<f64>,
}

#[derive(Deserialize)]
struct TableRow {
    theta: f64,
    response: f64,
}

impl ProjectionTable {
    pub fn new(theta: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        if theta.len() < 2 || theta.len() != response.len() {
            return Err(Error::InvalidInput(
                "projection table needs at least two (theta, response) rows".to_string(),
            ));
        }
        if !theta.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput(
                "projection table theta values must be strictly increasing".to_string(),
            ));
        }
        if theta.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("projection table has non-finite entries".to_string()));
        }
        Ok(ProjectionTable { theta, response })
    }

    /// CSV with `theta,response` columns.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let rows: Vec<TableRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Self::new(
            rows.iter().map(|r| r.theta).collect(),
            rows.iter().map(|r| r.response).collect(),
        )
    }

    /// Piecewise-linear interpolation; values outside the table are clamped
    /// to its end points. The flag reports whether clamping happened.
    pub fn interpolate(&self, t: f64) -> (f64, bool) {
        let n = self.theta.len();
        if t <= self.theta[0] {
            return (self.response[0], t < self.theta[0]);
        }
        if t >= self.theta[n - 1] {
            return (self.response[n - 1], t > self.theta[n - 1]);
        }
        let k = self.theta.partition_point(|&x| x <= t);
        let (x0, x1) = (self.theta[k - 1], self.theta[k]);
        let w = (t - x0) / (x1 - x0);
        (self.response[k - 1] + w * (self.response[k] - self.response[k - 1]), false)
    }

    pub fn response_range(&self) -> (f64, f64) {
        let lo = self.response.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.response.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub draws: Vec<f64>,
    pub density: Density,
    pub interval: (f64, f64),
    pub n_clamped: usize,
}

/// Push posterior draws of θ through the table.
pub fn project_response(theta_draws: &[f64], table: &ProjectionTable) -> Result<ProjectionResult> {
    if theta_draws.is_empty() {
        return Err(Error::InvalidInput("no posterior draws to project".to_string()));
    }
    let mut n_clamped = 0;
    let draws: Vec<f64> = theta_draws
        .iter()
        .map(|&t| {
            let (v, c) = table.interpolate(t);
            n_clamped += c as usize;
            v
        })
        .collect();
    if n_clamped > 0 {
        log::warn!("{n_clamped} posterior draws fell outside the projection table and were clamped");
    }
    let (mut lo, mut hi) = table.response_range();
    if hi - lo <= 0.0 {
        // constant table: a narrow window around the single response value
        let w = 1e-6 * lo.abs().max(1.0);
        lo -= w;
        hi += w;
    }
    let density = kde(&draws, lo, hi, None)?;
    Ok(ProjectionResult {
        interval: equal_tailed_interval(&draws, 0.95),
        draws,
        density,
        n_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::quantile;

    #[test]
    fn table_validation() {
        assert!(ProjectionTable::new(vec![0.1], vec![1.0]).is_err());
        assert!(ProjectionTable::new(vec![0.2, 0.1], vec![1.0, 2.0]).is_err());
        assert!(ProjectionTable::new(vec![0.1, 0.2], vec![1.0]).is_err());
    }

    #[test]
    fn linear_table_maps_interval_endpoints() {
        let t = ProjectionTable::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        let draws: Vec<f64> = (0..1000).map(|i| 0.2 + 0.5 * (i as f64 / 999.0).powi(2)).collect();
        let r = project_response(&draws, &t).unwrap();
        let (a, b) = equal_tailed_interval(&draws, 0.95);
        assert!((r.interval.0 - (2.0 * a + 1.0)).abs() < 1e-12);
        assert!((r.interval.1 - (2.0 * b + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_table_is_point_mass() {
        let t = ProjectionTable::new(vec![0.0, 0.5, 1.0], vec![4.0, 4.0, 4.0]).unwrap();
        let r = project_response(&[0.1, 0.4, 0.9], &t).unwrap();
        assert!(r.draws.iter().all(|&v| v == 4.0));
        assert_eq!(r.interval, (4.0, 4.0));
        assert!((r.density.mode() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn clamps_outside_range() {
        let t = ProjectionTable::new(vec![0.1, 0.5], vec![0.0, 4.0]).unwrap();
        let r = project_response(&[0.0, 0.3, 0.7], &t).unwrap();
        assert_eq!((r.draws[0], r.draws[2]), (0.0, 4.0));
        assert!((r.draws[1] - 2.0).abs() < 1e-12);
        assert_eq!(r.n_clamped, 2);
    }

    #[test]
    fn monotone_table_maps_quantiles() {
        let t = ProjectionTable::new(vec![0.0, 0.2, 0.5, 1.0], vec![0.0, 1.0, 1.5, 5.0]).unwrap();
        let draws: Vec<f64> = (0..2001).map(|i| (i as f64 / 2000.0).sqrt()).collect();
        let r = project_response(&draws, &t).unwrap();
        for p in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let a = quantile(&r.draws, p);
            let b = t.interpolate(quantile(&draws, p)).0;
            assert!((a - b).abs() < 1e-12, "{p}: {a} vs {b}");
        }
    }
}
