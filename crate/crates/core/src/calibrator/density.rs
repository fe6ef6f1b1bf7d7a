use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DENSITY_GRID_POINTS: usize = 512;

/// A density tabulated on an evenly spaced grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

impl Density {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::InvalidInput(
                "density needs at least two grid points and one value per point".to_string(),
            ));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("density grid must be increasing".to_string()));
        }
        Ok(Density { grid, density })
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let z = self.integral();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidInput("density has no mass on its grid".to_string()));
        }
        self.density.iter_mut().for_each(|d| *d /= z);
        Ok(self)
    }

    /// Grid point with the largest density.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.density.len() {
            if self.density[i] > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        trapezoid(&self.grid, &xy) / self.integral()
    }

    pub fn same_grid(&self, other: &Density) -> bool {
        self.grid.len() == other.grid.len()
            && self
                .grid
                .iter()
                .zip(&other.grid)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    /// `∫ |f − g|`, both on the same grid.
    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::InvalidInput("densities are on different grids".to_string()));
        }
        let diff: Vec<f64> = self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(trapezoid(&self.grid, &diff))
    }

    /// Equal-tailed interval from the tabulated cumulative distribution.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let n = self.grid.len();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1]
                + 0.5 * (self.grid[i] - self.grid[i - 1]) * (self.density[i] + self.density[i - 1]);
        }
        let tot = cdf[n - 1];
        let inv = |p: f64| {
            let t = p * tot;
            let k = cdf.partition_point(|&c| c < t).clamp(1, n - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let w = if c1 > c0 { (t - c0) / (c1 - c0) } else { 0.0 };
            self.grid[k - 1] + w * (self.grid[k] - self.grid[k - 1])
        };
        let a = 0.5 * (1.0 - level);
        (inv(a), inv(1.0 - a))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["grid", "density"])?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            w.write_record([x.to_string(), d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Linear-interpolation sample quantile (the common "type 7" definition).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn equal_tailed_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// Monte-Carlo standard error of the mean by non-overlapping batch means
/// with `⌊√n⌋` batches.
pub fn mcse_batch_means(values: &[f64]) -> f64 {
    let n = values.len();
    let nb = (n as f64).sqrt().floor() as usize;
    if nb < 2 {
        return f64::NAN;
    }
    let b = n / nb;
    let means: Vec<f64> = (0..nb)
        .map(|k| values[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let (_, sd) = mean_sd(&means);
    sd / (nb as f64).sqrt()
}

/// Silverman's rule `0.9 · min(sd, IQR/1.34) · n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let (_, sd) = mean_sd(values);
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate on `DENSITY_GRID_POINTS` points spanning
/// `[lo, hi]`, renormalised to unit mass on that range. Bandwidths below the
/// grid spacing (e.g. all draws equal) are raised to the spacing.
pub fn kde(values: &[f64], lo: f64, hi: f64, bandwidth: Option<f64>) -> Result<Density> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot estimate a density from no draws".to_string()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("density range ({lo}, {hi}) is empty")));
    }
    let grid = linspace(lo, hi, DENSITY_GRID_POINTS);
    let step = grid[1] - grid[0];
    let mut h = bandwidth.unwrap_or_else(|| silverman_bandwidth(values));
    if !(h >= step && h.is_finite()) {
        h = step;
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Density::new(grid, density)?.normalized()
}
