//! Reduced-space calibration: project the observation onto the emulator and
//! discrepancy bases, then sample `(θ, σ², κ_d, κ_y)` by Metropolis-within-Gibbs.

mod density;
mod mcmc;
mod prior;
mod reduce;

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use density::*;
pub use mcmc::*;
pub use prior::*;
pub use reduce::*;

use crate::error::{Error, Result};
use crate::pc_emulator::PcEmulator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub adapt: bool,
    /// Random-walk sd per θ coordinate; `None` uses a tenth of each prior range.
    pub theta_scale: Option<Vec<f64>>,
    /// Log-scale random-walk sd.
    pub sigma2_scale: f64,
    pub kappa_d_scale: f64,
    pub kappa_y_scale: f64,
    /// Evaluate the likelihood; `false` samples the prior.
    pub likelihood: bool,
    /// Per-θ fixed values (not sampled).
    pub fixed_theta: Vec<Option<f64>>,
    pub fixed_sigma2: Option<f64>,
    pub fixed_kappa_d: Option<f64>,
    /// Keep κ_y at the prior modes (the fitted sills).
    pub fixed_kappa_y: bool,
    pub init_theta: Option<Vec<f64>>,
    pub init_sigma2: Option<f64>,
    pub init_kappa_d: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 25_000,
            burn_in_fraction: 0.2,
            seed: 0,
            adapt: true,
            theta_scale: None,
            sigma2_scale: 0.3,
            kappa_d_scale: 0.3,
            kappa_y_scale: 0.1,
            likelihood: true,
            fixed_theta: Vec::new(),
            fixed_sigma2: None,
            fixed_kappa_d: None,
            fixed_kappa_y: false,
            init_theta: None,
            init_sigma2: None,
            init_kappa_d: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::config("mcmc.iterations", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::config("mcmc.burn_in_fraction", "must lie in [0, 1)"));
        }
        for (k, v) in [
            ("mcmc.scale.sigma2", self.sigma2_scale),
            ("mcmc.scale.kappa_d", self.kappa_d_scale),
            ("mcmc.scale.kappa_y", self.kappa_y_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if let Some(s) = &self.theta_scale {
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config("mcmc.scale.theta", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.n_iter as f64 * self.burn_in_fraction).floor() as usize
    }
}

pub const BLOCK_NAMES: [&str; 4] = ["theta", "sigma2", "kappa_d", "kappa_y"];

/// Sampled chain with state layout `[θ (q), σ², κ_d, κ_y (J_y)]`.
#[derive(Clone, Debug)]
pub struct CalibrationPosterior {
    pub parameter_names: Vec<String>,
    pub n_y: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chain: RawChain,
    /// Which of the four blocks were sampled.
    pub sampled_blocks: [bool; 4],
}

/// Posterior summary of one quantity over two chain spans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitHalfSummary {
    pub parameter: String,
    pub early_mean: f64,
    pub full_mean: f64,
    pub early_sd: f64,
    pub full_sd: f64,
    pub early_interval: (f64, f64),
    pub full_interval: (f64, f64),
    /// `|early_mean − full_mean| / full_sd`.
    pub standardized_shift: f64,
}

/// Share of the chain used for the early span of the split-half check.
pub const SPLIT_HALF_FRACTION: f64 = 0.6;

impl CalibrationPosterior {
    pub fn n_params(&self) -> usize {
        self.parameter_names.len()
    }

    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        let q = self.n_params();
        if let Some(rest) = name.strip_prefix("theta.") {
            return self.parameter_names.iter().position(|n| n == rest);
        }
        if let Some(i) = self.parameter_names.iter().position(|n| n == name) {
            return Some(i);
        }
        match name {
            "sigma2" => Some(q),
            "kappa_d" => Some(q + 1),
            _ => name
                .strip_prefix("kappa_y.")
                .and_then(|j| j.parse::<usize>().ok())
                .filter(|&j| j >= 1 && j <= self.n_y)
                .map(|j| q + 1 + j),
        }
    }

    /// Post-burn-in draws of a named quantity (`theta.<name>` or `<name>`,
    /// `sigma2`, `kappa_d`, `kappa_y.<j>` with `j` from 1).
    pub fn draws(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .column_index(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown chain column `{name}`")))?;
        Ok(self.chain.column(k, self.burn_in))
    }

    pub fn theta_draws(&self, d: usize) -> Vec<f64> {
        self.chain.column(d, self.burn_in)
    }

    pub fn acceptance_rates(&self) -> Vec<(String, f64)> {
        let rates = self.chain.acceptance_rates(self.burn_in);
        BLOCK_NAMES
            .iter()
            .map(|b| {
                let r = self
                    .chain
                    .block_names
                    .iter()
                    .position(|n| n == b)
                    .map_or(0.0, |i| rates[i]);
                (b.to_string(), r)
            })
            .collect()
    }

    /// Compares summaries from the first 60% of the chain (after burn-in)
    /// with those from the whole chain.
    pub fn split_half(&self) -> Vec<SplitHalfSummary> {
        let early_end = ((self.len() as f64 * SPLIT_HALF_FRACTION) as usize).max(self.burn_in + 2);
        let mut names: Vec<String> = self.parameter_names.iter().map(|n| format!("theta.{n}")).collect();
        names.push("sigma2".into());
        names.push("kappa_d".into());
        names
            .into_iter()
            .map(|name| {
                let full = self.draws(&name).expect("known column");
                let early = &full[..(early_end - self.burn_in).min(full.len())];
                let (em, es) = mean_sd(early);
                let (fm, fs) = mean_sd(&full);
                SplitHalfSummary {
                    standardized_shift: if fs > 0.0 { (em - fm).abs() / fs } else { 0.0 },
                    parameter: name,
                    early_mean: em,
                    full_mean: fm,
                    early_sd: es,
                    full_sd: fs,
                    early_interval: equal_tailed_interval(early, 0.95),
                    full_interval: equal_tailed_interval(&full, 0.95),
                }
            })
            .collect()
    }

    /// One row per iteration, burn-in included.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        let mut header: Vec<String> = self.parameter_names.iter().map(|n| format!("theta.{n}")).collect();
        header.push("sigma2".into());
        header.push("kappa_d".into());
        header.extend((1..=self.n_y).map(|j| format!("kappa_y.{j}")));
        header.push("log_post".into());
        header.extend(BLOCK_NAMES.iter().map(|b| format!("accepted.{b}")));
        w.write_record(&header)?;
        let block_pos: Vec<Option<usize>> = BLOCK_NAMES
            .iter()
            .map(|b| self.chain.block_names.iter().position(|n| n == b))
            .collect();
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.chain.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.chain.log_post[i].to_string());
            for p in &block_pos {
                let a = p.is_some_and(|b| self.chain.accepted(i, b));
                rec.push(if a { "1" } else { "0" }.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// KDE of a chain quantity over its prior range (θ) or over the sampled
/// range otherwise.
pub fn posterior_density(
    post: &CalibrationPosterior,
    parameter: &str,
    priors: &PriorSpec,
    bandwidth: Option<f64>,
) -> Result<Density> {
    let draws = post.draws(parameter)?;
    if draws.is_empty() {
        return Err(Error::InvalidInput("chain has no draws after burn-in".to_string()));
    }
    let k = post.column_index(parameter).expect("checked by draws");
    let (lo, hi) = if k < post.n_params() {
        priors.theta_bounds[k]
    } else {
        let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-12 * hi.abs().max(1.0));
        ((lo - pad).max(0.0), hi + pad)
    };
    kde(&draws, lo, hi, bandwidth)
}

/// Log posterior of a state in the `[θ, σ², κ_d, κ_y]` layout.
pub fn log_posterior(
    x: &[f64],
    lik: &ReducedLikelihood,
    emulator: &PcEmulator,
    priors: &PriorSpec,
    likelihood: bool,
) -> Result<f64> {
    let q = priors.theta_bounds.len();
    let (theta, rest) = x.split_at(q);
    let (sigma2, kappa_d, kappa_y) = (rest[0], rest[1], &rest[2..]);
    let lp = log_prior(theta, sigma2, kappa_d, kappa_y, priors);
    if !lp.is_finite() || !likelihood {
        return Ok(lp);
    }
    if !(sigma2 > 0.0) || !(kappa_d > 0.0) || kappa_y.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidInput("variance parameters must be positive".to_string()));
    }
    let pred = emulator.predict(theta, Some(kappa_y))?;
    Ok(lp + lik.loglik(&pred.mean, &pred.var, sigma2, kappa_d)?)
}

pub fn run_mcmc(
    zr: &ReducedObservation,
    emulator: &PcEmulator,
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<CalibrationPosterior> {
    cfg.validate()?;
    let q = emulator.parameter_names.len();
    let jy = emulator.n_components();
    if priors.theta_bounds.len() != q {
        return Err(Error::DimensionMismatch {
            context: "prior bounds",
            expected: q,
            got: priors.theta_bounds.len(),
        });
    }
    if priors.kappa_y.len() != jy {
        return Err(Error::DimensionMismatch {
            context: "kappa_y priors",
            expected: jy,
            got: priors.kappa_y.len(),
        });
    }
    let fixed_theta: Vec<Option<f64>> = if cfg.fixed_theta.is_empty() {
        vec![None; q]
    } else if cfg.fixed_theta.len() == q {
        cfg.fixed_theta.clone()
    } else {
        return Err(Error::DimensionMismatch {
            context: "fixed theta entries",
            expected: q,
            got: cfg.fixed_theta.len(),
        });
    };

    let mut x0 = Vec::with_capacity(q + 2 + jy);
    for d in 0..q {
        let (lo, hi) = priors.theta_bounds[d];
        let v = fixed_theta[d]
            .or_else(|| cfg.init_theta.as_ref().map(|t| t[d]))
            .unwrap_or(0.5 * (lo + hi));
        x0.push(v);
    }
    x0.push(cfg.fixed_sigma2.or(cfg.init_sigma2).unwrap_or(priors.sigma2.mode()));
    x0.push(cfg.fixed_kappa_d.or(cfg.init_kappa_d).unwrap_or(priors.kappa_d.mode()));
    x0.extend(priors.kappa_y.iter().map(|p| p.mode()));

    let mut blocks = Vec::new();
    let free: Vec<usize> = (0..q).filter(|&d| fixed_theta[d].is_none()).collect();
    if !free.is_empty() {
        let scales = free
            .iter()
            .map(|&d| match &cfg.theta_scale {
                Some(s) => s[d.min(s.len() - 1)],
                None => 0.1 * (priors.theta_bounds[d].1 - priors.theta_bounds[d].0),
            })
            .collect();
        blocks.push(BlockSpec {
            name: "theta".into(),
            indices: free,
            transform: Transform::Identity,
            scales,
        });
    }
    if cfg.fixed_sigma2.is_none() {
        blocks.push(BlockSpec {
            name: "sigma2".into(),
            indices: vec![q],
            transform: Transform::Log,
            scales: vec![cfg.sigma2_scale],
        });
    }
    if cfg.fixed_kappa_d.is_none() {
        blocks.push(BlockSpec {
            name: "kappa_d".into(),
            indices: vec![q + 1],
            transform: Transform::Log,
            scales: vec![cfg.kappa_d_scale],
        });
    }
    if !cfg.fixed_kappa_y && jy > 0 {
        blocks.push(BlockSpec {
            name: "kappa_y".into(),
            indices: (q + 2..q + 2 + jy).collect(),
            transform: Transform::Log,
            scales: vec![cfg.kappa_y_scale; jy],
        });
    }
    let sampled_blocks = BLOCK_NAMES.map(|b| blocks.iter().any(|s| s.name == b));
    let burn_in = cfg.burn_in();
    let opts = SamplerOptions {
        n_iter: cfg.n_iter,
        burn_in,
        adapt: cfg.adapt,
        seed: cfg.seed,
        warmup_window: default_warmup_window(cfg.n_iter).max(burn_in.min(200)),
    };
    if zr.n_y != jy {
        return Err(Error::DimensionMismatch {
            context: "emulator components",
            expected: zr.n_y,
            got: jy,
        });
    }
    let lik = ReducedLikelihood::new(zr);
    let chain = metropolis_within_gibbs(
        |x| log_posterior(x, &lik, emulator, priors, cfg.likelihood),
        x0,
        &blocks,
        &opts,
    )?;
    Ok(CalibrationPosterior {
        parameter_names: emulator.parameter_names.clone(),
        n_y: jy,
        burn_in,
        seed: cfg.seed,
        chain,
        sampled_blocks,
    })
}
