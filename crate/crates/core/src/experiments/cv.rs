use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::derive_seed;
use crate::error::{Error, Result};
use crate::field_grid::subsample_indices;
use crate::pc_emulator::{build_basis, project, BasisSize, EnsembleDesign, FitOptions, PcEmulator};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvRound {
    pub held_out: Vec<usize>,
    /// Field-space root-mean-square error over held-out runs and locations.
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvReport {
    pub rounds: Vec<CvRound>,
    /// `(y − μ)/sd` for every held-out run and component.
    pub whitened: Vec<f64>,
    pub fraction_outside_2: f64,
    pub mean_rmse: f64,
}

/// Repeated random hold-out validation of the full emulator (basis and GPs
/// refitted each round).
pub fn cross_validate(
    design: &EnsembleDesign,
    size: BasisSize,
    fit: &FitOptions,
    holdout_fraction: f64,
    n_rounds: usize,
    seed: u64,
) -> Result<CvReport> {
    let p = design.n_design();
    let n_hold = (p as f64 * holdout_fraction).round() as usize;
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) || n_hold < 1 {
        return Err(Error::InvalidInput(format!(
            "hold-out fraction {holdout_fraction} leaves no run out of {p}"
        )));
    }
    if p - n_hold < 3 {
        return Err(Error::InvalidInput(format!(
            "hold-out fraction {holdout_fraction} leaves fewer than 3 of {p} runs for fitting"
        )));
    }
    if n_rounds == 0 {
        return Err(Error::InvalidInput("need at least one round".to_string()));
    }
    let rounds: Vec<(CvRound, Vec<f64>)> = (0..n_rounds)
        .into_par_iter()
        .map(|r| {
            let held = subsample_indices(p, n_hold, derive_seed(seed, &[r as u64]))?;
            let train: Vec<usize> = (0..p).filter(|i| held.binary_search(i).is_err()).collect();
            let sub = design.subset(&train)?;
            let basis = build_basis(&sub.m, size)?;
            let em = PcEmulator::fit(&sub, basis, &FitOptions {
                seed: derive_seed(fit.seed, &[r as u64]),
                ..fit.clone()
            })?;
            let mut whitened = Vec::new();
            let mut sse = 0.0;
            for &i in &held {
                let y = design.run_output(i);
                let truth = project(&em.basis, &(&y - &em.column_means))?;
                let pred = em.predict(&design.thetas[i], None)?;
                for j in 0..truth.len() {
                    let sd = pred.var[j].sqrt();
                    if sd > 0.0 {
                        whitened.push((truth[j] - pred.mean[j]) / sd);
                    }
                }
                let yhat = &em.basis.k_y * &pred.mean + &em.column_means;
                sse += (y - yhat).norm_squared();
            }
            let rmse = (sse / (held.len() * design.n_locations()) as f64).sqrt();
            Ok((CvRound { held_out: held, rmse }, whitened))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out_rounds = Vec::with_capacity(n_rounds);
    let mut whitened = Vec::new();
    for (r, w) in rounds {
        out_rounds.push(r);
        whitened.extend(w);
    }
    let outside = whitened.iter().filter(|e| e.abs() > 2.0).count();
    let mean_rmse = out_rounds.iter().map(|r| r.rmse).sum::<f64>() / n_rounds as f64;
    Ok(CvReport {
        fraction_outside_2: outside as f64 / whitened.len().max(1) as f64,
        rounds: out_rounds,
        whitened,
        mean_rmse,
    })
}
