//! Desk-scale synthetic ocean: a 20 × 20 × 5 grid with land and bathymetry
//! masking, a one-parameter "background diffusivity" simulator, and a
//! structurally biased, noisy observation.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ensemble::{make_pseudo_obs, Ensemble, Level, PseudoObsConfig};
use super::pipeline::{DiscrepancySettings, LevelSettings};
use crate::discrepancy::{BasisScaling, TruncationSize, DEFAULT_PHI_DEPTH_M, DEFAULT_PHI_SURFACE_KM};
use crate::pc_emulator::BasisSize;
use crate::discrepancy::{build_kernel, geodesic};
use crate::error::{Error, Result};
use crate::field_grid::{GridField, GridSpec};

pub const PARAMETER_NAME: &str = "K_bg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_design: usize,
    pub theta_range: (f64, f64),
    /// Design points always included (the truth and residual sources).
    pub pinned: Vec<f64>,
    pub truth: f64,
    pub residual_sources: Vec<f64>,
    pub noise_sd: f64,
    /// Standard deviation of the structural-error knot weights.
    pub discrepancy_sd: f64,
    pub design_seed: u64,
    /// Multiplies simulator output, structural error and noise.
    pub units: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_design: 50,
            theta_range: (0.05, 0.55),
            pinned: vec![0.1, 0.2, 0.3],
            truth: 0.2,
            residual_sources: vec![0.1, 0.2, 0.3],
            noise_sd: 0.3,
            discrepancy_sd: 0.2,
            design_seed: 20,
            units: 20.0,
        }
    }
}

const DEPTHS: [f64; 5] = [100.0, 500.0, 1000.0, 2000.0, 3000.0];
const THICKNESS: [f64; 5] = [300.0, 450.0, 750.0, 1000.0, 1000.0];

/// Continents as (lon, lat, radius in km).
const CONTINENTS: [(f64, f64, f64); 3] = [
    (100.0, 25.0, 4200.0),
    (285.0, 15.0, 3600.0),
    (20.0, 5.0, 2600.0),
];

fn coast_distance(lon: f64, lat: f64) -> f64 {
    let mut d = f64::INFINITY;
    for (clon, clat, r) in CONTINENTS {
        d = d.min(geodesic((lon, lat), (clon, clat)) - r);
    }
    // a southern polar continent
    d.min((lat + 68.0) * 111.0)
}

/// Grid with cell volumes `cos(lat) · layer thickness`.
pub fn benchmark_grid() -> Result<Arc<GridSpec>> {
    let lons: Vec<f64> = (0..20).map(|k| 18.0 * k as f64).collect();
    let lats: Vec<f64> = (0..20).map(|k| -76.0 + 7.0 * k as f64).collect();
    let mut vols = Vec::with_capacity(2000);
    for th in THICKNESS {
        for &la in &lats {
            for _ in &lons {
                vols.push(la.to_radians().cos() * th);
            }
        }
    }
    Ok(Arc::new(GridSpec::new(lons, lats, DEPTHS.to_vec(), vols)?))
}

/// Ocean cells: off the continents and above a sea floor that shoals
/// towards the coast.
pub fn benchmark_mask(spec: &GridSpec) -> Vec<bool> {
    let mut mask = Vec::with_capacity(spec.n_cells());
    for k in 0..spec.n_cells() {
        let [lon, lat, z] = spec.coordinates(spec.cell_index(k));
        let d = coast_distance(lon, lat);
        let floor = 3400.0 - 3000.0 * (-d.max(0.0) / 1200.0).exp();
        mask.push(d > 0.0 && z < floor);
    }
    mask
}

/// Noise-free simulator output at `(lon, lat, depth)`.
pub fn simulator_value(lon: f64, lat: f64, z: f64, theta: f64) -> f64 {
    let (lo, la) = (lon.to_radians(), lat.to_radians());
    let surface = 3.0 + 24.0 * la.cos().powi(2);
    let h = 650.0 + 500.0 * theta;
    surface * (-z / h).exp()
        + 1.0
        + 0.6 * la.cos() * lo.sin() * (-z / 800.0).exp()
        + 0.5 * theta * (z / 3000.0) * (2.0 * la).cos()
}

pub fn simulate(spec: &Arc<GridSpec>, mask: &[bool], theta: f64, units: f64) -> Result<GridField> {
    let values = (0..spec.n_cells())
        .map(|k| {
            if mask[k] {
                let [lon, lat, z] = spec.coordinates(spec.cell_index(k));
                units * simulator_value(lon, lat, z, theta)
            } else {
                f64::NAN
            }
        })
        .collect();
    GridField::new(spec.clone(), values, mask.to_vec())
}

/// Stratified design over the range plus the pinned values.
pub fn benchmark_design(cfg: &BenchmarkConfig) -> Result<Vec<f64>> {
    let (lo, hi) = cfg.theta_range;
    if !(lo < hi) || cfg.n_design < cfg.pinned.len() + 2 {
        return Err(Error::InvalidInput("benchmark design is too small or has an empty range".to_string()));
    }
    let m = cfg.n_design - cfg.pinned.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.design_seed);
    let w = (hi - lo) / m as f64;
    let mut t: Vec<f64> = (0..m).map(|i| lo + w * (i as f64 + rng.random::<f64>())).collect();
    for &p in &cfg.pinned {
        if t.iter().any(|&x| (x - p).abs() < 1e-12) {
            return Err(Error::InvalidInput(format!("pinned design value {p} duplicated")));
        }
        t.push(p);
    }
    t.sort_by(f64::total_cmp);
    Ok(t)
}

pub fn benchmark_ensemble(cfg: &BenchmarkConfig) -> Result<Ensemble> {
    let spec = benchmark_grid()?;
    let mask = benchmark_mask(&spec);
    let design = benchmark_design(cfg)?;
    let fields = design
        .iter()
        .map(|&t| simulate(&spec, &mask, t, cfg.units))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(
        vec![PARAMETER_NAME.to_string()],
        design.into_iter().map(|t| vec![t]).collect(),
        fields,
    )
}

/// Knots of the structural-error process, offset from any model knot grid.
fn error_knots() -> Vec<[f64; 3]> {
    let mut knots = Vec::new();
    for z in [300.0, 1300.0, 2300.0] {
        for i in 0..12 {
            for j in 0..12 {
                knots.push([9.0 + 30.0 * j as f64, -70.0 + 12.0 * i as f64, z]);
            }
        }
    }
    knots
}

/// Kernel-convolution error field at `coords`: knot weights are
/// `N(0, sd²)` and the kernel has the default discrepancy ranges.
pub fn structural_error(coords: &[[f64; 3]], sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let knots = error_knots();
    let v = DVector::from_fn(knots.len(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let k = build_kernel(coords, &knots, DEFAULT_PHI_SURFACE_KM, DEFAULT_PHI_DEPTH_M)?;
    Ok((k * v).iter().copied().collect())
}

/// `f(truth) + structural error + noise` on the ensemble's grid and mask.
pub fn benchmark_observation(ens: &Ensemble, cfg: &BenchmarkConfig, seed: u64) -> Result<GridField> {
    let template = &ens.fields[0];
    let spec = template.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<usize> = (0..spec.n_cells()).filter(|&k| template.mask()[k]).collect();
    let coords: Vec<[f64; 3]> = cells.iter().map(|&k| spec.coordinates(spec.cell_index(k))).collect();
    let delta = structural_error(&coords, cfg.discrepancy_sd, &mut rng)?;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut values = vec![f64::NAN; spec.n_cells()];
    for ((&k, c), d) in cells.iter().zip(&coords).zip(delta) {
        let [lon, lat, z] = *c;
        values[k] = cfg.units * (simulator_value(lon, lat, z, cfg.truth) + d + noise.sample(&mut rng));
    }
    GridField::new(spec, values, template.mask().to_vec())
}

/// Pseudo-observation built from a fresh real observation.
pub fn benchmark_pseudo_obs(ens: &Ensemble, cfg: &BenchmarkConfig, seed: u64) -> Result<GridField> {
    let obs = benchmark_observation(ens, cfg, seed)?;
    make_pseudo_obs(
        ens,
        &obs,
        &PseudoObsConfig {
            truth_theta: vec![cfg.truth],
            residual_source_thetas: cfg.residual_sources.iter().map(|&t| vec![t]).collect(),
        },
    )
}

/// Component counts and knot spacing used for the benchmark at each level:
/// `(J_y, J_d^PC)` of (4, 175), (3, 20) and (2, 2) on a 14° × 36° × 500 m
/// knot grid.
pub fn benchmark_level_settings() -> Vec<(Level, LevelSettings)> {
    [(Level::ThreeD, 4, 175), (Level::TwoD, 3, 20), (Level::OneD, 2, 2)]
        .into_iter()
        .map(|(level, jy, jd)| {
            let settings = LevelSettings {
                basis: BasisSize::Count(jy),
                discrepancy: Some(DiscrepancySettings {
                    lat_step: 14.0,
                    lon_step: 36.0,
                    depth_step: 500.0,
                    phi_surface_km: DEFAULT_PHI_SURFACE_KM,
                    phi_depth_m: DEFAULT_PHI_DEPTH_M,
                    size: TruncationSize::Count(jd),
                    scaling: BasisScaling::Singular,
                }),
            };
            (level, settings)
        })
        .collect()
}
