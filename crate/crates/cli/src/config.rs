//! Plain-text run configuration: one `key = value` per line, `#` comments.
//!
//! Lists are comma separated. Keys that no command reads are rejected so
//! that typos surface before any work starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use pcacal::calibrator::{InvGamma, McmcConfig, DEFAULT_KAPPA_Y_SHAPE};
use pcacal::discrepancy::{BasisScaling, TruncationSize, DEFAULT_PHI_DEPTH_M, DEFAULT_PHI_SURFACE_KM};
use pcacal::experiments::{DiscrepancySettings, Level, LevelSettings, PriorChoice};
use pcacal::pc_emulator::{BasisSize, FitOptions};
use pcacal::{Error, Result};

#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}", n + 1), "empty key"));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "given more than once"));
            }
        }
        Ok(KeyValues {
            entries,
            used: BTreeSet::new(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn str(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn with_prefix(&self, prefix: &str) -> Vec<String> {
        let p = format!("{prefix}.");
        self.entries
            .keys()
            .filter_map(|k| k.strip_prefix(&p).map(str::to_string))
            .collect()
    }

    pub fn parse_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parse_value(key)?;
        match v {
            Some(x) if !x.is_finite() => Err(Error::config(key, "must be finite")),
            _ => Ok(v),
        }
    }

    pub fn positive(&mut self, key: &str) -> Result<Option<f64>> {
        match self.f64(key)? {
            Some(x) if x <= 0.0 => Err(Error::config(key, "must be positive")),
            v => Ok(v),
        }
    }

    pub fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.str(key).as_deref() {
            None => Ok(None),
            Some("true" | "yes" | "on") => Ok(Some(true)),
            Some("false" | "no" | "off") => Ok(Some(false)),
            Some(v) => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
        }
    }

    pub fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::config(key, format!("cannot parse `{}`", s.trim())))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.str(key).map(PathBuf::from)
    }

    /// Error on any key no reader asked for.
    pub fn finish(&self) -> Result<()> {
        match self.entries.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyKind {
    Aggregation,
    Subsample,
}

pub const STUDY_SELECTORS: [&str; 2] = ["aggregation", "subsample"];

impl StudyKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "aggregation" => Ok(StudyKind::Aggregation),
            "subsample" => Ok(StudyKind::Subsample),
            _ => Err(Error::config(
                "study",
                format!("unknown selector `{s}`; valid selectors: {}", STUDY_SELECTORS.join(", ")),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub enum SubsampleSize {
    Fraction(f64),
    Count(usize),
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub levels: Vec<Level>,
    pub level_settings: BTreeMap<Level, LevelSettings>,
    pub priors: Vec<PriorChoice>,
    /// Build a pseudo-observation at this truth; `None` uses the observation as is.
    pub truth: Option<Vec<(String, f64)>>,
    pub residual_sources: Vec<Vec<f64>>,
    pub subsample: SubsampleSize,
    pub repeats: usize,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub ensemble: Option<PathBuf>,
    pub observation: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub level: Level,
    pub settings: LevelSettings,
    pub fit: FitOptions,
    /// Named θ bounds; unnamed parameters default to the design range.
    pub theta_bounds: Vec<(String, (f64, f64))>,
    pub sigma2: InvGamma,
    pub kappa_d: InvGamma,
    pub kappa_y_shape: f64,
    pub mcmc: McmcConfig,
    pub fixed_theta: Vec<(String, f64)>,
    pub cv_holdout: f64,
    pub cv_rounds: usize,
    pub study: Option<StudyConfig>,
    pub projection_table: Option<PathBuf>,
    pub projection_parameter: Option<String>,
}

fn level_key(kv: &mut KeyValues, key: &str) -> Result<Option<Level>> {
    match kv.str(key) {
        None => Ok(None),
        Some(v) => Level::parse(&v)
            .map(Some)
            .ok_or_else(|| Error::config(key, format!("unknown level `{v}`; use 3d, 2d or 1d"))),
    }
}

fn basis_size(kv: &mut KeyValues, prefix: &str, default: BasisSize) -> Result<BasisSize> {
    let (ck, tk) = (format!("{prefix}.components"), format!("{prefix}.threshold"));
    match (kv.parse_value::<usize>(&ck)?, kv.f64(&tk)?) {
        (Some(_), Some(_)) => Err(Error::config(&tk, format!("give either {ck} or {tk}"))),
        (Some(0), None) => Err(Error::config(&ck, "must be at least 1")),
        (Some(c), None) => Ok(BasisSize::Count(c)),
        (None, Some(t)) if !(t > 0.0 && t <= 1.0) => Err(Error::config(&tk, "must lie in (0, 1]")),
        (None, Some(t)) => Ok(BasisSize::Fraction(t)),
        (None, None) => Ok(default),
    }
}

fn discrepancy_settings(
    kv: &mut KeyValues,
    prefix: &str,
    default: Option<DiscrepancySettings>,
) -> Result<Option<DiscrepancySettings>> {
    let enabled = kv.bool(prefix)?;
    let base = match (enabled, default) {
        (Some(false), _) => return Ok(None),
        (_, Some(d)) => d,
        (_, None) => DiscrepancySettings {
            lat_step: 15.0,
            lon_step: 36.0,
            depth_step: 500.0,
            phi_surface_km: DEFAULT_PHI_SURFACE_KM,
            phi_depth_m: DEFAULT_PHI_DEPTH_M,
            size: TruncationSize::Fraction(0.95),
            scaling: BasisScaling::Singular,
        },
    };
    let key = |s: &str| format!("{prefix}.{s}");
    let size = match basis_size(kv, prefix, BasisSize::Count(0))? {
        BasisSize::Count(0) => base.size,
        BasisSize::Count(c) => TruncationSize::Count(c),
        BasisSize::Fraction(f) => TruncationSize::Fraction(f),
    };
    let scaling = match kv.str(&key("scaling")).as_deref() {
        None => base.scaling,
        Some("singular") => BasisScaling::Singular,
        Some("unit") => BasisScaling::Unit,
        Some(v) => return Err(Error::config(key("scaling"), format!("expected singular or unit, got `{v}`"))),
    };
    Ok(Some(DiscrepancySettings {
        lat_step: kv.positive(&key("lat_step"))?.unwrap_or(base.lat_step),
        lon_step: kv.positive(&key("lon_step"))?.unwrap_or(base.lon_step),
        depth_step: kv.positive(&key("depth_step"))?.unwrap_or(base.depth_step),
        phi_surface_km: kv.positive(&key("phi_surface_km"))?.unwrap_or(base.phi_surface_km),
        phi_depth_m: kv.positive(&key("phi_depth_m"))?.unwrap_or(base.phi_depth_m),
        size,
        scaling,
    }))
}

fn inv_gamma(kv: &mut KeyValues, key: &str, default: InvGamma) -> Result<InvGamma> {
    match kv.f64_list(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => InvGamma::new(v[0], v[1]).map_err(|e| Error::config(key, e.to_string())),
        Some(_) => Err(Error::config(key, "expected `shape, scale`")),
    }
}

fn parse_prior_grid(kv: &mut KeyValues, shape: f64) -> Result<Vec<PriorChoice>> {
    let key = "study.priors";
    let Some(text) = kv.str(key) else {
        let ig = |b| InvGamma::new(shape, b).map_err(|e| Error::config("study.prior_shape", e.to_string()));
        let mut out = Vec::new();
        for b_nu in [2.0, 100.0] {
            for b_z in [2.0, 100.0] {
                out.push(PriorChoice::new(ig(b_nu)?, ig(b_z)?));
            }
        }
        return Ok(out);
    };
    text.split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::config(key, format!("expected `b_nu:b_z`, got `{}`", pair.trim())))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .and_then(|b| InvGamma::new(shape, b).ok())
                    .ok_or_else(|| Error::config(key, format!("bad prior scale `{}`", s.trim())))
            };
            Ok(PriorChoice::new(parse(a)?, parse(b)?))
        })
        .collect()
}

impl RunConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let seed = kv.parse_value::<u64>("seed")?.unwrap_or(0);
        let level = level_key(kv, "level")?.unwrap_or(Level::ThreeD);
        let settings = LevelSettings {
            basis: basis_size(kv, "emulator", BasisSize::Fraction(0.95))?,
            discrepancy: discrepancy_settings(kv, "discrepancy", None)?,
        };
        let defaults = FitOptions::default();
        let fit = FitOptions {
            restarts: kv.parse_value("emulator.restarts")?.unwrap_or(defaults.restarts),
            seed,
            max_iter: kv.parse_value("emulator.max_iter")?.unwrap_or(defaults.max_iter),
            min_nugget: kv.positive("emulator.min_nugget")?.unwrap_or(defaults.min_nugget),
        };
        if fit.restarts == 0 {
            return Err(Error::config("emulator.restarts", "must be at least 1"));
        }

        let mut theta_bounds = Vec::new();
        for name in kv.with_prefix("prior.theta") {
            let key = format!("prior.theta.{name}");
            let v = kv.f64_list(&key)?.unwrap_or_default();
            if v.len() != 2 || !(v[0] < v[1]) {
                return Err(Error::config(&key, "expected `lower, upper` with lower < upper"));
            }
            theta_bounds.push((name, (v[0], v[1])));
        }
        let default_ig = InvGamma::new(2.0, 2.0)?;
        let sigma2 = inv_gamma(kv, "prior.sigma2", default_ig)?;
        let kappa_d = inv_gamma(kv, "prior.kappa_d", default_ig)?;
        let kappa_y_shape = kv.positive("prior.kappa_y_shape")?.unwrap_or(DEFAULT_KAPPA_Y_SHAPE);

        let d = McmcConfig::default();
        let mut fixed_theta = Vec::new();
        let mut fixed_sigma2 = None;
        let mut fixed_kappa_d = None;
        let mut fixed_kappa_y = false;
        for name in kv.with_prefix("fixed") {
            let key = format!("fixed.{name}");
            match name.as_str() {
                "sigma2" => fixed_sigma2 = kv.positive(&key)?,
                "kappa_d" => fixed_kappa_d = kv.positive(&key)?,
                "kappa_y" => fixed_kappa_y = kv.bool(&key)?.unwrap_or(false),
                _ => fixed_theta.push((name, kv.f64(&key)?.expect("listed key"))),
            }
        }
        let mcmc = McmcConfig {
            n_iter: kv.parse_value("mcmc.iterations")?.unwrap_or(d.n_iter),
            burn_in_fraction: kv.f64("mcmc.burn_in_fraction")?.unwrap_or(d.burn_in_fraction),
            seed,
            adapt: kv.bool("mcmc.adapt")?.unwrap_or(d.adapt),
            theta_scale: kv.f64_list("mcmc.scale.theta")?,
            sigma2_scale: kv.f64("mcmc.scale.sigma2")?.unwrap_or(d.sigma2_scale),
            kappa_d_scale: kv.f64("mcmc.scale.kappa_d")?.unwrap_or(d.kappa_d_scale),
            kappa_y_scale: kv.f64("mcmc.scale.kappa_y")?.unwrap_or(d.kappa_y_scale),
            fixed_sigma2,
            fixed_kappa_d,
            fixed_kappa_y,
            ..d
        };
        mcmc.validate()?;

        let cv_holdout = kv.f64("cv.holdout_fraction")?.unwrap_or(0.1);
        if !(cv_holdout > 0.0 && cv_holdout < 1.0) {
            return Err(Error::config("cv.holdout_fraction", "must lie in (0, 1)"));
        }
        let cv_rounds = kv.parse_value("cv.rounds")?.unwrap_or(10);

        let study = match kv.str("study") {
            None => None,
            Some(sel) => Some(Self::study(kv, &sel, &settings)?),
        };

        Ok(RunConfig {
            ensemble: kv.path("ensemble"),
            observation: kv.path("observation"),
            model: kv.path("model"),
            calibration: kv.path("calibration"),
            out: kv.path("out"),
            seed,
            level,
            settings,
            fit,
            theta_bounds,
            sigma2,
            kappa_d,
            kappa_y_shape,
            mcmc,
            fixed_theta,
            cv_holdout,
            cv_rounds,
            study,
            projection_table: kv.path("project.table"),
            projection_parameter: kv.str("project.parameter"),
        })
    }

    fn study(kv: &mut KeyValues, selector: &str, base: &LevelSettings) -> Result<StudyConfig> {
        let kind = StudyKind::parse(selector)?;
        let levels = match kv.str("study.levels") {
            None => Level::ALL.to_vec(),
            Some(v) => v
                .split(',')
                .map(|s| {
                    Level::parse(s.trim())
                        .ok_or_else(|| Error::config("study.levels", format!("unknown level `{}`", s.trim())))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let mut level_settings = BTreeMap::new();
        for l in Level::ALL {
            let p = format!("level.{l}");
            let s = LevelSettings {
                basis: basis_size(kv, &format!("{p}.emulator"), base.basis)?,
                discrepancy: discrepancy_settings(kv, &format!("{p}.discrepancy"), base.discrepancy.clone())?,
            };
            level_settings.insert(l, s);
        }
        let shape = kv.positive("study.prior_shape")?.unwrap_or(2.0);
        let priors = parse_prior_grid(kv, shape)?;
        let names = kv.with_prefix("study.truth");
        let truth = if names.is_empty() {
            None
        } else {
            let mut t = Vec::new();
            for n in names {
                let v = kv.f64(&format!("study.truth.{n}"))?.expect("listed key");
                t.push((n, v));
            }
            Some(t)
        };
        let residual_sources = match kv.str("study.residual_sources") {
            None => Vec::new(),
            Some(v) => v
                .split(';')
                .map(|run| {
                    run.split(',')
                        .map(|x| {
                            x.trim().parse::<f64>().map_err(|_| {
                                Error::config("study.residual_sources", format!("cannot parse `{}`", x.trim()))
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if truth.is_some() && residual_sources.is_empty() {
            return Err(Error::config(
                "study.residual_sources",
                "required when study.truth.* is given",
            ));
        }
        let subsample = match (kv.parse_value::<usize>("study.subsample.size")?, kv.f64("study.subsample.fraction")?) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "study.subsample.size",
                    "give either study.subsample.size or study.subsample.fraction",
                ))
            }
            (Some(0), None) => return Err(Error::config("study.subsample.size", "must be at least 1")),
            (Some(k), None) => SubsampleSize::Count(k),
            (None, Some(f)) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::config("study.subsample.fraction", "must lie in (0, 1]"))
            }
            (None, Some(f)) => SubsampleSize::Fraction(f),
            (None, None) => SubsampleSize::Fraction(0.05),
        };
        let repeats = kv.parse_value("study.subsample.repeats")?.unwrap_or(10);
        if repeats == 0 {
            return Err(Error::config("study.subsample.repeats", "must be at least 1"));
        }
        Ok(StudyConfig {
            kind,
            levels,
            level_settings,
            priors,
            truth,
            residual_sources,
            subsample,
            repeats,
        })
    }
}
