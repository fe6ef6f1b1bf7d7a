//! Masked 3-D fields on a rectilinear lon/lat/depth grid.
//!
//! Cells are stored depth-major, then latitude, then longitude; the same
//! ordering defines the layout of every vectorised field, so matrices built
//! from different fields line up row for row.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid coordinates plus per-cell volume weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Degrees east, ascending.
    pub lons: Vec<f64>,
    /// Degrees north, ascending.
    pub lats: Vec<f64>,
    /// Metres below the surface, ascending.
    pub depths: Vec<f64>,
    /// One weight per cell in canonical order.
    pub cell_volumes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub lon: usize,
    pub lat: usize,
    pub depth: usize,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite())
}

impl GridSpec {
    pub fn new(
        lons: Vec<f64>,
        lats: Vec<f64>,
        depths: Vec<f64>,
        cell_volumes: Vec<f64>,
    ) -> Result<Self> {
        for (name, axis) in [("lons", &lons), ("lats", &lats), ("depths", &depths)] {
            if axis.is_empty() {
                return Err(Error::InvalidInput(format!("grid axis `{name}` is empty")));
            }
            if !strictly_increasing(axis) {
                return Err(Error::InvalidInput(format!(
                    "grid axis `{name}` must be strictly increasing"
                )));
            }
        }
        if lats.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(Error::InvalidInput("latitude outside [-90, 90]".into()));
        }
        let n = lons.len() * lats.len() * depths.len();
        if cell_volumes.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cell volumes",
                expected: n,
                got: cell_volumes.len(),
            });
        }
        Ok(GridSpec {
            lons,
            lats,
            depths,
            cell_volumes,
        })
    }

    /// Grid with every cell weighted 1.
    pub fn uniform(lons: Vec<f64>, lats: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        let n = lons.len() * lats.len() * depths.len();
        Self::new(lons, lats, depths, vec![1.0; n])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.lons.len(), self.lats.len(), self.depths.len())
    }

    pub fn n_cells(&self) -> usize {
        self.lons.len() * self.lats.len() * self.depths.len()
    }

    #[inline]
    pub fn flat_index(&self, c: CellIndex) -> usize {
        (c.depth * self.lats.len() + c.lat) * self.lons.len() + c.lon
    }

    #[inline]
    pub fn cell_index(&self, flat: usize) -> CellIndex {
        let nlon = self.lons.len();
        let nlat = self.lats.len();
        CellIndex {
            lon: flat % nlon,
            lat: (flat / nlon) % nlat,
            depth: flat / (nlon * nlat),
        }
    }

    /// `(lon, lat, depth)` of a cell.
    pub fn coordinates(&self, c: CellIndex) -> [f64; 3] {
        [self.lons[c.lon], self.lats[c.lat], self.depths[c.depth]]
    }
}

/// A scalar field with a validity mask (true = ocean).
#[derive(Clone, Debug)]
pub struct GridField {
    spec: Arc<GridSpec>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl GridField {
    pub fn new(spec: Arc<GridSpec>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = spec.n_cells();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                context: "field values",
                expected: n,
                got: values.len(),
            });
        }
        if mask.len() != n {
            return Err(Error::DimensionMismatch {
                context: "field mask",
                expected: n,
                got: mask.len(),
            });
        }
        for k in 0..n {
            if mask[k] {
                if !values[k].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite value at unmasked cell {:?}",
                        spec.cell_index(k)
                    )));
                }
                if !(spec.cell_volumes[k] > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "non-positive volume at unmasked cell {:?}",
                        spec.cell_index(k)
                    )));
                }
            }
        }
        Ok(GridField { spec, values, mask })
    }

    /// Field with every cell valid.
    pub fn dense(spec: Arc<GridSpec>, values: Vec<f64>) -> Result<Self> {
        let n = spec.n_cells();
        Self::new(spec, values, vec![true; n])
    }

    pub fn spec(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, c: CellIndex) -> Option<f64> {
        let k = self.spec.flat_index(c);
        self.mask[k].then(|| self.values[k])
    }

    /// Same grid and same mask.
    pub fn same_support(&self, other: &GridField) -> bool {
        (Arc::ptr_eq(&self.spec, &other.spec) || *self.spec == *other.spec)
            && self.mask == other.mask
    }

    /// Elementwise combination on a shared support.
    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        if !self.same_support(other) {
            return Err(Error::InvalidInput(
                "fields are not on the same grid and mask".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .zip(&self.mask)
            .map(|((&a, &b), &m)| if m { f(a, b) } else { f64::NAN })
            .collect();
        Ok(GridField {
            spec: self.spec.clone(),
            values,
            mask: self.mask.clone(),
        })
    }

    /// Volume-weighted mean over all unmasked cells.
    pub fn weighted_mean(&self) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..self.values.len() {
            if self.mask[k] {
                num += self.spec.cell_volumes[k] * self.values[k];
                den += self.spec.cell_volumes[k];
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

/// Unmasked values of a field in canonical order.
#[derive(Clone, Debug)]
pub struct FieldVector {
    pub values: Vec<f64>,
    pub locations: Vec<CellIndex>,
    pub spec: Arc<GridSpec>,
}

impl FieldVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coordinates(&self) -> Vec<[f64; 3]> {
        self.locations
            .iter()
            .map(|&c| self.spec.coordinates(c))
            .collect()
    }

    /// Keep the entries at `indices` (positions into this vector).
    pub fn select(&self, indices: &[usize]) -> FieldVector {
        FieldVector {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            locations: indices.iter().map(|&i| self.locations[i]).collect(),
            spec: self.spec.clone(),
        }
    }

    pub fn same_locations(&self, other: &FieldVector) -> bool {
        self.locations == other.locations
            && (Arc::ptr_eq(&self.spec, &other.spec) || *self.spec == *other.spec)
    }
}

pub fn vectorize(field: &GridField) -> Result<FieldVector> {
    let mut values = Vec::new();
    let mut locations = Vec::new();
    for (k, &m) in field.mask.iter().enumerate() {
        if m {
            values.push(field.values[k]);
            locations.push(field.spec.cell_index(k));
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(FieldVector {
        values,
        locations,
        spec: field.spec.clone(),
    })
}

/// Inverse of [`vectorize`]; cells not listed in the vector are masked.
pub fn devectorize(v: &FieldVector) -> Result<GridField> {
    let n = v.spec.n_cells();
    let mut values = vec![f64::NAN; n];
    let mut mask = vec![false; n];
    for (&c, &x) in v.locations.iter().zip(&v.values) {
        let k = v.spec.flat_index(c);
        values[k] = x;
        mask[k] = true;
    }
    GridField::new(v.spec.clone(), values, mask)
}

fn collapse(field: &GridField, lon: bool, lat: bool) -> Result<GridField> {
    let spec = &field.spec;
    let (nlon, nlat, ndep) = spec.shape();
    let mid = |axis: &[f64]| 0.5 * (axis[0] + axis[axis.len() - 1]);
    let out_lons = if lon { vec![mid(&spec.lons)] } else { spec.lons.clone() };
    let out_lats = if lat { vec![mid(&spec.lats)] } else { spec.lats.clone() };
    let (olon, olat) = (out_lons.len(), out_lats.len());
    let m = olon * olat * ndep;
    // weighted deviations from the first value in each slab, so that
    // constant slabs come back exactly
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    let mut base = vec![f64::NAN; m];
    for d in 0..ndep {
        for la in 0..nlat {
            for lo in 0..nlon {
                let k = spec.flat_index(CellIndex { lon: lo, lat: la, depth: d });
                if !field.mask[k] {
                    continue;
                }
                let oi = (d * olat + if lat { 0 } else { la }) * olon + if lon { 0 } else { lo };
                let w = spec.cell_volumes[k];
                if base[oi].is_nan() {
                    base[oi] = field.values[k];
                }
                num[oi] += w * (field.values[k] - base[oi]);
                den[oi] += w;
            }
        }
    }
    let mask: Vec<bool> = den.iter().map(|&w| w > 0.0).collect();
    let values = (0..m)
        .map(|i| if den[i] > 0.0 { base[i] + num[i] / den[i] } else { f64::NAN })
        .collect();
    let out_spec = GridSpec::new(out_lons, out_lats, spec.depths.clone(), den)?;
    GridField::new(Arc::new(out_spec), values, mask)
}

/// Volume-weighted mean over longitude; the result is a latitude × depth
/// field on a single-longitude grid whose cell volumes are the summed
/// volumes of the collapsed cells.
pub fn zonal_mean(field: &GridField) -> Result<GridField> {
    collapse(field, true, false)
}

/// Volume-weighted mean over longitude and latitude at each depth.
pub fn vertical_mean(field: &GridField) -> Result<GridField> {
    collapse(field, true, true)
}

/// Sorted positions of a simple random sample of `k` out of `n`.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot sample {k} locations from {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Simple random sample of unmasked locations, returned in canonical order.
pub fn random_subsample(field: &GridField, k: usize, seed: u64) -> Result<FieldVector> {
    let v = vectorize(field)?;
    let idx = subsample_indices(v.len(), k, seed)?;
    Ok(v.select(&idx))
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Deserialize)]
struct FieldRow {
    lon: f64,
    lat: f64,
    depth: f64,
    #[serde(default)]
    volume: Option<f64>,
    value: f64,
}

fn axis_position(axis: &[f64], x: f64) -> usize {
    axis.binary_search_by(|a| a.total_cmp(&x))
        .expect("coordinate drawn from the axis itself")
}

/// Read a `lon,lat,depth,volume,value` CSV. Combinations of coordinates that
/// do not appear are masked (with unit volume); a missing `volume` column
/// means unit weights.
pub fn read_field_csv(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let rows: Vec<FieldRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let axis = |f: &dyn Fn(&FieldRow) -> f64| -> Vec<f64> {
        let set: BTreeSet<u64> = rows.iter().map(|r| f(r).to_bits()).collect();
        let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let lons = axis(&|r| r.lon);
    let lats = axis(&|r| r.lat);
    let depths = axis(&|r| r.depth);
    let n = lons.len() * lats.len() * depths.len();
    let mut volumes = vec![1.0; n];
    let mut values = vec![f64::NAN; n];
    let mut mask = vec![false; n];
    let mut spec = GridSpec::new(lons, lats, depths, vec![1.0; n])?;
    for r in &rows {
        let c = CellIndex {
            lon: axis_position(&spec.lons, r.lon),
            lat: axis_position(&spec.lats, r.lat),
            depth: axis_position(&spec.depths, r.depth),
        };
        let k = spec.flat_index(c);
        if mask[k] {
            return Err(Error::InvalidInput(format!(
                "{}: duplicate row for ({}, {}, {})",
                path.display(),
                r.lon,
                r.lat,
                r.depth
            )));
        }
        mask[k] = true;
        values[k] = r.value;
        if let Some(v) = r.volume {
            volumes[k] = v;
        }
    }
    spec.cell_volumes = volumes;
    GridField::new(Arc::new(spec), values, mask)
}

pub fn write_field_csv(field: &GridField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["lon", "lat", "depth", "volume", "value"])?;
    for k in 0..field.values.len() {
        if !field.mask[k] {
            continue;
        }
        let [lon, lat, depth] = field.spec.coordinates(field.spec.cell_index(k));
        w.write_record(&[
            lon.to_string(),
            lat.to_string(),
            depth.to_string(),
            field.spec.cell_volumes[k].to_string(),
            field.values[k].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Ensemble manifest: parameter names plus one entry per simulator run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub parameters: Vec<String>,
    pub runs: Vec<RunEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub theta: Vec<f64>,
    /// Field file, relative to the manifest's directory unless absolute.
    pub field: PathBuf,
}

impl EnsembleManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: EnsembleManifest = serde_json::from_reader(file)?;
        for (i, r) in m.runs.iter().enumerate() {
            if r.theta.len() != m.parameters.len() {
                return Err(Error::InvalidInput(format!(
                    "run {i} has {} parameter values, manifest names {}",
                    r.theta.len(),
                    m.parameters.len()
                )));
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// Load every run's field, checking they share one grid and mask.
    pub fn load_fields(&self, manifest_path: impl AsRef<Path>) -> Result<Vec<GridField>> {
        let base = manifest_path
            .as_ref()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut fields: Vec<GridField> = Vec::with_capacity(self.runs.len());
        for r in &self.runs {
            let p = if r.field.is_absolute() {
                r.field.clone()
            } else {
                base.join(&r.field)
            };
            let mut f = read_field_csv(&p)?;
            if let Some(first) = fields.first() {
                if !first.same_support(&f) {
                    return Err(Error::InvalidInput(format!(
                        "{} is not on the same grid and mask as the first run",
                        p.display()
                    )));
                }
                f.spec = first.spec.clone();
            }
            fields.push(f);
        }
        Ok(fields)
    }
}
