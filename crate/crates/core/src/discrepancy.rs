//! Kernel-convolution discrepancy basis: exponential kernels anchored on a
//! regular knot grid, with great-circle distance along the surface and
//! absolute separation in depth, followed by an SVD truncation.

use std::fs::{self, File};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::GridSpec;
use crate::linalg::{count_for_fraction, SortedSvd};
use crate::pc_emulator::{read_matrix_csv, write_matrix_csv};

pub const EARTH_RADIUS_KM: f64 = 6378.0;
pub const DEFAULT_PHI_SURFACE_KM: f64 = 4800.0;
pub const DEFAULT_PHI_DEPTH_M: f64 = 3000.0;

/// Great-circle distance in km between two `(lon, lat)` points in degrees.
pub fn geodesic(s1: (f64, f64), s2: (f64, f64)) -> f64 {
    let (lon1, lat1) = (s1.0.to_radians(), s1.1.to_radians());
    let (lon2, lat2) = (s2.0.to_radians(), s2.1.to_radians());
    let c = lat1.sin() * lat2.sin() + lat1.cos() * lat2.cos() * (lon1 - lon2).abs().cos();
    EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    /// `(lon, lat, depth)` with longitude varying fastest, then latitude.
    pub knots: Vec<[f64; 3]>,
    pub lon_step: f64,
    pub lat_step: f64,
    pub depth_step: f64,
    /// Knot counts along (lon, lat, depth).
    pub shape: (usize, usize, usize),
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

fn axis_knots(axis: &[f64], step: f64) -> Vec<f64> {
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let extent = hi - lo;
    if extent <= 0.0 || step >= extent * (1.0 - 1e-9) {
        return vec![lo];
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let x = lo + k as f64 * step;
        if x > hi + 1e-9 * extent {
            break;
        }
        out.push(x);
        k += 1;
    }
    let last = *out.last().unwrap();
    if hi - last > 0.5 * step {
        out.push(hi);
    }
    out
}

/// Longitudes that are evenly spaced and close the full circle.
fn is_periodic(lons: &[f64]) -> bool {
    if lons.len() < 2 {
        return false;
    }
    let d = lons[1] - lons[0];
    let even = lons.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-6 * d);
    even && (lons.len() as f64 * d - 360.0).abs() <= 1e-6 * 360.0
}

/// Regular knot grid anchored at the domain's minimum corner.
///
/// Along each axis knots sit at `min + k·step` up to the maximum; if the
/// uncovered remainder exceeds half a step a final knot is placed at the
/// maximum. A step at least as large as the extent gives a single knot at the
/// minimum. A longitude axis that wraps the globe gets `ceil(360 / step)`
/// evenly spaced knots.
pub fn make_knot_grid(spec: &GridSpec, lat_step: f64, lon_step: f64, depth_step: f64) -> Result<KnotSet> {
    for (name, s) in [("lat_step", lat_step), ("lon_step", lon_step), ("depth_step", depth_step)] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {s}")));
        }
    }
    let lons = if is_periodic(&spec.lons) {
        let n = ((360.0 / lon_step) - 1e-9).ceil().max(1.0) as usize;
        (0..n).map(|k| spec.lons[0] + k as f64 * lon_step).collect()
    } else {
        axis_knots(&spec.lons, lon_step)
    };
    let lats = axis_knots(&spec.lats, lat_step);
    let depths = axis_knots(&spec.depths, depth_step);
    let mut knots = Vec::with_capacity(lons.len() * lats.len() * depths.len());
    for &d in &depths {
        for &la in &lats {
            for &lo in &lons {
                knots.push([lo, la, d]);
            }
        }
    }
    Ok(KnotSet {
        knots,
        lon_step,
        lat_step,
        depth_step,
        shape: (lons.len(), lats.len(), depths.len()),
    })
}

/// `n × J_d` kernel matrix `exp(-g/φ_s - |Δdepth|/φ_d)`.
pub fn build_kernel(
    coords: &[[f64; 3]],
    knots: &[[f64; 3]],
    phi_surface: f64,
    phi_depth: f64,
) -> Result<DMatrix<f64>> {
    if !(phi_surface > 0.0 && phi_depth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kernel ranges must be positive, got surface {phi_surface} km and depth {phi_depth} m"
        )));
    }
    let rows: Vec<Vec<f64>> = coords
        .par_iter()
        .map(|s| {
            knots
                .iter()
                .map(|a| {
                    let g = geodesic((s[0], s[1]), (a[0], a[1]));
                    (-g / phi_surface - (s[2] - a[2]).abs() / phi_depth).exp()
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(coords.len(), knots.len(), |i, j| rows[i][j]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisScaling {
    /// Left singular vectors multiplied by their singular values.
    Singular,
    /// Orthonormal left singular vectors.
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TruncationSize {
    Count(usize),
    /// Smallest count whose share of the squared singular values reaches
    /// the fraction.
    Fraction(f64),
}

/// Leading left-singular basis of `k_d`; returns the basis and the full list
/// of singular values.
pub fn truncate_basis(
    k_d: &DMatrix<f64>,
    size: TruncationSize,
    scaling: BasisScaling,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, jd) = k_d.shape();
    if n == 0 || jd == 0 {
        return Err(Error::EmptyDomain);
    }
    let svd = SortedSvd::new(k_d);
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let rank = svd.rank(n, jd);
    let count = match size {
        TruncationSize::Count(c) => c,
        TruncationSize::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidInput(format!("variance fraction {f} outside (0, 1]")));
            }
            let w: Vec<f64> = s.iter().map(|x| x * x).collect();
            count_for_fraction(&w, f)
        }
    };
    if count == 0 || count > n.min(jd) {
        return Err(Error::InvalidInput(format!(
            "discrepancy component count {count} outside 1..={}",
            n.min(jd)
        )));
    }
    if count > rank {
        return Err(Error::RankDeficient { rank, requested: count });
    }
    let basis = DMatrix::from_fn(n, count, |i, j| match scaling {
        BasisScaling::Singular => svd.u[(i, j)] * s[j],
        BasisScaling::Unit => svd.u[(i, j)],
    });
    Ok((basis, s))
}

/// Truncated discrepancy basis on a fixed set of locations.
#[derive(Clone, Debug)]
pub struct DiscrepancyBasis {
    pub knots: KnotSet,
    pub phi_surface: f64,
    pub phi_depth: f64,
    pub scaling: BasisScaling,
    /// `n × J_d^PC`.
    pub k_d_pc: DMatrix<f64>,
    /// All singular values of the untruncated kernel matrix.
    pub singular_values: Vec<f64>,
}

impl DiscrepancyBasis {
    pub fn build(
        coords: &[[f64; 3]],
        knots: KnotSet,
        phi_surface: f64,
        phi_depth: f64,
        size: TruncationSize,
        scaling: BasisScaling,
    ) -> Result<Self> {
        let k_d = build_kernel(coords, &knots.knots, phi_surface, phi_depth)?;
        let (k_d_pc, singular_values) = truncate_basis(&k_d, size, scaling)?;
        Ok(DiscrepancyBasis {
            knots,
            phi_surface,
            phi_depth,
            scaling,
            k_d_pc,
            singular_values,
        })
    }

    pub fn n_components(&self) -> usize {
        self.k_d_pc.ncols()
    }

    pub fn n_locations(&self) -> usize {
        self.k_d_pc.nrows()
    }

    /// Share of the squared singular values kept by the truncation.
    pub fn explained_fraction(&self) -> f64 {
        let tot: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let kept: f64 = self.singular_values[..self.n_components()].iter().map(|s| s * s).sum();
        kept / tot
    }

    /// Restrict to a subset of locations (rows), keeping the columns.
    pub fn select_locations(&self, rows: &[usize]) -> DiscrepancyBasis {
        let k = self.k_d_pc.select_rows(rows);
        DiscrepancyBasis {
            k_d_pc: k,
            ..self.clone()
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = DiscrepancyManifest {
            format_version: 1,
            n_locations: self.n_locations(),
            n_components: self.n_components(),
            n_knots: self.knots.len(),
            knot_shape: self.knots.shape,
            lon_step: self.knots.lon_step,
            lat_step: self.knots.lat_step,
            depth_step: self.knots.depth_step,
            phi_surface_km: self.phi_surface,
            phi_depth_m: self.phi_depth,
            scaling: self.scaling,
            singular_values: self.singular_values.clone(),
        };
        let path = dir.join("manifest.json");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        let header: Vec<String> = ["lon", "lat", "depth"].map(String::from).to_vec();
        let rows: Vec<Vec<f64>> = self.knots.knots.iter().map(|k| k.to_vec()).collect();
        write_matrix_csv(&dir.join("knots.csv"), &header, &rows)?;
        let header: Vec<String> = (1..=self.n_components()).map(|j| format!("d{j}")).collect();
        let rows: Vec<Vec<f64>> = (0..self.n_locations())
            .map(|i| self.k_d_pc.row(i).iter().copied().collect())
            .collect();
        write_matrix_csv(&dir.join("kd_pc.csv"), &header, &rows)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let m: DiscrepancyManifest = serde_json::from_reader(f)?;
        let knots: Vec<[f64; 3]> = read_matrix_csv(&dir.join("knots.csv"), 3)?
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        if knots.len() != m.n_knots {
            return Err(Error::DimensionMismatch {
                context: "knots.csv rows",
                expected: m.n_knots,
                got: knots.len(),
            });
        }
        let rows = read_matrix_csv(&dir.join("kd_pc.csv"), m.n_components)?;
        if rows.len() != m.n_locations {
            return Err(Error::DimensionMismatch {
                context: "kd_pc.csv rows",
                expected: m.n_locations,
                got: rows.len(),
            });
        }
        Ok(DiscrepancyBasis {
            knots: KnotSet {
                knots,
                lon_step: m.lon_step,
                lat_step: m.lat_step,
                depth_step: m.depth_step,
                shape: m.knot_shape,
            },
            phi_surface: m.phi_surface_km,
            phi_depth: m.phi_depth_m,
            scaling: m.scaling,
            k_d_pc: DMatrix::from_fn(m.n_locations, m.n_components, |i, j| rows[i][j]),
            singular_values: m.singular_values,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DiscrepancyManifest {
    format_version: u32,
    n_locations: usize,
    n_components: usize,
    n_knots: usize,
    knot_shape: (usize, usize, usize),
    lon_step: f64,
    lat_step: f64,
    depth_step: f64,
    phi_surface_km: f64,
    phi_depth_m: f64,
    scaling: BasisScaling,
    singular_values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn uvic_like() -> GridSpec {
        let lons: Vec<f64> = (0..100).map(|k| 1.8 + 3.6 * k as f64).collect();
        let lats: Vec<f64> = (0..77).map(|k| -79.2 + 1.8 * k as f64).collect();
        let depths = vec![
            17.5, 82.5, 177.5, 302.5, 460.0, 657.5, 890.0, 1157.5, 1457.5, 1790.0, 2155.0, 2550.0,
            2975.0,
        ];
        GridSpec::uniform(lons, lats, depths).unwrap()
    }

    fn desk_grid() -> GridSpec {
        let lons: Vec<f64> = (0..20).map(|k| 18.0 * k as f64).collect();
        let lats: Vec<f64> = (0..20).map(|k| -76.0 + 7.0 * k as f64).collect();
        GridSpec::uniform(lons, lats, vec![100.0, 500.0, 1000.0, 2000.0, 3000.0]).unwrap()
    }

    #[test]
    fn geodesic_examples() {
        assert_eq!(geodesic((12.0, -33.0), (12.0, -33.0)), 0.0);
        let q = geodesic((0.0, 0.0), (90.0, 0.0));
        assert!((q - 6378.0 * PI / 2.0).abs() < 1e-9);
        let a = geodesic((30.0, 20.0), (210.0, -20.0));
        assert!((a - 6378.0 * PI).abs() < 1e-6);
        let (x, y) = ((10.0, 45.0), (-120.0, -10.0));
        assert_eq!(geodesic(x, y), geodesic(y, x));
    }

    #[test]
    fn uvic_like_grid_gives_800_knots() {
        let k = make_knot_grid(&uvic_like(), 15.6, 36.0, 429.0).unwrap();
        assert_eq!(k.shape, (10, 10, 8));
        assert_eq!(k.len(), 800);
    }

    #[test]
    fn desk_grid_gives_32_knots() {
        let k = make_knot_grid(&desk_grid(), 40.0, 90.0, 2000.0).unwrap();
        assert_eq!(k.shape, (4, 4, 2));
        assert_eq!(k.len(), 32);
    }

    #[test]
    fn step_equal_to_extent_gives_one_knot() {
        let g = GridSpec::uniform(vec![0.0, 10.0, 20.0], vec![-10.0, 0.0], vec![5.0, 50.0]).unwrap();
        let k = make_knot_grid(&g, 10.0, 20.0, 45.0).unwrap();
        assert_eq!(k.shape, (1, 1, 1));
        assert_eq!(k.knots[0], [0.0, -10.0, 5.0]);
    }

    #[test]
    fn knots_inside_bounding_box() {
        let g = desk_grid();
        for (a, b, c) in [(13.0, 25.0, 700.0), (40.0, 90.0, 2000.0), (7.0, 18.0, 300.0)] {
            let k = make_knot_grid(&g, a, b, c).unwrap();
            for kn in &k.knots {
                assert!(kn[0] >= g.lons[0] && kn[0] <= 360.0);
                assert!(kn[1] >= g.lats[0] && kn[1] <= *g.lats.last().unwrap());
                assert!(kn[2] >= g.depths[0] && kn[2] <= *g.depths.last().unwrap());
            }
        }
    }

    #[test]
    fn non_positive_step_rejected() {
        assert!(make_knot_grid(&desk_grid(), 0.0, 10.0, 10.0).is_err());
        assert!(make_knot_grid(&desk_grid(), 10.0, -1.0, 10.0).is_err());
    }

    #[test]
    fn kernel_examples() {
        let knots = [[0.0, 0.0, 100.0]];
        let phi_s = 4800.0;
        // a point one range away along the equator
        let dlon = (phi_s / EARTH_RADIUS_KM).to_degrees();
        let coords = [[0.0, 0.0, 100.0], [dlon, 0.0, 100.0], [0.0, 0.0, 3100.0]];
        let k = build_kernel(&coords, &knots, phi_s, 3000.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(1, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((k[(2, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!(build_kernel(&coords, &knots, 0.0, 1.0).is_err());
    }

    #[test]
    fn kernel_monotone_in_each_distance() {
        let knots = [[0.0, 0.0, 0.0]];
        let mut prev = 2.0;
        for i in 0..20 {
            let k = build_kernel(&[[i as f64 * 9.0, 0.0, 0.0]], &knots, 4800.0, 3000.0).unwrap();
            assert!(k[(0, 0)] < prev);
            prev = k[(0, 0)];
        }
        let mut prev = 2.0;
        for i in 0..20 {
            let k = build_kernel(&[[0.0, 0.0, i as f64 * 200.0]], &knots, 4800.0, 3000.0).unwrap();
            assert!(k[(0, 0)] < prev);
            prev = k[(0, 0)];
        }
    }

    fn coords_of(g: &GridSpec) -> Vec<[f64; 3]> {
        (0..g.n_cells()).map(|k| g.coordinates(g.cell_index(k))).collect()
    }

    #[test]
    fn full_rank_truncation_spans_kernel_columns() {
        let g = desk_grid();
        let knots = make_knot_grid(&g, 40.0, 90.0, 2000.0).unwrap();
        let coords = coords_of(&g);
        let k_d = build_kernel(&coords, &knots.knots, 4800.0, 3000.0).unwrap();
        let rank = SortedSvd::new(&k_d).rank(k_d.nrows(), k_d.ncols());
        let (b, _) = truncate_basis(&k_d, TruncationSize::Count(rank), BasisScaling::Singular).unwrap();
        let proj = |a: &DMatrix<f64>| {
            let g = a.tr_mul(a);
            a * g.pseudo_inverse(1e-14).unwrap() * a.transpose()
        };
        let d = (proj(&k_d) - proj(&b)).amax();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn fraction_selection_matches_scan() {
        let g = desk_grid();
        let knots = make_knot_grid(&g, 13.0, 25.0, 700.0).unwrap();
        let k_d = build_kernel(&coords_of(&g), &knots.knots, 2000.0, 800.0).unwrap();
        let (b, s) = truncate_basis(&k_d, TruncationSize::Fraction(0.95), BasisScaling::Singular).unwrap();
        // oracle: eigenvalues of K_dᵀK_d
        let mut ev: Vec<f64> = k_d.tr_mul(&k_d).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let tot: f64 = ev.iter().sum();
        let mut acc = 0.0;
        let mut want = 0;
        for (i, e) in ev.iter().enumerate() {
            acc += e;
            if acc / tot >= 0.95 {
                want = i + 1;
                break;
            }
        }
        assert_eq!(b.ncols(), want);
        assert_eq!(s.len(), knots.len());
    }

    #[test]
    fn truncated_columns_orthogonal() {
        let g = desk_grid();
        let knots = make_knot_grid(&g, 40.0, 90.0, 2000.0).unwrap();
        let k_d = build_kernel(&coords_of(&g), &knots.knots, 4800.0, 3000.0).unwrap();
        let (b, s) = truncate_basis(&k_d, TruncationSize::Count(10), BasisScaling::Singular).unwrap();
        let gram = b.tr_mul(&b);
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { s[i] * s[i] } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-8 * s[0] * s[0]);
            }
        }
        let (u, _) = truncate_basis(&k_d, TruncationSize::Count(10), BasisScaling::Unit).unwrap();
        assert!((u.tr_mul(&u) - DMatrix::identity(10, 10)).amax() < 1e-10);
    }

    #[test]
    fn truncation_errors() {
        let k = DMatrix::from_fn(6, 3, |i, _| i as f64 + 1.0); // rank 1
        assert!(matches!(
            truncate_basis(&k, TruncationSize::Count(2), BasisScaling::Unit),
            Err(Error::RankDeficient { rank: 1, requested: 2 })
        ));
        assert!(truncate_basis(&k, TruncationSize::Count(0), BasisScaling::Unit).is_err());
        assert!(truncate_basis(&k, TruncationSize::Count(4), BasisScaling::Unit).is_err());
    }

    #[test]
    fn knot_order_does_not_change_truncated_span() {
        let g = desk_grid();
        let knots = make_knot_grid(&g, 40.0, 90.0, 2000.0).unwrap();
        let coords = coords_of(&g);
        let mut rev = knots.knots.clone();
        rev.reverse();
        let a = build_kernel(&coords, &knots.knots, 4800.0, 3000.0).unwrap();
        let b = build_kernel(&coords, &rev, 4800.0, 3000.0).unwrap();
        let (ta, _) = truncate_basis(&a, TruncationSize::Count(8), BasisScaling::Singular).unwrap();
        let (tb, _) = truncate_basis(&b, TruncationSize::Count(8), BasisScaling::Singular).unwrap();
        assert!((&ta * ta.transpose() - &tb * tb.transpose()).amax() < 1e-8);
    }

    #[test]
    fn save_load_roundtrip() {
        let g = desk_grid();
        let knots = make_knot_grid(&g, 40.0, 90.0, 2000.0).unwrap();
        let d = DiscrepancyBasis::build(
            &coords_of(&g),
            knots,
            4800.0,
            3000.0,
            TruncationSize::Count(6),
            BasisScaling::Singular,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = DiscrepancyBasis::load(dir.path()).unwrap();
        assert_eq!(back.k_d_pc, d.k_d_pc);
        assert_eq!(back.knots, d.knots);
        assert_eq!(back.singular_values, d.singular_values);
    }
}
