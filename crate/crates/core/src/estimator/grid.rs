use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{field_boundaries, ArrayGeometry};

/// Candidate locations for the spectrum search.
///
/// Directions are stored as direction cosines `u = sin(az) cos(el)` and
/// `v = sin(el)`, distances as inverse distances with `0` standing for the
/// far field. Points with `u^2 + v^2 >= 1` are invisible and skipped. Scan
/// order is inverse distance outermost, then `v`, then `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
}

fn check_axis(name: &str, xs: &[f64], lo: f64, hi: f64) -> Result<()> {
    if xs.is_empty() {
        return Err(invalid(format!("{name} axis is empty")));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(format!("{name} axis must be strictly increasing")));
    }
    if xs.iter().any(|x| !(*x >= lo && *x <= hi)) {
        return Err(invalid(format!("{name} axis leaves [{lo}, {hi}]")));
    }
    Ok(())
}

impl SearchGrid {
    pub fn new(u: Vec<f64>, v: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        check_axis("u", &u, -1.0, 1.0)?;
        check_axis("v", &v, -1.0, 1.0)?;
        check_axis("inverse distance", &rho, 0.0, f64::MAX)?;
        Ok(Self { u, v, rho })
    }

    /// Grid built from explicit angles and distances (`None` = far field).
    pub fn from_angles(azimuths: &[f64], elevations: &[f64], distances: &[Option<f64>]) -> Result<Self> {
        let mut u: Vec<f64> = Vec::new();
        let mut v: Vec<f64> = Vec::new();
        for el in elevations {
            v.push(el.sin());
            for az in azimuths {
                u.push(az.sin() * el.cos());
            }
        }
        let mut rho: Vec<f64> = distances.iter().map(|d| d.map_or(0.0, |r| 1.0 / r)).collect();
        for xs in [&mut u, &mut v, &mut rho] {
            xs.sort_by(f64::total_cmp);
            xs.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        }
        Self::new(u, v, rho)
    }

    /// Uniform direction-cosine lattice with `density` points per beamwidth
    /// along each axis, i.e. `u_i = -1 + 2 i / P` for `i = 1..P-1`.
    pub fn lattice(geom: &ArrayGeometry, density: usize, rho: Vec<f64>) -> Result<Self> {
        if density == 0 {
            return Err(invalid("grid density must be positive"));
        }
        let pu = lattice_size(geom.n_h as f64 * geom.delta_h / geom.wavelength, density);
        let pv = lattice_size(geom.n_v as f64 * geom.delta_v / geom.wavelength, density);
        Self::new(axis(pu), axis(pv), rho)
    }

    /// Far-field-only lattice.
    pub fn far_lattice(geom: &ArrayGeometry, density: usize) -> Result<Self> {
        Self::lattice(geom, density, vec![0.0])
    }

    pub fn is_far_only(&self) -> bool {
        self.rho.len() == 1 && self.rho[0] == 0.0
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rho.iter().flat_map(move |&r| {
            self.v
                .iter()
                .flat_map(move |&v| self.u.iter().filter(move |&&u| u * u + v * v < 1.0).map(move |&u| (u, v, r)))
        })
    }

    pub fn len(&self) -> usize {
        self.points().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lattice points per axis for an aperture of `aperture_wl` wavelengths.
pub(crate) fn lattice_size(aperture_wl: f64, density: usize) -> usize {
    let beams = (2.0 * aperture_wl - 1e-9).ceil().max(1.0) as usize;
    (density * beams).max(4)
}

pub(crate) fn axis(p: usize) -> Vec<f64> {
    (1..p).map(|i| -1.0 + 2.0 * i as f64 / p as f64).collect()
}

/// `count` inverse distances spaced uniformly between `1 / (10 d_FA)` and
/// `1 / d_B`, preceded by the far-field sentinel.
pub fn inverse_distances(geom: &ArrayGeometry, count: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0];
    if count == 0 {
        return Ok(out);
    }
    let fb = field_boundaries(geom);
    if !(fb.bjornson > 0.0) {
        return Err(invalid("near-field search needs an array with more than one element"));
    }
    let hi = 1.0 / fb.bjornson;
    let lo = (1.0 / (10.0 * fb.fraunhofer)).min(hi);
    if count == 1 {
        out.push(hi);
    } else {
        out.extend((0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64));
    }
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_matches_beamwidth() {
        let g = ArrayGeometry::new(32, 32, 0.5, 0.5, 1.0).unwrap();
        let grid = SearchGrid::far_lattice(&g, 8).unwrap();
        assert_eq!(grid.u.len(), 255);
        assert!(grid.u.contains(&0.0));
        assert!((grid.u[1] - grid.u[0] - 2.0 / 256.0).abs() < 1e-15);
        assert!(grid.points().all(|(u, v, _)| u * u + v * v < 1.0));
    }

    #[test]
    fn inverse_distances_span_field_regions() {
        let g = ArrayGeometry::at_frequency(32, 32, 28e9, 2.0).unwrap();
        let fb = field_boundaries(&g);
        let rho = inverse_distances(&g, 24).unwrap();
        assert_eq!(rho.len(), 25);
        assert_eq!(rho[0], 0.0);
        assert!((rho[24] - 1.0 / fb.bjornson).abs() < 1e-12);
        assert!((rho[1] - 1.0 / (10.0 * fb.fraunhofer)).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsorted_axes() {
        assert!(SearchGrid::new(vec![0.2, 0.1], vec![0.0], vec![0.0]).is_err());
        assert!(SearchGrid::new(vec![], vec![0.0], vec![0.0]).is_err());
        assert!(SearchGrid::new(vec![0.0], vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn scan_order_is_distance_then_rows() {
        let grid = SearchGrid::new(vec![-0.5, 0.5], vec![-0.1, 0.1], vec![0.0, 0.5]).unwrap();
        let pts: Vec<_> = grid.points().collect();
        assert_eq!(pts[0], (-0.5, -0.1, 0.0));
        assert_eq!(pts[1], (0.5, -0.1, 0.0));
        assert_eq!(pts[2], (-0.5, 0.1, 0.0));
        assert_eq!(pts[4], (-0.5, -0.1, 0.5));
    }
}
