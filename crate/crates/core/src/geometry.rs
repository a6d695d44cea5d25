//! Planar array geometry and array response vectors.
//!
//! Elements are indexed row by row starting at the reference element, which
//! sits at the origin. Element `n` (1-based) lies at horizontal offset
//! `(n_H - 1) * delta_h` and vertical offset `(n_V - 1) * delta_v`, with
//! `n_H = mod(n - 1, N_H) + 1` and `n_V = ceil(n / N_H)`.
//!
//! A source at distance `r`, azimuth `az` and elevation `el` sits at
//! `r * (cos az cos el, sin az cos el, sin el)`. Response entries are
//! `exp(+j k (r - r_n))`; the far-field response is the `r -> inf` limit of
//! the same expression so the two models agree at large distances.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform planar array layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    /// Elements per row.
    pub n_h: usize,
    /// Elements per column.
    pub n_v: usize,
    pub delta_h: f64,
    pub delta_v: f64,
    pub wavelength: f64,
}

/// Offsets of one element from the reference element, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementOffset {
    pub i: f64,
    pub k: f64,
}

impl ArrayGeometry {
    pub fn new(n_h: usize, n_v: usize, delta_h: f64, delta_v: f64, wavelength: f64) -> Result<Self> {
        let geom = Self { n_h, n_v, delta_h, delta_v, wavelength };
        geom.validate()?;
        Ok(geom)
    }

    /// Square-lattice array at carrier `frequency_hz` with spacing `wavelength / spacing_divisor`.
    pub fn at_frequency(n_h: usize, n_v: usize, frequency_hz: f64, spacing_divisor: f64) -> Result<Self> {
        if !(frequency_hz > 0.0) || !(spacing_divisor > 0.0) {
            return Err(invalid("frequency and spacing divisor must be positive"));
        }
        let wavelength = SPEED_OF_LIGHT / frequency_hz;
        let delta = wavelength / spacing_divisor;
        Self::new(n_h, n_v, delta, delta, wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 || self.n_v == 0 {
            return Err(invalid("element counts must be at least 1"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.delta_h) || !positive(self.delta_v) || !positive(self.wavelength) {
            return Err(invalid("spacings and wavelength must be positive and finite"));
        }
        Ok(())
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// True when both spacings are at most half a wavelength, which makes the
    /// array response unique in its parameters.
    pub fn is_unambiguous(&self) -> bool {
        let half = 0.5 * self.wavelength * (1.0 + 1e-12);
        self.delta_h <= half && self.delta_v <= half
    }

    /// Same spacing and wavelength with a different element count.
    pub fn with_size(&self, n_h: usize, n_v: usize) -> Self {
        Self { n_h, n_v, ..*self }
    }

    /// Offset of element `n` (1-based).
    pub fn element_offset(&self, n: usize) -> Result<ElementOffset> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("element index {n} outside 1..={}", self.len())));
        }
        Ok(self.offset0(n - 1))
    }

    /// Offset of the element at zero-based index `idx`.
    pub(crate) fn offset0(&self, idx: usize) -> ElementOffset {
        let col = idx % self.n_h;
        let row = idx / self.n_h;
        ElementOffset { i: col as f64 * self.delta_h, k: row as f64 * self.delta_v }
    }

    pub fn offsets(&self) -> impl Iterator<Item = ElementOffset> + '_ {
        (0..self.len()).map(move |idx| self.offset0(idx))
    }

    /// Period of the response in direction-cosine space along each axis.
    pub(crate) fn alias_periods(&self) -> (f64, f64) {
        (self.wavelength / self.delta_h, self.wavelength / self.delta_v)
    }
}

/// Location of a point source relative to the reference element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPoint {
    pub azimuth: f64,
    pub elevation: f64,
    /// `None` is the far-field sentinel.
    pub distance: Option<f64>,
}

fn in_visible(angle: f64) -> bool {
    angle.is_finite() && (-FRAC_PI_2..FRAC_PI_2).contains(&angle)
}

impl ChannelPoint {
    pub fn far(azimuth: f64, elevation: f64) -> Result<Self> {
        Self::new(azimuth, elevation, None)
    }

    pub fn near(azimuth: f64, elevation: f64, distance: f64) -> Result<Self> {
        Self::new(azimuth, elevation, Some(distance))
    }

    pub fn new(azimuth: f64, elevation: f64, distance: Option<f64>) -> Result<Self> {
        if !in_visible(azimuth) || !in_visible(elevation) {
            return Err(invalid(format!("angles ({azimuth}, {elevation}) outside the visible region [-pi/2, pi/2)")));
        }
        if let Some(r) = distance {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!("distance {r} must be positive")));
            }
        }
        Ok(Self { azimuth, elevation, distance })
    }

    /// Point with direction cosines `u = sin az cos el`, `v = sin el` and
    /// inverse distance `rho` (`rho = 0` is the far field).
    pub fn from_cosines(u: f64, v: f64, rho: f64) -> Result<Self> {
        if !(u * u + v * v < 1.0) {
            return Err(invalid(format!("direction cosines ({u}, {v}) outside the unit disk")));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(invalid("inverse distance must be non-negative"));
        }
        let elevation = v.asin();
        let azimuth = (u / elevation.cos()).clamp(-1.0, 1.0).asin();
        let distance = if rho > 0.0 { Some(1.0 / rho) } else { None };
        Self::new(azimuth, elevation, distance)
    }

    pub fn is_far(&self) -> bool {
        self.distance.is_none()
    }

    /// Direction cosines `(sin az cos el, sin el)`.
    pub fn cosines(&self) -> (f64, f64) {
        (self.azimuth.sin() * self.elevation.cos(), self.elevation.sin())
    }

    pub fn inverse_distance(&self) -> f64 {
        self.distance.map_or(0.0, |r| 1.0 / r)
    }

    /// Cartesian position, for finite distances.
    pub fn position(&self) -> Option<[f64; 3]> {
        self.distance.map(|r| {
            let (ca, sa) = (self.azimuth.cos(), self.azimuth.sin());
            let (ce, se) = (self.elevation.cos(), self.elevation.sin());
            [r * ca * ce, r * sa * ce, r * se]
        })
    }
}

/// Characteristic distances of an array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBoundaries {
    pub bjornson: f64,
    pub near_far_border: f64,
    pub fraunhofer: f64,
}

impl FieldBoundaries {
    pub fn diagonal(geom: &ArrayGeometry) -> f64 {
        if geom.len() == 1 {
            return 0.0;
        }
        let wh = geom.n_h as f64 * geom.delta_h;
        let wv = geom.n_v as f64 * geom.delta_v;
        wh.hypot(wv)
    }
}

pub fn field_boundaries(geom: &ArrayGeometry) -> FieldBoundaries {
    let w = FieldBoundaries::diagonal(geom);
    let fraunhofer = 2.0 * w * w / geom.wavelength;
    FieldBoundaries { bjornson: 2.0 * w, near_far_border: fraunhofer / 10.0, fraunhofer }
}

pub fn element_offset(geom: &ArrayGeometry, n: usize) -> Result<ElementOffset> {
    geom.element_offset(n)
}

/// Cached element offsets for repeated response evaluation in
/// direction-cosine coordinates `(u, v)` and inverse distance `rho`.
#[derive(Debug, Clone)]
pub(crate) struct Steering {
    n_h: usize,
    kappa: f64,
    col: Vec<f64>,
    row: Vec<f64>,
    offs: Vec<ElementOffset>,
    q: Vec<f64>,
}

impl Steering {
    pub(crate) fn new(geom: &ArrayGeometry) -> Self {
        let offs: Vec<ElementOffset> = geom.offsets().collect();
        Self {
            n_h: geom.n_h,
            kappa: geom.wavenumber(),
            col: (0..geom.n_h).map(|c| c as f64 * geom.delta_h).collect(),
            row: (0..geom.n_v).map(|r| r as f64 * geom.delta_v).collect(),
            q: offs.iter().map(|o| o.i * o.i + o.k * o.k).collect(),
            offs,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.offs.len()
    }

    /// Fills `out` with the response at `(u, v, rho)`; `rho = 0` is the far field.
    pub(crate) fn fill(&self, u: f64, v: f64, rho: f64, out: &mut [Complex64]) {
        debug_assert_eq!(out.len(), self.len());
        if rho > 0.0 {
            for ((slot, off), q) in out.iter_mut().zip(&self.offs).zip(&self.q) {
                let s2 = 2.0 * (off.i * u + off.k * v) - q * rho;
                let path = s2 / (1.0 + (1.0 - rho * s2).sqrt());
                let (s, c) = (self.kappa * path).sin_cos();
                *slot = Complex64::new(c, s);
            }
        } else {
            let eh: Vec<Complex64> = self.col.iter().map(|i| cis(self.kappa * i * u)).collect();
            for (r, k) in self.row.iter().enumerate() {
                let ev = cis(self.kappa * k * v);
                for (slot, e) in out[r * self.n_h..(r + 1) * self.n_h].iter_mut().zip(&eh) {
                    *slot = ev * e;
                }
            }
        }
    }

    pub(crate) fn response(&self, u: f64, v: f64, rho: f64) -> CVector {
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        self.fill(u, v, rho, &mut out);
        CVector::from_vec(out)
    }
}

#[inline]
pub(crate) fn cis(phase: f64) -> Complex64 {
    let (s, c) = phase.sin_cos();
    Complex64::new(c, s)
}

/// Spherical-wavefront response of the array toward `p`.
pub fn near_field_response(geom: &ArrayGeometry, p: &ChannelPoint) -> Result<CVector> {
    let r = p.distance.ok_or_else(|| invalid("near-field response needs a finite distance"))?;
    if !(r > 0.0) {
        return Err(invalid("distance must be positive"));
    }
    let (u, v) = p.cosines();
    Ok(Steering::new(geom).response(u, v, 1.0 / r))
}

/// Planar-wavefront response toward `(azimuth, elevation)`.
pub fn far_field_response(geom: &ArrayGeometry, azimuth: f64, elevation: f64) -> CVector {
    let u = azimuth.sin() * elevation.cos();
    let v = elevation.sin();
    Steering::new(geom).response(u, v, 0.0)
}

/// Near-field response for finite distances, far-field response otherwise.
pub fn array_response(geom: &ArrayGeometry, p: &ChannelPoint) -> CVector {
    let (u, v) = p.cosines();
    Steering::new(geom).response(u, v, p.inverse_distance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn half_lambda(n_h: usize, n_v: usize) -> ArrayGeometry {
        ArrayGeometry::new(n_h, n_v, 0.5, 0.5, 1.0).unwrap()
    }

    #[test]
    fn offsets_follow_row_major_indexing() {
        let g = half_lambda(4, 4);
        assert_eq!(g.element_offset(1).unwrap(), ElementOffset { i: 0.0, k: 0.0 });
        assert_eq!(g.element_offset(5).unwrap(), ElementOffset { i: 0.0, k: 0.5 });
        let big = half_lambda(32, 32);
        let last = big.element_offset(1024).unwrap();
        assert_abs_diff_eq!(last.i, 31.0 * 0.5);
        assert_abs_diff_eq!(last.k, 31.0 * 0.5);
        assert!(g.element_offset(0).is_err());
        assert!(g.element_offset(17).is_err());
    }

    #[test]
    fn offsets_are_a_bijection() {
        let g = ArrayGeometry::new(5, 3, 0.3, 0.4, 1.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for off in g.offsets() {
            let key = ((off.i / 0.3).round() as i64, (off.k / 0.4).round() as i64);
            assert!(seen.insert(key));
        }
        assert_eq!(seen.len(), 15);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ArrayGeometry::new(0, 4, 0.5, 0.5, 1.0).is_err());
        assert!(ArrayGeometry::new(4, 4, -0.5, 0.5, 1.0).is_err());
        assert!(ArrayGeometry::new(4, 4, 0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn single_element_response_is_one() {
        let g = half_lambda(1, 1);
        let p = ChannelPoint::near(0.3, -0.2, 2.0).unwrap();
        let a = near_field_response(&g, &p).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn near_field_matches_explicit_distance() {
        let g = half_lambda(2, 1);
        let r = 5.0;
        let az = std::f64::consts::FRAC_PI_4;
        let p = ChannelPoint::near(az, 0.0, r).unwrap();
        let a = near_field_response(&g, &p).unwrap();
        let user = [r * az.cos(), r * az.sin(), 0.0];
        let elem = [0.0, 0.5, 0.0];
        let r2 = ((user[0] - elem[0]).powi(2) + (user[1] - elem[1]).powi(2) + (user[2] - elem[2]).powi(2)).sqrt();
        let expected = 2.0 * PI * (r - r2);
        let got = a[1].arg();
        let diff = (got - expected).rem_euclid(2.0 * PI);
        assert!(diff.min(2.0 * PI - diff) < 1e-12, "phase {got} vs {expected}");
        assert_eq!(a[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn near_field_converges_to_far_field() {
        // the residual phase is about pi q / (lambda r), so the 1e-6 bound at
        // a million wavelengths holds for a two-element aperture
        let g = half_lambda(2, 1);
        let far = far_field_response(&g, 0.0, 0.0);
        let p = ChannelPoint::near(0.0, 0.0, 1e6).unwrap();
        let near = near_field_response(&g, &p).unwrap();
        let worst = near.iter().zip(far.iter()).map(|(a, b)| (a * b.conj()).arg().abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "max phase deviation {worst}");

        let big = half_lambda(8, 8);
        let far = far_field_response(&big, 0.0, 0.0);
        let near = near_field_response(&big, &p).unwrap();
        for (n, (a, b)) in near.iter().zip(far.iter()).enumerate() {
            let o = big.offset0(n);
            let bound = PI * (o.i * o.i + o.k * o.k) / 1e6 * 1.01 + 1e-12;
            assert!((a * b.conj()).arg().abs() <= bound);
        }
    }

    #[test]
    fn near_to_far_deviation_shrinks_with_distance() {
        let g = half_lambda(16, 16);
        let fb = field_boundaries(&g);
        let (az, el) = (0.4, -0.3);
        let far = far_field_response(&g, az, el);
        let mut last = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0] {
            let p = ChannelPoint::near(az, el, fb.fraunhofer * scale).unwrap();
            let near = near_field_response(&g, &p).unwrap();
            let dev = near.iter().zip(far.iter()).map(|(a, b)| (a * b.conj()).arg().abs()).fold(0.0, f64::max);
            assert!(dev < last);
            last = dev;
        }
    }

    #[test]
    fn far_field_examples() {
        let g = half_lambda(4, 3);
        let broadside = far_field_response(&g, 0.0, 0.0);
        assert!(broadside.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let pair = half_lambda(2, 1);
        let endfire = far_field_response(&pair, FRAC_PI_2, 0.0);
        assert_abs_diff_eq!(endfire[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(endfire[1].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(endfire[1].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_positive_distance() {
        let g = half_lambda(2, 2);
        let p = ChannelPoint { azimuth: 0.0, elevation: 0.0, distance: Some(0.0) };
        assert!(near_field_response(&g, &p).is_err());
        assert!(near_field_response(&g, &ChannelPoint::far(0.0, 0.0).unwrap()).is_err());
        assert!(ChannelPoint::near(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn rejects_angles_outside_visible_region() {
        assert!(ChannelPoint::far(FRAC_PI_2, 0.0).is_err());
        assert!(ChannelPoint::far(-FRAC_PI_2, 0.0).is_ok());
        assert!(ChannelPoint::far(0.0, 2.0).is_err());
    }

    #[test]
    fn full_scale_boundaries() {
        let g = ArrayGeometry::at_frequency(32, 32, 28e9, 2.0).unwrap();
        assert_abs_diff_eq!(g.wavelength, 10.707e-3, epsilon = 1e-5);
        let fb = field_boundaries(&g);
        assert!((fb.fraunhofer - 11.0).abs() < 0.1, "{}", fb.fraunhofer);
        assert!((fb.bjornson - 0.48).abs() < 0.01, "{}", fb.bjornson);
        assert!(fb.bjornson < fb.near_far_border && fb.near_far_border < fb.fraunhofer);

        let point = field_boundaries(&half_lambda(1, 1));
        assert_eq!((point.bjornson, point.near_far_border, point.fraunhofer), (0.0, 0.0, 0.0));
    }

    #[test]
    fn cosine_round_trip() {
        let p = ChannelPoint::from_cosines(0.3, -0.5, 0.25).unwrap();
        let (u, v) = p.cosines();
        assert_abs_diff_eq!(u, 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(v, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(p.distance.unwrap(), 4.0, epsilon = 1e-12);
        assert!(ChannelPoint::from_cosines(0.8, 0.7, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn responses_are_unit_modulus(
                az in -1.5f64..1.5, el in -1.5f64..1.5, r in 0.5f64..100.0,
                n_h in 1usize..7, n_v in 1usize..7,
            ) {
                let g = ArrayGeometry::new(n_h, n_v, 0.5, 0.25, 1.0).unwrap();
                let far = far_field_response(&g, az, el);
                let near = near_field_response(&g, &ChannelPoint::near(az, el, r).unwrap()).unwrap();
                for a in [far, near] {
                    prop_assert_eq!(a[0], Complex64::new(1.0, 0.0));
                    for z in a.iter() {
                        prop_assert!((z.norm() - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
