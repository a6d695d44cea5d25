//! Orthogonal RIS-configuration codebooks.
//!
//! Beams are placed on a lattice in direction-cosine space whose spacing is
//! one beamwidth along each axis, so any two far-field responses of the
//! codebook are exactly orthogonal. Each beam is conjugated and rotated by the
//! BS-RIS compensation phases before it is used as a configuration.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::BsRisChannel;
use crate::error::{invalid, Result};
use crate::geometry::{ArrayGeometry, CMatrix, CVector, Steering};

const ALIAS_TOL: f64 = 1e-9;

/// Ordered pilot configurations with the angle pairs that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub configs: Vec<CVector>,
    /// `(azimuth, elevation)` in radians.
    pub angle_pairs: Vec<(f64, f64)>,
    /// Direction cosines `(u, v)` of each pair.
    pub cosines: Vec<(f64, f64)>,
    pub reference_pair: (f64, f64),
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Uncompensated far-field responses of the beams, one per column.
    pub fn responses(&self, geom: &ArrayGeometry) -> CMatrix {
        let steer = Steering::new(geom);
        let mut out = CMatrix::zeros(geom.len(), self.len());
        for (j, &(u, v)) in self.cosines.iter().enumerate() {
            out.set_column(j, &steer.response(u, v, 0.0));
        }
        out
    }

    /// Bits needed to signal one codebook index.
    pub fn index_bits(&self) -> u32 {
        match self.len() {
            0 | 1 => 0,
            n => usize::BITS - (n - 1).leading_zeros(),
        }
    }
}

/// Separation of two beams in direction-cosine space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSeparation {
    /// Difference of elevation sines.
    pub omega_sep: f64,
    /// Difference of `sin(az) cos(el)`.
    pub lambda_sep: f64,
}

/// Normalized Dirichlet kernel `|sin(pi n d x) / (n sin(pi d x))|`, with
/// `d` the spacing in wavelengths.
fn dirichlet(n: usize, d: f64, x: f64) -> f64 {
    let den = (n as f64) * (PI * d * x).sin();
    if den.abs() < 1e-12 {
        return 1.0;
    }
    ((PI * n as f64 * d * x).sin() / den).abs().min(1.0)
}

/// Array gain factors `(S, T)` between two beams separated by `sep`: `S`
/// along the vertical axis, `T` along the horizontal one. Their product is
/// the normalized inner product of the two far-field responses.
pub fn separation_gains(geom: &ArrayGeometry, sep: BeamSeparation) -> (f64, f64) {
    let s = dirichlet(geom.n_v, geom.delta_v / geom.wavelength, sep.omega_sep);
    let t = dirichlet(geom.n_h, geom.delta_h / geom.wavelength, sep.lambda_sep);
    (s, t)
}

/// Continuous-aperture degrees of freedom `pi A / lambda^2`.
pub fn dof_estimate(geom: &ArrayGeometry) -> f64 {
    PI / (geom.wavelength * geom.wavelength) * (geom.n_h as f64 * geom.delta_h) * (geom.n_v as f64 * geom.delta_v)
}

/// Columns of the `n`-point DFT matrix, `F[r, c] = exp(-j 2 pi r c / n)`.
pub fn dft_codebook(n: usize) -> Vec<CVector> {
    let m = dft_matrix(n);
    (0..n).map(|c| m.column(c).into_owned()).collect()
}

pub fn dft_matrix(n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |r, c| {
        let k = (r * c) % n.max(1);
        Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)
    })
}

/// `0, 1, -1, 2, -2, ...` up to `+-max`.
fn symmetric(max: i64) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=max).flat_map(|k| [k, -k]))
}

/// Pushes `x` unless it aliases an existing value modulo `period`.
fn push_unaliased(xs: &mut Vec<f64>, x: f64, period: f64) {
    let aliased = xs.iter().any(|y| {
        let r = (x - y) / period;
        (r - r.round()).abs() * period < ALIAS_TOL
    });
    if !aliased {
        xs.push(x);
    }
}

/// Direction cosines of the orthogonal beam lattice through `reference`.
pub(crate) fn lattice_cosines(geom: &ArrayGeometry, reference: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    geom.validate()?;
    let (az, el) = reference;
    if !(az.is_finite() && el.is_finite() && az.abs() <= PI / 2.0 && el.abs() <= PI / 2.0) {
        return Err(invalid("codebook reference must lie in the visible region"));
    }
    if geom.delta_h > geom.wavelength / 2.0 + 1e-12 || geom.delta_v > geom.wavelength / 2.0 + 1e-12 {
        return Err(invalid("codebook design needs spacing of at most half a wavelength"));
    }
    let (u0, v0) = (az.sin() * el.cos(), el.sin());
    let (ph, pv) = geom.alias_periods();
    let (bh, bv) = (ph / geom.n_h as f64, pv / geom.n_v as f64);

    let mut rows = Vec::new();
    for k in symmetric(geom.n_v as i64 / 2) {
        let v = v0 + k as f64 * bv;
        if v.abs() <= 1.0 + 1e-12 {
            push_unaliased(&mut rows, v.clamp(-1.0, 1.0), pv);
        }
    }
    let mut out = Vec::new();
    for v in rows {
        let limit = (1.0 - v * v).max(0.0).sqrt();
        let mut cols = Vec::new();
        for l in symmetric(geom.n_h as i64 - 1) {
            let u = u0 + l as f64 * bh;
            if u.abs() <= limit + 1e-12 {
                push_unaliased(&mut cols, u.clamp(-limit, limit), ph);
            }
        }
        out.extend(cols.into_iter().map(|u| (u, v)));
    }
    Ok(out)
}

pub(crate) fn angles_of(u: f64, v: f64) -> (f64, f64) {
    let el = v.clamp(-1.0, 1.0).asin();
    let c = el.cos();
    let az = if c < 1e-12 { 0.0 } else { (u / c).clamp(-1.0, 1.0).asin() };
    (az, el)
}

/// Configuration steering toward `(u, v)` after compensating `comp`.
pub(crate) fn compensated(steer: &Steering, comp: &CVector, u: f64, v: f64) -> CVector {
    steer.response(u, v, 0.0).zip_map(comp, |a, c| (a * c).conj())
}

/// Minimal orthogonal codebook through the reference pair, compensated for
/// the BS-RIS channel `bs`.
pub fn build_codebook(geom: &ArrayGeometry, bs: &BsRisChannel, reference: (f64, f64)) -> Result<Codebook> {
    if bs.elements() != geom.len() {
        return Err(invalid("BS-RIS channel does not match the geometry"));
    }
    let cosines = lattice_cosines(geom, reference)?;
    let steer = Steering::new(geom);
    let comp = bs.compensation();
    let configs = cosines.iter().map(|&(u, v)| compensated(&steer, &comp, u, v)).collect();
    let angle_pairs = cosines.iter().map(|&(u, v)| angles_of(u, v)).collect();
    Ok(Codebook { configs, angle_pairs, cosines, reference_pair: reference })
}

/// Default reference pair: broadside elevation at the horizontal edge.
pub const DEFAULT_REFERENCE: (f64, f64) = (PI / 2.0, 0.0);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::far_field_response;

    fn ones(n: usize) -> BsRisChannel {
        BsRisChannel::single(CVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    fn geom(n_h: usize, n_v: usize) -> ArrayGeometry {
        ArrayGeometry::new(n_h, n_v, 0.5, 0.5, 1.0).unwrap()
    }

    fn max_off_diagonal(a: &CMatrix) -> f64 {
        let gram = a.adjoint() * a;
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j {
                    worst = worst.max(gram[(i, j)].norm());
                }
            }
        }
        worst
    }

    #[test]
    fn separation_gain_values() {
        let g = ArrayGeometry::new(8, 4, 0.5, 0.5, 1.0).unwrap();
        let (s, t) = separation_gains(&g, BeamSeparation { omega_sep: 0.0, lambda_sep: 0.0 });
        assert_eq!((s, t), (1.0, 1.0));
        let (s, _) = separation_gains(&g, BeamSeparation { omega_sep: 1.0 / (4.0 * 0.5), lambda_sep: 0.0 });
        assert!(s < 1e-12);
        let (s, _) = separation_gains(&g, BeamSeparation { omega_sep: 2.0, lambda_sep: 0.0 });
        assert!((s - 1.0).abs() < 1e-12);
        let (_, t) = separation_gains(&g, BeamSeparation { omega_sep: 0.0, lambda_sep: 0.25 });
        assert!(t < 1e-12);
    }

    #[test]
    fn gains_match_inner_products() {
        let g = ArrayGeometry::new(6, 5, 0.5, 0.25, 1.0).unwrap();
        let (a1, e1, a2, e2) = (0.3f64, -0.2f64, -0.5f64, 0.4f64);
        let x = far_field_response(&g, a1, e1);
        let y = far_field_response(&g, a2, e2);
        let sep =
            BeamSeparation { omega_sep: e2.sin() - e1.sin(), lambda_sep: a2.sin() * e2.cos() - a1.sin() * e1.cos() };
        let (s, t) = separation_gains(&g, sep);
        let ip = x.dotc(&y).norm() / g.len() as f64;
        assert!((ip - s * t).abs() < 1e-12);
    }

    #[test]
    fn ula_example_from_broadside() {
        let g = geom(4, 1);
        let cb = build_codebook(&g, &ones(4), (0.0, 0.0)).unwrap();
        let mut sines: Vec<f64> = cb.angle_pairs.iter().map(|p| p.0.sin()).collect();
        sines.sort_by(f64::total_cmp);
        let want = [-0.5, 0.0, 0.5, 1.0];
        assert_eq!(sines.len(), 4);
        for (s, w) in sines.iter().zip(want) {
            assert!((s - w).abs() < 1e-12, "{sines:?}");
        }
        let gram = cb.responses(&g).adjoint() * cb.responses(&g);
        assert!((gram - CMatrix::identity(4, 4) * Complex64::new(4.0, 0.0)).camax() < 1e-9);
    }

    #[test]
    fn all_ones_channel_gives_conjugate_responses() {
        let g = geom(4, 4);
        let cb = build_codebook(&g, &ones(16), DEFAULT_REFERENCE).unwrap();
        let resp = cb.responses(&g);
        for (j, c) in cb.configs.iter().enumerate() {
            assert!((c - resp.column(j).map(|z| z.conj())).camax() < 1e-15);
        }
    }

    #[test]
    fn compensation_cancels_channel_phases() {
        let g = geom(4, 2);
        let h = CVector::from_fn(8, |n, _| Complex64::from_polar(0.5 + n as f64, 0.7 * n as f64));
        let bs = BsRisChannel::single(h.clone());
        let cb = build_codebook(&g, &bs, DEFAULT_REFERENCE).unwrap();
        let resp = cb.responses(&g);
        for (j, c) in cb.configs.iter().enumerate() {
            for n in 0..8 {
                let want = (h[n] * resp[(n, j)]).conj() / h[n].norm();
                assert!((c[n] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn full_scale_codebook_is_orthogonal_and_near_dof() {
        let g = geom(32, 32);
        let cb = build_codebook(&g, &ones(1024), DEFAULT_REFERENCE).unwrap();
        let dof = dof_estimate(&g);
        assert!((dof - 804.2477).abs() < 1e-3);
        assert!(((cb.len() as f64) - dof).abs() < 0.1 * dof, "eta = {}", cb.len());
        assert!(max_off_diagonal(&cb.responses(&g)) < 1e-8 * 1024.0);
        assert_eq!(cb.index_bits(), 10);
    }

    #[test]
    fn codebook_is_deterministic_and_unit_modulus() {
        let g = geom(8, 8);
        let a = build_codebook(&g, &ones(64), (0.3, -0.1)).unwrap();
        let b = build_codebook(&g, &ones(64), (0.3, -0.1)).unwrap();
        assert_eq!(a, b);
        assert!(a.configs.iter().flat_map(|c| c.iter()).all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert_eq!(a.configs.len(), a.angle_pairs.len());
    }

    #[test]
    fn codebook_spans_far_field_responses() {
        // edge directions leak onto invisible lattice points, so small
        // arrays capture less; 8x8 keeps about 0.89 of the energy
        let g = geom(32, 32);
        let cb = build_codebook(&g, &ones(1024), DEFAULT_REFERENCE).unwrap();
        let q = cb.responses(&g).adjoint() / Complex64::new(32.0, 0.0);
        let steer = Steering::new(&g);
        let mut captured = 0.0;
        let mut total = 0.0;
        let steps = 25;
        for i in 0..steps {
            for j in 0..steps {
                let u = -1.0 + 2.0 * (i as f64 + 0.5) / steps as f64;
                let v = -1.0 + 2.0 * (j as f64 + 0.5) / steps as f64;
                if u * u + v * v >= 1.0 {
                    continue;
                }
                let a = steer.response(u, v, 0.0);
                captured += (&q * &a).norm_squared();
                total += a.norm_squared();
            }
        }
        assert!(captured / total >= 0.95, "captured {}", captured / total);
    }

    #[test]
    fn dof_scales_with_area() {
        let a = dof_estimate(&geom(16, 16));
        let b = dof_estimate(&ArrayGeometry::new(16, 16, 0.25, 0.25, 1.0).unwrap());
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!((a - PI * 256.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn dft_columns_are_orthogonal() {
        assert_eq!(dft_codebook(1), vec![CVector::from_element(1, Complex64::new(1.0, 0.0))]);
        let cols = dft_codebook(4);
        assert!(cols[2].dotc(&cols[1]).norm() < 1e-12);
        for n in [3, 7, 16] {
            let f = dft_matrix(n);
            let gram = f.adjoint() * &f;
            assert!((gram - CMatrix::identity(n, n) * Complex64::new(n as f64, 0.0)).camax() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_reference_and_wide_spacing() {
        let g = geom(4, 4);
        assert!(build_codebook(&g, &ones(16), (2.0, 0.0)).is_err());
        let wide = ArrayGeometry::new(4, 4, 0.75, 0.5, 1.0).unwrap();
        assert!(build_codebook(&wide, &ones(16), (0.0, 0.0)).is_err());
    }
}
