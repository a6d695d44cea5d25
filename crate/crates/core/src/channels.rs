//! Channel synthesis: the parametric user-RIS path, the direct path, the
//! known BS-RIS channel and Rician composites with correlated scattering.

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{array_response, far_field_response, ArrayGeometry, CMatrix, CVector, ChannelPoint};

/// Line-of-sight user-RIS channel `sqrt(beta) e^{j omega} a(point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosChannel {
    pub beta: f64,
    pub omega: f64,
    pub point: ChannelPoint,
}

impl LosChannel {
    pub fn dense(&self, geom: &ArrayGeometry) -> CVector {
        dense_los(geom, self)
    }
}

pub fn dense_los(geom: &ArrayGeometry, los: &LosChannel) -> CVector {
    let c = Complex64::from_polar(los.beta.max(0.0).sqrt(), los.omega);
    array_response(geom, &los.point) * c
}

/// Direct BS-user channel, one coefficient per BS antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectChannel {
    pub coeffs: CVector,
}

impl DirectChannel {
    pub fn from_polar(alpha: f64, vartheta: f64) -> Self {
        Self { coeffs: CVector::from_element(1, Complex64::from_polar(alpha.max(0.0).sqrt(), vartheta)) }
    }

    pub fn zeros(m: usize) -> Self {
        Self { coeffs: CVector::zeros(m) }
    }

    pub fn alpha(&self) -> f64 {
        self.coeffs[0].norm_sqr()
    }

    pub fn vartheta(&self) -> f64 {
        self.coeffs[0].arg()
    }
}

pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

pub(crate) fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVector {
    CVector::from_fn(len, |_, _| complex_normal(rng, variance))
}

/// `m` i.i.d. circularly symmetric complex Gaussian draws.
pub fn sample_direct<R: Rng + ?Sized>(rng: &mut R, variance: f64, m: usize) -> Result<DirectChannel> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(invalid(format!("variance {variance} must be non-negative")));
    }
    Ok(DirectChannel { coeffs: complex_normal_vec(rng, m, variance) })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Isotropic-scattering spatial correlation `sinc(2 |p_n - p_m| / lambda)`.
pub fn sinc_correlation(geom: &ArrayGeometry) -> CMatrix {
    let offs: Vec<_> = geom.offsets().collect();
    let n = offs.len();
    CMatrix::from_fn(n, n, |a, b| {
        let dist = (offs[a].i - offs[b].i).hypot(offs[a].k - offs[b].k);
        Complex64::new(sinc(2.0 * dist / geom.wavelength), 0.0)
    })
}

/// Rician fading parameters with a precomputed correlation square root.
#[derive(Debug, Clone)]
pub struct RicianSpec {
    pub k_factor_db: f64,
    pub correlation: CMatrix,
    sqrt: CMatrix,
}

impl RicianSpec {
    pub fn new(k_factor_db: f64, correlation: CMatrix) -> Result<Self> {
        if !correlation.is_square() || correlation.nrows() == 0 {
            return Err(invalid("correlation must be a non-empty square matrix"));
        }
        if !k_factor_db.is_finite() {
            return Err(invalid("K-factor must be finite"));
        }
        let herm_err = (&correlation - correlation.adjoint()).norm();
        if herm_err > 1e-9 * correlation.norm().max(1.0) {
            return Err(invalid("correlation is not Hermitian"));
        }
        let eig = SymmetricEigen::new(correlation.clone());
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let bottom = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if bottom < -1e-8 * top.max(1.0) {
            return Err(invalid(format!("correlation is not positive semidefinite (eigenvalue {bottom})")));
        }
        let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
        let v = &eig.eigenvectors;
        let sqrt = v * CMatrix::from_diagonal(&roots) * v.adjoint();
        Ok(Self { k_factor_db, correlation, sqrt })
    }

    pub fn isotropic(geom: &ArrayGeometry, k_factor_db: f64) -> Result<Self> {
        Self::new(k_factor_db, sinc_correlation(geom))
    }

    pub fn k_linear(&self) -> f64 {
        10f64.powf(self.k_factor_db / 10.0)
    }

    /// Power weights `(K / (K + 1), 1 / (K + 1))` of the LOS and scattered parts.
    pub fn weights(&self) -> (f64, f64) {
        let k = self.k_linear();
        if k.is_infinite() {
            (1.0, 0.0)
        } else {
            (k / (k + 1.0), 1.0 / (k + 1.0))
        }
    }

    pub fn len(&self) -> usize {
        self.correlation.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Correlated Rayleigh draw `R^{1/2} w` with unit per-entry variance.
    pub fn scatter<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let w = complex_normal_vec(rng, self.len(), 1.0);
        &self.sqrt * w
    }

    /// Mixes a deterministic LOS vector with a fresh scattered component.
    pub fn mix<R: Rng + ?Sized>(&self, rng: &mut R, los: &CVector) -> CVector {
        let (wl, wn) = self.weights();
        los * Complex64::new(wl.sqrt(), 0.0) + self.scatter(rng) * Complex64::new(wn.sqrt(), 0.0)
    }
}

pub fn sample_rician<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &ArrayGeometry,
    los: &LosChannel,
    spec: &RicianSpec,
) -> Result<CVector> {
    if spec.len() != geom.len() {
        return Err(invalid("correlation size does not match the array"));
    }
    let dense = dense_los(geom, los);
    let beta = los.beta.max(0.0);
    let (wl, wn) = spec.weights();
    Ok(dense * Complex64::new(wl.sqrt(), 0.0) + spec.scatter(rng) * Complex64::new((wn * beta).sqrt(), 0.0))
}

/// Response of a half-wavelength uniform linear array of `m` antennas.
pub fn ula_response(m: usize, angle: f64) -> CVector {
    let s = std::f64::consts::PI * angle.sin();
    CVector::from_fn(m, |i, _| Complex64::from_polar(1.0, s * i as f64))
}

/// Known channel between the BS and the RIS, `M x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsRisChannel {
    pub matrix: CMatrix,
}

/// Placement of the BS as seen from the RIS and from its own array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsPlacement {
    pub azimuth: f64,
    pub elevation: f64,
    /// Departure angle at the BS array.
    pub bs_angle: f64,
}

impl Default for BsPlacement {
    fn default() -> Self {
        Self { azimuth: 0.0, elevation: 0.0, bs_angle: 0.0 }
    }
}

impl BsRisChannel {
    pub fn single(h: CVector) -> Self {
        let n = h.len();
        Self { matrix: CMatrix::from_row_slice(1, n, h.as_slice()) }
    }

    pub fn antennas(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn elements(&self) -> usize {
        self.matrix.ncols()
    }

    /// Channel vector of the first antenna.
    pub fn h(&self) -> CVector {
        self.matrix.row(0).transpose()
    }

    /// Unit-modulus phasors whose conjugates align codebook beams with the
    /// cascaded channel: the channel itself for one antenna, and the
    /// conjugated dominant right singular vector for several.
    pub fn compensation(&self) -> CVector {
        let v = if self.antennas() == 1 { self.h() } else { dominant_right_singular(&self.matrix).map(|z| z.conj()) };
        v.map(|z| if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) })
    }
}

pub(crate) fn dominant_left_singular(m: &CMatrix) -> CVector {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let best = svd.singular_values.imax();
    u.column(best).into_owned()
}

pub(crate) fn dominant_right_singular(m: &CMatrix) -> CVector {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let best = svd.singular_values.imax();
    vt.row(best).adjoint()
}

/// Deterministic LOS BS-RIS channel with unit per-element gain.
pub fn synth_bs_ris(geom: &ArrayGeometry, placement: &BsPlacement, m: usize) -> Result<BsRisChannel> {
    if m == 0 {
        return Err(invalid("the BS needs at least one antenna"));
    }
    let a = far_field_response(geom, placement.azimuth, placement.elevation);
    let b = ula_response(m, placement.bs_angle);
    Ok(BsRisChannel { matrix: &b * a.transpose() })
}

/// Rician BS-RIS channel: rank-one LOS plus scattering correlated at the RIS
/// side and independent across BS antennas.
pub fn sample_rician_bs_ris<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &ArrayGeometry,
    placement: &BsPlacement,
    m: usize,
    spec: &RicianSpec,
) -> Result<BsRisChannel> {
    let los = synth_bs_ris(geom, placement, m)?;
    let mut matrix = los.matrix;
    for mut row in matrix.row_iter_mut() {
        let mixed = spec.mix(rng, &row.transpose());
        row.copy_from(&mixed.transpose());
    }
    Ok(BsRisChannel { matrix })
}

/// True channels of one link realization.
#[derive(Debug, Clone)]
pub struct Link {
    pub bs: BsRisChannel,
    pub g: CVector,
    pub d: CVector,
}

impl Link {
    pub fn new(bs: BsRisChannel, g: CVector, d: CVector) -> Result<Self> {
        if bs.elements() != g.len() || bs.antennas() != d.len() {
            return Err(invalid("channel dimensions disagree"));
        }
        Ok(Self { bs, g, d })
    }

    pub fn antennas(&self) -> usize {
        self.bs.antennas()
    }

    /// Cascaded matrix `H diag(g)`.
    pub fn cascade(&self) -> CMatrix {
        let mut c = self.bs.matrix.clone();
        for (mut col, gn) in c.column_iter_mut().zip(self.g.iter()) {
            col *= *gn;
        }
        c
    }

    /// Noise-free end-to-end channel `H diag(g) theta + d`.
    pub fn effective(&self, theta: &CVector) -> CVector {
        let mut out = self.d.clone();
        for (m, slot) in out.iter_mut().enumerate() {
            let row = self.bs.matrix.row(m);
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..theta.len() {
                acc += row[n] * self.g[n] * theta[n];
            }
            *slot += acc;
        }
        out
    }

    /// One pilot observation per antenna, `sqrt(P_p) (H diag(g) theta + d) + w`.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R, theta: &CVector, pilot_power: f64, noise_var: f64) -> CVector {
        let x = Complex64::new(pilot_power.sqrt(), 0.0);
        let mut y = self.effective(theta) * x;
        if noise_var > 0.0 {
            for v in y.iter_mut() {
                *v += complex_normal(rng, noise_var);
            }
        }
        y
    }
}
