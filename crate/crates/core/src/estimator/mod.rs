//! Maximum-likelihood estimation of the line-of-sight user-RIS channel and
//! the direct channel from pilot observations.
//!
//! For a fixed location the gain, phase and direct channel have closed-form
//! maximizers; the location itself maximizes a spatial spectrum which is
//! searched over a grid in direction-cosine space and inverse distance.

mod grid;
mod search;

pub use grid::{inverse_distances, SearchGrid};
pub use search::{refine_grid, SearchPlan, SearchSettings, SpectrumTracker};

use num_complex::Complex64;

use crate::channels::BsRisChannel;
use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, CMatrix, CVector, ChannelPoint, Steering};

/// Relative tolerance below which the spectrum denominator counts as zero.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Pilot configurations and the samples they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRecord {
    elements: usize,
    antennas: usize,
    configs: Vec<CVector>,
    /// Pilot-major: sample `(l, m)` sits at `l * antennas + m`.
    samples: Vec<Complex64>,
    pub pilot_power: f64,
    pub noise_var: f64,
}

impl PilotRecord {
    pub fn new(elements: usize, antennas: usize, pilot_power: f64, noise_var: f64) -> Result<Self> {
        if elements == 0 || antennas == 0 {
            return Err(invalid("record needs at least one element and one antenna"));
        }
        if !(pilot_power > 0.0) || !(noise_var >= 0.0) {
            return Err(invalid("pilot power must be positive and noise variance non-negative"));
        }
        Ok(Self { elements, antennas, configs: Vec::new(), samples: Vec::new(), pilot_power, noise_var })
    }

    /// Appends one pilot: the RIS configuration and one sample per antenna.
    pub fn push(&mut self, theta: CVector, y: &[Complex64]) -> Result<()> {
        if theta.len() != self.elements {
            return Err(invalid(format!("configuration has {} entries, expected {}", theta.len(), self.elements)));
        }
        if y.len() != self.antennas {
            return Err(invalid(format!("got {} samples, expected {}", y.len(), self.antennas)));
        }
        if theta.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(invalid("RIS configurations must be unit modulus"));
        }
        self.configs.push(theta);
        self.samples.extend_from_slice(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn configs(&self) -> &[CVector] {
        &self.configs
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample(&self, l: usize, m: usize) -> Complex64 {
        self.samples[l * self.antennas + m]
    }

    /// Configurations stacked as an `L x N` matrix.
    pub fn config_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.len(), self.elements, |l, n| self.configs[l][n])
    }

    /// Copy with every sample multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|y| *y *= c);
        out
    }
}

/// Estimated channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub point: ChannelPoint,
    pub omega: f64,
    pub beta: f64,
    /// Phase and power of the first antenna's direct channel.
    pub vartheta: f64,
    pub alpha: f64,
    pub d_hat: CVector,
    pub spectrum_peak: f64,
}

impl Estimate {
    pub fn g_hat(&self, geom: &ArrayGeometry) -> CVector {
        let (u, v) = self.point.cosines();
        Steering::new(geom).response(u, v, self.point.inverse_distance())
            * Complex64::from_polar(self.beta.sqrt(), self.omega)
    }
}

/// Spectrum ingredients of a record against one candidate response.
pub(crate) struct Fit {
    pub t: Complex64,
    pub den: f64,
    pub z: Vec<Complex64>,
}

/// The concentrated likelihood of a record: effective rows
/// `H[m, :] * theta_l` and per-antenna centred samples.
pub(crate) struct Objective {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    rows: Vec<Complex64>,
    /// `conj(y_lm - mean_l y_lm)`.
    centred: Vec<Complex64>,
    samples: Vec<Complex64>,
    pub pilot_power: f64,
    pub steering: Steering,
}

impl Objective {
    pub fn new(rec: &PilotRecord, bs: &BsRisChannel, geom: &ArrayGeometry) -> Result<Self> {
        let (n, m, l) = (rec.elements(), rec.antennas(), rec.len());
        if bs.elements() != n || bs.antennas() != m || geom.len() != n {
            return Err(invalid("record, BS-RIS channel and geometry sizes disagree"));
        }
        let mut rows = Vec::with_capacity(l * m * n);
        for theta in rec.configs() {
            for a in 0..m {
                let h = bs.matrix.row(a);
                rows.extend(theta.iter().zip(h.iter()).map(|(t, h)| t * h));
            }
        }
        let mut means = vec![Complex64::new(0.0, 0.0); m];
        for (k, y) in rec.samples().iter().enumerate() {
            means[k % m] += y;
        }
        if l > 0 {
            means.iter_mut().for_each(|s| *s /= l as f64);
        }
        let centred = rec.samples().iter().enumerate().map(|(k, y)| (y - means[k % m]).conj()).collect();
        Ok(Self {
            n,
            l,
            m,
            rows,
            centred,
            samples: rec.samples().to_vec(),
            pilot_power: rec.pilot_power,
            steering: Steering::new(geom),
        })
    }

    pub fn fit(&self, a: &[Complex64]) -> Fit {
        let mut z = Vec::with_capacity(self.l * self.m);
        for row in self.rows.chunks_exact(self.n) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, x) in row.iter().zip(a) {
                acc += r * x;
            }
            z.push(acc);
        }
        let mut t = Complex64::new(0.0, 0.0);
        let mut total = 0.0;
        for (zk, c) in z.iter().zip(&self.centred) {
            t += c * zk;
            total += zk.norm_sqr();
        }
        let mut sums = vec![Complex64::new(0.0, 0.0); self.m];
        for (k, zk) in z.iter().enumerate() {
            sums[k % self.m] += zk;
        }
        let l = self.l.max(1) as f64;
        let den = total - sums.iter().map(|s| s.norm_sqr()).sum::<f64>() / l;
        let den = if total > 0.0 && den > SINGULAR_TOL * total { den } else { 0.0 };
        Fit { t, den, z }
    }

    /// Spectrum value, or `None` where the direction is unobservable.
    pub fn value_with(&self, u: f64, v: f64, rho: f64, buf: &mut [Complex64]) -> Option<f64> {
        self.steering.fill(u, v, rho, buf);
        let fit = self.fit(buf);
        (fit.den > 0.0).then(|| fit.t.norm_sqr() / fit.den)
    }

    /// Closed-form parameters at `(u, v, rho)`.
    pub fn estimate(&self, u: f64, v: f64, rho: f64) -> Result<Estimate> {
        let point = ChannelPoint::from_cosines(u, v, rho)?;
        let a = self.steering.response(u, v, rho);
        let fit = self.fit(a.as_slice());
        if fit.den <= 0.0 {
            return Err(Error::SingularDirection);
        }
        let sp = self.pilot_power.sqrt();
        let gain = fit.t.conj() / (sp * fit.den);
        let mut d_hat = CVector::zeros(self.m);
        for (k, (y, zk)) in self.samples.iter().zip(&fit.z).enumerate() {
            d_hat[k % self.m] += y - gain * zk * sp;
        }
        d_hat /= Complex64::new(sp * self.l as f64, 0.0);
        Ok(Estimate {
            point,
            omega: gain.arg(),
            beta: gain.norm_sqr(),
            vartheta: d_hat[0].arg(),
            alpha: d_hat[0].norm_sqr(),
            d_hat,
            spectrum_peak: fit.t.norm_sqr() / fit.den,
        })
    }
}

/// Spatial spectrum of the record at `p`.
pub fn spatial_spectrum(rec: &PilotRecord, bs: &BsRisChannel, geom: &ArrayGeometry, p: &ChannelPoint) -> Result<f64> {
    let obj = Objective::new(rec, bs, geom)?;
    let (u, v) = p.cosines();
    let mut buf = vec![Complex64::new(0.0, 0.0); geom.len()];
    obj.value_with(u, v, p.inverse_distance(), &mut buf).ok_or(Error::SingularDirection)
}

/// Closed-form gain, phase and direct-channel estimates at a fixed location.
pub fn estimate_at(rec: &PilotRecord, bs: &BsRisChannel, geom: &ArrayGeometry, p: &ChannelPoint) -> Result<Estimate> {
    let obj = Objective::new(rec, bs, geom)?;
    let (u, v) = p.cosines();
    let mut est = obj.estimate(u, v, p.inverse_distance())?;
    est.point = *p;
    Ok(est)
}

/// Exhaustive maximum-likelihood estimate over `grid`. Ties keep the first
/// point in scan order.
pub fn mle(rec: &PilotRecord, bs: &BsRisChannel, geom: &ArrayGeometry, grid: &SearchGrid) -> Result<Estimate> {
    let obj = Objective::new(rec, bs, geom)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); geom.len()];
    let mut best: Option<((f64, f64, f64), f64)> = None;
    for (u, v, rho) in grid.points() {
        if let Some(val) = obj.value_with(u, v, rho, &mut buf) {
            if best.is_none_or(|(_, b)| val > b) {
                best = Some(((u, v, rho), val));
            }
        }
    }
    let ((u, v, rho), _) = best.ok_or(Error::EstimationImpossible)?;
    obj.estimate(u, v, rho)
}

/// Single-antenna estimate with BS-RIS channel `h`.
pub fn mle_single(rec: &PilotRecord, h: &CVector, geom: &ArrayGeometry, grid: &SearchGrid) -> Result<Estimate> {
    mle(rec, &BsRisChannel::single(h.clone()), geom, grid)
}

/// Multi-antenna estimate with BS-RIS channel `H` (`M x N`).
pub fn mle_multi(rec: &PilotRecord, h: &CMatrix, geom: &ArrayGeometry, grid: &SearchGrid) -> Result<Estimate> {
    mle(rec, &BsRisChannel { matrix: h.clone() }, geom, grid)
}
