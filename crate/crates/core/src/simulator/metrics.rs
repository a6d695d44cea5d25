use crate::adaptive::{alternating_phases, AoSettings};
use crate::channels::Link;
use crate::error::{invalid, Error, Result};
use crate::geometry::{CMatrix, CVector};

/// Spectral efficiency `log2(1 + snr ||H diag(g) theta + d||^2)` of a
/// configuration, with maximum-ratio combining across BS antennas.
pub fn spectral_efficiency(link: &Link, theta: &CVector, data_snr: f64) -> f64 {
    (1.0 + data_snr * link.effective(theta).norm_squared()).log2()
}

/// Best achievable spectral efficiency over unit-modulus configurations.
/// Closed form for one antenna; for several, the best of a few
/// deterministic alternating-optimization starts.
pub fn capacity(link: &Link, data_snr: f64) -> f64 {
    (1.0 + data_snr * best_gain(link)).log2()
}

/// Configuration attaining [`capacity`].
pub fn capacity_config(link: &Link) -> CVector {
    let cascade = link.cascade();
    if link.antennas() == 1 {
        let d = link.d[0];
        return cascade.row(0).transpose().map(|c| {
            let z = d * c.conj();
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                num_complex::Complex64::new(1.0, 0.0)
            }
        });
    }
    let starts = ao_starts(&cascade, &link.d);
    let mut best: Option<(f64, CVector)> = None;
    for s in starts {
        let theta = alternating_phases(&cascade, &link.d, s, &AoSettings::default(), None);
        let val = (&cascade * &theta + &link.d).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, theta));
        }
    }
    best.expect("at least one start").1
}

fn best_gain(link: &Link) -> f64 {
    if link.antennas() == 1 {
        let amp: f64 = link.cascade().row(0).iter().map(|z| z.norm()).sum();
        return (amp + link.d[0].norm()).powi(2);
    }
    let theta = capacity_config(link);
    link.effective(&theta).norm_squared()
}

/// Dominant singular direction, direct-channel alignment and the first
/// antenna's closed form.
fn ao_starts(cascade: &CMatrix, d: &CVector) -> Vec<CVector> {
    let unit =
        |v: CVector| v.map(|z| if z.norm() > 0.0 { z / z.norm() } else { num_complex::Complex64::new(1.0, 0.0) });
    let mut out = vec![crate::adaptive::dominant_start(cascade, d)];
    out.push(unit(cascade.adjoint() * d));
    out.push(unit(cascade.row(0).adjoint() * d[0]));
    out
}

/// Normalized squared error `||x_hat - x||^2 / ||x||^2`.
pub fn nmse(estimate: &CVector, truth: &CVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(invalid("estimate and truth lengths differ"));
    }
    let den = truth.norm_squared();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("NMSE of an all-zero channel".into()));
    }
    Ok((estimate - truth).norm_squared() / den)
}
