//! Closed-loop pilot design: estimate, configure for the estimate, send the
//! next pilot with the unused codebook entry nearest to that configuration.

use num_complex::Complex64;
use rand::Rng;

use crate::channels::{dominant_left_singular, BsRisChannel, Link};
use crate::codebook::Codebook;
use crate::error::{invalid, Error, Result};
use crate::estimator::{Estimate, SearchPlan};
use crate::geometry::{ArrayGeometry, CMatrix, CVector, Steering};
use crate::simulator::metrics::spectral_efficiency;
use crate::widebeam::InitConfigs;

fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Single-antenna configuration maximizing the SNR under the estimate:
/// `e^{j(vartheta - omega)} e^{-j arg h} a*(psi)`.
pub fn optimal_config_single(est: &Estimate, h: &CVector, geom: &ArrayGeometry) -> CVector {
    let (u, v) = est.point.cosines();
    let a = Steering::new(geom).response(u, v, est.point.inverse_distance());
    let rot = Complex64::from_polar(1.0, est.vartheta - est.omega);
    a.zip_map(h, |a, h| rot * (unit(h) * a).conj())
}

/// Stopping rule of the alternating phase optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoSettings {
    pub max_sweeps: usize,
    pub rel_tol: f64,
}

impl Default for AoSettings {
    fn default() -> Self {
        Self { max_sweeps: 50, rel_tol: 1e-6 }
    }
}

/// Phase profile steering `G theta` along the dominant left singular vector
/// of `G`, rotated to add coherently with `d`.
pub fn dominant_start(g: &CMatrix, d: &CVector) -> CVector {
    let u = dominant_left_singular(g);
    let theta = (g.adjoint() * u).map(unit);
    let rot = unit((g * &theta).dotc(d));
    theta * rot
}

/// Maximizes `||G theta + d||^2` over unit-modulus `theta` by exact
/// per-element updates. When `trace` is given, the objective after every
/// single-element update is appended to it.
pub fn alternating_phases(
    g: &CMatrix,
    d: &CVector,
    start: CVector,
    settings: &AoSettings,
    mut trace: Option<&mut Vec<f64>>,
) -> CVector {
    let (m, n) = g.shape();
    let mut theta = start;
    let mut r = g * &theta + d;
    let mut obj = r.norm_squared();
    for _ in 0..settings.max_sweeps {
        let before = obj;
        for k in 0..n {
            let col = g.column(k);
            // remove element k, then point its contribution along the rest
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..m {
                r[i] -= col[i] * theta[k];
                acc += col[i].conj() * r[i];
            }
            theta[k] = unit(acc);
            for i in 0..m {
                r[i] += col[i] * theta[k];
            }
            obj = r.norm_squared();
            if let Some(t) = trace.as_deref_mut() {
                t.push(obj);
            }
        }
        if obj - before <= settings.rel_tol * before.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    theta
}

/// Multi-antenna configuration maximizing `||H diag(g_hat) theta + d_hat||^2`.
pub fn optimal_config_multi(g_hat: &CVector, d_hat: &CVector, h: &CMatrix) -> CVector {
    let mut g = h.clone();
    for (k, gk) in g_hat.iter().enumerate() {
        g.column_mut(k).iter_mut().for_each(|z| *z *= gk);
    }
    let start = dominant_start(&g, d_hat);
    alternating_phases(&g, d_hat, start, &AoSettings::default(), None)
}

/// Configuration for the estimate: closed form for one antenna, alternating
/// optimization otherwise.
pub fn configure(est: &Estimate, bs: &BsRisChannel, geom: &ArrayGeometry) -> CVector {
    if bs.antennas() == 1 {
        optimal_config_single(est, &bs.h(), geom)
    } else {
        optimal_config_multi(&est.g_hat(geom), &est.d_hat, &bs.matrix)
    }
}

/// Unused entry most correlated with `target`; marks it used. Ties go to the
/// lowest index.
pub fn select_next(codebook: &Codebook, used: &mut [bool], target: &CVector) -> Result<usize> {
    if used.len() != codebook.len() {
        return Err(invalid("usage mask does not match the codebook"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in codebook.configs.iter().enumerate() {
        if used[i] {
            continue;
        }
        let s = target.dotc(c).norm_sqr();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, _) = best.ok_or(Error::CodebookExhausted)?;
    used[i] = true;
    Ok(i)
}

/// How the first two pilots are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// Explicit configurations, e.g. wide beams or a smart initialization.
    Beams(InitConfigs),
    /// Two codebook entries by index.
    Entries(usize, usize),
}

impl Initialization {
    /// Two distinct codebook entries drawn uniformly.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, codebook: &Codebook) -> Result<Self> {
        if codebook.len() < 2 {
            return Err(invalid("random initialization needs two codebook entries"));
        }
        let a = rng.random_range(0..codebook.len());
        let mut b = rng.random_range(0..codebook.len() - 1);
        if b >= a {
            b += 1;
        }
        Ok(Self::Entries(a, b))
    }
}

/// Pilot budget and powers of one loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub pilots: usize,
    pub pilot_power: f64,
    pub noise_var: f64,
    /// `P_d / sigma^2` used for the spectral-efficiency trace.
    pub data_snr: f64,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    /// Estimate from every pilot actually sent.
    pub estimate: Estimate,
    pub config: CVector,
    /// Estimates after `2, 3, ...` pilots.
    pub estimates: Vec<Estimate>,
    /// True spectral efficiency of the configuration after each estimate.
    pub se_trace: Vec<f64>,
    /// Codebook indices chosen after the initial pilots.
    pub selected: Vec<usize>,
    /// Pilots of the budget left unsent because the codebook ran out.
    pub shortfall: usize,
    /// Bits fed back per selected index.
    pub feedback_bits: u32,
    pub configs: Vec<CVector>,
}

/// Runs the adaptive estimation loop against the true channels of `link`.
pub fn run_mle_loop<R: Rng + ?Sized>(
    link: &Link,
    codebook: &Codebook,
    plan: &SearchPlan,
    init: &Initialization,
    settings: &LoopSettings,
    rng: &mut R,
) -> Result<LoopOutcome> {
    if settings.pilots < 2 {
        return Err(invalid("the loop needs at least two pilots"));
    }
    let geom = plan.geometry();
    let mut used = vec![false; codebook.len()];
    let first: Vec<CVector> = match init {
        Initialization::Beams(b) => {
            for (i, c) in codebook.configs.iter().enumerate() {
                used[i] = *c == b.theta1 || *c == b.theta2;
            }
            b.to_vec()
        }
        &Initialization::Entries(a, b) => {
            if a == b || a >= codebook.len() || b >= codebook.len() {
                return Err(invalid("initial entries must be two distinct codebook indices"));
            }
            used[a] = true;
            used[b] = true;
            vec![codebook.configs[a].clone(), codebook.configs[b].clone()]
        }
    };
    let mut tracker = plan.tracker(&link.bs, settings.pilot_power, settings.noise_var)?;
    let mut configs = Vec::with_capacity(settings.pilots);
    for theta in first {
        let y = link.observe(rng, &theta, settings.pilot_power, settings.noise_var);
        tracker.push(theta.clone(), y.as_slice())?;
        configs.push(theta);
    }
    let mut estimates = Vec::new();
    let mut se_trace = Vec::new();
    let mut selected = Vec::new();
    let mut shortfall = 0;
    loop {
        let est = tracker.estimate()?;
        let config = configure(&est, &link.bs, geom);
        se_trace.push(spectral_efficiency(link, &config, settings.data_snr));
        estimates.push(est);
        if configs.len() == settings.pilots {
            break;
        }
        let idx = match select_next(codebook, &mut used, &config) {
            Ok(i) => i,
            Err(Error::CodebookExhausted) => {
                shortfall = settings.pilots - configs.len();
                break;
            }
            Err(e) => return Err(e),
        };
        let theta = codebook.configs[idx].clone();
        let y = link.observe(rng, &theta, settings.pilot_power, settings.noise_var);
        tracker.push(theta.clone(), y.as_slice())?;
        configs.push(theta);
        selected.push(idx);
    }
    let estimate = estimates.last().expect("at least one estimate").clone();
    let config = configure(&estimate, &link.bs, geom);
    Ok(LoopOutcome {
        estimate,
        config,
        estimates,
        se_trace,
        selected,
        shortfall,
        feedback_bits: codebook.index_bits(),
        configs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::build_codebook;
    use crate::estimator::{spatial_spectrum, PilotRecord, SearchSettings};
    use crate::geometry::ChannelPoint;
    use crate::simulator::metrics::capacity;
    use crate::widebeam::{half_space_beams, plan_subris};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ones(n: usize) -> BsRisChannel {
        BsRisChannel::single(CVector::from_element(n, c(1.0, 0.0)))
    }

    fn estimate_at(point: ChannelPoint, omega: f64, vartheta: f64) -> Estimate {
        Estimate {
            point,
            omega,
            beta: 1.0,
            vartheta,
            alpha: 4.0,
            d_hat: CVector::from_element(1, Complex64::from_polar(2.0, vartheta)),
            spectrum_peak: 0.0,
        }
    }

    #[test]
    fn broadside_estimate_gives_all_ones() {
        let g = ArrayGeometry::new(4, 4, 0.5, 0.5, 1.0).unwrap();
        let est = estimate_at(ChannelPoint::far(0.0, 0.0).unwrap(), 0.3, 0.3);
        let theta = optimal_config_single(&est, &CVector::from_element(16, c(1.0, 0.0)), &g);
        assert!(theta.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));
        let mut louder = est.clone();
        louder.beta *= 10.0;
        assert_eq!(optimal_config_single(&louder, &CVector::from_element(16, c(1.0, 0.0)), &g), theta);
    }

    #[test]
    fn perfect_estimate_reaches_capacity() {
        let g = ArrayGeometry::new(4, 3, 0.5, 0.5, 1.0).unwrap();
        let h = CVector::from_fn(12, |n, _| Complex64::from_polar(1.0, 0.4 * n as f64));
        let point = ChannelPoint::near(0.3, -0.2, 4.0).unwrap();
        let (omega, vartheta) = (1.1, -2.0);
        let gvec = crate::geometry::array_response(&g, &point) * Complex64::from_polar(0.7, omega);
        let link = Link::new(
            BsRisChannel::single(h.clone()),
            gvec,
            CVector::from_element(1, Complex64::from_polar(1.5, vartheta)),
        )
        .unwrap();
        let mut est = estimate_at(point, omega, vartheta);
        est.beta = 0.49;
        let theta = optimal_config_single(&est, &h, &g);
        assert!((spectral_efficiency(&link, &theta, 3.0) - capacity(&link, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn multi_with_one_antenna_matches_closed_form() {
        let g = ArrayGeometry::new(3, 3, 0.5, 0.5, 1.0).unwrap();
        let h = CVector::from_fn(9, |n, _| Complex64::from_polar(1.0, 0.9 * n as f64));
        let est = estimate_at(ChannelPoint::far(0.4, 0.1).unwrap(), 0.2, 1.0);
        let single = optimal_config_single(&est, &h, &g);
        let row = CMatrix::from_row_slice(1, 9, h.as_slice());
        let multi = optimal_config_multi(&est.g_hat(&g), &est.d_hat, &row);
        let obj = |t: &CVector| (&row * est.g_hat(&g).component_mul(t) + &est.d_hat).norm_squared();
        assert!((obj(&single) - obj(&multi)).abs() < 1e-9 * obj(&single));
    }

    #[test]
    fn single_element_update() {
        let g = CMatrix::from_column_slice(3, 1, &[c(1.0, 2.0), c(-0.5, 0.1), c(0.3, -0.7)]);
        let d = CVector::from_vec(vec![c(0.2, 0.1), c(1.0, -1.0), c(-0.4, 0.0)]);
        let theta = alternating_phases(&g, &d, CVector::from_element(1, c(1.0, 0.0)), &AoSettings::default(), None);
        let s: Complex64 = (0..3).map(|m| d[m].conj() * g[(m, 0)]).sum();
        assert!((theta[0] - Complex64::from_polar(1.0, -s.arg())).norm() < 1e-12);
    }

    #[test]
    fn updates_never_decrease_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = CMatrix::from_fn(4, 10, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let d = CVector::from_fn(4, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let start = CVector::from_fn(10, |_, _| Complex64::from_polar(1.0, rng.random::<f64>() * 6.3));
            let mut trace = vec![(&g * &start + &d).norm_squared()];
            alternating_phases(&g, &d, start, &AoSettings::default(), Some(&mut trace));
            assert!(trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn select_next_examples() {
        let g = ArrayGeometry::new(4, 1, 0.5, 0.5, 1.0).unwrap();
        let cb = build_codebook(&g, &ones(4), (0.0, 0.0)).unwrap();
        let mut used = vec![false; 4];
        assert_eq!(select_next(&cb, &mut used, &cb.configs[2]).unwrap(), 2);
        assert!(used[2]);

        // a beam between sin = 0 and 0.5, closer to 0.5
        let mut used = vec![false; 4];
        let target = Steering::new(&g).response(0.35, 0.0, 0.0).map(|z| z.conj());
        let idx = select_next(&cb, &mut used, &target).unwrap();
        assert!((cb.angle_pairs[idx].0.sin() - 0.5).abs() < 1e-12);

        let mut used = vec![true, true, false, true];
        assert_eq!(select_next(&cb, &mut used, &target).unwrap(), 2);
        assert!(matches!(select_next(&cb, &mut used, &target), Err(Error::CodebookExhausted)));
    }

    /// Far-field user on a lattice point of the search plan.
    fn noise_free_setup(rng: &mut ChaCha8Rng, plan: &SearchPlan) -> Link {
        let geom = plan.geometry();
        let grid = plan.grid();
        let (nu, nv) = (grid.u.len(), grid.v.len());
        let u = grid.u[rng.random_range(nu / 4..3 * nu / 4)];
        let v = grid.v[rng.random_range(nv / 4..3 * nv / 4)];
        let g = Steering::new(geom).response(u, v, 0.0) * Complex64::from_polar(1.0, rng.random::<f64>() * 6.0);
        let d = CVector::from_element(1, Complex64::from_polar(3.0, rng.random::<f64>() * 6.0));
        Link::new(ones(geom.len()), g, d).unwrap()
    }

    #[test]
    fn noise_free_loop_reaches_capacity() {
        let geom = ArrayGeometry::new(8, 8, 0.25, 0.25, 1.0).unwrap();
        let plan = SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap();
        let cb = build_codebook(&geom, &ones(64), crate::codebook::DEFAULT_REFERENCE).unwrap();
        let init = Initialization::Beams(half_space_beams(&plan_subris(&geom).unwrap(), &ones(64)).unwrap());
        let settings = LoopSettings { pilots: 4, pilot_power: 1.0, noise_var: 0.0, data_snr: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let link = noise_free_setup(&mut rng, &plan);
            let out = run_mle_loop(&link, &cb, &plan, &init, &settings, &mut rng).unwrap();
            assert_eq!(out.configs.len(), 4);
            assert_eq!(out.selected.len(), 2);
            assert_eq!(out.se_trace.len(), 3);
            let cap = capacity(&link, 1.0);
            assert!((out.se_trace.last().unwrap() - cap).abs() < 1e-6);
            assert!(out.se_trace.iter().all(|s| *s <= cap + 1e-9));
            let mut sorted = out.selected.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), out.selected.len());
        }
    }

    #[test]
    fn spectrum_at_shared_point_grows_with_pilots() {
        // holds once the estimate sits on the true point; with two random
        // orthogonal beams the early estimates can be arbitrary and the
        // spectrum at a wrong point may shrink as pilots are added
        let geom = ArrayGeometry::new(8, 8, 0.25, 0.25, 1.0).unwrap();
        let plan = SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap();
        let cb = build_codebook(&geom, &ones(64), crate::codebook::DEFAULT_REFERENCE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let link = noise_free_setup(&mut rng, &plan);
        let init = Initialization::Beams(half_space_beams(&plan_subris(&geom).unwrap(), &ones(64)).unwrap());
        let settings = LoopSettings { pilots: 8, pilot_power: 1.0, noise_var: 0.0, data_snr: 1.0 };
        let out = run_mle_loop(&link, &cb, &plan, &init, &settings, &mut rng).unwrap();
        let bs = &link.bs;
        for l in 2..out.configs.len() {
            let p = out.estimates[l - 2].point;
            let mut before = PilotRecord::new(64, 1, 1.0, 0.0).unwrap();
            let mut after = before.clone();
            for (k, theta) in out.configs.iter().enumerate().take(l + 1) {
                let y = link.effective(theta);
                if k < l {
                    before.push(theta.clone(), y.as_slice()).unwrap();
                }
                after.push(theta.clone(), y.as_slice()).unwrap();
            }
            let (a, b) = (spatial_spectrum(&before, bs, &geom, &p), spatial_spectrum(&after, bs, &geom, &p));
            let energy: f64 = after.samples().iter().map(|y| y.norm_sqr()).sum();
            if let (Ok(a), Ok(b)) = (a, b) {
                assert!(b >= a - 1e-9 * energy, "iteration {l}: {b} < {a}");
            }
        }
    }

    #[test]
    fn two_pilots_is_a_single_estimate() {
        let geom = ArrayGeometry::new(4, 4, 0.5, 0.5, 1.0).unwrap();
        let plan = SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap();
        let cb = build_codebook(&geom, &ones(16), crate::codebook::DEFAULT_REFERENCE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let link = noise_free_setup(&mut rng, &plan);
        let settings = LoopSettings { pilots: 2, pilot_power: 1.0, noise_var: 0.0, data_snr: 1.0 };
        let out = run_mle_loop(&link, &cb, &plan, &Initialization::Entries(0, 1), &settings, &mut rng).unwrap();
        assert!(out.selected.is_empty());
        assert_eq!(out.estimates.len(), 1);
        assert!(run_mle_loop(&link, &cb, &plan, &Initialization::Entries(1, 1), &settings, &mut rng).is_err());
    }

    #[test]
    fn exhausted_codebook_reports_shortfall() {
        let geom = ArrayGeometry::new(2, 2, 0.5, 0.5, 1.0).unwrap();
        let plan = SearchPlan::new(&geom, SearchSettings::default().far_only()).unwrap();
        let cb = build_codebook(&geom, &ones(4), crate::codebook::DEFAULT_REFERENCE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let link = noise_free_setup(&mut rng, &plan);
        let settings = LoopSettings { pilots: cb.len() + 3, pilot_power: 1.0, noise_var: 0.0, data_snr: 1.0 };
        let out = run_mle_loop(&link, &cb, &plan, &Initialization::Entries(0, 1), &settings, &mut rng).unwrap();
        assert_eq!(out.shortfall, 3);
        assert_eq!(out.configs.len(), cb.len());
    }
}
