use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::experiments::{trial_rng, Context};
use super::metrics::{capacity, spectral_efficiency};
use super::scenario::{Scenario, TrackingSpec};
use crate::adaptive::{run_mle_loop, Initialization};
use crate::channels::{BsRisChannel, Link};
use crate::error::{invalid, Result};
use crate::geometry::{array_response, field_boundaries, ArrayGeometry, CVector, ChannelPoint};
use crate::widebeam::smart_init;

/// One millisecond of the walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub t_ms: u64,
    pub x: f64,
    pub y: f64,
    pub se: f64,
    pub capacity: f64,
    /// A new configuration took effect at this sample.
    pub reestimated: bool,
}

/// Random walk in the room: straight legs at a constant speed, with a new
/// inward direction and speed drawn whenever a step would hit a wall or
/// enter the exclusion zone around the RIS.
#[derive(Debug, Clone)]
pub struct Walker {
    pub x: f64,
    pub y: f64,
    heading: f64,
    speed: f64,
    room: f64,
    ris_y: f64,
    min_dist: f64,
    mean_speed: f64,
    max_speed: f64,
}

const WALL_MARGIN: f64 = 1e-3;

impl Walker {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, spec: &TrackingSpec, min_dist: f64) -> Result<Self> {
        let room = spec.room_m;
        if min_dist >= room / 2.0 {
            return Err(invalid("the exclusion zone around the RIS covers the room"));
        }
        let mut w = Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
            room,
            ris_y: room / 2.0,
            min_dist,
            mean_speed: spec.mean_speed,
            max_speed: spec.max_speed,
        };
        loop {
            let (x, y) = (rng.random_range(0.0..room), rng.random_range(0.0..room));
            if w.allowed(x, y) {
                (w.x, w.y) = (x, y);
                break;
            }
        }
        w.heading = rng.random_range(0.0..TAU);
        w.speed = w.draw_speed(rng);
        Ok(w)
    }

    fn allowed(&self, x: f64, y: f64) -> bool {
        let inside = (WALL_MARGIN..=self.room - WALL_MARGIN).contains(&x)
            && (WALL_MARGIN..=self.room - WALL_MARGIN).contains(&y);
        inside && x.hypot(y - self.ris_y) >= self.min_dist
    }

    fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.mean_speed <= 0.0 {
            return 0.0;
        }
        let exp = Exp::new(1.0 / self.mean_speed).expect("positive rate");
        exp.sample(rng).min(self.max_speed)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, dt: f64) {
        let next = |h: f64, s: f64| (self.x + s * dt * h.cos(), self.y + s * dt * h.sin());
        let (nx, ny) = next(self.heading, self.speed);
        if self.allowed(nx, ny) {
            (self.x, self.y) = (nx, ny);
            return;
        }
        for _ in 0..256 {
            let h = rng.random_range(0.0..TAU);
            let s = self.draw_speed(rng);
            let (nx, ny) = next(h, s);
            if self.allowed(nx, ny) {
                (self.heading, self.speed) = (h, s);
                (self.x, self.y) = (nx, ny);
                return;
            }
        }
        // cornered: wait for the next step
    }
}

/// Channels of a user at `(x, y)` on the RIS-centre height. The RIS lies in
/// the wall `x = 0`, centred at `y = room / 2`; the direct path is a plane
/// wave arriving from azimuth `bs_azimuth`.
pub fn room_link(
    geom: &ArrayGeometry,
    bs: &BsRisChannel,
    spec: &TrackingSpec,
    bs_azimuth: f64,
    x: f64,
    y: f64,
) -> Result<Link> {
    let (i0, k0) = (0.5 * (geom.n_h as f64 - 1.0) * geom.delta_h, 0.5 * (geom.n_v as f64 - 1.0) * geom.delta_v);
    let rel = [x, y - spec.room_m / 2.0 + i0, k0];
    let r = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
    let point = ChannelPoint::near(rel[1].atan2(rel[0]), (rel[2] / r).asin(), r)?;
    let kappa = geom.wavenumber();
    let g = array_response(geom, &point) * Complex64::from_polar(1.0, -kappa * r);
    let phase = kappa * (bs_azimuth.cos() * x + bs_azimuth.sin() * y);
    let d = CVector::from_element(bs.antennas(), Complex64::from_polar(spec.direct_amplitude, phase));
    Link::new(bs.clone(), g, d)
}

/// Walks the user through the room, re-estimating the channel every
/// re-estimation period with `reestimation_pilots` pilots and sampling the
/// spectral efficiency of the current configuration every sample period.
/// The walk depends only on the seed, so runs with different pilot budgets
/// see the same trajectory.
pub fn track_user(scenario: &Scenario, reestimation_pilots: usize) -> Result<Vec<TrackSample>> {
    if reestimation_pilots < 2 {
        return Err(invalid("re-estimation needs at least two pilots"));
    }
    let spec = TrackingSpec { reestimation_pilots, ..scenario.tracking };
    spec.validate()?;
    let ctx = Context::new(scenario)?;
    let geom = ctx.geom;
    let (bs, codebook, beams) = match (ctx.fixed_bs(), ctx.codebook(), ctx.beams()) {
        (Some(bs), Some(c), Some(b)) => (bs, c, b),
        _ => return Err(invalid("tracking needs a deterministic BS-RIS channel and wide beams")),
    };
    let plan = ctx.plan(scenario.model)?;
    let mut walk_rng: ChaCha8Rng = trial_rng(scenario.master_seed, 0);
    let mut noise_rng: ChaCha8Rng = trial_rng(scenario.master_seed, 1);
    let min_dist = field_boundaries(&geom).bjornson;
    let mut walker = Walker::new(&mut walk_rng, &spec, min_dist)?;

    let dt_ms = spec.sample_period_ms as u64;
    let total = (spec.duration_s * 1000.0).round() as u64;
    let mut out = Vec::with_capacity((total / dt_ms) as usize + 1);
    let mut config: Option<CVector> = None;
    let mut t = 0;
    while t <= total {
        if t > 0 {
            walker.step(&mut walk_rng, dt_ms as f64 / 1000.0);
        }
        let link = room_link(&geom, bs, &spec, scenario.bs.azimuth, walker.x, walker.y)?;
        let reestimate = t % spec.reestimation_period_ms as u64 == 0;
        if reestimate {
            let (init, pilots) = match &config {
                None => (Initialization::Beams(beams.clone()), spec.initial_pilots),
                Some(prev) => (Initialization::Beams(smart_init(codebook, prev)?), spec.reestimation_pilots),
            };
            let run = run_mle_loop(&link, codebook, &plan, &init, &ctx.loop_settings(pilots), &mut noise_rng)?;
            config = Some(run.config);
        }
        let theta = config.as_ref().expect("configured at t = 0");
        out.push(TrackSample {
            t_ms: t,
            x: walker.x,
            y: walker.y,
            se: spectral_efficiency(&link, theta, ctx.powers.data_snr),
            capacity: capacity(&link, ctx.powers.data_snr),
            reestimated: reestimate,
        });
        t += dt_ms;
    }
    Ok(out)
}

/// Samples whose spectral efficiency is below `fraction` of capacity.
pub fn samples_below(samples: &[TrackSample], fraction: f64) -> usize {
    samples.iter().filter(|s| s.se < fraction * s.capacity).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::SearchSettings;
    use rand::SeedableRng;

    fn spec() -> TrackingSpec {
        TrackingSpec { duration_s: 0.05, ..TrackingSpec::default() }
    }

    #[test]
    fn walker_stays_in_the_room_and_out_of_the_exclusion_zone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = TrackingSpec { mean_speed: 3.0, max_speed: 6.0, ..TrackingSpec::default() };
        let mut w = Walker::new(&mut rng, &s, 0.5).unwrap();
        let mut travelled = 0.0;
        for _ in 0..20_000 {
            let (x0, y0) = (w.x, w.y);
            w.step(&mut rng, 0.001);
            travelled += (w.x - x0).hypot(w.y - y0);
            assert!(w.x > 0.0 && w.x < 4.0 && w.y > 0.0 && w.y < 4.0);
            assert!(w.x.hypot(w.y - 2.0) >= 0.5);
        }
        assert!(travelled > 10.0, "{travelled}");
    }

    #[test]
    fn speeds_are_capped_exponentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Walker::new(&mut rng, &TrackingSpec::default(), 0.5).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|_| w.draw_speed(&mut rng)).collect();
        assert!(draws.iter().all(|s| (0.0..=2.0).contains(s)));
        // E[min(X, 2)] for X ~ Exp(1) is 1 - e^{-2}
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - (1.0 - (-2f64).exp())).abs() < 0.02, "{mean}");
    }

    #[test]
    fn room_link_matches_the_geometry() {
        let s = Scenario { n_h: 8, n_v: 8, ..Scenario::default() };
        let ctx = Context::new(&s).unwrap();
        let link = room_link(&ctx.geom, ctx.fixed_bs().unwrap(), &spec(), 0.3, 1.0, 2.0).unwrap();
        assert!((link.d[0].norm() - 8.0).abs() < 1e-12);
        // broadside user one metre away: every element within a few millimetres
        // of that distance, so the phases match a plane wave closely
        let far = array_response(&ctx.geom, &ChannelPoint::far(0.0, 0.0).unwrap());
        let corr = link.g.dotc(&far).norm() / 64.0;
        assert!(corr > 0.99, "{corr}");
    }

    #[test]
    fn static_user_keeps_a_constant_rate() {
        let s = Scenario {
            n_h: 8,
            n_v: 8,
            snr_pilot_db: 60.0,
            search: SearchSettings::default().far_only(),
            tracking: TrackingSpec { mean_speed: 0.0, duration_s: 0.04, ..TrackingSpec::default() },
            ..Scenario::default()
        };
        let run = track_user(&s, 4).unwrap();
        assert_eq!(run.len(), 41);
        assert_eq!(run.iter().filter(|r| r.reestimated).count(), 5);
        let first = run[0].se;
        assert!(
            run.iter().all(|r| (r.se - first).abs() < 1e-3 * first),
            "{:?}",
            run.iter().map(|r| r.se).collect::<Vec<_>>()
        );
        assert!(run.iter().all(|r| r.x == run[0].x && r.y == run[0].y));
    }

    #[test]
    fn trajectory_is_independent_of_the_pilot_budget() {
        let s = Scenario {
            n_h: 8,
            n_v: 8,
            search: SearchSettings::default().far_only(),
            tracking: TrackingSpec { duration_s: 0.03, ..TrackingSpec::default() },
            ..Scenario::default()
        };
        let a = track_user(&s, 3).unwrap();
        let b = track_user(&s, 5).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.x == q.x && p.y == q.y && p.capacity == q.capacity));
        assert_eq!(a, track_user(&s, 3).unwrap());
        assert!(track_user(&s, 1).is_err());
    }
}
