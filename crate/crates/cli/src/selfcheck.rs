//! Quick invariant checks on an 8x8 half-wavelength array.

use std::f64::consts::PI;

use rand::Rng;
use ris_core::channels::{synth_bs_ris, BsPlacement, DirectChannel, Link, LosChannel};
use ris_core::codebook::{build_codebook, DEFAULT_REFERENCE};
use ris_core::estimator::{PilotRecord, SearchPlan, SearchSettings};
use ris_core::simulator::experiments::trial_rng;
use ris_core::simulator::output::Table;
use ris_core::{ArrayGeometry, CVector, ChannelPoint, Result};

const TOL: f64 = 1e-6;
const DRAWS: usize = 20;
const PILOTS: usize = 4;

type Check = (&'static str, fn() -> Result<f64>, f64);

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    r.min(2.0 * PI - r)
}

fn geometry() -> Result<ArrayGeometry> {
    ArrayGeometry::at_frequency(8, 8, 28e9, 2.0)
}

/// Worst parameter error when estimating on-grid users from noise-free
/// samples under random unit-modulus configurations.
fn recovery() -> Result<f64> {
    let geom = geometry()?;
    let plan = SearchPlan::new(&geom, SearchSettings::default().far_only())?;
    let bs = synth_bs_ris(&geom, &BsPlacement::default(), 1)?;
    let mut rng = trial_rng(0, 0);
    let grid = plan.grid();
    let mut worst = 0.0f64;
    for _ in 0..DRAWS {
        let (u, v) = loop {
            let u = grid.u[rng.random_range(0..grid.u.len())];
            let v = grid.v[rng.random_range(0..grid.v.len())];
            if u.hypot(v) < 0.9 {
                break (u, v);
            }
        };
        let point = ChannelPoint::from_cosines(u, v, 0.0)?;
        let los = LosChannel { beta: rng.random_range(0.5..2.0), omega: rng.random_range(-PI..PI), point };
        let direct = DirectChannel::from_polar(rng.random_range(0.1..4.0), rng.random_range(-PI..PI));
        let link = Link::new(bs.clone(), los.dense(&geom), direct.coeffs.clone())?;
        let mut rec = PilotRecord::new(geom.len(), 1, 1.0, 0.0)?;
        for _ in 0..PILOTS {
            let theta = CVector::from_fn(geom.len(), |_, _| {
                num_complex::Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
            });
            let y = link.observe(&mut rng, &theta, 1.0, 0.0);
            rec.push(theta, y.as_slice())?;
        }
        let e = plan.estimate(&rec, &bs)?;
        let errs = [
            (e.beta - los.beta).abs(),
            wrap(e.omega - los.omega),
            (e.alpha - direct.alpha()).abs(),
            wrap(e.vartheta - direct.vartheta()),
            (e.point.azimuth - point.azimuth).abs(),
            (e.point.elevation - point.elevation).abs(),
        ];
        worst = errs.iter().fold(worst, |a, &b| a.max(b));
    }
    Ok(worst)
}

/// Largest off-diagonal Gram entry of the codebook responses, relative to N.
fn orthogonality() -> Result<f64> {
    let geom = geometry()?;
    let bs = synth_bs_ris(&geom, &BsPlacement::default(), 1)?;
    let a = build_codebook(&geom, &bs, DEFAULT_REFERENCE)?.responses(&geom);
    let gram = a.adjoint() * &a;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in (0..gram.ncols()).filter(|&j| j != i) {
            worst = worst.max(gram[(i, j)].norm());
        }
    }
    Ok(worst / geom.len() as f64)
}

/// Runs every check; the flag is true when all pass.
pub fn run() -> (Table, bool) {
    let mut t = Table::new(&["check", "passed", "detail"]);
    let mut all = true;
    let checks: [Check; 2] = [("noise_free_recovery", recovery, TOL), ("codebook_orthogonality", orthogonality, 1e-8)];
    for (name, check, bound) in checks {
        let (ok, detail) = match check() {
            Ok(x) => (x < bound, format!("{x:.3e} (bound {bound:e})")),
            Err(e) => (false, e.to_string()),
        };
        all &= ok;
        eprintln!("{name}: {}", if ok { "pass" } else { "FAIL" });
        t.push(vec![name.into(), ok.into(), detail.as_str().into()]).expect("fixed width");
    }
    (t, all)
}
