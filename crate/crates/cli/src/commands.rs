use ris_core::adaptive::run_mle_loop;
use ris_core::simulator::experiments::{
    hierarchical_comparison, ls_sweep, pilot_snr_cdf, sweep_pilots, trial_rng, Context,
};
use ris_core::simulator::metrics::{capacity, nmse};
use ris_core::simulator::output::{cdf_table, hier_table, ls_table, sweep_table, track_table, Table};
use ris_core::simulator::scenario::{InitMode, Model};
use ris_core::simulator::tracking::track_user;
use ris_core::widebeam::{beam_gain, half_space_beams, isotropic_beam, plan_subris};
use ris_core::Scenario;

use crate::Failure;

type Out = Result<Table, Failure>;

fn push(t: &mut Table, row: Vec<ris_core::simulator::output::Value>) -> Result<(), Failure> {
    t.push(row).map_err(Failure::from)
}

pub fn codebook(s: &Scenario) -> Out {
    let ctx = Context::new(s)?;
    let cb = match ctx.codebook() {
        Some(c) => c.clone(),
        None => ctx.draw(&mut trial_rng(s.master_seed, 0))?.codebook.into_owned(),
    };
    let mut t = Table::new(&["index", "azimuth_rad", "elevation_rad"]);
    for (i, &(az, el)) in cb.angle_pairs.iter().enumerate() {
        push(&mut t, vec![i.into(), az.into(), el.into()])?;
    }
    Ok(t)
}

pub fn beams(s: &Scenario, step_deg: f64) -> Out {
    if !(step_deg > 0.0 && step_deg <= 90.0) {
        return Err(Failure::Invalid("--step-deg must lie in (0, 90]".into()));
    }
    let geom = s.geometry()?;
    let plan = plan_subris(&geom)?;
    let bs = ris_core::channels::synth_bs_ris(&geom, &s.bs, s.bs_antennas)?;
    let iso = isotropic_beam(&plan, &bs)?;
    let half = half_space_beams(&plan, &bs)?;
    let comp = bs.compensation();
    let db = |g: f64| 10.0 * g.log10();
    let steps = (180.0 / step_deg).floor() as i64;
    let mut t = Table::new(&["azimuth_deg", "elevation_deg", "gain_db_isotropic", "gain_db_beam1", "gain_db_beam2"]);
    for j in 0..=steps {
        let el = -90.0 + j as f64 * step_deg;
        for i in 0..=steps {
            let az = -90.0 + i as f64 * step_deg;
            let (a, e) = (az.to_radians(), el.to_radians());
            let gains = [&iso, &half.theta1, &half.theta2].map(|th| db(beam_gain(&geom, th, &comp, a, e)));
            push(&mut t, vec![az.into(), el.into(), gains[0].into(), gains[1].into(), gains[2].into()])?;
        }
    }
    Ok(t)
}

pub fn estimate(s: &Scenario, model: Model, init: InitMode) -> Out {
    let ctx = Context::new(s)?;
    let plan = ctx.plan(model)?;
    let mut rng = trial_rng(s.master_seed, 0);
    let draw = ctx.draw(&mut rng)?;
    let start = draw.initialization(init, &mut rng)?;
    let out = run_mle_loop(&draw.link, &draw.codebook, &plan, &start, &ctx.loop_settings(s.max_pilots), &mut rng)?;
    let cap = capacity(&draw.link, ctx.powers.data_snr);
    let mut t = Table::new(&[
        "pilots",
        "se",
        "capacity",
        "nmse_g",
        "nmse_d",
        "azimuth_rad",
        "elevation_rad",
        "distance_m",
        "beta",
        "alpha",
    ]);
    for (k, (e, se)) in out.estimates.iter().zip(&out.se_trace).enumerate() {
        let ng = nmse(&e.g_hat(&ctx.geom), &draw.link.g).unwrap_or(f64::NAN);
        let nd = nmse(&e.d_hat, &draw.link.d).unwrap_or(f64::NAN);
        let p = e.point;
        let row = vec![
            (k + 2).into(),
            (*se).into(),
            cap.into(),
            ng.into(),
            nd.into(),
            p.azimuth.into(),
            p.elevation.into(),
            p.distance.unwrap_or(f64::NAN).into(),
            e.beta.into(),
            e.alpha.into(),
        ];
        push(&mut t, row)?;
    }
    Ok(t)
}

pub fn sweep(s: &Scenario, model: Model, init: InitMode) -> Out {
    Ok(sweep_table(&sweep_pilots(s, model, init, s.max_pilots)?))
}

pub fn ls(s: &Scenario) -> Out {
    let pilots: Vec<usize> = (1..=s.max_pilots).collect();
    Ok(ls_table(&ls_sweep(s, &pilots)?))
}

pub fn hier(s: &Scenario, depth: usize) -> Out {
    Ok(hier_table(&hierarchical_comparison(s, depth)?))
}

pub fn cdf(s: &Scenario) -> Out {
    let mut t = Table::new(&["init", "rank", "snr_db", "probability"]);
    for (name, mode) in [("wide", InitMode::Wide), ("random", InitMode::Random)] {
        t.rows.extend(cdf_table(name, &pilot_snr_cdf(s, mode)?).rows);
    }
    Ok(t)
}

pub fn track(s: &Scenario, pilots: usize) -> Out {
    Ok(track_table(&track_user(s, pilots)?))
}
