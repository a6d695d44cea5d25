//! Wide beams built from sub-RIS partitions.
//!
//! The RIS is cut into horizontal strips of rows. Each strip steers a narrow
//! beam of its own toward a different pair of an orthogonal sub-array
//! codebook, so together they illuminate the whole visible region (or one
//! half of it).

use num_complex::Complex64;

use crate::channels::BsRisChannel;
use crate::codebook::{lattice_cosines, Codebook};
use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, CVector, Steering};

/// Sub-RIS partition of a square array with spacing `lambda / 2^x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WideBeamPlan {
    pub geom: ArrayGeometry,
    pub spacing_exponent: u32,
    pub subris_rows: usize,
    pub subris_count: usize,
    pub subris_size: usize,
    /// Direction cosines of the sub-array codebook, in codebook order.
    pub per_subris_pairs: Vec<(f64, f64)>,
}

/// Two initial pilot configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfigs {
    pub theta1: CVector,
    pub theta2: CVector,
}

impl InitConfigs {
    pub fn to_vec(&self) -> Vec<CVector> {
        vec![self.theta1.clone(), self.theta2.clone()]
    }
}

pub fn plan_subris(geom: &ArrayGeometry) -> Result<WideBeamPlan> {
    geom.validate()?;
    if geom.n_h != geom.n_v || (geom.delta_h - geom.delta_v).abs() > 1e-12 * geom.wavelength {
        return Err(Error::UnsupportedGeometry("wide beams need a square array with equal spacings".into()));
    }
    let ratio = geom.wavelength / geom.delta_h;
    let x = ratio.log2().round();
    if x < 1.0 || (2f64.powf(x) - ratio).abs() > 1e-9 * ratio {
        return Err(Error::UnsupportedGeometry(format!(
            "spacing must be lambda / 2^x with x >= 1, got lambda / {ratio}"
        )));
    }
    let x = x as u32;
    let rows = 1usize << (x - 1);
    if !geom.n_v.is_multiple_of(rows) {
        return Err(Error::UnsupportedGeometry(format!("{} rows cannot be split into strips of {rows}", geom.n_v)));
    }
    let count = geom.n_v / rows;
    let sub = geom.with_size(geom.n_h, rows);
    // half-beamwidth offset: the lattice then sits symmetrically inside the
    // visible region and no direction falls on a null of every strip
    let half_beam = 0.5 * geom.wavelength / (geom.n_h as f64 * geom.delta_h);
    let pairs = lattice_cosines(&sub, (half_beam.asin(), 0.0))?;
    if pairs.len() < count {
        return Err(Error::UnsupportedGeometry(format!(
            "sub-array codebook has {} pairs for {count} sub-RISs",
            pairs.len()
        )));
    }
    Ok(WideBeamPlan {
        geom: *geom,
        spacing_exponent: x,
        subris_rows: rows,
        subris_count: count,
        subris_size: rows * geom.n_h,
        per_subris_pairs: pairs,
    })
}

/// Configuration in which each `tile_rows x tile_cols` tile of the array,
/// taken in row-major tile order, steers toward its own direction.
pub(crate) fn tiled_beam(
    geom: &ArrayGeometry,
    tile_rows: usize,
    tile_cols: usize,
    dirs: &[(f64, f64)],
    comp: &CVector,
) -> Result<CVector> {
    if tile_rows == 0 || tile_cols == 0 || !geom.n_v.is_multiple_of(tile_rows) || !geom.n_h.is_multiple_of(tile_cols) {
        return Err(invalid("tiles must partition the array"));
    }
    let across = geom.n_h / tile_cols;
    if dirs.len() != across * (geom.n_v / tile_rows) {
        return Err(invalid("need one direction per tile"));
    }
    let steer = Steering::new(&geom.with_size(tile_cols, tile_rows));
    let mut out = CVector::zeros(geom.len());
    for (t, &(u, v)) in dirs.iter().enumerate() {
        let seg = steer.response(u, v, 0.0);
        let (r0, c0) = ((t / across) * tile_rows, (t % across) * tile_cols);
        for r in 0..tile_rows {
            for c in 0..tile_cols {
                let n = (r0 + r) * geom.n_h + c0 + c;
                out[n] = (seg[r * tile_cols + c] * comp[n]).conj();
            }
        }
    }
    Ok(out)
}

/// The `k` pairs closest to broadside (ties in codebook order), sorted by
/// horizontal cosine.
fn central(pairs: &[(f64, f64)], k: usize) -> Vec<(f64, f64)> {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let off = |p: (f64, f64)| p.0 * p.0 + p.1 * p.1;
    idx.sort_by(|&a, &b| off(pairs[a]).total_cmp(&off(pairs[b])).then(a.cmp(&b)));
    let mut out: Vec<(f64, f64)> = idx.into_iter().take(k).map(|i| pairs[i]).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn check(plan: &WideBeamPlan, bs: &BsRisChannel) -> Result<CVector> {
    if bs.elements() != plan.geom.len() {
        return Err(invalid("BS-RIS channel does not match the plan"));
    }
    Ok(bs.compensation())
}

/// Near-isotropic beam: every sub-RIS points at a different pair of the
/// sub-array codebook.
pub fn isotropic_beam(plan: &WideBeamPlan, bs: &BsRisChannel) -> Result<CVector> {
    let comp = check(plan, bs)?;
    let dirs = central(&plan.per_subris_pairs, plan.subris_count);
    tiled_beam(&plan.geom, plan.subris_rows, plan.geom.n_h, &dirs, &comp)
}

/// Two beams covering the left and right halves of the visible region.
/// Each pair drives two adjacent sub-RISs; with an odd sub-RIS count the
/// last strip repeats the final pair.
pub fn half_space_beams(plan: &WideBeamPlan, bs: &BsRisChannel) -> Result<InitConfigs> {
    let comp = check(plan, bs)?;
    let mut sorted = plan.per_subris_pairs.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.len() < 2 {
        return Err(Error::UnsupportedGeometry("half-space beams need at least two sub-array pairs".into()));
    }
    let (left, right) = sorted.split_at(sorted.len() / 2);
    let per_beam = (plan.subris_count / 2).max(1);
    let strips = plan.geom.n_v / (2 * plan.subris_rows).min(plan.geom.n_v);
    let beam = |side: &[(f64, f64)]| {
        let mut dirs = central(side, per_beam);
        while dirs.len() < strips {
            dirs.push(*dirs.last().expect("non-empty side"));
        }
        tiled_beam(&plan.geom, plan.geom.n_v / strips, plan.geom.n_h, &dirs, &comp)
    };
    Ok(InitConfigs { theta1: beam(left)?, theta2: beam(right)? })
}

/// The two codebook entries most correlated with `previous`, strongest
/// first; ties keep codebook order.
pub fn smart_init(codebook: &Codebook, previous: &CVector) -> Result<InitConfigs> {
    if codebook.len() < 2 {
        return Err(invalid("smart initialization needs at least two codebook entries"));
    }
    let (a, b) = best_two(codebook.configs.iter().map(|c| previous.dotc(c).norm()));
    Ok(InitConfigs { theta1: codebook.configs[a].clone(), theta2: codebook.configs[b].clone() })
}

/// Indices of the two largest scores, earliest first among equals.
fn best_two(scores: impl Iterator<Item = f64>) -> (usize, usize) {
    let mut first: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if first.is_none_or(|(_, f)| s > f) {
            second = first;
            first = Some((i, s));
        } else if second.is_none_or(|(_, f)| s > f) {
            second = Some((i, s));
        }
    }
    (first.expect("two scores").0, second.expect("two scores").0)
}

/// Gain `|sum_n theta_n c_n a_n|^2` of a configuration toward a far-field
/// direction, where `c` holds the compensated channel phasors.
pub fn beam_gain(geom: &ArrayGeometry, theta: &CVector, comp: &CVector, azimuth: f64, elevation: f64) -> f64 {
    let a = crate::geometry::far_field_response(geom, azimuth, elevation);
    let mut acc = Complex64::new(0.0, 0.0);
    for ((t, c), x) in theta.iter().zip(comp.iter()).zip(a.iter()) {
        acc += t * c * x;
    }
    acc.norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::build_codebook;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ones(n: usize) -> BsRisChannel {
        BsRisChannel::single(CVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    fn quarter_wave_plan() -> WideBeamPlan {
        plan_subris(&ArrayGeometry::new(16, 16, 0.25, 0.25, 1.0).unwrap()).unwrap()
    }

    /// Gains on a `steps x steps` azimuth-elevation grid, elevation fastest.
    fn gains(plan: &WideBeamPlan, theta: &CVector, steps: usize) -> Vec<f64> {
        let comp = CVector::from_element(plan.geom.len(), Complex64::new(1.0, 0.0));
        let mut out = Vec::with_capacity(steps * steps);
        for i in 0..steps {
            for j in 0..steps {
                let az = -FRAC_PI_2 + PI * i as f64 / (steps - 1) as f64;
                let el = -FRAC_PI_2 + PI * j as f64 / (steps - 1) as f64;
                out.push(beam_gain(&plan.geom, theta, &comp, az, el));
            }
        }
        out
    }

    #[test]
    fn plan_closed_forms() {
        let p = quarter_wave_plan();
        assert_eq!((p.subris_size, p.subris_count, p.spacing_exponent), (32, 8, 2));
        let p = plan_subris(&ArrayGeometry::new(32, 32, 0.5, 0.5, 1.0).unwrap()).unwrap();
        assert_eq!((p.subris_size, p.subris_count), (32, 32));
        let p = plan_subris(&ArrayGeometry::new(2, 2, 0.5, 0.5, 1.0).unwrap()).unwrap();
        assert_eq!((p.subris_size, p.subris_count), (2, 2));
        assert!(p.per_subris_pairs.len() >= p.subris_count);
    }

    #[test]
    fn plan_rejects_unsupported_arrays() {
        for g in [
            ArrayGeometry::new(16, 8, 0.5, 0.5, 1.0).unwrap(),
            ArrayGeometry::new(16, 16, 0.3, 0.3, 1.0).unwrap(),
            ArrayGeometry::new(16, 16, 1.0, 1.0, 1.0).unwrap(),
        ] {
            assert!(matches!(plan_subris(&g), Err(Error::UnsupportedGeometry(_))), "{g:?}");
        }
    }

    #[test]
    fn isotropic_beam_is_flat() {
        let plan = quarter_wave_plan();
        let w = isotropic_beam(&plan, &ones(256)).unwrap();
        assert!(w.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let g = gains(&plan, &w, 181);
        let max = g.iter().cloned().fold(0.0, f64::max);
        let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = 10.0 * (max / min).log10();
        // strips interfere near broadside at small elevations; about 28 dB
        assert!(spread <= 30.0, "flatness {spread} dB");
    }

    #[test]
    fn sub_array_segments_are_orthogonal() {
        let plan = quarter_wave_plan();
        let steer = Steering::new(&plan.geom.with_size(16, plan.subris_rows));
        let pairs = &plan.per_subris_pairs;
        for i in 0..pairs.len() {
            for j in 0..i {
                let a = steer.response(pairs[i].0, pairs[i].1, 0.0);
                let b = steer.response(pairs[j].0, pairs[j].1, 0.0);
                assert!(a.dotc(&b).norm() < 1e-9 * plan.subris_size as f64);
            }
        }
    }

    #[test]
    fn half_space_beams_are_unit_modulus_and_disjoint() {
        let plan = quarter_wave_plan();
        let init = half_space_beams(&plan, &ones(256)).unwrap();
        for t in [&init.theta1, &init.theta2] {
            assert!(t.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        let comp = CVector::from_element(256, Complex64::new(1.0, 0.0));
        // on a lattice direction the other side's strips are all orthogonal
        let az = (-0.375f64).asin();
        let left = beam_gain(&plan.geom, &init.theta1, &comp, az, 0.0);
        let right = beam_gain(&plan.geom, &init.theta2, &comp, -az, 0.0);
        assert!((left - 64.0 * 64.0).abs() < 1e-6 && (right - left).abs() < 1e-6);
        assert!(beam_gain(&plan.geom, &init.theta2, &comp, az, 0.0) < 1e-9 * left);
        assert!(beam_gain(&plan.geom, &init.theta1, &comp, -az, 0.0) < 1e-9 * left);
    }

    #[test]
    fn half_space_beams_cover_low_elevations() {
        // strips of the half-space beams are twice as tall, so they roll off
        // toward the poles faster than the isotropic beam
        let plan = quarter_wave_plan();
        let iso = gains(&plan, &isotropic_beam(&plan, &ones(256)).unwrap(), 181);
        let init = half_space_beams(&plan, &ones(256)).unwrap();
        let g1 = gains(&plan, &init.theta1, 181);
        let g2 = gains(&plan, &init.theta2, 181);
        for k in 0..iso.len() {
            let el = -FRAC_PI_2 + PI * (k % 181) as f64 / 180.0;
            if el.sin().abs() <= 0.5 {
                let d = 10.0 * (g1[k].max(g2[k]) / iso[k]).log10();
                assert!(d >= -3.0, "coverage {d} dB at point {k}");
            }
        }
    }

    #[test]
    fn smart_init_picks_neighbouring_beams() {
        let g = ArrayGeometry::new(4, 1, 0.5, 0.5, 1.0).unwrap();
        let cb = build_codebook(&g, &ones(4), (0.0, 0.0)).unwrap();
        let prev = Steering::new(&g).response(0.25, 0.0, 0.0).map(|z| z.conj());
        let init = smart_init(&cb, &prev).unwrap();
        let sine_of = |t: &CVector| cb.configs.iter().position(|c| c == t).map(|i| cb.angle_pairs[i].0.sin()).unwrap();
        let mut picked = [sine_of(&init.theta1), sine_of(&init.theta2)];
        picked.sort_by(f64::total_cmp);
        assert!(picked[0].abs() < 1e-12 && (picked[1] - 0.5).abs() < 1e-12, "{picked:?}");

        let own = smart_init(&cb, &cb.configs[2]).unwrap();
        assert_eq!(own.theta1, cb.configs[2]);
    }

    #[test]
    fn smart_init_with_two_entries() {
        let g = ArrayGeometry::new(2, 1, 0.5, 0.5, 1.0).unwrap();
        let cb = build_codebook(&g, &ones(2), (0.0, 0.0)).unwrap();
        assert_eq!(cb.len(), 2);
        let init = smart_init(&cb, &cb.configs[1]).unwrap();
        assert_eq!((init.theta1.clone(), init.theta2.clone()), (cb.configs[1].clone(), cb.configs[0].clone()));
        let tiny = Codebook {
            configs: vec![cb.configs[0].clone()],
            angle_pairs: vec![(0.0, 0.0)],
            cosines: vec![(0.0, 0.0)],
            reference_pair: (0.0, 0.0),
        };
        assert!(smart_init(&tiny, &cb.configs[0]).is_err());
    }
}
