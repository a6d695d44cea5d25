use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{axis, inverse_distances, lattice_size, SearchGrid};
use super::{Estimate, Objective, PilotRecord};
use crate::channels::BsRisChannel;
use crate::error::{invalid, Error, Result};
use crate::geometry::{cis, ArrayGeometry, CMatrix, ChannelPoint, Steering};

/// Resolution and effort of the staged spectrum search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    /// Lattice points per beamwidth in each direction cosine.
    pub density: usize,
    /// Inverse-distance points of the near-field model; 0 searches the far
    /// field only.
    pub distance_points: usize,
    /// Decimation of the direction lattice in the near-field stage.
    pub coarse_stride: usize,
    /// Candidates kept per stage for exact rescoring.
    pub candidates: usize,
    /// Candidates refined locally.
    pub starts: usize,
    pub refine_levels: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { density: 8, distance_points: 24, coarse_stride: 8, candidates: 8, starts: 3, refine_levels: 10 }
    }
}

impl SearchSettings {
    pub fn far_only(self) -> Self {
        Self { distance_points: 0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.density == 0 || self.coarse_stride == 0 || self.candidates == 0 || self.starts == 0 {
            return Err(invalid("search density, stride, candidates and starts must be positive"));
        }
        Ok(())
    }
}

struct NearTable {
    coords: Vec<(f64, f64, f64)>,
    keys: Vec<[i64; 3]>,
    re: Vec<f32>,
    im: Vec<f32>,
}

/// Precomputed search structures for one array, shared read-only across
/// trials.
pub struct SearchPlan {
    geom: ArrayGeometry,
    settings: SearchSettings,
    grid: SearchGrid,
    eh: CMatrix,
    ev_t: CMatrix,
    far_visible: Vec<usize>,
    near: Option<NearTable>,
    steps: (f64, f64, f64),
    rho_max: f64,
}

impl std::fmt::Debug for SearchPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchPlan")
            .field("geom", &self.geom)
            .field("settings", &self.settings)
            .field("near_points", &self.near.as_ref().map_or(0, |t| t.coords.len()))
            .finish()
    }
}

impl SearchPlan {
    pub fn new(geom: &ArrayGeometry, settings: SearchSettings) -> Result<Self> {
        geom.validate()?;
        settings.validate()?;
        let rho = inverse_distances(geom, settings.distance_points)?;
        let pu = lattice_size(geom.n_h as f64 * geom.delta_h / geom.wavelength, settings.density);
        let pv = lattice_size(geom.n_v as f64 * geom.delta_v / geom.wavelength, settings.density);
        let grid = SearchGrid::new(axis(pu), axis(pv), rho)?;
        let kappa = geom.wavenumber();
        let eh = CMatrix::from_fn(geom.n_h, grid.u.len(), |c, i| cis(kappa * c as f64 * geom.delta_h * grid.u[i]));
        let ev_t = CMatrix::from_fn(grid.v.len(), geom.n_v, |j, r| cis(kappa * r as f64 * geom.delta_v * grid.v[j]));
        let nu = grid.u.len();
        let far_visible = (0..grid.v.len() * nu)
            .filter(|idx| {
                let (u, v) = (grid.u[idx % nu], grid.v[idx / nu]);
                u * u + v * v < 1.0
            })
            .collect();
        let near = (grid.rho.len() > 1).then(|| build_near_table(geom, &grid, settings.coarse_stride));
        let drho = if grid.rho.len() > 2 { grid.rho[2] - grid.rho[1] } else { 0.0 };
        let steps = (2.0 / pu as f64, 2.0 / pv as f64, drho);
        let rho_max = *grid.rho.last().unwrap();
        Ok(Self { geom: *geom, settings, grid, eh, ev_t, far_visible, near, steps, rho_max })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn settings(&self) -> &SearchSettings {
        &self.settings
    }

    pub fn grid(&self) -> &SearchGrid {
        &self.grid
    }

    pub fn is_far_only(&self) -> bool {
        self.near.is_none()
    }

    pub fn tracker<'a>(
        &'a self,
        bs: &'a BsRisChannel,
        pilot_power: f64,
        noise_var: f64,
    ) -> Result<SpectrumTracker<'a>> {
        if bs.elements() != self.geom.len() {
            return Err(invalid("BS-RIS channel does not match the search geometry"));
        }
        let m = bs.antennas();
        let far_points = self.grid.u.len() * self.grid.v.len();
        let near_points = self.near.as_ref().map_or(0, |t| t.coords.len());
        Ok(SpectrumTracker {
            plan: self,
            bs,
            record: PilotRecord::new(self.geom.len(), m, pilot_power, noise_var)?,
            ysum: vec![Complex64::new(0.0, 0.0); m],
            far: Accum::new(far_points, m),
            near: Accum::new(near_points, m),
        })
    }

    /// Estimate from a complete record.
    pub fn estimate(&self, rec: &PilotRecord, bs: &BsRisChannel) -> Result<Estimate> {
        let mut tracker = self.tracker(bs, rec.pilot_power, rec.noise_var)?;
        let m = rec.antennas();
        for (l, theta) in rec.configs().iter().enumerate() {
            tracker.push(theta.clone(), &rec.samples()[l * m..(l + 1) * m])?;
        }
        tracker.estimate()
    }
}

fn build_near_table(geom: &ArrayGeometry, grid: &SearchGrid, stride: usize) -> NearTable {
    let pick = |xs: &[f64]| -> Vec<(i64, f64)> {
        xs.iter().enumerate().filter(|(i, _)| (i + 1) % stride == 0).map(|(i, x)| (i as i64, *x)).collect()
    };
    let (us, vs) = (pick(&grid.u), pick(&grid.v));
    let mut coords = Vec::new();
    let mut keys = Vec::new();
    for (ir, &rho) in grid.rho.iter().enumerate().filter(|(_, r)| **r > 0.0) {
        for &(iv, v) in &vs {
            for &(iu, u) in &us {
                if u * u + v * v < 1.0 {
                    coords.push((u, v, rho));
                    keys.push([iu / stride as i64, iv / stride as i64, ir as i64]);
                }
            }
        }
    }
    let n = geom.len();
    let steering = Steering::new(geom);
    let mut re = vec![0f32; coords.len() * n];
    let mut im = vec![0f32; coords.len() * n];
    re.par_chunks_mut(n).zip(im.par_chunks_mut(n)).zip(coords.par_iter()).for_each_init(
        || vec![Complex64::new(0.0, 0.0); n],
        |buf, ((re, im), &(u, v, rho))| {
            steering.fill(u, v, rho, buf);
            for (k, z) in buf.iter().enumerate() {
                re[k] = z.re as f32;
                im[k] = z.im as f32;
            }
        },
    );
    NearTable { coords, keys, re, im }
}

/// Running sums per grid point: `sum conj(y) z`, per-antenna `sum_l z` and
/// `sum |z|^2`.
struct Accum {
    m: usize,
    a: Vec<Complex64>,
    z: Vec<Complex64>,
    s: Vec<f64>,
}

impl Accum {
    fn new(points: usize, m: usize) -> Self {
        Self {
            m,
            a: vec![Complex64::new(0.0, 0.0); points],
            z: vec![Complex64::new(0.0, 0.0); points * m],
            s: vec![0.0; points],
        }
    }

    #[inline]
    fn add(&mut self, p: usize, ant: usize, y: Complex64, z: Complex64) {
        self.a[p] += y.conj() * z;
        self.z[p * self.m + ant] += z;
        self.s[p] += z.norm_sqr();
    }

    fn score(&self, p: usize, ybar: &[Complex64], l: f64, tol: f64) -> Option<f64> {
        let zs = &self.z[p * self.m..(p + 1) * self.m];
        let mut t = self.a[p];
        let mut sq = 0.0;
        for (z, y) in zs.iter().zip(ybar) {
            t -= y.conj() * z;
            sq += z.norm_sqr();
        }
        let s = self.s[p];
        let den = s - sq / l;
        (s > 0.0 && den > tol * s).then(|| t.norm_sqr() / den)
    }
}

/// Incremental spectrum search for a growing pilot record.
pub struct SpectrumTracker<'a> {
    plan: &'a SearchPlan,
    bs: &'a BsRisChannel,
    record: PilotRecord,
    ysum: Vec<Complex64>,
    far: Accum,
    near: Accum,
}

#[derive(Clone, Copy)]
struct Candidate {
    u: f64,
    v: f64,
    rho: f64,
    coarse: bool,
    value: f64,
}

impl<'a> SpectrumTracker<'a> {
    pub fn record(&self) -> &PilotRecord {
        &self.record
    }

    pub fn len(&self) -> usize {
        self.record.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record.is_empty()
    }

    pub fn push(&mut self, theta: crate::geometry::CVector, y: &[Complex64]) -> Result<()> {
        let plan = self.plan;
        let geom = &plan.geom;
        let m = self.bs.antennas();
        let rows: Vec<Vec<Complex64>> =
            (0..m).map(|ant| theta.iter().zip(self.bs.matrix.row(ant).iter()).map(|(t, h)| t * h).collect()).collect();
        self.record.push(theta, y)?;
        for (s, yi) in self.ysum.iter_mut().zip(y) {
            *s += yi;
        }

        let nu = plan.grid.u.len();
        for (ant, row) in rows.iter().enumerate() {
            let c = CMatrix::from_fn(geom.n_v, geom.n_h, |r, col| row[r * geom.n_h + col]);
            let z = &plan.ev_t * (c * &plan.eh);
            for &p in &plan.far_visible {
                self.far.add(p, ant, y[ant], z[(p / nu, p % nu)]);
            }
        }

        if let Some(table) = &plan.near {
            let n = geom.len();
            let rows32: Vec<(Vec<f32>, Vec<f32>)> = rows
                .iter()
                .map(|r| (r.iter().map(|z| z.re as f32).collect(), r.iter().map(|z| z.im as f32).collect()))
                .collect();
            for p in 0..table.coords.len() {
                let tr = &table.re[p * n..(p + 1) * n];
                let ti = &table.im[p * n..(p + 1) * n];
                for (ant, (er, ei)) in rows32.iter().enumerate() {
                    let z = dot32(tr, ti, er, ei);
                    self.near.add(p, ant, y[ant], Complex64::new(z.re as f64, z.im as f64));
                }
            }
        }
        Ok(())
    }

    fn top_candidates(&self) -> Vec<Candidate> {
        let plan = self.plan;
        let l = self.record.len() as f64;
        let ybar: Vec<Complex64> = self.ysum.iter().map(|s| s / l).collect();
        let k = plan.settings.candidates;
        let nu = plan.grid.u.len();
        let radius = (plan.settings.coarse_stride / 2).max(1) as i64;

        let mut far: Vec<(f64, usize)> =
            plan.far_visible.iter().filter_map(|&p| self.far.score(p, &ybar, l, 1e-9).map(|s| (s, p))).collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<(i64, i64)> = Vec::new();
        let mut out = Vec::new();
        for &(_, p) in &far {
            let key = ((p % nu) as i64, (p / nu) as i64);
            if picked.iter().any(|q| (q.0 - key.0).abs() <= radius && (q.1 - key.1).abs() <= radius) {
                continue;
            }
            picked.push(key);
            out.push(Candidate {
                u: plan.grid.u[key.0 as usize],
                v: plan.grid.v[key.1 as usize],
                rho: 0.0,
                coarse: false,
                value: 0.0,
            });
            if picked.len() == k {
                break;
            }
        }

        if let Some(table) = &plan.near {
            let mut near: Vec<(f64, usize)> =
                (0..table.coords.len()).filter_map(|p| self.near.score(p, &ybar, l, 1e-5).map(|s| (s, p))).collect();
            near.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut kept: Vec<[i64; 3]> = Vec::new();
            for &(_, p) in &near {
                let key = table.keys[p];
                if kept.iter().any(|q| q.iter().zip(&key).all(|(a, b)| (a - b).abs() <= 1)) {
                    continue;
                }
                kept.push(key);
                let (u, v, rho) = table.coords[p];
                out.push(Candidate { u, v, rho, coarse: true, value: 0.0 });
                if kept.len() == k {
                    break;
                }
            }
        }
        out
    }

    /// Runs the staged search: lattice scan, exact rescoring of the best
    /// candidates and local refinement of the strongest ones.
    pub fn estimate(&self) -> Result<Estimate> {
        if self.record.len() < 2 {
            return Err(Error::EstimationImpossible);
        }
        let plan = self.plan;
        let obj = Objective::new(&self.record, self.bs, &plan.geom)?;
        let mut buf = vec![Complex64::new(0.0, 0.0); plan.geom.len()];
        let mut cands: Vec<Candidate> = self
            .top_candidates()
            .into_iter()
            .filter_map(|mut c| {
                c.value = obj.value_with(c.u, c.v, c.rho, &mut buf)?;
                Some(c)
            })
            .collect();
        if cands.is_empty() {
            return Err(Error::EstimationImpossible);
        }
        cands.sort_by(|a, b| b.value.total_cmp(&a.value));
        let (du, dv, drho) = plan.steps;
        let stride = plan.settings.coarse_stride as f64;
        let rho_bounds = (!plan.is_far_only()).then_some((0.0, plan.rho_max));
        let rho_line: Vec<f64> = if plan.is_far_only() { Vec::new() } else { plan.grid.rho.clone() };
        let mut best: Option<Candidate> = None;
        for c in cands.iter().take(plan.settings.starts) {
            let steps = if c.coarse { (du * stride, dv * stride, drho) } else { (du, dv, drho) };
            let stencil = Stencil {
                steps,
                levels: plan.settings.refine_levels,
                rho_bounds,
                rho_line: &rho_line,
                centre: array_centre(&plan.geom),
            };
            let r = stencil.refine(&obj, *c, &mut buf);
            if best.is_none_or(|b| r.value > b.value) {
                best = Some(r);
            }
        }
        let b = best.expect("at least one start");
        obj.estimate(b.u, b.v, b.rho)
    }
}

/// Complex dot product of split f32 vectors with lane-parallel accumulators.
#[inline]
fn dot32(tr: &[f32], ti: &[f32], er: &[f32], ei: &[f32]) -> Complex32 {
    const W: usize = 8;
    let mut acc_re = [0f32; W];
    let mut acc_im = [0f32; W];
    let chunks = tr.len() / W;
    for c in 0..chunks {
        let o = c * W;
        let (a, b, x, y) = (&tr[o..o + W], &ti[o..o + W], &er[o..o + W], &ei[o..o + W]);
        for j in 0..W {
            acc_re[j] += a[j] * x[j] - b[j] * y[j];
            acc_im[j] += a[j] * y[j] + b[j] * x[j];
        }
    }
    let mut re: f32 = acc_re.iter().sum();
    let mut im: f32 = acc_im.iter().sum();
    for j in chunks * W..tr.len() {
        re += tr[j] * er[j] - ti[j] * ei[j];
        im += tr[j] * ei[j] + ti[j] * er[j];
    }
    Complex32::new(re, im)
}

/// Relative gain a refinement step must bring. Noise-free spectra can be
/// flat to rounding along a ridge, and moving along it changes nothing but
/// the fitted gains.
const IMPROVE_TOL: f64 = 1e-12;

/// Shape of the local search around a candidate.
struct Stencil<'g> {
    steps: (f64, f64, f64),
    levels: usize,
    /// Inverse-distance range; `None` keeps the far field.
    rho_bounds: Option<(f64, f64)>,
    /// Inverse distances scanned along the ridge before the stencil stages.
    rho_line: &'g [f64],
    /// Offset of the array centre from the reference element.
    centre: (f64, f64),
}

impl Stencil<'_> {
    /// Change of `(u, v)` per unit inverse distance that keeps the direction
    /// seen from the array centre fixed. Moving the distance alone shifts the
    /// apparent direction, so the spectrum ridge runs along this axis.
    fn ridge(&self, u: f64, v: f64) -> (f64, f64) {
        let (i0, k0) = self.centre;
        let s0 = i0 * u + k0 * v;
        (i0 - s0 * u, k0 - s0 * v)
    }

    fn clamp_rho(&self, rho: f64) -> f64 {
        match self.rho_bounds {
            Some((lo, hi)) => rho.clamp(lo, hi),
            None => 0.0,
        }
    }

    fn value_at(&self, obj: &Objective, (u, v, rho): (f64, f64, f64), buf: &mut [Complex64]) -> Option<f64> {
        if !(u * u + v * v < 1.0) {
            return None;
        }
        obj.value_with(u, v, rho, buf)
    }

    fn try_point(
        &self,
        obj: &Objective,
        p: (f64, f64, f64),
        best: &mut Candidate,
        buf: &mut [Complex64],
    ) -> Option<f64> {
        let val = self.value_at(obj, p, buf)?;
        if val > best.value * (1.0 + IMPROVE_TOL) {
            *best = Candidate { u: p.0, v: p.1, rho: p.2, coarse: false, value: val };
        }
        Some(val)
    }

    /// Line search along the ridge, then a 3-point-per-axis stencil. Each
    /// pass fits a quadratic to the stencil and tries its maximizer; the
    /// spacing halves once the optimum lies inside the stencil. The
    /// incumbent is always kept.
    fn refine(&self, obj: &Objective, start: Candidate, buf: &mut [Complex64]) -> Candidate {
        let mut best = start;
        let active_rho = self.rho_bounds.is_some() && self.steps.2 > 0.0;
        if active_rho && self.levels > 0 {
            let c = best;
            let (au, av) = self.ridge(c.u, c.v);
            for &r in self.rho_line {
                let rho = self.clamp_rho(r);
                self.try_point(obj, (c.u + au * (rho - c.rho), c.v + av * (rho - c.rho), rho), &mut best, buf);
            }
        }
        let offsets: &[f64] = &[-1.0, 0.0, 1.0];
        let rho_offsets: &[f64] = if active_rho { offsets } else { &[0.0] };
        let dims = if active_rho { 3 } else { 2 };
        let mut scale = 0.5;
        let mut level = 0;
        let mut passes = 0;
        let mut samples: Vec<([f64; 3], f64)> = Vec::with_capacity(27);
        while level < self.levels && passes < 4 * self.levels + 4 {
            passes += 1;
            let c = best;
            let (hu, hv, hr) = (self.steps.0 * scale, self.steps.1 * scale, self.steps.2 * scale);
            let (au, av) = self.ridge(c.u, c.v);
            let at = |x: [f64; 3]| {
                let rho = if active_rho { self.clamp_rho(c.rho + x[2] * hr) } else { c.rho };
                (c.u + au * (rho - c.rho) + x[0] * hu, c.v + av * (rho - c.rho) + x[1] * hv, rho)
            };
            samples.clear();
            samples.push(([0.0; 3], c.value));
            let mut complete = true;
            for &kr in rho_offsets {
                for &kv in offsets {
                    for &ku in offsets {
                        if ku == 0.0 && kv == 0.0 && kr == 0.0 {
                            continue;
                        }
                        let p = at([ku, kv, kr]);
                        let kr_eff = if hr > 0.0 { (p.2 - c.rho) / hr } else { 0.0 };
                        match self.try_point(obj, p, &mut best, buf) {
                            Some(val) => samples.push(([ku, kv, kr_eff], val)),
                            None => complete = false,
                        }
                    }
                }
            }
            let mut inside = false;
            if complete {
                if let Some(x) = quadratic_peak(&samples, dims) {
                    let x = [x[0].clamp(-2.0, 2.0), x[1].clamp(-2.0, 2.0), x[2].clamp(-2.0, 2.0)];
                    inside = x.iter().all(|e| e.abs() <= 1.0);
                    self.try_point(obj, at(x), &mut best, buf);
                }
            }
            if best.value <= c.value || inside {
                scale /= 2.0;
                level += 1;
            }
        }
        best
    }
}

/// Maximizer of the least-squares quadratic through stencil samples, in
/// stencil coordinates, when the fitted Hessian is negative definite.
fn quadratic_peak(samples: &[([f64; 3], f64)], dims: usize) -> Option<[f64; 3]> {
    use nalgebra::{DMatrix, DVector};
    let terms = 1 + dims + dims * (dims + 1) / 2;
    let mut a = DMatrix::<f64>::zeros(samples.len(), terms);
    let mut y = DVector::<f64>::zeros(samples.len());
    let scale = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max).max(1e-300);
    for (r, (x, val)) in samples.iter().enumerate() {
        a[(r, 0)] = 1.0;
        for i in 0..dims {
            a[(r, 1 + i)] = x[i];
        }
        let mut k = 1 + dims;
        for i in 0..dims {
            for j in i..dims {
                a[(r, k)] = if i == j { 0.5 * x[i] * x[i] } else { x[i] * x[j] };
                k += 1;
            }
        }
        y[r] = val / scale;
    }
    let coef = a.svd(true, true).solve(&y, 1e-12).ok()?;
    let g = DVector::from_fn(dims, |i, _| coef[1 + i]);
    let mut h = DMatrix::<f64>::zeros(dims, dims);
    let mut k = 1 + dims;
    for i in 0..dims {
        for j in i..dims {
            h[(i, j)] = coef[k];
            h[(j, i)] = coef[k];
            k += 1;
        }
    }
    let neg = (-&h).cholesky()?;
    let x = neg.solve(&g);
    let mut out = [0.0; 3];
    for i in 0..dims {
        out[i] = x[i];
    }
    out.iter().all(|e| e.is_finite()).then_some(out)
}

fn array_centre(geom: &ArrayGeometry) -> (f64, f64) {
    (0.5 * (geom.n_h as f64 - 1.0) * geom.delta_h, 0.5 * (geom.n_v as f64 - 1.0) * geom.delta_v)
}

fn spacing(xs: &[f64], x: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let i = xs.partition_point(|&a| a < x).clamp(1, xs.len() - 1);
    xs[i] - xs[i - 1]
}

/// Refines a grid maximizer on successively finer local grids. The step
/// starts at the grid spacing around `coarse_hat` and shrinks by four per
/// level; the distance stays within the grid's range.
pub fn refine_grid(
    rec: &PilotRecord,
    bs: &BsRisChannel,
    geom: &ArrayGeometry,
    grid: &SearchGrid,
    coarse_hat: &ChannelPoint,
    levels: usize,
) -> Result<ChannelPoint> {
    if levels == 0 {
        return Ok(*coarse_hat);
    }
    let obj = Objective::new(rec, bs, geom)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); geom.len()];
    let (u, v) = coarse_hat.cosines();
    let rho = coarse_hat.inverse_distance();
    let value = obj.value_with(u, v, rho, &mut buf).ok_or(Error::SingularDirection)?;
    let positive: Vec<f64> = grid.rho.iter().cloned().filter(|r| *r > 0.0).collect();
    let bounds = (!grid.is_far_only()).then(|| (grid.rho[0], *grid.rho.last().unwrap()));
    let steps = (
        spacing(&grid.u, u),
        spacing(&grid.v, v),
        spacing(&positive, rho.max(positive.first().copied().unwrap_or(0.0))),
    );
    let start = Candidate { u, v, rho, coarse: false, value };
    let rho_line = if bounds.is_some() { grid.rho.clone() } else { Vec::new() };
    let stencil = Stencil { steps, levels, rho_bounds: bounds, rho_line: &rho_line, centre: array_centre(geom) };
    let r = stencil.refine(&obj, start, &mut buf);
    ChannelPoint::from_cosines(r.u, r.v, r.rho)
}
