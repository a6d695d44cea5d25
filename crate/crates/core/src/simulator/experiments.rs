use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{capacity, capacity_config, nmse, spectral_efficiency};
use super::scenario::{InitMode, Model, Powers, Scenario};
use crate::adaptive::{run_mle_loop, Initialization, LoopOutcome, LoopSettings};
use crate::baselines::{build_hier_codebook, hierarchical_search, ls_dft_configs, ls_estimate};
use crate::channels::{BsRisChannel, Link, LosChannel, RicianSpec};
use crate::codebook::{build_codebook, Codebook, DEFAULT_REFERENCE};
use crate::error::{invalid, Result};
use crate::estimator::{PilotRecord, SearchPlan};
use crate::geometry::{ArrayGeometry, CVector};
use crate::widebeam::{half_space_beams, plan_subris, InitConfigs, WideBeamPlan};

/// Independent stream `trial` of the generator seeded with `master`.
pub fn trial_rng(master: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial as u64);
    rng
}

/// Runs `f` for every trial on the worker pool and returns the results in
/// trial order.
pub fn run_trials<T, F>(master: u64, trials: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..trials).into_par_iter().map(|i| f(i, &mut trial_rng(master, i))).collect()
}

/// One drawn link with the pilot codebook and wide beams that match its
/// BS-RIS channel.
pub struct TrialLink<'a> {
    pub link: Link,
    pub los: LosChannel,
    pub codebook: Cow<'a, Codebook>,
    wide: &'a Option<WideBeamPlan>,
    beams: Option<Cow<'a, InitConfigs>>,
}

impl TrialLink<'_> {
    /// Wide-beam initial configurations.
    pub fn wide_beams(&self) -> Result<InitConfigs> {
        if let Some(b) = &self.beams {
            return Ok(b.clone().into_owned());
        }
        let plan = self.wide.as_ref().ok_or_else(|| invalid("wide beams are unsupported for this geometry"))?;
        half_space_beams(plan, &self.link.bs)
    }

    pub fn initialization(&self, mode: InitMode, rng: &mut ChaCha8Rng) -> Result<Initialization> {
        match mode {
            InitMode::Wide => Ok(Initialization::Beams(self.wide_beams()?)),
            InitMode::Random => Initialization::random(rng, &self.codebook),
        }
    }

    /// Configurations of the first two pilots.
    pub fn first_pilots(&self, init: &Initialization) -> Vec<CVector> {
        match init {
            Initialization::Beams(b) => b.to_vec(),
            &Initialization::Entries(a, b) => vec![self.codebook.configs[a].clone(), self.codebook.configs[b].clone()],
        }
    }
}

/// Trial-invariant pieces of a scenario.
pub struct Context {
    pub scenario: Scenario,
    pub geom: ArrayGeometry,
    pub powers: Powers,
    fixed: Option<BsRisChannel>,
    rician: Option<RicianSpec>,
    codebook: Option<Codebook>,
    wide: Option<WideBeamPlan>,
    beams: Option<InitConfigs>,
}

impl Context {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let geom = scenario.geometry()?;
        let fixed = scenario.fixed_bs_ris(&geom)?;
        let rician = scenario.rician_spec(&geom)?;
        let codebook = fixed.as_ref().map(|bs| build_codebook(&geom, bs, DEFAULT_REFERENCE)).transpose()?;
        let wide = plan_subris(&geom).ok();
        let beams = match (&wide, &fixed) {
            (Some(p), Some(bs)) => Some(half_space_beams(p, bs)?),
            _ => None,
        };
        Ok(Self { scenario: scenario.clone(), geom, powers: scenario.powers(), fixed, rician, codebook, wide, beams })
    }

    pub fn fixed_bs(&self) -> Option<&BsRisChannel> {
        self.fixed.as_ref()
    }

    /// Codebook shared by all trials, absent for Rician BS-RIS channels.
    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    pub fn beams(&self) -> Option<&InitConfigs> {
        self.beams.as_ref()
    }

    pub fn plan(&self, model: Model) -> Result<SearchPlan> {
        SearchPlan::new(&self.geom, self.scenario.search_settings(model))
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Result<TrialLink<'_>> {
        let (link, los) = self.scenario.sample_link(rng, &self.geom, self.fixed.as_ref(), self.rician.as_ref())?;
        let codebook = match &self.codebook {
            Some(c) => Cow::Borrowed(c),
            None => Cow::Owned(build_codebook(&self.geom, &link.bs, DEFAULT_REFERENCE)?),
        };
        Ok(TrialLink { link, los, codebook, wide: &self.wide, beams: self.beams.as_ref().map(Cow::Borrowed) })
    }

    pub fn loop_settings(&self, pilots: usize) -> LoopSettings {
        LoopSettings {
            pilots,
            pilot_power: self.powers.pilot_power,
            noise_var: self.powers.noise_var,
            data_snr: self.powers.data_snr,
        }
    }
}

/// Mean and standard error, skipping undefined (NaN) samples.
pub fn mean_stderr(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub pilots: usize,
    pub se: f64,
    pub se_stderr: f64,
    pub capacity: f64,
    pub nmse_g: f64,
    pub nmse_d: f64,
    /// Bits fed back to the RIS for the indices chosen so far.
    pub feedback_bits: u32,
}

/// Per-trial traces of one adaptive run, indexed by pilot count minus two.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub se: Vec<f64>,
    pub nmse_g: Vec<f64>,
    pub nmse_d: Vec<f64>,
    pub capacity: f64,
    pub index_bits: u32,
}

fn pad<T: Copy>(mut v: Vec<T>, len: usize) -> Vec<T> {
    if let Some(&last) = v.last() {
        v.resize(len, last);
    }
    v
}

fn trace_of(ctx: &Context, t: &TrialLink<'_>, out: &LoopOutcome, l_max: usize) -> TrialTrace {
    let len = l_max - 1;
    let nm = |r: Result<f64>| r.unwrap_or(f64::NAN);
    let nmse_g = out.estimates.iter().map(|e| nm(nmse(&e.g_hat(&ctx.geom), &t.link.g))).collect();
    let nmse_d = out.estimates.iter().map(|e| nm(nmse(&e.d_hat, &t.link.d))).collect();
    TrialTrace {
        se: pad(out.se_trace.clone(), len),
        nmse_g: pad(nmse_g, len),
        nmse_d: pad(nmse_d, len),
        capacity: capacity(&t.link, ctx.powers.data_snr),
        index_bits: out.feedback_bits,
    }
}

/// Adaptive-loop traces for every trial, pilot budgets `2..=l_max`.
pub fn sweep_traces(scenario: &Scenario, model: Model, init: InitMode, l_max: usize) -> Result<Vec<TrialTrace>> {
    if l_max < 2 {
        return Err(invalid("the sweep needs at least two pilots"));
    }
    let ctx = Context::new(scenario)?;
    let plan = ctx.plan(model)?;
    let settings = ctx.loop_settings(l_max);
    run_trials(scenario.master_seed, scenario.trials, |_, rng| {
        let t = ctx.draw(rng)?;
        let init = t.initialization(init, rng)?;
        let out = run_mle_loop(&t.link, &t.codebook, &plan, &init, &settings, rng)?;
        Ok(trace_of(&ctx, &t, &out, l_max))
    })
}

pub fn summarize(traces: &[TrialTrace]) -> Vec<SweepRow> {
    let len = traces.iter().map(|t| t.se.len()).max().unwrap_or(0);
    let (cap, _) = mean_stderr(traces.iter().map(|t| t.capacity));
    let bits = traces.iter().map(|t| t.index_bits).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let col =
                |f: fn(&TrialTrace) -> &Vec<f64>| traces.iter().map(move |t| f(t).get(k).copied().unwrap_or(f64::NAN));
            let (se, se_stderr) = mean_stderr(col(|t| &t.se));
            SweepRow {
                pilots: k + 2,
                se,
                se_stderr,
                capacity: cap,
                nmse_g: mean_stderr(col(|t| &t.nmse_g)).0,
                nmse_d: mean_stderr(col(|t| &t.nmse_d)).0,
                feedback_bits: k as u32 * bits,
            }
        })
        .collect()
}

/// Mean spectral efficiency and NMSEs of the adaptive loop at each pilot
/// budget `2..=l_max`, with the mean capacity.
pub fn sweep_pilots(scenario: &Scenario, model: Model, init: InitMode, l_max: usize) -> Result<Vec<SweepRow>> {
    Ok(summarize(&sweep_traces(scenario, model, init, l_max)?))
}

/// Per-pilot SNRs `P_p |H diag(g) theta + d|^2 / sigma^2` in dB.
pub fn pilot_snrs(link: &Link, configs: &[CVector], pilot_power: f64, noise_var: f64) -> Result<Vec<f64>> {
    if !(noise_var > 0.0) {
        return Err(invalid("the pilot SNR needs a positive noise variance"));
    }
    Ok(configs.iter().map(|t| 10.0 * (pilot_power * link.effective(t).norm_squared() / noise_var).log10()).collect())
}

/// Sorted SNRs (dB) of the first two pilots over all trials.
pub fn pilot_snr_cdf(scenario: &Scenario, init: InitMode) -> Result<Vec<f64>> {
    let ctx = Context::new(scenario)?;
    let per_trial = run_trials(scenario.master_seed, scenario.trials, |_, rng| {
        let t = ctx.draw(rng)?;
        let init = t.initialization(init, rng)?;
        pilot_snrs(&t.link, &t.first_pilots(&init), ctx.powers.pilot_power, ctx.powers.noise_var)
    })?;
    let mut all: Vec<f64> = per_trial.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    Ok(all)
}

/// Empirical quantile of sorted samples (nearest rank).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsRow {
    pub pilots: usize,
    pub se: f64,
    pub capacity: f64,
    pub nmse_g: f64,
    pub nmse_d: f64,
    /// Share of trials whose stacked system had full column rank.
    pub full_rank: f64,
}

/// Least-squares estimation with the first `L` DFT configurations, for each
/// `L` in `pilots`.
pub fn ls_sweep(scenario: &Scenario, pilots: &[usize]) -> Result<Vec<LsRow>> {
    let ctx = Context::new(scenario)?;
    let p = ctx.powers;
    let per_trial = run_trials(scenario.master_seed, scenario.trials, |_, rng| {
        let t = ctx.draw(rng)?;
        let cap = capacity(&t.link, p.data_snr);
        let max = pilots.iter().copied().max().unwrap_or(0);
        let configs = ls_dft_configs(&t.link.bs.h(), max)?;
        let ys: Vec<CVector> = configs.iter().map(|c| t.link.observe(rng, c, p.pilot_power, p.noise_var)).collect();
        pilots
            .iter()
            .map(|&l| {
                let mut rec = PilotRecord::new(t.link.g.len(), t.link.antennas(), p.pilot_power, p.noise_var)?;
                for (c, y) in configs.iter().zip(&ys).take(l) {
                    rec.push(c.clone(), y.as_slice())?;
                }
                let est = ls_estimate(&rec, &t.link.bs)?;
                let fitted = Link::new(t.link.bs.clone(), est.g_hat.clone(), est.d_hat.clone())?;
                let se = spectral_efficiency(&t.link, &capacity_config(&fitted), p.data_snr);
                Ok([
                    se,
                    cap,
                    nmse(&est.g_hat, &t.link.g).unwrap_or(f64::NAN),
                    nmse(&est.d_hat, &t.link.d).unwrap_or(f64::NAN),
                    if est.full_rank { 1.0 } else { 0.0 },
                ])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(pilots
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let col = |j: usize| mean_stderr(per_trial.iter().map(|r| r[k][j])).0;
            LsRow { pilots: l, se: col(0), capacity: col(1), nmse_g: col(2), nmse_d: col(3), full_rank: col(4) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierRow {
    pub pilots: usize,
    /// Adaptive loop with `pilots` pilots; NaN below two.
    pub mle_se: f64,
    /// Hierarchical search after the last complete level; NaN before the
    /// first.
    pub hier_se: f64,
    pub capacity: f64,
}

/// Adaptive loop against hierarchical beam training on the same links,
/// for pilot counts `1..=4 depth`.
pub fn hierarchical_comparison(scenario: &Scenario, depth: usize) -> Result<Vec<HierRow>> {
    let ctx = Context::new(scenario)?;
    let bs =
        ctx.fixed.as_ref().ok_or_else(|| invalid("hierarchical comparison needs a deterministic BS-RIS channel"))?;
    let tree = build_hier_codebook(&ctx.geom, bs, depth)?;
    let plan = ctx.plan(scenario.model)?;
    let budget = 4 * depth;
    let settings = ctx.loop_settings(budget);
    let p = ctx.powers;
    let per_trial = run_trials(scenario.master_seed, scenario.trials, |_, rng| {
        let t = ctx.draw(rng)?;
        let init = t.initialization(scenario.init, rng)?;
        let mle = run_mle_loop(&t.link, &t.codebook, &plan, &init, &settings, rng)?;
        let mle_se = pad(mle.se_trace, budget - 1);
        let hier = hierarchical_search(&t.link, &tree, p.pilot_power, p.noise_var, p.data_snr, rng)?;
        Ok((mle_se, hier.se_trace, capacity(&t.link, p.data_snr)))
    })?;
    let (cap, _) = mean_stderr(per_trial.iter().map(|r| r.2));
    Ok((1..=budget)
        .map(|l| {
            let mle_se = if l < 2 { f64::NAN } else { mean_stderr(per_trial.iter().map(|r| r.0[l - 2])).0 };
            let hier_se = if l < 4 { f64::NAN } else { mean_stderr(per_trial.iter().map(|r| r.1[l / 4 - 1])).0 };
            HierRow { pilots: l, mle_se, hier_se, capacity: cap }
        })
        .collect())
}
