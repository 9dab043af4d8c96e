//! The slotted arrival/consumption process and rate averaging over it.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::CacheDistribution;
use crate::catalog::{chunk_stats, PopularityModel};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::rate::{slot_breakdown, PartTwo, PartTwoRule, RateContext, RateOptions, Scheme};

use super::bitlevel::bitlevel_slot_delivery;
use super::rng::{derive, substream, Stream};
use super::SlotDemand;

const BATCHES: usize = 20;

/// One viewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSession {
    pub user_id: u64,
    pub file: usize,
    /// Zero-based chunk position requested in the current slot.
    pub next_chunk: usize,
    pub arrival_slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSchedule {
    /// Draw `a_t` from the model's arrival pmf every slot.
    Iid,
    /// `a_t = schedule[t mod len]`.
    Periodic(Vec<usize>),
}

impl ArrivalSchedule {
    fn max_per_slot(&self, model: &PopularityModel) -> usize {
        match self {
            ArrivalSchedule::Iid => model.max_arrivals(),
            ArrivalSchedule::Periodic(v) => v.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Large-`F` slot rates.
    AnalyticSlotRate,
    /// Literal bit-level delivery at finite chunk size.
    BitLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_slots: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub arrival_schedule: ArrivalSchedule,
    /// Chunk size `F/B` in bits, bit-level mode only.
    pub chunk_bits: usize,
    pub part_two_rule: PartTwoRule,
    pub rate_options: RateOptions,
    pub keep_trace: bool,
}

impl SimConfig {
    pub fn new(num_slots: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            num_slots,
            burn_in,
            seed,
            mode: SimMode::AnalyticSlotRate,
            arrival_schedule: ArrivalSchedule::Iid,
            chunk_bits: 10_000,
            part_two_rule: PartTwoRule::default(),
            rate_options: RateOptions::default(),
            keep_trace: false,
        }
    }

    fn check(&self, model: &PopularityModel) -> Result<()> {
        if self.burn_in < model.num_chunks() {
            return Err(Error::InvalidConfig(format!(
                "burn_in {} is shorter than B={}",
                self.burn_in,
                model.num_chunks()
            )));
        }
        if self.num_slots == 0 {
            return Err(Error::InvalidConfig("num_slots must be positive".into()));
        }
        if let ArrivalSchedule::Periodic(v) = &self.arrival_schedule {
            if v.is_empty() {
                return Err(Error::InvalidConfig("periodic schedule is empty".into()));
            }
        }
        if self.mode == SimMode::BitLevel && self.chunk_bits == 0 {
            return Err(Error::InvalidConfig("chunk_bits must be positive".into()));
        }
        Ok(())
    }
}

/// Sessions in flight between slots.
#[derive(Debug, Clone, Default)]
pub struct ProcessState {
    slot: u64,
    next_user_id: u64,
    /// Sessions served in the last slot, in user order.
    served: Vec<UserSession>,
    /// Arrivals of the last slot, served their first chunk next.
    pending: Vec<UserSession>,
}

impl ProcessState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Sessions served in the most recent slot, aligned with its demand.
    pub fn served(&self) -> &[UserSession] {
        &self.served
    }
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Advances one slot and returns its demand.
///
/// Sessions served in the previous slot continue from position `j` to
/// `j+1` with probability `p_{i,j+1} / p_ij`; users who arrived in the
/// previous slot request their first chunk; then this slot's arrivals are
/// drawn.
pub fn step(state: &mut ProcessState, model: &PopularityModel, schedule: &ArrivalSchedule, seed: u64) -> SlotDemand {
    let b = model.num_chunks();
    let t = state.slot;
    let mut now: Vec<UserSession> = Vec::with_capacity(state.served.len() + state.pending.len());
    for s in state.served.drain(..) {
        let j = s.next_chunk;
        if j + 1 >= b {
            continue;
        }
        let here = model.retention(s.file, j);
        let ratio = if here > 0.0 { model.retention(s.file, j + 1) / here } else { 0.0 };
        let u: f64 = substream(seed, Stream::Retention, s.user_id, j as u64).random();
        if u < ratio {
            now.push(UserSession { next_chunk: j + 1, ..s });
        }
    }
    now.append(&mut state.pending);
    now.sort_by_key(|s| (s.next_chunk, s.arrival_slot, s.user_id));

    let mut demand = SlotDemand::new(b);
    for s in &now {
        demand.push(s.file, s.next_chunk);
    }

    let arrivals = match schedule {
        ArrivalSchedule::Iid => {
            let u: f64 = substream(seed, Stream::Arrivals, t, 0).random();
            sample_index(model.arrival_pmf(), u)
        }
        ArrivalSchedule::Periodic(v) => v[(t % v.len() as u64) as usize],
    };
    for _ in 0..arrivals {
        let user_id = state.next_user_id;
        state.next_user_id += 1;
        let u: f64 = substream(seed, Stream::FileChoice, user_id, 0).random();
        state.pending.push(UserSession {
            user_id,
            file: sample_index(model.file_popularity(), u),
            next_chunk: 0,
            arrival_slot: t,
        });
    }
    state.served = now;
    state.slot += 1;
    demand
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub counts: Vec<usize>,
    pub rate_ran: f64,
    pub rate_man: f64,
    pub rate_pcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub mean: f64,
    pub std_error: f64,
    pub slots: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub summaries: Vec<SchemeSummary>,
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    pub fn summary(&self, scheme: Scheme) -> &SchemeSummary {
        self.summaries.iter().find(|s| s.scheme == scheme).expect("every scheme is summarized")
    }
}

/// Mean and batch-means standard error.
fn batch_means(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    let batches = BATCHES.min(n);
    if batches < 2 {
        return (mean, f64::NAN);
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| pairwise_sum(&xs[b * size..(b + 1) * size]) / size as f64).collect();
    let grand = pairwise_sum(&means) / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Runs one trace and averages every scheme's slot rate after burn-in.
///
/// Under [`PartTwoRule::PerProfile`] the PCC PART 2 variant for a slot is
/// the one with the lower expected cost given its counts `(K_1..K_B)`.
pub fn simulate(model: &PopularityModel, q: &CacheDistribution, cfg: &SimConfig) -> Result<SimReport> {
    cfg.check(model)?;
    if q.num_files() != model.num_files() || q.num_chunks() != model.num_chunks() {
        return Err(Error::Domain("cache distribution shape does not match the library".into()));
    }
    let stats;
    let ctx = match cfg.part_two_rule {
        PartTwoRule::PerProfile => {
            stats = chunk_stats(model)?;
            let max_users = model.num_chunks() * cfg.arrival_schedule.max_per_slot(model);
            Some(RateContext::with_max_users(&stats, q, cfg.rate_options, max_users)?)
        }
        PartTwoRule::PerSlot => None,
    };
    let mut choices: HashMap<Vec<usize>, PartTwo> = HashMap::new();

    let mut state = ProcessState::new();
    for _ in 0..cfg.burn_in {
        step(&mut state, model, &cfg.arrival_schedule, cfg.seed);
    }
    let schemes = [Scheme::Ran, Scheme::Man, Scheme::Pcc, Scheme::Uncoded];
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.num_slots); schemes.len()];
    let mut trace = Vec::new();
    for _ in 0..cfg.num_slots {
        let demand = step(&mut state, model, &cfg.arrival_schedule, cfg.seed);
        let part_two = match &ctx {
            Some(ctx) => {
                let counts = demand.counts();
                match choices.get(&counts) {
                    Some(&c) => c,
                    None => {
                        let c = ctx.profile_terms(&counts, None)?.part_two();
                        choices.insert(counts, c);
                        c
                    }
                }
            }
            None => PartTwo::Cheaper,
        };
        let rates = match cfg.mode {
            SimMode::AnalyticSlotRate => {
                let parts = slot_breakdown(&demand, q);
                [parts.ran, parts.man(), parts.pcc(part_two), parts.ran]
            }
            SimMode::BitLevel => {
                let mut r = [0.0; 4];
                for (slot, &s) in r.iter_mut().zip(&schemes) {
                    *slot = bitlevel_slot_delivery(&demand, state.served(), q, s, part_two, cfg.chunk_bits, cfg.seed)?
                        .normalized;
                }
                r
            }
        };
        for (store, r) in samples.iter_mut().zip(rates) {
            store.push(r);
        }
        if cfg.keep_trace {
            trace.push(TraceRow {
                slot: state.slot() - 1,
                counts: demand.counts(),
                rate_ran: rates[0],
                rate_man: rates[1],
                rate_pcc: rates[2],
            });
        }
    }
    let summaries = schemes
        .iter()
        .zip(&samples)
        .map(|(&scheme, xs)| {
            let (mean, std_error) = batch_means(xs);
            SchemeSummary { scheme, mean, std_error, slots: xs.len(), seed: cfg.seed }
        })
        .collect();
    Ok(SimReport { summaries, trace })
}

/// Long-run average slot rate of `scheme` and its standard error.
pub fn simulate_average_rate(
    model: &PopularityModel,
    q: &CacheDistribution,
    scheme: Scheme,
    cfg: &SimConfig,
) -> Result<(f64, f64)> {
    let report = simulate(model, q, cfg)?;
    let s = report.summary(scheme);
    Ok((s.mean, s.std_error))
}

/// Independent traces with seeds derived from `cfg.seed`, run in parallel.
pub fn simulate_replications(
    model: &PopularityModel,
    q: &CacheDistribution,
    cfg: &SimConfig,
    replications: usize,
) -> Result<Vec<SimReport>> {
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = derive(cfg.seed, Stream::Replication, r, 0);
            simulate(model, q, &c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ArrivalSpec, ModelConfig};

    fn model(n: usize, _b: usize, row: Vec<f64>, pmf: Vec<f64>) -> PopularityModel {
        PopularityModel::with_common_retention(vec![1.0 / n as f64; n], row, pmf).unwrap()
    }

    #[test]
    fn one_slot_sessions() {
        let m = model(3, 3, vec![1.0, 0.0, 0.0], vec![0.2, 0.5, 0.3]);
        let mut state = ProcessState::new();
        let mut prev_arrivals = 0;
        for t in 0..200 {
            let d = step(&mut state, &m, &ArrivalSchedule::Iid, 11);
            assert_eq!(d.counts()[1..], [0, 0]);
            if t > 0 {
                assert_eq!(d.total(), prev_arrivals);
            }
            prev_arrivals = state.pending.len();
        }
    }

    #[test]
    fn full_retention_keeps_b_slots() {
        let m = model(2, 3, vec![1.0; 3], vec![0.0, 0.5, 0.0, 0.5]);
        let mut state = ProcessState::new();
        let mut arrivals = Vec::new();
        for t in 0..100 {
            let d = step(&mut state, &m, &ArrivalSchedule::Iid, 5);
            if t >= 3 {
                let expect: usize = arrivals[t - 3..t].iter().sum();
                assert_eq!(d.total(), expect);
                assert_eq!(d.counts()[2], arrivals[t - 3]);
            }
            arrivals.push(state.pending.len());
        }
    }

    #[test]
    fn served_sessions_align_with_demand() {
        let m = model(3, 2, vec![1.0, 0.6], vec![0.0, 0.0, 1.0]);
        let mut state = ProcessState::new();
        for _ in 0..20 {
            let d = step(&mut state, &m, &ArrivalSchedule::Iid, 3);
            let b = d.num_chunks();
            let from_sessions: Vec<usize> = state.served().iter().map(|s| s.file * b + s.next_chunk).collect();
            assert_eq!(from_sessions, d.user_chunks());
        }
    }

    #[test]
    fn full_cache_averages_to_zero() {
        let m = ModelConfig {
            num_files: 3,
            num_chunks: 2,
            alpha: 1.0,
            beta: 1.0,
            popularity_mode: Default::default(),
            arrivals: ArrivalSpec::Pmf(vec![0.2, 0.4, 0.4]),
            betas: None,
            retention: None,
        }
        .build()
        .unwrap();
        let q = CacheDistribution::uniform(m.num_files(), m.num_chunks(), 1.0);
        let cfg = SimConfig::new(500, m.num_chunks(), 1);
        let r = simulate(&m, &q, &cfg).unwrap();
        for s in &r.summaries {
            assert_eq!(s.mean, 0.0);
        }
    }

    #[test]
    fn single_user_single_file() {
        let m = model(1, 1, vec![1.0], vec![0.0, 1.0]);
        let q = CacheDistribution::uniform(1, 1, 0.3);
        let cfg = SimConfig::new(200, 1, 9);
        for s in [Scheme::Ran, Scheme::Man, Scheme::Pcc] {
            let (mean, se) = simulate_average_rate(&m, &q, s, &cfg).unwrap();
            assert!((mean - 0.7).abs() < 1e-12);
            assert!(se.abs() < 1e-12);
        }
    }

    #[test]
    fn replays_exactly() {
        let m = model(4, 3, vec![1.0, 0.7, 0.4], vec![0.3, 0.3, 0.4]);
        let q = CacheDistribution::uniform(4, 3, 0.25);
        let mut cfg = SimConfig::new(300, 3, 77);
        cfg.keep_trace = true;
        let a = simulate(&m, &q, &cfg).unwrap();
        let b = simulate(&m, &q, &cfg).unwrap();
        assert_eq!(a, b);
        let reps = simulate_replications(&m, &q, &cfg, 3).unwrap();
        let again = simulate_replications(&m, &q, &cfg, 3).unwrap();
        assert_eq!(reps, again);
        assert_ne!(reps[0].summaries, reps[1].summaries);
    }

    #[test]
    fn burn_in_must_cover_b() {
        let m = model(2, 3, vec![1.0; 3], vec![0.0, 1.0]);
        let q = CacheDistribution::empty(2, 3);
        assert!(matches!(simulate(&m, &q, &SimConfig::new(10, 2, 0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn batch_means_of_constant() {
        let (m, se) = batch_means(&[2.5; 100]);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }
}
