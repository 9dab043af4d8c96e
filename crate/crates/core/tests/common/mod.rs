#![allow(dead_code)]

use cclab::cache::CacheDistribution;
use cclab::catalog::{chunk_stats, PopularityModel};
use cclab::rate::{slot_breakdown, PartTwo, RateContext, RateOptions};
use cclab::sim::SlotDemand;

/// Every steady-state slot demand with its probability, built from the raw
/// process: `a` users arrived `j` slots ago and each of them independently
/// requests chunk `(i, j)` with probability `p_i p_ij` or has left.
pub fn steady_state_demands(model: &PopularityModel) -> Vec<(SlotDemand, f64)> {
    let b = model.num_chunks();
    let n = model.num_files();
    let mut per_position: Vec<Vec<(Vec<usize>, f64)>> = Vec::with_capacity(b);
    for j in 0..b {
        let mut outcomes = Vec::new();
        for (a, &pa) in model.arrival_pmf().iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let mut seqs: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), pa)];
            for _ in 0..a {
                let mut next = Vec::new();
                for (files, p) in &seqs {
                    let gone = 1.0 - model.watch_probability(j);
                    if gone > 0.0 {
                        next.push((files.clone(), p * gone));
                    }
                    for i in 0..n {
                        let w = model.file_popularity()[i] * model.retention(i, j);
                        if w > 0.0 {
                            let mut f = files.clone();
                            f.push(i);
                            next.push((f, p * w));
                        }
                    }
                }
                seqs = next;
            }
            outcomes.extend(seqs);
        }
        per_position.push(outcomes);
    }
    let mut out: Vec<(Vec<Vec<usize>>, f64)> = vec![(Vec::new(), 1.0)];
    for outcomes in &per_position {
        let mut next = Vec::with_capacity(out.len() * outcomes.len());
        for (prefix, p) in &out {
            for (files, w) in outcomes {
                let mut v = prefix.clone();
                v.push(files.clone());
                next.push((v, p * w));
            }
        }
        out = next;
    }
    out.into_iter().map(|(v, p)| (SlotDemand::from_positions(v), p)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ExhaustiveRates {
    pub ran: f64,
    pub man: f64,
    /// PCC with PART 2 fixed per count profile by expected cost.
    pub pcc_profile: f64,
    /// PCC with PART 2 picked per realized demand.
    pub pcc_slot: f64,
}

/// Expectation of the per-slot rates over [`steady_state_demands`].
pub fn exhaustive_rates(model: &PopularityModel, q: &CacheDistribution) -> ExhaustiveRates {
    let stats = chunk_stats(model).unwrap();
    let ctx = RateContext::new(&stats, q, RateOptions::default()).unwrap();
    let mut r = ExhaustiveRates { ran: 0.0, man: 0.0, pcc_profile: 0.0, pcc_slot: 0.0 };
    for (d, p) in steady_state_demands(model) {
        let parts = slot_breakdown(&d, q);
        let rule = ctx.profile_terms(&d.counts(), None).unwrap().part_two();
        r.ran += p * parts.ran;
        r.man += p * parts.man();
        r.pcc_profile += p * parts.pcc(rule);
        r.pcc_slot += p * parts.pcc(PartTwo::Cheaper);
    }
    r
}

/// Random capacity-consistent distribution with entries in `[0, 1]`.
pub fn random_q(rng: &mut impl rand::Rng, n: usize, b: usize) -> CacheDistribution {
    let q: Vec<f64> = (0..n * b).map(|_| rng.random::<f64>()).collect();
    let cap = q.iter().sum::<f64>() / b as f64;
    CacheDistribution::from_flat(n, b, cap, q).unwrap()
}
