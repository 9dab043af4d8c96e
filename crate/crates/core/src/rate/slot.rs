//! Large-F delivery cost of a single realized demand.

use crate::cache::{subfile_size, CacheDistribution};
use crate::numeric::binomial;
use crate::sim::SlotDemand;

use super::{PartTwo, Scheme};

/// Per-part costs of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotBreakdown {
    pub ran: f64,
    /// Subset-XOR cost for subsets of size 1, 2 and >= 3.
    pub man_singles: f64,
    pub man_pairs: f64,
    pub man_rest: f64,
    /// Uncached bits of every distinct requested chunk.
    pub uncached: f64,
    /// Chained XOR of singly-cached pieces of every distinct requested chunk.
    pub chain: f64,
}

impl SlotBreakdown {
    pub fn man(&self) -> f64 {
        self.man_singles + self.man_pairs + self.man_rest
    }

    pub fn pcc(&self, part_two: PartTwo) -> f64 {
        let middle = match part_two {
            PartTwo::Cheaper => self.man_pairs.min(self.chain),
            PartTwo::Pairwise => self.man_pairs,
            PartTwo::Chain => self.chain,
        };
        self.uncached + middle + self.man_rest
    }
}

/// `sum_{|P| = z} max_{k in P} g_{d_k}(K, z - 1)` by counting, per run of
/// equal `g`, the subsets whose largest member falls in that run.
///
/// `chunks` lists distinct requested chunks with their multiplicity.
pub fn man_subset_term(q: &CacheDistribution, chunks: &[(usize, usize)], users: usize, z: usize) -> f64 {
    if z == 0 || z > users {
        return 0.0;
    }
    let mut vals: Vec<(f64, usize)> =
        chunks.iter().map(|&(c, m)| (subfile_size(q.fractions()[c], users, z - 1), m)).collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN subfile size"));
    let mut below = 0usize;
    let mut total = 0.0;
    let mut t = 0;
    while t < vals.len() {
        let value = vals[t].0;
        let mut run = 0;
        while t < vals.len() && vals[t].0 == value {
            run += vals[t].1;
            t += 1;
        }
        if value != 0.0 {
            total += value * (binomial(below + run, z) - binomial(below, z));
        }
        below += run;
    }
    total
}

/// Costs of all delivery parts for `demand` under `q`.
pub fn slot_breakdown(demand: &SlotDemand, q: &CacheDistribution) -> SlotBreakdown {
    let users = demand.total();
    let mut out = SlotBreakdown::default();
    if users == 0 {
        return out;
    }
    let chunks = demand.distinct_chunks();
    for &(c, _) in &chunks {
        let qc = q.fractions()[c];
        out.ran += 1.0 - qc;
        out.uncached += subfile_size(qc, users, 0);
        if users >= 2 {
            out.chain += (users - 1) as f64 * subfile_size(qc, users, 1);
        }
    }
    out.man_singles = man_subset_term(q, &chunks, users, 1);
    out.man_pairs = man_subset_term(q, &chunks, users, 2);
    out.man_rest = (3..=users).map(|z| man_subset_term(q, &chunks, users, z)).sum();
    out
}

/// Slot rate with the PCC PART 2 variant chosen per realized demand.
pub fn slot_rate(scheme: Scheme, demand: &SlotDemand, q: &CacheDistribution) -> f64 {
    slot_rate_with(scheme, demand, q, PartTwo::Cheaper)
}

pub fn slot_rate_with(scheme: Scheme, demand: &SlotDemand, q: &CacheDistribution, part_two: PartTwo) -> f64 {
    let parts = slot_breakdown(demand, q);
    match scheme {
        Scheme::Ran | Scheme::Uncoded => parts.ran,
        Scheme::Man => parts.man(),
        Scheme::Pcc => parts.pcc(part_two),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_user() {
        let q = CacheDistribution::from_flat(2, 2, 0.5, vec![0.3, 0.2, 0.4, 0.1]).unwrap();
        let d = SlotDemand::from_requests(2, &[(0, 0)]);
        for s in [Scheme::Ran, Scheme::Man, Scheme::Pcc, Scheme::Uncoded] {
            assert!((slot_rate(s, &d, &q) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_requests_without_cache() {
        let q = CacheDistribution::empty(1, 1);
        let d = SlotDemand::from_requests(1, &[(0, 0), (0, 0)]);
        assert_eq!(slot_rate(Scheme::Ran, &d, &q), 1.0);
        assert_eq!(slot_rate(Scheme::Man, &d, &q), 2.0);
        assert_eq!(slot_rate(Scheme::Pcc, &d, &q), 1.0);
    }

    #[test]
    fn empty_demand_costs_nothing() {
        let q = CacheDistribution::uniform(2, 1, 0.5);
        let d = SlotDemand::new(1);
        assert_eq!(slot_rate(Scheme::Man, &d, &q), 0.0);
        assert_eq!(slot_rate(Scheme::Pcc, &d, &q), 0.0);
    }

    #[test]
    fn two_distinct_users_hand_enumeration() {
        let q = CacheDistribution::from_flat(2, 1, 0.4, vec![0.6, 0.2]).unwrap();
        let d = SlotDemand::from_requests(1, &[(0, 0), (1, 0)]);
        // Subsets {1}, {2}, {1,2}.
        let expect = 0.4 * 0.4 + 0.8 * 0.8 + f64::max(0.6 * 0.4, 0.2 * 0.8);
        assert!((slot_rate(Scheme::Man, &d, &q) - expect).abs() < 1e-15);
    }

    #[test]
    fn full_cache_costs_nothing() {
        let q = CacheDistribution::uniform(3, 2, 1.0);
        let d = SlotDemand::from_requests(2, &[(0, 0), (1, 0), (2, 1), (0, 1)]);
        for s in [Scheme::Ran, Scheme::Man, Scheme::Pcc] {
            assert_eq!(slot_rate(s, &d, &q), 0.0);
        }
    }
}
