//! Average delivery rates over the steady-state demand distribution.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cache::{subfile_size, CacheDistribution};
use crate::catalog::ChunkStats;
use crate::error::{Error, Result};
use crate::numeric::{binomial, for_each_in_box, pairwise_sum, prob_at_least_once};

use super::rho::{composition_sum, Levels};
use super::{PartTwo, RateBreakdown, RateOptions, RhoPrimeIndex};

/// Expected per-slot costs for one active-count profile `(k_1..k_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfileTerms {
    /// Subset-XOR delivery, all subset sizes.
    pub man: f64,
    /// Subset-XOR delivery restricted to singletons.
    pub singles: f64,
    /// Uncached bits of each distinct requested chunk.
    pub uncached: f64,
    /// Subset-XOR delivery restricted to pairs.
    pub pairwise: f64,
    /// Chained XOR of singly-cached pieces of each distinct requested chunk.
    pub chain: f64,
}

impl ProfileTerms {
    pub fn delta_phi1(&self) -> f64 {
        (self.singles - self.uncached).max(0.0)
    }

    pub fn delta_phi2(&self) -> f64 {
        (self.pairwise - self.chain).max(0.0)
    }

    /// The PART 2 variant whose expected cost the closed-form PCC rate charges.
    pub fn part_two(&self) -> PartTwo {
        if self.chain < self.pairwise {
            PartTwo::Chain
        } else {
            PartTwo::Pairwise
        }
    }
}

/// Precomputed subfile-size tables for one `(stats, Q)` pair.
pub struct RateContext<'a> {
    stats: &'a ChunkStats,
    q: &'a CacheDistribution,
    opts: RateOptions,
    max_users: usize,
    /// `g[users][cached_by][chunk]`.
    g: Vec<Vec<Vec<f64>>>,
    levels: Vec<Vec<Levels>>,
    run_sizes: Vec<Vec<Vec<u32>>>,
}

impl<'a> RateContext<'a> {
    pub fn new(stats: &'a ChunkStats, q: &'a CacheDistribution, opts: RateOptions) -> Result<Self> {
        let max_users = stats.num_chunks() * stats.max_arrivals();
        Self::with_max_users(stats, q, opts, max_users)
    }

    /// Tables cover profiles with up to `max_users` active users.
    pub fn with_max_users(
        stats: &'a ChunkStats,
        q: &'a CacheDistribution,
        opts: RateOptions,
        max_users: usize,
    ) -> Result<Self> {
        if stats.num_files() != q.num_files() || stats.num_chunks() != q.num_chunks() {
            return Err(Error::Domain(format!(
                "cache distribution is {}x{}, library is {}x{}",
                q.num_files(),
                q.num_chunks(),
                stats.num_files(),
                stats.num_chunks()
            )));
        }
        let mut g = Vec::with_capacity(max_users + 1);
        let mut levels = Vec::with_capacity(max_users + 1);
        let mut run_sizes = Vec::with_capacity(max_users + 1);
        for users in 0..=max_users {
            let row: Vec<Vec<f64>> = (0..=users)
                .map(|cached_by| q.fractions().iter().map(|&x| subfile_size(x, users, cached_by)).collect())
                .collect();
            let lv: Vec<Levels> = row.iter().map(|gv| Levels::new(gv)).collect();
            run_sizes.push(lv.iter().map(|l| l.run_sizes(q.fractions().len())).collect());
            levels.push(lv);
            g.push(row);
        }
        Ok(Self { stats, q, opts, max_users, g, levels, run_sizes })
    }

    pub fn stats(&self) -> &ChunkStats {
        self.stats
    }

    pub fn distribution(&self) -> &CacheDistribution {
        self.q
    }

    pub fn options(&self) -> RateOptions {
        self.opts
    }

    /// `sum_{i,j} rho'_ij g_ij(K, L-1)` for `K` active users and a subset of
    /// composition `l` (with `L = sum l >= 1`).
    pub fn composition_term(&self, users: usize, l: &[usize]) -> f64 {
        let total_l: usize = l.iter().sum();
        if total_l == 0 {
            return 0.0;
        }
        let ties_at = match self.opts.rho_prime_index {
            RhoPrimeIndex::SumL => total_l,
            RhoPrimeIndex::SumLMinus1 => total_l - 1,
        };
        composition_sum(
            &self.levels[users][total_l - 1],
            &self.g[users][total_l - 1],
            &self.run_sizes[users][ties_at],
            self.stats.normalized(),
            l,
        )
    }

    /// Expected costs for active-count profile `k`. `memo`, when given, must
    /// only be shared between profiles with the same total `sum k`.
    pub fn profile_terms(&self, k: &[usize], mut memo: Option<&mut CompositionMemo>) -> Result<ProfileTerms> {
        let b = self.stats.num_chunks();
        if k.len() != b {
            return Err(Error::Domain(format!("profile has {} entries, expected B={b}", k.len())));
        }
        let users: usize = k.iter().sum();
        if users > self.max_users {
            return Err(Error::Domain(format!("profile has {users} users, tables cover {}", self.max_users)));
        }
        let mut terms = ProfileTerms::default();
        if users == 0 {
            return Ok(terms);
        }
        let n = self.stats.num_files();
        let normalized = self.stats.normalized();
        let g0 = &self.g[users][0];

        for j in 0..b {
            let mut expected = 0.0;
            let mut distinct = 0.0;
            for i in 0..n {
                let c = i * b + j;
                expected += normalized[c] * g0[c];
                distinct += prob_at_least_once(normalized[c], k[j]) * g0[c];
            }
            terms.singles += k[j] as f64 * expected;
            terms.uncached += distinct;
        }
        if users >= 2 {
            let g1 = &self.g[users][1];
            for c in 0..n * b {
                terms.chain += (users - 1) as f64 * prob_at_least_once(normalized[c], k[c % b]) * g1[c];
            }
        }

        let mut weights = vec![1.0f64; b];
        for_each_in_box(k, |l| {
            let total_l: usize = l.iter().sum();
            if total_l == 0 {
                return;
            }
            for j in 0..b {
                weights[j] = binomial(k[j], l[j]);
            }
            let w: f64 = weights.iter().product();
            let t = match memo.as_deref_mut() {
                Some(m) => m.get_or_insert(l, || self.composition_term(users, l)),
                None => self.composition_term(users, l),
            };
            let contribution = w * t;
            terms.man += contribution;
            if total_l == 2 {
                terms.pairwise += contribution;
            }
        });
        Ok(terms)
    }

    /// Nonzero-probability profiles in lexicographic order with their weights.
    pub fn profiles(&self) -> Vec<(Vec<usize>, f64)> {
        let pmf = self.stats.active_count_pmf();
        let a_max = self.stats.max_arrivals();
        let b = self.stats.num_chunks();
        let mut out = Vec::new();
        for_each_in_box(&vec![a_max; b], |k| {
            let w: f64 = k.iter().enumerate().map(|(j, &kj)| pmf[j][kj]).product();
            if w > 0.0 {
                out.push((k.to_vec(), w));
            }
        });
        out
    }

    /// Expected terms for every profile, in [`profiles`](Self::profiles) order.
    ///
    /// Profiles are evaluated in parallel, grouped by their total user count;
    /// each term is computed independently of scheduling so the result is
    /// identical for any worker count.
    pub fn all_profile_terms(&self) -> Result<Vec<(Vec<usize>, f64, ProfileTerms)>> {
        let profiles = self.profiles();
        let mut by_total: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (idx, (k, _)) in profiles.iter().enumerate() {
            by_total.entry(k.iter().sum()).or_default().push(idx);
        }
        let groups: Vec<Vec<usize>> = by_total.into_values().collect();
        let computed: Vec<Vec<(usize, ProfileTerms)>> = groups
            .par_iter()
            .map(|members| {
                let mut memo = self.opts.memoize.then(|| {
                    let mut bounds = vec![0usize; self.stats.num_chunks()];
                    for &m in members {
                        for (bd, &kj) in bounds.iter_mut().zip(&profiles[m].0) {
                            *bd = (*bd).max(kj);
                        }
                    }
                    CompositionMemo::new(&bounds)
                });
                members
                    .iter()
                    .map(|&m| Ok((m, self.profile_terms(&profiles[m].0, memo.as_mut())?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut slots: Vec<Option<ProfileTerms>> = vec![None; profiles.len()];
        for (m, t) in computed.into_iter().flatten() {
            slots[m] = Some(t);
        }
        Ok(profiles.into_iter().zip(slots).map(|((k, w), t)| (k, w, t.expect("every profile evaluated"))).collect())
    }

    /// Closed-form MAN and PCC rates with the two PCC savings terms, plus RAN.
    pub fn breakdown(&self) -> Result<RateBreakdown> {
        let terms = self.all_profile_terms()?;
        let weighted = |f: &dyn Fn(&ProfileTerms) -> f64| -> f64 {
            let v: Vec<f64> = terms.iter().map(|(_, w, t)| w * f(t)).collect();
            pairwise_sum(&v)
        };
        let rate_man = weighted(&|t| t.man);
        let delta_phi1 = weighted(&|t| t.delta_phi1());
        let delta_phi2 = weighted(&|t| t.delta_phi2());
        Ok(RateBreakdown {
            rate_ran: rate_ran(self.stats, self.q),
            rate_man,
            rate_pcc: rate_man - delta_phi1 - delta_phi2,
            delta_phi1,
            delta_phi2,
        })
    }
}

/// Dense cache of composition terms for one total user count.
pub struct CompositionMemo {
    strides: Vec<usize>,
    bounds: Vec<usize>,
    values: Vec<f64>,
}

impl CompositionMemo {
    /// Covers every `l` with `l_j <= bounds[j]`.
    pub fn new(bounds: &[usize]) -> Self {
        let mut strides = vec![1usize; bounds.len()];
        for j in (0..bounds.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * (bounds[j + 1] + 1);
        }
        let size = bounds.iter().map(|b| b + 1).product();
        Self { strides, bounds: bounds.to_vec(), values: vec![f64::NAN; size] }
    }

    fn get_or_insert(&mut self, l: &[usize], f: impl FnOnce() -> f64) -> f64 {
        debug_assert!(l.iter().zip(&self.bounds).all(|(a, b)| a <= b));
        let idx: usize = l.iter().zip(&self.strides).map(|(a, s)| a * s).sum();
        let slot = &mut self.values[idx];
        if slot.is_nan() {
            *slot = f();
        }
        *slot
    }
}

/// Random-delivery rate: each requested chunk costs its uncached fraction.
pub fn rate_ran(stats: &ChunkStats, q: &CacheDistribution) -> f64 {
    let b = stats.num_chunks();
    let pmf = stats.active_count_pmf();
    let normalized = stats.normalized();
    let mut total = 0.0;
    for j in 0..b {
        for i in 0..stats.num_files() {
            let c = i * b + j;
            let requested: f64 =
                pmf[j].iter().enumerate().map(|(k, pk)| pk * prob_at_least_once(normalized[c], k)).sum();
            total += requested * (1.0 - q.fractions()[c]);
        }
    }
    total
}

/// Uncoded caching sends exactly the bits random delivery sends for every
/// demand, so the average rates coincide.
pub fn rate_uncoded(stats: &ChunkStats, q: &CacheDistribution) -> f64 {
    rate_ran(stats, q)
}

pub fn rate_man(stats: &ChunkStats, q: &CacheDistribution, opts: RateOptions) -> Result<f64> {
    Ok(RateContext::new(stats, q, opts)?.breakdown()?.rate_man)
}

pub fn delta_phi1(stats: &ChunkStats, q: &CacheDistribution, opts: RateOptions) -> Result<f64> {
    Ok(RateContext::new(stats, q, opts)?.breakdown()?.delta_phi1)
}

pub fn delta_phi2(stats: &ChunkStats, q: &CacheDistribution, opts: RateOptions) -> Result<f64> {
    Ok(RateContext::new(stats, q, opts)?.breakdown()?.delta_phi2)
}

pub fn rate_pcc(stats: &ChunkStats, q: &CacheDistribution, opts: RateOptions) -> Result<RateBreakdown> {
    RateContext::new(stats, q, opts)?.breakdown()
}
