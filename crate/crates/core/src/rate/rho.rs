//! Maximum-subfile probabilities `rho` and their tie-normalized form `rho'`.

use crate::cache::{subfile_size, CacheDistribution};
use crate::catalog::ChunkStats;
use crate::error::{Error, Result};

use super::RhoPrimeIndex;

/// Active-user counts per position and the composition of a user subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositionIndex {
    k: Vec<usize>,
    l: Vec<usize>,
}

impl CompositionIndex {
    pub fn new(k: Vec<usize>, l: Vec<usize>) -> Result<Self> {
        if k.len() != l.len() {
            return Err(Error::Domain("composition vectors differ in length".into()));
        }
        if k.iter().zip(&l).any(|(k, l)| l > k) {
            return Err(Error::Domain(format!("subset composition {l:?} exceeds counts {k:?}")));
        }
        Ok(Self { k, l })
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn l(&self) -> &[usize] {
        &self.l
    }

    pub fn total_k(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn total_l(&self) -> usize {
        self.l.iter().sum()
    }
}

/// Chunks sorted by ascending `g`, split into runs of exactly equal value.
#[derive(Debug, Clone)]
pub(crate) struct Levels {
    order: Vec<usize>,
    /// Run `t` is `order[starts[t]..starts[t + 1]]`.
    starts: Vec<usize>,
}

impl Levels {
    pub(crate) fn new(gvals: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..gvals.len()).collect();
        order.sort_by(|&a, &b| gvals[a].partial_cmp(&gvals[b]).expect("NaN subfile size").then(a.cmp(&b)));
        let mut starts = vec![0];
        for t in 1..order.len() {
            if gvals[order[t]] != gvals[order[t - 1]] {
                starts.push(t);
            }
        }
        starts.push(order.len());
        Self { order, starts }
    }

    pub(crate) fn runs(&self) -> impl Iterator<Item = &[usize]> {
        self.starts.windows(2).map(move |w| &self.order[w[0]..w[1]])
    }

    /// Size of the run containing each chunk.
    pub(crate) fn run_sizes(&self, len: usize) -> Vec<u32> {
        let mut sizes = vec![0u32; len];
        for run in self.runs() {
            for &c in run {
                sizes[c] = run.len() as u32;
            }
        }
        sizes
    }
}

fn check_l(l: &[usize], b: usize) -> Result<usize> {
    if l.len() != b {
        return Err(Error::Domain(format!("composition has {} entries, expected B={b}", l.len())));
    }
    let total: usize = l.iter().sum();
    if total == 0 {
        return Err(Error::Domain("rho needs a non-empty user subset".into()));
    }
    Ok(total)
}

/// Walks the runs in ascending order, handing each run and its `rho` to `visit`.
///
/// `rho` of a run is `prod_h (S_le[h])^l_h - prod_h (S_lt[h])^l_h` where
/// `S_le[h]` (`S_lt[h]`) is the normalized popularity mass of position-`h`
/// chunks whose `g` is at most (strictly below) the run's value.
pub(crate) fn sweep_runs(levels: &Levels, normalized: &[f64], l: &[usize], mut visit: impl FnMut(&[usize], f64)) {
    let b = l.len();
    let mut le = vec![0.0f64; b];
    let mut lo = 0.0f64;
    for run in levels.runs() {
        for &c in run {
            le[c % b] += normalized[c];
        }
        let hi: f64 = le.iter().zip(l).map(|(s, &e)| s.powi(e as i32)).product();
        visit(run, (hi - lo).max(0.0));
        lo = hi;
    }
}

/// `sum_c rho'_c g_c` for one `(sum k, l)`, given `g` at `(sum k, sum l - 1)`
/// and the tie counts for the denominator.
pub(crate) fn composition_sum(levels: &Levels, gvals: &[f64], ties: &[u32], normalized: &[f64], l: &[usize]) -> f64 {
    let mut acc = 0.0;
    sweep_runs(levels, normalized, l, |run, rho| {
        if rho == 0.0 {
            return;
        }
        for &c in run {
            if gvals[c] != 0.0 {
                acc += rho / ties[c] as f64 * gvals[c];
            }
        }
    });
    acc
}

fn gvals_at(q: &CacheDistribution, users: usize, cached_by: usize) -> Vec<f64> {
    q.fractions().iter().map(|&x| subfile_size(x, users, cached_by)).collect()
}

fn check_shapes(stats: &ChunkStats, q: &CacheDistribution) -> Result<()> {
    if stats.num_files() != q.num_files() || stats.num_chunks() != q.num_chunks() {
        return Err(Error::Domain("cache distribution shape does not match the library".into()));
    }
    Ok(())
}

/// `rho` for every chunk (row-major).
pub fn rho_vector(idx: &CompositionIndex, q: &CacheDistribution, stats: &ChunkStats) -> Result<Vec<f64>> {
    check_shapes(stats, q)?;
    let total_l = check_l(idx.l(), stats.num_chunks())?;
    let gvals = gvals_at(q, idx.total_k(), total_l - 1);
    let levels = Levels::new(&gvals);
    let mut out = vec![0.0; gvals.len()];
    sweep_runs(&levels, stats.normalized(), idx.l(), |run, rho| {
        for &c in run {
            out[c] = rho;
        }
    });
    Ok(out)
}

/// Probability that chunk `(file, position)` attains the largest exclusive
/// subfile among the chunks requested by a random subset of composition `l`.
pub fn rho(
    file: usize,
    position: usize,
    idx: &CompositionIndex,
    q: &CacheDistribution,
    stats: &ChunkStats,
) -> Result<f64> {
    Ok(rho_vector(idx, q, stats)?[file * stats.num_chunks() + position])
}

/// `rho'` for every chunk: `rho` divided by the number of chunks whose `g`
/// ties with this chunk's `g` at the configured index.
pub fn rho_prime_vector(
    idx: &CompositionIndex,
    q: &CacheDistribution,
    stats: &ChunkStats,
    index: RhoPrimeIndex,
) -> Result<Vec<f64>> {
    let rho = rho_vector(idx, q, stats)?;
    let total_l = idx.total_l();
    let cached_by = match index {
        RhoPrimeIndex::SumL => total_l,
        RhoPrimeIndex::SumLMinus1 => total_l - 1,
    };
    let ties = Levels::new(&gvals_at(q, idx.total_k(), cached_by)).run_sizes(rho.len());
    Ok(rho.iter().zip(ties).map(|(r, t)| r / t as f64).collect())
}

pub fn rho_prime(
    file: usize,
    position: usize,
    idx: &CompositionIndex,
    q: &CacheDistribution,
    stats: &ChunkStats,
    index: RhoPrimeIndex,
) -> Result<f64> {
    Ok(rho_prime_vector(idx, q, stats, index)?[file * stats.num_chunks() + position])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{chunk_stats, PopularityModel};
    use proptest::prelude::*;

    fn two_file_stats() -> ChunkStats {
        let m = PopularityModel::new(vec![0.75, 0.25], vec![vec![1.0], vec![1.0]], vec![0.0, 0.0, 1.0]).unwrap();
        chunk_stats(&m).unwrap()
    }

    #[test]
    fn single_chunk_is_always_the_max() {
        let m = PopularityModel::new(vec![1.0], vec![vec![1.0]], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = chunk_stats(&m).unwrap();
        let q = CacheDistribution::uniform(1, 1, 0.4);
        for (k, l) in [(1, 1), (3, 1), (3, 2), (3, 3)] {
            let idx = CompositionIndex::new(vec![k], vec![l]).unwrap();
            assert_eq!(rho(0, 0, &idx, &q, &s).unwrap(), 1.0);
        }
    }

    #[test]
    fn two_file_enumeration() {
        // g1 = 0.6 * 0.4 = 0.24 > g2 = 0.2 * 0.8 = 0.16 at (2, 1).
        // Enumerating the 4 ordered demand pairs: chunk 2 is the max only
        // when both users ask for it, 0.25^2.
        let s = two_file_stats();
        let q = CacheDistribution::from_flat(2, 1, 0.8, vec![0.6, 0.2]).unwrap();
        let idx = CompositionIndex::new(vec![2], vec![2]).unwrap();
        let r = rho_vector(&idx, &q, &s).unwrap();
        assert!((r[0] - 0.9375).abs() < 1e-15);
        assert!((r[1] - 0.0625).abs() < 1e-15);
        let rp = rho_prime_vector(&idx, &q, &s, RhoPrimeIndex::SumL).unwrap();
        assert_eq!(rp, r);
    }

    #[test]
    fn empty_subset_is_a_domain_error() {
        let s = two_file_stats();
        let q = CacheDistribution::uniform(2, 1, 0.3);
        let idx = CompositionIndex::new(vec![2], vec![0]).unwrap();
        assert!(matches!(rho(0, 0, &idx, &q, &s), Err(Error::Domain(_))));
        assert!(CompositionIndex::new(vec![1], vec![2]).is_err());
    }

    #[test]
    fn shared_fraction_divides_by_library_size() {
        let m =
            PopularityModel::with_common_retention(vec![0.5, 0.3, 0.2], vec![1.0, 0.5], vec![0.0, 0.5, 0.5]).unwrap();
        let s = chunk_stats(&m).unwrap();
        let q = CacheDistribution::uniform(3, 2, 0.35);
        let idx = CompositionIndex::new(vec![2, 1], vec![1, 1]).unwrap();
        let r = rho_vector(&idx, &q, &s).unwrap();
        let rp = rho_prime_vector(&idx, &q, &s, RhoPrimeIndex::SumL).unwrap();
        for (a, b) in r.iter().zip(&rp) {
            assert!((a / 6.0 - b).abs() < 1e-15);
        }
        let total_rho: f64 = r.iter().sum();
        let total_rp: f64 = rp.iter().sum();
        assert!((total_rp - total_rho / 6.0).abs() < 1e-15);
    }

    fn arb_instance() -> impl Strategy<Value = (ChunkStats, CacheDistribution, Vec<usize>, Vec<usize>)> {
        (1usize..5, 1usize..4)
            .prop_flat_map(|(n, b)| {
                (
                    Just(n),
                    Just(b),
                    prop::collection::vec(0.05f64..1.0, n),
                    prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 1.0, 0.1, 0.9, 0.33]), n * b),
                    prop::collection::vec(0usize..4, b),
                    prop::collection::vec(0usize..4, b),
                )
            })
            .prop_filter_map("need a non-empty subset", |(n, b, w, q, k, extra)| {
                let total: f64 = w.iter().sum();
                let p: Vec<f64> = w.iter().map(|x| x / total).collect();
                let row: Vec<f64> = (0..b).map(|j| 1.0 / (j + 1) as f64).collect();
                let m = PopularityModel::with_common_retention(p, row, vec![1.0]).ok()?;
                let s = chunk_stats(&m).ok()?;
                let l: Vec<usize> = k.iter().zip(&extra).map(|(k, e)| (*e).min(*k)).collect();
                if l.iter().sum::<usize>() == 0 {
                    return None;
                }
                let cap = q.iter().sum::<f64>() / b as f64;
                Some((s, CacheDistribution::from_flat(n, b, cap, q).unwrap(), k, l))
            })
    }

    proptest! {
        #[test]
        fn rho_partitions_the_sample_space((s, q, k, l) in arb_instance()) {
            let idx = CompositionIndex::new(k, l).unwrap();
            let r = rho_vector(&idx, &q, &s).unwrap();
            let total_l = idx.total_l();
            let g = gvals_at(&q, idx.total_k(), total_l - 1);
            let levels = Levels::new(&g);
            let mass: f64 = levels.runs().map(|run| r[run[0]]).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12, "mass {}", mass);
            for v in &r {
                prop_assert!((0.0..=1.0 + 1e-12).contains(v));
            }
        }
    }
}
