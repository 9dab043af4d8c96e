//! Cache allocation: popularity-based (PCA) and numerically optimized (OCA).

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::CacheDistribution;
use crate::catalog::ChunkStats;
use crate::error::{Error, Result};
use crate::rate::{rate_ran, RateContext, RateOptions, Scheme};
use crate::sim::rng_for_restart;

const CAPACITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Oca,
    Pca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oca => "OCA",
            Method::Pca => "PCA",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OCA" => Ok(Method::Oca),
            "PCA" => Ok(Method::Pca),
            other => Err(Error::InvalidConfig(format!("unknown allocation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Descent iterations of the winning start (PCA: candidates evaluated).
    pub iterations: usize,
    pub restarts: usize,
    pub starts: usize,
    pub final_step_norm: f64,
    pub final_gradient_norm: f64,
    /// PCA only: number of cached chunks at the optimum.
    pub cached_chunks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub q: CacheDistribution,
    pub achieved_rate: f64,
    pub method: Method,
    pub objective: Scheme,
    pub solver_trace: SolverTrace,
}

/// Average rate of `scheme` at `q`.
pub fn objective_rate(stats: &ChunkStats, q: &CacheDistribution, scheme: Scheme, opts: RateOptions) -> Result<f64> {
    match scheme {
        Scheme::Ran | Scheme::Uncoded => Ok(rate_ran(stats, q)),
        Scheme::Man | Scheme::Pcc => Ok(RateContext::new(stats, q, opts)?.breakdown()?.get(scheme)),
    }
}

fn check_capacity(stats: &ChunkStats, capacity: f64) -> Result<()> {
    let n = stats.num_files() as f64;
    if !(0.0..=n).contains(&capacity) {
        return Err(Error::Domain(format!("cache capacity {capacity} outside [0, {n}]")));
    }
    Ok(())
}

/// Smallest and largest feasible number of cached chunks.
pub fn pca_count_range(stats: &ChunkStats, capacity: f64) -> (usize, usize) {
    let slots = stats.num_chunk_slots();
    let need = (capacity * stats.num_chunks() as f64 - CAPACITY_SLACK).ceil().max(1.0) as usize;
    (need.min(slots), slots)
}

/// Caches the `cached` most popular chunks at fraction `MB / cached`.
/// Popularity ties go to the smaller file index, then the smaller position.
pub fn pca_distribution(stats: &ChunkStats, capacity: f64, cached: usize) -> Result<CacheDistribution> {
    check_capacity(stats, capacity)?;
    let (lo, hi) = pca_count_range(stats, capacity);
    if cached < lo || cached > hi {
        return Err(Error::Domain(format!("PCA count {cached} outside [{lo}, {hi}]")));
    }
    let pop = stats.chunk_popularity();
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| pop[b].partial_cmp(&pop[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let fraction = (capacity * stats.num_chunks() as f64 / cached as f64).min(1.0);
    let mut q = vec![0.0; pop.len()];
    for &c in &order[..cached] {
        q[c] = fraction;
    }
    CacheDistribution::from_flat(stats.num_files(), stats.num_chunks(), capacity, q)
}

/// Lowest rate first; equal rates resolved by lexicographic `Q`.
fn better(a: (f64, &CacheDistribution), b: (f64, &CacheDistribution)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| {
        a.1.fractions()
            .iter()
            .zip(b.1.fractions())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Best PCA distribution over every feasible cached-chunk count.
pub fn optimize_pca(
    stats: &ChunkStats,
    capacity: f64,
    objective: Scheme,
    opts: RateOptions,
) -> Result<AllocationResult> {
    check_capacity(stats, capacity)?;
    let (lo, hi) = pca_count_range(stats, capacity);
    let candidates: Vec<(usize, CacheDistribution, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|c| {
            let q = pca_distribution(stats, capacity, c)?;
            let r = objective_rate(stats, &q, objective, opts)?;
            Ok((c, q, r))
        })
        .collect::<Result<_>>()?;
    let (c, q, r) =
        candidates.iter().min_by(|a, b| better((a.2, &a.1), (b.2, &b.1))).expect("at least one feasible count");
    Ok(AllocationResult {
        q: q.clone(),
        achieved_rate: *r,
        method: Method::Pca,
        objective,
        solver_trace: SolverTrace {
            iterations: candidates.len(),
            starts: candidates.len(),
            cached_chunks: Some(*c),
            ..SolverTrace::default()
        },
    })
}

/// Euclidean projection onto `{x in [0,1]^n : sum x = total}`.
pub fn project_capped_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let n = y.len() as f64;
    let total = total.clamp(0.0, n);
    if total == n {
        return vec![1.0; y.len()];
    }
    if total == 0.0 {
        return vec![0.0; y.len()];
    }
    let sum_at = |tau: f64| y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut x: Vec<f64> = y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).collect();
    // Put the rounding residual on a coordinate that can absorb it.
    let residual = total - x.iter().sum::<f64>();
    if residual != 0.0 {
        if let Some(i) = (0..x.len()).find(|&i| (0.0..=1.0).contains(&(x[i] + residual)) && x[i] > 0.0 && x[i] < 1.0) {
            x[i] += residual;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcaOptions {
    pub rate_options: RateOptions,
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    /// Extra feasible starting points, e.g. the optimum at a neighbouring capacity.
    #[serde(skip)]
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for OcaOptions {
    fn default() -> Self {
        Self {
            rate_options: RateOptions::default(),
            restarts: 4,
            seed: 0,
            max_iterations: 500,
            tolerance: 1e-7,
            fd_step: 1e-5,
            warm_starts: Vec::new(),
        }
    }
}

struct Problem<'a> {
    stats: &'a ChunkStats,
    capacity: f64,
    objective: Scheme,
    opts: &'a OcaOptions,
}

struct Descent {
    q: Vec<f64>,
    rate: f64,
    iterations: usize,
    step_norm: f64,
    gradient_norm: f64,
}

impl Problem<'_> {
    fn dist(&self, x: Vec<f64>) -> CacheDistribution {
        CacheDistribution::from_flat(self.stats.num_files(), self.stats.num_chunks(), self.capacity, x)
            .expect("shape fixed by the library")
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        objective_rate(self.stats, &self.dist(x.to_vec()), self.objective, self.opts.rate_options)
    }

    fn gradient(&self, x: &[f64], fx: f64) -> Result<Vec<f64>> {
        let h = self.opts.fd_step;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            let (lo, hi) = ((x[i] - h).max(0.0), (x[i] + h).min(1.0));
            probe[i] = hi;
            let f_hi = if hi > x[i] { self.eval(&probe)? } else { fx };
            probe[i] = lo;
            let f_lo = if lo < x[i] { self.eval(&probe)? } else { fx };
            probe[i] = x[i];
            g[i] = if hi > lo { (f_hi - f_lo) / (hi - lo) } else { 0.0 };
        }
        Ok(g)
    }

    fn descend(&self, start: Vec<f64>) -> Result<Descent> {
        let total = self.capacity * self.stats.num_chunks() as f64;
        let mut x = project_capped_simplex(&start, total);
        let mut fx = self.eval(&x)?;
        let mut step = 1.0;
        let mut out = Descent { q: Vec::new(), rate: 0.0, iterations: 0, step_norm: 0.0, gradient_norm: 0.0 };
        for it in 0..self.opts.max_iterations {
            out.iterations = it + 1;
            let g = self.gradient(&x, fx)?;
            out.gradient_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut accepted = None;
            while step > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let y = project_capped_simplex(&trial, total);
                let decrease: f64 = g.iter().zip(x.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
                let fy = self.eval(&y)?;
                if fy < fx && fy <= fx - 1e-4 * decrease {
                    accepted = Some((y, fy));
                    break;
                }
                step *= 0.5;
            }
            let Some((y, fy)) = accepted else {
                out.step_norm = 0.0;
                break;
            };
            out.step_norm = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            x = y;
            fx = fy;
            if out.step_norm < self.opts.tolerance {
                break;
            }
            step = (step * 2.0).min(1e3);
        }
        out.q = x;
        out.rate = fx;
        Ok(out)
    }
}

/// Multi-start projected gradient descent over the capped simplex.
///
/// Starts are every PCA distribution, the uniform distribution,
/// `opts.restarts` random feasible points and `opts.warm_starts`. Since
/// descent never increases the objective, the result is never worse than
/// the best PCA distribution.
pub fn optimize_oca(
    stats: &ChunkStats,
    capacity: f64,
    objective: Scheme,
    opts: &OcaOptions,
) -> Result<AllocationResult> {
    check_capacity(stats, capacity)?;
    let slots = stats.num_chunk_slots();
    let total = capacity * stats.num_chunks() as f64;
    let (lo, hi) = pca_count_range(stats, capacity);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for c in lo..=hi {
        starts.push(pca_distribution(stats, capacity, c)?.fractions().to_vec());
    }
    starts.push(vec![total / slots as f64; slots]);
    for r in 0..opts.restarts {
        let mut rng = rng_for_restart(opts.seed, r as u64);
        let y: Vec<f64> = (0..slots).map(|_| rng.random::<f64>()).collect();
        let scale = total / y.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        starts.push(y.iter().map(|v| v * scale).collect());
    }
    for w in &opts.warm_starts {
        if w.len() != slots {
            return Err(Error::Domain("warm start has the wrong shape".into()));
        }
        starts.push(w.clone());
    }

    let problem = Problem { stats, capacity, objective, opts };
    let runs: Vec<Descent> = starts.into_par_iter().map(|s| problem.descend(s)).collect::<Result<_>>()?;
    let n_starts = runs.len();
    let dists: Vec<CacheDistribution> = runs.iter().map(|d| problem.dist(d.q.clone())).collect();
    let best = (0..n_starts)
        .min_by(|&a, &b| better((runs[a].rate, &dists[a]), (runs[b].rate, &dists[b])))
        .expect("at least one start");
    let winner = &runs[best];
    Ok(AllocationResult {
        q: dists[best].clone(),
        achieved_rate: winner.rate,
        method: Method::Oca,
        objective,
        solver_trace: SolverTrace {
            iterations: winner.iterations,
            restarts: opts.restarts,
            starts: n_starts,
            final_step_norm: winner.step_norm,
            final_gradient_norm: winner.gradient_norm,
            cached_chunks: None,
        },
    })
}

/// Allocation by `method`.
pub fn allocate(
    stats: &ChunkStats,
    capacity: f64,
    method: Method,
    objective: Scheme,
    opts: &OcaOptions,
) -> Result<AllocationResult> {
    match method {
        Method::Pca => optimize_pca(stats, capacity, objective, opts.rate_options),
        Method::Oca => optimize_oca(stats, capacity, objective, opts),
    }
}

/// Allocations along an increasing capacity grid. OCA points are also
/// started from the previous point's optimum.
pub fn sweep_allocations(
    stats: &ChunkStats,
    capacities: &[f64],
    method: Method,
    objective: Scheme,
    opts: &OcaOptions,
) -> Result<Vec<AllocationResult>> {
    if method == Method::Pca {
        return capacities.par_iter().map(|&m| optimize_pca(stats, m, objective, opts.rate_options)).collect();
    }
    let mut out: Vec<AllocationResult> = Vec::with_capacity(capacities.len());
    for &m in capacities {
        let mut o = opts.clone();
        if let Some(prev) = out.last() {
            o.warm_starts.push(prev.q.fractions().to_vec());
        }
        out.push(optimize_oca(stats, m, objective, &o)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::validate;
    use crate::catalog::{chunk_stats, PopularityModel};

    fn stats(p: Vec<f64>, row: Vec<f64>, pmf: Vec<f64>) -> ChunkStats {
        chunk_stats(&PopularityModel::with_common_retention(p, row, pmf).unwrap()).unwrap()
    }

    #[test]
    fn pca_examples() {
        let s = stats(vec![0.8, 0.2], vec![1.0], vec![0.0, 1.0]);
        assert_eq!(pca_distribution(&s, 0.5, 1).unwrap().fractions(), &[0.5, 0.0]);
        assert_eq!(pca_distribution(&s, 0.5, 2).unwrap().fractions(), &[0.25, 0.25]);
        assert_eq!(pca_distribution(&s, 2.0, 2).unwrap().fractions(), &[1.0, 1.0]);
        assert!(matches!(pca_distribution(&s, 1.5, 1), Err(Error::Domain(_))));
        assert!(matches!(pca_distribution(&s, 0.5, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn pca_ties_go_to_smaller_index() {
        let s = stats(vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0, 1.0]);
        assert_eq!(pca_distribution(&s, 0.5, 1).unwrap().fractions(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_lands_on_the_set() {
        let y = [0.9, -0.4, 2.0, 0.3, 0.31];
        for total in [0.0, 0.7, 1.5, 3.2, 5.0] {
            let x = project_capped_simplex(&y, total);
            assert!((x.iter().sum::<f64>() - total).abs() < 1e-12);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(project_capped_simplex(&y, 5.0), vec![1.0; 5]);
    }

    #[test]
    fn projection_is_idempotent_on_feasible_points() {
        let x = [0.2, 0.5, 0.3, 1.0];
        let p = project_capped_simplex(&x, 2.0);
        for (a, b) in x.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_capacities() {
        let s = stats(vec![0.6, 0.4], vec![1.0, 0.5], vec![0.0, 0.5, 0.5]);
        for scheme in [Scheme::Man, Scheme::Pcc] {
            let zero = optimize_pca(&s, 0.0, scheme, RateOptions::default()).unwrap();
            assert!(zero.q.fractions().iter().all(|&v| v == 0.0));
            let full = optimize_oca(&s, 2.0, scheme, &OcaOptions::default()).unwrap();
            assert!(full.q.fractions().iter().all(|&v| v == 1.0));
            assert!(full.achieved_rate.abs() < 1e-12);
        }
    }

    #[test]
    fn single_chunk_library() {
        let s = stats(vec![1.0], vec![1.0], vec![0.0, 1.0]);
        let r = optimize_oca(&s, 0.3, Scheme::Pcc, &OcaOptions::default()).unwrap();
        assert!((r.q.fractions()[0] - 0.3).abs() < 1e-12);
        assert!((r.achieved_rate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn oca_matches_a_fine_grid_on_the_capacity_line() {
        // One user per slot, two files: rate is sum_i p_i (1 - q_i).
        let s = stats(vec![0.8, 0.2], vec![1.0], vec![0.0, 1.0]);
        let r = optimize_oca(&s, 0.5, Scheme::Pcc, &OcaOptions::default()).unwrap();
        let mut grid_best = f64::INFINITY;
        for t in 0..=500 {
            let q1 = t as f64 * 1e-3;
            let q = CacheDistribution::from_flat(2, 1, 0.5, vec![q1, 0.5 - q1]).unwrap();
            grid_best = grid_best.min(objective_rate(&s, &q, Scheme::Pcc, RateOptions::default()).unwrap());
        }
        assert!(r.achieved_rate <= grid_best + 1e-9);
        assert!((r.achieved_rate - 0.6).abs() < 1e-9);
        assert!(validate(&r.q).is_ok());
    }

    #[test]
    fn oca_never_loses_to_pca() {
        let s = stats(vec![0.5, 0.3, 0.2], vec![1.0, 0.5], vec![0.0, 0.3, 0.7]);
        for m in [0.3, 1.0, 2.2] {
            for scheme in [Scheme::Man, Scheme::Pcc] {
                let pca = optimize_pca(&s, m, scheme, RateOptions::default()).unwrap();
                let oca = optimize_oca(&s, m, scheme, &OcaOptions { restarts: 2, ..OcaOptions::default() }).unwrap();
                assert!(oca.achieved_rate <= pca.achieved_rate + 1e-9);
                assert!(validate(&oca.q).is_ok());
                let again = objective_rate(&s, &oca.q, scheme, RateOptions::default()).unwrap();
                assert!((again - oca.achieved_rate).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oca_is_deterministic() {
        let s = stats(vec![0.5, 0.3, 0.2], vec![1.0, 0.5], vec![0.0, 0.3, 0.7]);
        let o = OcaOptions { restarts: 3, seed: 42, ..OcaOptions::default() };
        let a = optimize_oca(&s, 0.8, Scheme::Man, &o).unwrap();
        let b = optimize_oca(&s, 0.8, Scheme::Man, &o).unwrap();
        assert_eq!(a, b);
    }
}
