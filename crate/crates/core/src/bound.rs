//! Genie-aided cut-set lower bound on the average delivery rate.
//!
//! For an active-count profile `k`, a genie serves all but the users of `n_j`
//! chunks per position so that the rest see a uniform library. With `v_j`
//! remaining requests of `z~_j` expected distinct chunks, concentration
//! factors `f'`, `f''` bound the probability that this reduction is possible
//! and a cut-set argument over `z_j` users gives the rate. The bound is the
//! probability-weighted best value over the search space, floored at 0.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ChunkStats;
use crate::error::{Error, Result};
use crate::numeric::{for_each_in_box, pairwise_sum};

const RANGE_TOL: f64 = 1e-12;

/// Expected number of distinct values among `v` uniform draws from `n`.
pub fn expected_distinct(n: usize, v: f64) -> f64 {
    if n == 1 {
        return 1.0;
    }
    let n = n as f64;
    n * (1.0 - (1.0 - 1.0 / n).powf(v))
}

/// `(f', f'')` for `k` users, `n` retained chunks with smallest normalized
/// popularity `r`, `v` retained requests and `z~` distinct chunks.
pub fn concentration_factors(k: usize, n: usize, r: f64, v: f64, ztilde: f64) -> Result<(f64, f64)> {
    let mean = k as f64 * n as f64 * r;
    if !(v > 0.0 && v <= mean * (1.0 + RANGE_TOL)) {
        return Err(Error::Domain(format!("v = {v} outside (0, {mean}]")));
    }
    let f = expected_distinct(n, v);
    if !(ztilde > 0.0 && ztilde <= f * (1.0 + RANGE_TOL)) {
        return Err(Error::Domain(format!("z~ = {ztilde} outside (0, {f}]")));
    }
    Ok(factors_unchecked(mean, v, f, ztilde))
}

fn factors_unchecked(mean: f64, v: f64, f: f64, ztilde: f64) -> (f64, f64) {
    let fp = 1.0 - (-(mean - v).powi(2) / (2.0 * mean)).exp();
    let fpp = 1.0 - (-(f - ztilde).powi(2) / (2.0 * f)).exp();
    (fp, fpp)
}

/// `sum_j z_j (1 - M B / min_j floor(n_j / z_j))`.
pub fn cutset_term(z: &[usize], n: &[usize], capacity: f64, num_chunks: usize) -> Result<f64> {
    if z.len() != n.len() || z.is_empty() {
        return Err(Error::Domain("z and n must be non-empty and of equal length".into()));
    }
    if z.iter().zip(n).any(|(&zj, &nj)| zj == 0 || zj > nj) {
        return Err(Error::Domain(format!("need 1 <= z_j <= n_j, got z={z:?}, n={n:?}")));
    }
    let m = z.iter().zip(n).map(|(zj, nj)| nj / zj).min().expect("non-empty");
    let total: usize = z.iter().sum();
    Ok(total as f64 * (1.0 - capacity * num_chunks as f64 / m as f64))
}

/// Resolution of the continuous `(v, z~)` search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Log-spaced points per continuous variable.
    pub points: usize,
    /// Search again between the neighbours of the best grid point.
    pub refine: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 32, refine: true }
    }
}

impl GridSpec {
    /// Offsets in `(0, 1]`, log-spaced from 1e-6.
    fn offsets(&self) -> Vec<f64> {
        let p = self.points.max(2);
        (0..p).map(|t| 10f64.powf(-6.0 + 6.0 * t as f64 / (p - 1) as f64)).collect()
    }
}

/// Profile-independent inputs for one capacity.
struct Search<'a> {
    num_files: usize,
    num_chunks: usize,
    /// `r[j][n-1]`: n-th largest normalized popularity at position j.
    r: Vec<Vec<f64>>,
    grid: &'a GridSpec,
    offsets: Vec<f64>,
}

/// Above this many `(n, z)` combinations the joint maximization switches
/// from enumeration to coordinate ascent.
const EXHAUSTIVE_LIMIT: usize = 200_000;

impl Search<'_> {
    /// Best `f' f''` for position `j` with `k` users and `n` retained chunks
    /// subject to `ceil(min(z~, v)) >= u`; `None` if infeasible.
    fn coordinate_factor(&self, j: usize, k: usize, n: usize, u: usize) -> Option<f64> {
        let mean = k as f64 * n as f64 * self.r[j][n - 1];
        let floor = (u - 1) as f64;
        if mean <= floor {
            return None;
        }
        let value = |v: f64, zt: f64| {
            let (a, b) = factors_unchecked(mean, v, expected_distinct(n, v), zt);
            a * b
        };
        // Best z~ in (floor, f(n, v)] on the offset grid, scanned over `zs`.
        let best_over = |v: f64, zs: &[f64]| -> Option<(f64, f64)> {
            let f = expected_distinct(n, v);
            if f <= floor {
                return None;
            }
            zs.iter().map(|o| floor + (f - floor) * o).filter(|&zt| zt > floor).map(|zt| (value(v, zt), zt)).fold(
                None,
                |acc: Option<(f64, f64)>, x| match acc {
                    Some(a) if a.0 >= x.0 => Some(a),
                    _ => Some(x),
                },
            )
        };
        let vs: Vec<f64> = self.offsets.iter().map(|o| floor + (mean - floor) * o).filter(|&v| v > floor).collect();
        let mut best: Option<(f64, usize, f64)> = None;
        for (t, &v) in vs.iter().enumerate() {
            if let Some((val, zt)) = best_over(v, &self.offsets) {
                if best.is_none_or(|b| val > b.0) {
                    best = Some((val, t, zt));
                }
            }
        }
        let (mut val, t, _) = best?;
        if self.grid.refine {
            let lo = if t == 0 { floor } else { vs[t - 1] };
            let hi = vs[(t + 1).min(vs.len() - 1)];
            let p = self.offsets.len();
            let fine: Vec<f64> = (1..=p).map(|s| s as f64 / p as f64).collect();
            for s in &fine {
                let v = lo + (hi - lo) * s;
                if v <= floor || v > mean {
                    continue;
                }
                if let Some((x, _)) = best_over(v, &self.offsets) {
                    val = val.max(x);
                }
                // Refine z~ too: scan between the chosen offsets.
                if let Some((x, _)) = best_over(v, &fine) {
                    val = val.max(x);
                }
            }
        }
        Some(val)
    }

    fn profile_value(
        &self,
        k: &[usize],
        capacity: f64,
        cache: &mut HashMap<(usize, usize, usize, usize), Option<f64>>,
    ) -> f64 {
        let active: Vec<usize> = (0..self.num_chunks).filter(|&j| k[j] > 0).collect();
        if active.is_empty() {
            return 0.0;
        }
        // Candidate (n, z, factor) per active position.
        let mut options: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(active.len());
        for &j in &active {
            let mut opts = Vec::new();
            for n in 1..=self.num_files {
                for u in 1..=n {
                    let key = (j, k[j], n, u);
                    let f = *cache.entry(key).or_insert_with(|| self.coordinate_factor(j, k[j], n, u));
                    if let Some(f) = f {
                        opts.push((n, u, f));
                    }
                }
            }
            if opts.is_empty() {
                return 0.0;
            }
            options.push(opts);
        }
        let b = self.num_chunks as f64;
        let evaluate = |choice: &[usize]| -> f64 {
            let mut total_z = 0usize;
            let mut m = usize::MAX;
            let mut product = 1.0;
            for (opts, &c) in options.iter().zip(choice) {
                let (n, z, f) = opts[c];
                total_z += z;
                m = m.min(n / z);
                product *= f;
            }
            product * total_z as f64 * (1.0 - capacity * b / m as f64)
        };
        let sizes: Vec<usize> = options.iter().map(Vec::len).collect();
        let combos = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        let mut best = 0.0f64;
        if combos.is_some_and(|c| c <= EXHAUSTIVE_LIMIT) {
            let bounds: Vec<usize> = sizes.iter().map(|s| s - 1).collect();
            for_each_in_box(&bounds, |choice| best = best.max(evaluate(choice)));
        } else {
            let mut choice: Vec<usize> = options
                .iter()
                .map(|o| (0..o.len()).max_by(|&a, &b| o[a].2.partial_cmp(&o[b].2).unwrap()).unwrap())
                .collect();
            best = evaluate(&choice);
            loop {
                let before = best;
                for d in 0..choice.len() {
                    for c in 0..options[d].len() {
                        let old = choice[d];
                        choice[d] = c;
                        let v = evaluate(&choice);
                        if v > best {
                            best = v;
                        } else {
                            choice[d] = old;
                        }
                    }
                }
                if best <= before {
                    break;
                }
            }
        }
        best.max(0.0)
    }
}

/// Lower bound on the average rate at cache capacity `capacity`.
pub fn lower_bound(stats: &ChunkStats, capacity: f64, grid: &GridSpec) -> Result<f64> {
    let n = stats.num_files();
    if !(0.0..=n as f64).contains(&capacity) {
        return Err(Error::Domain(format!("cache capacity {capacity} outside [0, {n}]")));
    }
    let b = stats.num_chunks();
    let normalized = stats.normalized();
    let r: Vec<Vec<f64>> = (0..b)
        .map(|j| {
            let mut col: Vec<f64> = (0..n).map(|i| normalized[i * b + j]).collect();
            col.sort_by(|x, y| y.partial_cmp(x).unwrap());
            col
        })
        .collect();
    let search = Search { num_files: n, num_chunks: b, r, grid, offsets: grid.offsets() };

    let pmf = stats.active_count_pmf();
    let mut profiles: Vec<(Vec<usize>, f64)> = Vec::new();
    for_each_in_box(&vec![stats.max_arrivals(); b], |k| {
        let w: f64 = k.iter().enumerate().map(|(j, &kj)| pmf[j][kj]).product();
        if w > 0.0 {
            profiles.push((k.to_vec(), w));
        }
    });
    let terms: Vec<f64> = profiles
        .par_chunks(64)
        .map(|chunk| {
            let mut cache = HashMap::new();
            chunk.iter().map(|(k, w)| w * search.profile_value(k, capacity, &mut cache)).collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    Ok(pairwise_sum(&terms).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{chunk_stats, PopularityModel};

    #[test]
    fn distinct_count_examples() {
        assert_eq!(expected_distinct(1, 3.0), 1.0);
        assert_eq!(expected_distinct(2, 1.0), 1.0);
        assert_eq!(expected_distinct(2, 2.0), 1.5);
    }

    #[test]
    fn factor_examples() {
        let (fp, _) = concentration_factors(2, 3, 0.25, 1.5, 0.5).unwrap();
        assert_eq!(fp, 0.0);
        let f = expected_distinct(3, 1.2);
        let (_, fpp) = concentration_factors(2, 3, 0.25, 1.2, f).unwrap();
        assert_eq!(fpp, 0.0);
        let (fp, _) = concentration_factors(1, 1, 1.0, 0.5, 0.5).unwrap();
        assert!((fp - (1.0 - (-0.125f64).exp())).abs() < 1e-15);
        assert!(concentration_factors(1, 1, 1.0, 1.5, 0.5).is_err());
        assert!(concentration_factors(1, 1, 1.0, 0.5, 1.5).is_err());
        assert!(concentration_factors(1, 1, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn cutset_examples() {
        assert_eq!(cutset_term(&[2, 3], &[4, 5], 0.0, 2).unwrap(), 5.0);
        assert_eq!(cutset_term(&[2], &[4], 2.0, 1).unwrap(), 0.0);
        assert_eq!(cutset_term(&[2, 2], &[4, 6], 0.5, 2).unwrap(), 2.0);
        assert!(cutset_term(&[3], &[2], 0.0, 1).is_err());
    }

    fn single() -> ChunkStats {
        chunk_stats(&PopularityModel::new(vec![1.0], vec![vec![1.0]], vec![0.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn single_user_single_chunk() {
        let lb = lower_bound(&single(), 0.0, &GridSpec::default()).unwrap();
        let oracle = (1.0 - (-0.5f64).exp()).powi(2);
        assert!((lb - oracle).abs() < 1e-3, "{lb} vs {oracle}");
        assert!(lb <= oracle);
    }

    #[test]
    fn full_cache_gives_zero() {
        let s = chunk_stats(
            &PopularityModel::with_common_retention(vec![0.5, 0.3, 0.2], vec![1.0, 0.6], vec![0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(lower_bound(&s, 3.0, &GridSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn finer_nested_grid_never_lowers_the_bound() {
        let s = chunk_stats(
            &PopularityModel::with_common_retention(vec![0.5, 0.3, 0.2], vec![1.0, 0.6], vec![0.0, 0.5, 0.5]).unwrap(),
        )
        .unwrap();
        for m in [0.0, 0.2, 0.5] {
            let coarse = lower_bound(&s, m, &GridSpec { points: 17, refine: false }).unwrap();
            let fine = lower_bound(&s, m, &GridSpec { points: 33, refine: false }).unwrap();
            assert!(fine >= coarse, "{fine} < {coarse}");
        }
    }
}
