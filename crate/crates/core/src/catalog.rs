//! Content library, popularity/retention model and the demand-process
//! probability primitives derived from it.
//!
//! Indices are zero-based internally. Chunk `(i, j)` of file `i` at position
//! `j` is addressed by the flat index `i * B + j` wherever a single integer
//! is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::binomial;

const SUM_TOL: f64 = 1e-12;

/// Static shape of the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub num_files: usize,
    pub num_chunks: usize,
    /// Only the bit-level executor uses this; analytic rates are normalized by F/B.
    pub file_size_bits: u64,
}

impl LibraryConfig {
    pub fn new(num_files: usize, num_chunks: usize, file_size_bits: u64) -> Result<Self> {
        if num_files == 0 || num_chunks == 0 {
            return Err(Error::InvalidConfig(format!(
                "library needs N >= 1 and B >= 1, got N={num_files}, B={num_chunks}"
            )));
        }
        if !file_size_bits.is_multiple_of(num_chunks as u64) {
            return Err(Error::InvalidConfig(format!("file size {file_size_bits} is not divisible by B={num_chunks}")));
        }
        Ok(Self { num_files, num_chunks, file_size_bits })
    }

    pub fn chunk_size_bits(&self) -> u64 {
        self.file_size_bits / self.num_chunks as u64
    }
}

/// How file popularities are generated from the skew parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopularityMode {
    /// `p_i = (N + 1 - i)^alpha / sum_f f^alpha`.
    #[default]
    #[serde(alias = "paper")]
    ReverseRank,
    /// `p_i = i^-alpha / sum_f f^-alpha`.
    Zipf,
}

/// Popularity growing with reversed rank, `(N + 1 - i)^alpha`, normalized.
pub fn reverse_rank_popularity(num_files: usize, alpha: f64) -> Result<Vec<f64>> {
    file_popularity(num_files, alpha, PopularityMode::ReverseRank)
}

/// Standard Zipf popularity `i^-alpha`, normalized.
pub fn standard_zipf(num_files: usize, alpha: f64) -> Result<Vec<f64>> {
    file_popularity(num_files, alpha, PopularityMode::Zipf)
}

pub fn file_popularity(num_files: usize, alpha: f64, mode: PopularityMode) -> Result<Vec<f64>> {
    if num_files == 0 {
        return Err(Error::InvalidConfig("popularity needs N >= 1".into()));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
    }
    let weights: Vec<f64> = match mode {
        PopularityMode::ReverseRank => {
            let norm: f64 = (1..=num_files).map(|f| (f as f64).powf(alpha)).sum();
            (1..=num_files).map(|i| ((num_files + 1 - i) as f64).powf(alpha) / norm).collect()
        }
        PopularityMode::Zipf => {
            let norm: f64 = (1..=num_files).map(|f| (f as f64).powf(-alpha)).sum();
            (1..=num_files).map(|i| (i as f64).powf(-alpha) / norm).collect()
        }
    };
    Ok(weights)
}

/// Retention row `(1, 2^-beta, ..., B^-beta)`.
pub fn zipf_retention(num_chunks: usize, beta: f64) -> Vec<f64> {
    (1..=num_chunks).map(|j| (j as f64).powf(-beta)).collect()
}

/// File popularities, retention matrix and per-slot arrival distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    num_files: usize,
    num_chunks: usize,
    file_popularity: Vec<f64>,
    /// Row-major N x B.
    retention: Vec<f64>,
    /// Support `{0, ..., A_max}`.
    arrival_pmf: Vec<f64>,
}

impl PopularityModel {
    pub fn new(file_popularity: Vec<f64>, retention: Vec<Vec<f64>>, arrival_pmf: Vec<f64>) -> Result<Self> {
        let num_files = file_popularity.len();
        if num_files == 0 {
            return Err(Error::InvalidConfig("empty popularity vector".into()));
        }
        if retention.len() != num_files {
            return Err(Error::InvalidConfig(format!("retention has {} rows, expected {num_files}", retention.len())));
        }
        let num_chunks = retention[0].len();
        if num_chunks == 0 {
            return Err(Error::InvalidConfig("retention rows must be non-empty".into()));
        }
        if file_popularity.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("file popularities must lie in [0, 1]".into()));
        }
        let total: f64 = file_popularity.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidConfig(format!("file popularities sum to {total}, not 1")));
        }
        for (i, row) in retention.iter().enumerate() {
            if row.len() != num_chunks {
                return Err(Error::InvalidConfig(format!("retention row {} has wrong length", i + 1)));
            }
            if (row[0] - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "retention of the first chunk of file {} must be 1, got {}",
                    i + 1,
                    row[0]
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0 + SUM_TOL).contains(p)) {
                return Err(Error::InvalidConfig(format!("retention row {} leaves [0, 1]", i + 1)));
            }
            if row.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidConfig(format!("retention row {} is not non-increasing", i + 1)));
            }
        }
        if arrival_pmf.is_empty() || arrival_pmf.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidConfig("arrival pmf must be non-empty and nonnegative".into()));
        }
        let mass: f64 = arrival_pmf.iter().sum();
        if (mass - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidConfig(format!("arrival pmf sums to {mass}, not 1")));
        }
        let mut flat = Vec::with_capacity(num_files * num_chunks);
        for row in retention {
            flat.extend(row.into_iter().map(|p| p.min(1.0)));
        }
        Ok(Self { num_files, num_chunks, file_popularity, retention: flat, arrival_pmf })
    }

    /// Same retention row for every file.
    pub fn with_common_retention(file_popularity: Vec<f64>, row: Vec<f64>, arrival_pmf: Vec<f64>) -> Result<Self> {
        let rows = vec![row; file_popularity.len()];
        Self::new(file_popularity, rows, arrival_pmf)
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn num_chunk_slots(&self) -> usize {
        self.num_files * self.num_chunks
    }

    pub fn file_popularity(&self) -> &[f64] {
        &self.file_popularity
    }

    pub fn retention(&self, file: usize, position: usize) -> f64 {
        self.retention[file * self.num_chunks + position]
    }

    pub fn arrival_pmf(&self) -> &[f64] {
        &self.arrival_pmf
    }

    pub fn max_arrivals(&self) -> usize {
        self.arrival_pmf.len() - 1
    }

    /// `p_i * p_ij`, row-major.
    pub fn chunk_popularity(&self) -> Vec<f64> {
        (0..self.num_chunk_slots()).map(|c| self.file_popularity[c / self.num_chunks] * self.retention[c]).collect()
    }

    /// Probability that an arriving user goes on to watch chunk position `j`.
    pub fn watch_probability(&self, position: usize) -> f64 {
        (0..self.num_files).map(|i| self.file_popularity[i] * self.retention(i, position)).sum()
    }

    /// Returns a copy with a different arrival distribution.
    pub fn with_arrivals(&self, arrival_pmf: Vec<f64>) -> Result<Self> {
        let rows = (0..self.num_files)
            .map(|i| self.retention[i * self.num_chunks..(i + 1) * self.num_chunks].to_vec())
            .collect();
        Self::new(self.file_popularity.clone(), rows, arrival_pmf)
    }
}

/// Arrival distribution specification as it appears in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSpec {
    /// Exactly `a` new users every slot.
    Deterministic(usize),
    /// Explicit pmf over `{0, ..., A_max}`.
    Pmf(Vec<f64>),
}

impl ArrivalSpec {
    pub fn pmf(&self) -> Vec<f64> {
        match self {
            ArrivalSpec::Deterministic(a) => {
                let mut v = vec![0.0; a + 1];
                v[*a] = 1.0;
                v
            }
            ArrivalSpec::Pmf(p) => p.clone(),
        }
    }
}

/// JSON model description:
/// `{"N":5,"B":3,"alpha":1,"beta":1,"popularity_mode":"reverse_rank","arrivals":{"deterministic":15}}`.
///
/// `betas` gives per-file retention exponents and `retention` an explicit
/// N x B matrix; either overrides `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub num_files: usize,
    #[serde(rename = "B")]
    pub num_chunks: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub popularity_mode: PopularityMode,
    pub arrivals: ArrivalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<Vec<Vec<f64>>>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<PopularityModel> {
        if self.num_chunks == 0 {
            return Err(Error::InvalidConfig("B must be >= 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        let p = file_popularity(self.num_files, self.alpha, self.popularity_mode)?;
        let rows = if let Some(rows) = &self.retention {
            if rows.iter().any(|r| r.len() != self.num_chunks) {
                return Err(Error::InvalidConfig("explicit retention rows must have B entries".into()));
            }
            rows.clone()
        } else if let Some(betas) = &self.betas {
            if betas.len() != self.num_files {
                return Err(Error::InvalidConfig(format!(
                    "betas has {} entries, expected N={}",
                    betas.len(),
                    self.num_files
                )));
            }
            betas.iter().map(|&b| zipf_retention(self.num_chunks, b)).collect()
        } else {
            vec![zipf_retention(self.num_chunks, self.beta); self.num_files]
        };
        PopularityModel::new(p, rows, self.arrivals.pmf())
    }
}

/// Demand-process statistics the closed-form rates are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStats {
    num_files: usize,
    num_chunks: usize,
    chunk_popularity: Vec<f64>,
    slot_watch_prob: Vec<f64>,
    normalized: Vec<f64>,
    /// B rows of length A_max + 1.
    active_count_pmf: Vec<Vec<f64>>,
}

impl ChunkStats {
    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn num_chunk_slots(&self) -> usize {
        self.num_files * self.num_chunks
    }

    pub fn max_arrivals(&self) -> usize {
        self.active_count_pmf[0].len() - 1
    }

    /// `p_i p_ij`, row-major.
    pub fn chunk_popularity(&self) -> &[f64] {
        &self.chunk_popularity
    }

    /// `p^j`.
    pub fn slot_watch_prob(&self) -> &[f64] {
        &self.slot_watch_prob
    }

    /// Normalized popularity `p_i p_ij / p^j`, row-major.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn normalized_at(&self, file: usize, position: usize) -> f64 {
        self.normalized[file * self.num_chunks + position]
    }

    /// `Pr{K_j = k}` rows.
    pub fn active_count_pmf(&self) -> &[Vec<f64>] {
        &self.active_count_pmf
    }
}

/// Derives watch probabilities, normalized chunk popularities and the
/// per-position active-user pmfs.
pub fn chunk_stats(model: &PopularityModel) -> Result<ChunkStats> {
    let n = model.num_files();
    let b = model.num_chunks();
    let chunk_popularity = model.chunk_popularity();
    let slot_watch_prob: Vec<f64> = (0..b).map(|j| model.watch_probability(j)).collect();
    if let Some(j) = slot_watch_prob.iter().position(|&p| p <= 0.0) {
        return Err(Error::DegenerateChunk { position: j + 1 });
    }
    let normalized: Vec<f64> = (0..n * b).map(|c| chunk_popularity[c] / slot_watch_prob[c % b]).collect();
    let pmf = model.arrival_pmf();
    let active_count_pmf = slot_watch_prob
        .iter()
        .map(|&pj| {
            (0..pmf.len())
                .map(|k| {
                    (k..pmf.len())
                        .filter(|&a| pmf[a] > 0.0)
                        .map(|a| pmf[a] * binomial(a, k) * pj.powi(k as i32) * (1.0 - pj).powi((a - k) as i32))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(ChunkStats { num_files: n, num_chunks: b, chunk_popularity, slot_watch_prob, normalized, active_count_pmf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn reverse_rank_popularity_uniform_when_alpha_zero() {
        let p = reverse_rank_popularity(5, 0.0).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn reverse_rank_popularity_five_files_alpha_one() {
        let p = reverse_rank_popularity(5, 1.0).unwrap();
        let expect = [5.0 / 15.0, 4.0 / 15.0, 3.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0];
        for (a, b) in p.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn reverse_rank_popularity_three_files_alpha_two() {
        let p = reverse_rank_popularity(3, 2.0).unwrap();
        for (a, b) in p.iter().zip([9.0 / 14.0, 4.0 / 14.0, 1.0 / 14.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_files_rejected() {
        assert!(matches!(reverse_rank_popularity(0, 1.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(standard_zipf(0, 1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn standard_zipf_is_decreasing() {
        let p = standard_zipf(4, 1.0).unwrap();
        let h = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        assert_abs_diff_eq!(p[0], 1.0 / h, epsilon = 1e-15);
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn retention_rows() {
        assert_eq!(zipf_retention(3, 0.0), vec![1.0, 1.0, 1.0]);
        let r = zipf_retention(3, 1.0);
        assert_abs_diff_eq!(r[1], 0.5);
        assert_abs_diff_eq!(r[2], 1.0 / 3.0);
        assert_eq!(zipf_retention(2, 3.0), vec![1.0, 0.125]);
    }

    #[test]
    fn single_chunk_single_user_stats() {
        let m = PopularityModel::new(vec![1.0], vec![vec![1.0]], vec![0.0, 1.0]).unwrap();
        let s = chunk_stats(&m).unwrap();
        assert_eq!(s.slot_watch_prob(), &[1.0]);
        assert_eq!(s.normalized(), &[1.0]);
        assert_eq!(s.active_count_pmf()[0], vec![0.0, 1.0]);
    }

    #[test]
    fn binomial_active_counts() {
        // Two files, second chunk watched only by file 1 viewers: p^2 = 0.5.
        let m =
            PopularityModel::new(vec![0.5, 0.5], vec![vec![1.0, 1.0], vec![1.0, 0.0]], vec![0.0, 0.0, 1.0]).unwrap();
        let s = chunk_stats(&m).unwrap();
        assert_abs_diff_eq!(s.slot_watch_prob()[1], 0.5);
        let row = &s.active_count_pmf()[1];
        assert_abs_diff_eq!(row[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(row[2], 0.25, epsilon = 1e-15);
        assert_eq!(s.normalized_at(1, 1), 0.0);
    }

    #[test]
    fn evaluation_setup_first_position_is_deterministic() {
        let cfg = ModelConfig {
            num_files: 5,
            num_chunks: 3,
            alpha: 1.0,
            beta: 1.0,
            popularity_mode: PopularityMode::ReverseRank,
            arrivals: ArrivalSpec::Deterministic(15),
            betas: None,
            retention: None,
        };
        let s = chunk_stats(&cfg.build().unwrap()).unwrap();
        assert_eq!(s.active_count_pmf()[0][15], 1.0);
        assert_eq!(s.max_arrivals(), 15);
    }

    #[test]
    fn zero_watch_position_is_degenerate() {
        let m = PopularityModel::with_common_retention(vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(chunk_stats(&m), Err(Error::DegenerateChunk { position: 2 })));
    }

    #[test]
    fn invalid_models_rejected() {
        let bad_sum = PopularityModel::new(vec![0.5, 0.4], vec![vec![1.0]; 2], vec![1.0]);
        assert!(bad_sum.is_err());
        let bad_first = PopularityModel::new(vec![1.0], vec![vec![0.9]], vec![1.0]);
        assert!(bad_first.is_err());
        let increasing = PopularityModel::new(vec![1.0], vec![vec![1.0, 0.5, 0.6]], vec![1.0]);
        assert!(increasing.is_err());
        let bad_arrivals = PopularityModel::new(vec![1.0], vec![vec![1.0]], vec![0.5, 0.6]);
        assert!(bad_arrivals.is_err());
        assert!(LibraryConfig::new(3, 2, 101).is_err());
        assert!(LibraryConfig::new(0, 2, 100).is_err());
        assert_eq!(LibraryConfig::new(3, 2, 100).unwrap().chunk_size_bits(), 50);
    }

    #[test]
    fn config_json_roundtrip() {
        let text =
            r#"{"N":5,"B":3,"alpha":1,"beta":1,"popularity_mode":"reverse_rank","arrivals":{"deterministic":15}}"#;
        let cfg: ModelConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.arrivals, ArrivalSpec::Deterministic(15));
        let pmf: ModelConfig =
            serde_json::from_str(r#"{"N":2,"B":1,"popularity_mode":"zipf","arrivals":{"pmf":[0.5,0.5]}}"#).unwrap();
        assert_eq!(pmf.build().unwrap().arrival_pmf(), &[0.5, 0.5]);
    }

    fn arb_model() -> impl Strategy<Value = PopularityModel> {
        (1usize..5, 1usize..4, 0.0f64..2.0, 0.0f64..3.0, prop::collection::vec(0.01f64..1.0, 1..5)).prop_map(
            |(n, b, alpha, beta, w)| {
                let total: f64 = w.iter().sum();
                let pmf: Vec<f64> = w.iter().map(|x| x / total).collect();
                let p = reverse_rank_popularity(n, alpha).unwrap();
                PopularityModel::with_common_retention(p, zipf_retention(b, beta), pmf).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn stats_invariants(model in arb_model()) {
            let s = chunk_stats(&model).unwrap();
            let b = model.num_chunks();
            for j in 0..b {
                let col: f64 = (0..model.num_files()).map(|i| s.normalized_at(i, j)).sum();
                prop_assert!((col - 1.0).abs() < 1e-12);
                let mass: f64 = s.active_count_pmf()[j].iter().sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
            }
            prop_assert!((s.slot_watch_prob()[0] - 1.0).abs() < 1e-12);
            prop_assert!(s.slot_watch_prob().windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }
}
