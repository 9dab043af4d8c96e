//! Experiment configuration file.

use std::path::{Path, PathBuf};

use cclab::allocation::{Method, OcaOptions};
use cclab::cache::CacheDistribution;
use cclab::catalog::ModelConfig;
use cclab::rate::{PartTwoRule, RateOptions, RhoPrimeIndex, Scheme};
use cclab::sim::{ArrivalSchedule, SimMode};
use serde::Deserialize;

use crate::CliError;

/// A column of the sweep table: a delivery scheme or the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Series {
    Ran,
    Man,
    Pcc,
    Uncoded,
    Lb,
}

impl Series {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Series::Ran => Some(Scheme::Ran),
            Series::Man => Some(Scheme::Man),
            Series::Pcc => Some(Scheme::Pcc),
            Series::Uncoded => Some(Scheme::Uncoded),
            Series::Lb => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self.scheme() {
            Some(s) => s.name(),
            None => "LB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    #[default]
    Async,
    Sync,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSettings {
    pub rho_prime_index: RhoPrimeIndex,
    pub memoize: bool,
}

impl Default for RateSettings {
    fn default() -> Self {
        let d = RateOptions::default();
        Self { rho_prime_index: d.rho_prime_index, memoize: d.memoize }
    }
}

impl RateSettings {
    pub fn options(&self) -> RateOptions {
        RateOptions { rho_prime_index: self.rho_prime_index, memoize: self.memoize }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcaSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for OcaSettings {
    fn default() -> Self {
        let d = OcaOptions::default();
        Self { restarts: d.restarts, max_iterations: d.max_iterations, tolerance: d.tolerance }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub num_slots: usize,
    /// Defaults to `10 * B`.
    pub burn_in: Option<usize>,
    pub mode: SimMode,
    pub arrival: ArrivalMode,
    /// Arrivals per slot in sync mode, repeated periodically. Defaults to a
    /// burst of `B` slots' worth of mean arrivals every `B` slots.
    pub sync_schedule: Option<Vec<usize>>,
    pub chunk_bits: usize,
    pub part_two_rule: PartTwoRule,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            num_slots: 10_000,
            burn_in: None,
            mode: SimMode::AnalyticSlotRate,
            arrival: ArrivalMode::Async,
            sync_schedule: None,
            chunk_bits: 10_000,
            part_two_rule: PartTwoRule::default(),
        }
    }
}

/// `(alpha, beta)` pairs for the chunk popularity report.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSettings {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Explicit cache sizes; otherwise `grid_points` evenly spaced values on `[0, N]`.
    #[serde(default)]
    pub capacities: Option<Vec<f64>>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Series>,
    #[serde(default = "default_allocations")]
    pub allocations: Vec<Method>,
    #[serde(default)]
    pub rate: RateSettings,
    #[serde(default)]
    pub oca: OcaSettings,
    #[serde(default)]
    pub simulation: Option<SimulationSettings>,
    /// Explicit caching fractions, `N` rows of `B` entries.
    #[serde(default)]
    pub cache: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub report: ReportSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid_points() -> usize {
    8
}

fn default_schemes() -> Vec<Series> {
    vec![Series::Ran, Series::Man, Series::Pcc, Series::Lb]
}

fn default_allocations() -> Vec<Method> {
    vec![Method::Pca]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let n = self.model.num_files as f64;
        if let Some(caps) = &self.capacities {
            if let Some(m) = caps.iter().find(|&&m| !(0.0..=n).contains(&m)) {
                return Err(CliError::Config(format!("capacities: {m} is outside [0, {n}]")));
            }
        } else if self.grid_points < 2 {
            return Err(CliError::Config("grid_points must be at least 2".into()));
        }
        if self.schemes.is_empty() {
            return Err(CliError::Config("schemes is empty".into()));
        }
        if self.allocations.is_empty() {
            return Err(CliError::Config("allocations is empty".into()));
        }
        if let Some(rows) = &self.cache {
            if rows.len() != self.model.num_files || rows.iter().any(|r| r.len() != self.model.num_chunks) {
                return Err(CliError::Config(format!(
                    "cache must have {} rows of {} entries",
                    self.model.num_files, self.model.num_chunks
                )));
            }
        }
        if self.report.alphas.len() != self.report.betas.len() {
            return Err(CliError::Config("report.alphas and report.betas differ in length".into()));
        }
        Ok(())
    }

    pub fn capacities(&self) -> Vec<f64> {
        match &self.capacities {
            Some(c) => c.clone(),
            None => {
                let n = self.model.num_files as f64;
                let last = (self.grid_points - 1) as f64;
                (0..self.grid_points).map(|t| n * t as f64 / last).collect()
            }
        }
    }

    pub fn oca_options(&self) -> OcaOptions {
        OcaOptions {
            rate_options: self.rate.options(),
            restarts: self.oca.restarts,
            seed: self.seed,
            max_iterations: self.oca.max_iterations,
            tolerance: self.oca.tolerance,
            ..OcaOptions::default()
        }
    }

    pub fn explicit_cache(&self) -> Result<Option<CacheDistribution>, CliError> {
        let Some(rows) = &self.cache else { return Ok(None) };
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let capacity = flat.iter().sum::<f64>() / self.model.num_chunks as f64;
        Ok(Some(CacheDistribution::from_flat(self.model.num_files, self.model.num_chunks, capacity, flat)?))
    }

    pub fn simulation(&self) -> SimulationSettings {
        self.simulation.clone().unwrap_or_default()
    }

    /// Arrival schedule for the simulator under `mode`.
    pub fn schedule(&self, mode: ArrivalMode) -> ArrivalSchedule {
        match mode {
            ArrivalMode::Async => ArrivalSchedule::Iid,
            ArrivalMode::Sync => {
                if let Some(s) = self.simulation.as_ref().and_then(|s| s.sync_schedule.clone()) {
                    return ArrivalSchedule::Periodic(s);
                }
                let b = self.model.num_chunks;
                let mean: f64 = self.model.arrivals.pmf().iter().enumerate().map(|(a, p)| a as f64 * p).sum();
                let mut v = vec![0; b];
                v[0] = (mean * b as f64).round() as usize;
                ArrivalSchedule::Periodic(v)
            }
        }
    }
}
