use std::io::Write;
use std::time::Instant;

use cclab::allocation::{allocate, AllocationResult, Method, OcaOptions};
use cclab::bound::{lower_bound, GridSpec};
use cclab::cache::{validate, CacheDistribution};
use cclab::catalog::{chunk_stats, ChunkStats, ModelConfig, PopularityModel};
use cclab::rate::{rate_pcc, rate_uncoded, RateBreakdown, Scheme};
use cclab::sim::{job_seed, simulate, SimConfig, SimReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ArrivalMode, ExperimentConfig};
use crate::CliError;

/// Tolerance for the bound-below-rate self check.
const BOUND_SLACK: f64 = 1e-9;

pub struct Context {
    pub config: ExperimentConfig,
    pub model: PopularityModel,
    pub stats: ChunkStats,
    pub mode: ArrivalMode,
}

impl Context {
    pub fn new(config: ExperimentConfig, mode: Option<ArrivalMode>) -> Result<Self, CliError> {
        let model = config.model.build()?;
        let stats = chunk_stats(&model)?;
        let mode = mode.unwrap_or(config.simulation().arrival);
        Ok(Self { config, model, stats, mode })
    }

    fn sim_config(&self, seed: u64) -> SimConfig {
        let s = self.config.simulation();
        let mut c = SimConfig::new(s.num_slots, s.burn_in.unwrap_or(10 * self.model.num_chunks()), seed);
        c.mode = s.mode;
        c.chunk_bits = s.chunk_bits;
        c.part_two_rule = s.part_two_rule;
        c.rate_options = self.config.rate.options();
        c.arrival_schedule = self.config.schedule(self.mode);
        c
    }

    fn simulate(&self, q: &CacheDistribution, seed: u64, keep_trace: bool) -> Result<SimReport, CliError> {
        let mut c = self.sim_config(seed);
        c.keep_trace = keep_trace;
        simulate(&self.model, q, &c).map_err(CliError::from_run)
    }

    fn rates(&self, q: &CacheDistribution) -> Result<RateBreakdown, CliError> {
        Ok(rate_pcc(&self.stats, q, self.config.rate.options())?)
    }

    fn bound(&self, capacity: f64) -> Result<f64, CliError> {
        Ok(lower_bound(&self.stats, capacity, &GridSpec::default())?)
    }
}

fn analytic(stats: &ChunkStats, b: &RateBreakdown, q: &CacheDistribution, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::Uncoded => rate_uncoded(stats, q),
        s => b.get(s),
    }
}

/// The rate an allocation for `scheme` minimizes.
fn objective(scheme: Scheme) -> Scheme {
    match scheme {
        Scheme::Uncoded => Scheme::Ran,
        s => s,
    }
}

#[derive(Serialize)]
struct RateRow {
    scheme: &'static str,
    #[serde(rename = "M")]
    capacity: f64,
    rate: f64,
    delta_phi1: Option<f64>,
    delta_phi2: Option<f64>,
}

fn write_rows<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(CliError::io)?;
    }
    w.flush().map_err(CliError::io)?;
    Ok(())
}

/// Closed-form rates of an explicit Q, or of the first configured allocation
/// (optimized for PCC) at every grid point.
pub fn rate<W: Write>(
    ctx: &Context,
    capacity: Option<f64>,
    q: Option<CacheDistribution>,
    out: W,
) -> Result<(), CliError> {
    let points: Vec<(f64, CacheDistribution)> = match (q, capacity) {
        (Some(q), _) => vec![(q.capacity(), q)],
        (None, caps) => {
            let caps = caps.map(|c| vec![c]).unwrap_or_else(|| ctx.config.capacities());
            let method = ctx.config.allocations[0];
            let opts = ctx.config.oca_options();
            caps.into_par_iter()
                .map(|m| Ok((m, allocate(&ctx.stats, m, method, Scheme::Pcc, &opts)?.q)))
                .collect::<Result<_, CliError>>()?
        }
    };
    let mut rows = Vec::new();
    for (m, q) in &points {
        check_cache(q)?;
        let b = ctx.rates(q)?;
        for &s in &ctx.config.schemes {
            rows.push(match s.scheme() {
                Some(scheme) => {
                    let pcc = scheme == Scheme::Pcc;
                    RateRow {
                        scheme: s.name(),
                        capacity: *m,
                        rate: analytic(&ctx.stats, &b, q, scheme),
                        delta_phi1: pcc.then_some(b.delta_phi1),
                        delta_phi2: pcc.then_some(b.delta_phi2),
                    }
                }
                None => {
                    RateRow { scheme: "LB", capacity: *m, rate: ctx.bound(*m)?, delta_phi1: None, delta_phi2: None }
                }
            });
        }
    }
    write_rows(out, &rows)
}

pub fn bound<W: Write>(ctx: &Context, capacity: Option<f64>, out: W) -> Result<(), CliError> {
    let caps = capacity.map(|c| vec![c]).unwrap_or_else(|| ctx.config.capacities());
    let rows = caps
        .par_iter()
        .map(|&m| Ok(RateRow { scheme: "LB", capacity: m, rate: ctx.bound(m)?, delta_phi1: None, delta_phi2: None }))
        .collect::<Result<Vec<_>, CliError>>()?;
    write_rows(out, &rows)
}

/// Writes Q as CSV to `out` and returns the solver result.
pub fn optimize<W: Write>(
    ctx: &Context,
    capacity: f64,
    method: Method,
    objective: Scheme,
    out: W,
) -> Result<AllocationResult, CliError> {
    let r = allocate(&ctx.stats, capacity, method, objective, &ctx.config.oca_options())?;
    r.q.write_csv(out)?;
    Ok(r)
}

pub fn simulate_cmd<W: Write>(
    ctx: &Context,
    q: &CacheDistribution,
    out: W,
    trace: Option<Box<dyn Write>>,
) -> Result<(), CliError> {
    check_cache(q)?;
    let report = ctx.simulate(q, ctx.config.seed, trace.is_some())?;
    write_rows(out, &report.summaries)?;
    if let Some(t) = trace {
        let b = ctx.model.num_chunks();
        let mut w = csv::Writer::from_writer(t);
        let mut header = vec!["slot".to_string()];
        header.extend((1..=b).map(|j| format!("K_{j}")));
        header.extend(["rate_ran", "rate_man", "rate_pcc"].map(String::from));
        w.write_record(&header).map_err(CliError::io)?;
        for row in &report.trace {
            let mut rec = vec![row.slot.to_string()];
            rec.extend(row.counts.iter().map(|k| k.to_string()));
            rec.extend([row.rate_ran, row.rate_man, row.rate_pcc].map(|x| x.to_string()));
            w.write_record(&rec).map_err(CliError::io)?;
        }
        w.flush().map_err(CliError::io)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(rename = "M")]
    capacity: f64,
    scheme: &'static str,
    allocation: &'static str,
    analytic_rate: f64,
    sim_mean: Option<f64>,
    sim_stderr: Option<f64>,
    lower_bound: f64,
    wallclock: f64,
}

struct Point {
    result: AllocationResult,
    rates: RateBreakdown,
    seconds: f64,
}

/// Allocations along the grid for one `(method, objective)` job.
fn sweep_job(ctx: &Context, caps: &[f64], method: Method, objective: Scheme) -> Result<Vec<Point>, CliError> {
    let base = ctx.config.oca_options();
    let mut points: Vec<Point> = Vec::with_capacity(caps.len());
    for &m in caps {
        let mut opts = OcaOptions { warm_starts: Vec::new(), ..base.clone() };
        if method == Method::Oca {
            if let Some(prev) = points.last() {
                opts.warm_starts.push(prev.result.q.fractions().to_vec());
            }
        }
        let t = Instant::now();
        let result = allocate(&ctx.stats, m, method, objective, &opts)?;
        let rates = ctx.rates(&result.q)?;
        points.push(Point { result, rates, seconds: t.elapsed().as_secs_f64() });
    }
    Ok(points)
}

pub fn sweep<W: Write>(ctx: &Context, out: W) -> Result<(), CliError> {
    let caps = ctx.config.capacities();
    let schemes: Vec<Scheme> = ctx.config.schemes.iter().filter_map(|s| s.scheme()).collect();
    let mut jobs: Vec<(Method, Scheme)> = Vec::new();
    for &method in &ctx.config.allocations {
        for &s in &schemes {
            let job = (method, objective(s));
            if !jobs.contains(&job) {
                jobs.push(job);
            }
        }
    }

    let bounds: Vec<(f64, f64)> = caps
        .par_iter()
        .map(|&m| {
            let t = Instant::now();
            let lb = ctx.bound(m)?;
            Ok((lb, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_, CliError>>()?;
    let sweeps: Vec<Vec<Point>> =
        jobs.par_iter().map(|&(method, obj)| sweep_job(ctx, &caps, method, obj)).collect::<Result<_, CliError>>()?;

    let sims: Vec<Vec<Option<SimReport>>> = if ctx.config.simulation.is_some() {
        let flat: Vec<(usize, usize)> = (0..jobs.len()).flat_map(|j| (0..caps.len()).map(move |i| (j, i))).collect();
        let reports = flat
            .par_iter()
            .map(|&(j, i)| {
                let seed = job_seed(ctx.config.seed, (j * caps.len() + i) as u64);
                ctx.simulate(&sweeps[j][i].result.q, seed, false)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut it = reports.into_iter();
        jobs.iter().map(|_| caps.iter().map(|_| it.next()).collect()).collect()
    } else {
        jobs.iter().map(|_| caps.iter().map(|_| None).collect()).collect()
    };

    let mut rows = Vec::new();
    for (i, &m) in caps.iter().enumerate() {
        let (lb, lb_seconds) = bounds[i];
        for &series in &ctx.config.schemes {
            let Some(scheme) = series.scheme() else {
                rows.push(SweepRow {
                    capacity: m,
                    scheme: "LB",
                    allocation: "",
                    analytic_rate: lb,
                    sim_mean: None,
                    sim_stderr: None,
                    lower_bound: lb,
                    wallclock: lb_seconds,
                });
                continue;
            };
            for &method in &ctx.config.allocations {
                let j = jobs.iter().position(|&job| job == (method, objective(scheme))).expect("job exists");
                let p = &sweeps[j][i];
                let rate = analytic(&ctx.stats, &p.rates, &p.result.q, scheme);
                if lb > rate + BOUND_SLACK {
                    return Err(CliError::Internal(format!(
                        "lower bound {lb} exceeds {series:?}/{method} rate {rate} at M={m}"
                    )));
                }
                let sim = sims[j][i].as_ref().map(|r| r.summary(scheme));
                rows.push(SweepRow {
                    capacity: m,
                    scheme: series.name(),
                    allocation: method.name(),
                    analytic_rate: rate,
                    sim_mean: sim.map(|s| s.mean),
                    sim_stderr: sim.map(|s| s.std_error),
                    lower_bound: lb,
                    wallclock: p.seconds,
                });
            }
        }
    }
    write_rows(out, &rows)
}

#[derive(Serialize)]
struct PopularityRow {
    alpha: f64,
    beta: f64,
    file: usize,
    chunk: usize,
    popularity: f64,
}

/// `p_i * p_ij` for every configured `(alpha, beta)` pair, or the model's own.
pub fn chunk_report<W: Write>(config: &ExperimentConfig, out: W) -> Result<(), CliError> {
    let pairs: Vec<(f64, f64)> = if config.report.alphas.is_empty() {
        vec![(config.model.alpha, config.model.beta)]
    } else {
        config.report.alphas.iter().copied().zip(config.report.betas.iter().copied()).collect()
    };
    let mut rows = Vec::new();
    for (alpha, beta) in pairs {
        let model = ModelConfig { alpha, beta, betas: None, retention: None, ..config.model.clone() }.build()?;
        let b = model.num_chunks();
        for (c, popularity) in model.chunk_popularity().into_iter().enumerate() {
            rows.push(PopularityRow { alpha, beta, file: c / b + 1, chunk: c % b + 1, popularity });
        }
    }
    write_rows(out, &rows)
}

fn check_cache(q: &CacheDistribution) -> Result<(), CliError> {
    let report = validate(q);
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Config(format!("invalid cache distribution: {:?}", report.violations)))
    }
}
