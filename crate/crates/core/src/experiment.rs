//! Parameter sweeps with seeded replications, aggregate statistics, plot
//! tables and the replacement-decision micro-benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{self, Metrics, SimConfig, Simulation};
use crate::error::{Error, Result};
use crate::policies::{self, CacheState, Candidate, OptSolver, Policy, PolicyKind};

/// The configuration knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    CDevBits,
    RD2dM,
    PoolSize,
    ArrivalRate,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [SweepParam::CDevBits, SweepParam::RD2dM, SweepParam::PoolSize, SweepParam::ArrivalRate];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::CDevBits => "c_dev_bits",
            SweepParam::RD2dM => "r_d2d_m",
            SweepParam::PoolSize => "pool_size",
            SweepParam::ArrivalRate => "arrival_rate",
        }
    }

    /// Short suffix used in figure ids.
    pub fn figure_suffix(self) -> &'static str {
        match self {
            SweepParam::CDevBits => "cdev",
            SweepParam::RD2dM => "rd2d",
            SweepParam::PoolSize => "pool",
            SweepParam::ArrivalRate => "rate",
        }
    }

    pub fn apply(self, cfg: &mut SimConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::CDevBits => cfg.cache.c_dev_bits = value,
            SweepParam::RD2dM => cfg.topology.r_d2d_m = value,
            SweepParam::ArrivalRate => cfg.sim.arrival_rate_per_device_hz = value,
            SweepParam::PoolSize => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::config("pool_size", format!("must be a non-negative integer, got {value}")));
                }
                cfg.channel.pool_size = value as u32;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("parameter", format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "all_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub base: SimConfig,
}

fn all_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

fn default_replications() -> u32 {
    10
}

fn default_base_seed() -> u64 {
    1
}

impl SweepSpec {
    /// Device cache capacity sweep, 100 to 300 Mbit.
    pub fn c_dev_default() -> Self {
        SweepSpec {
            parameter: SweepParam::CDevBits,
            values: vec![100e6, 150e6, 200e6, 250e6, 300e6],
            policies: all_policies(),
            replications: default_replications(),
            base_seed: default_base_seed(),
            base: SimConfig::default(),
        }
    }

    /// D2D radius sweep, 80 to 240 m.
    pub fn r_d2d_default() -> Self {
        SweepSpec {
            parameter: SweepParam::RD2dM,
            values: vec![80.0, 120.0, 160.0, 200.0, 240.0],
            ..Self::c_dev_default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "must not be empty"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies", "must not be empty"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        Ok(())
    }

    /// Config of one sweep point. Errors name the offending combination.
    pub fn point_config(&self, policy: PolicyKind, value: f64, seed: u64) -> Result<SimConfig> {
        let mut cfg = self.base.clone();
        cfg.policy.kind = policy;
        cfg.sim.seed = seed;
        let tag = |e: Error| match e {
            Error::Config { field, reason } => Error::Config {
                field,
                reason: format!("{reason} (policy={policy}, {}={value}, seed={seed})", self.parameter),
            },
            other => other,
        };
        self.parameter.apply(&mut cfg, value).map_err(tag)?;
        cfg.validate().map_err(tag)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub policy: PolicyKind,
    pub value: f64,
    pub seed: u64,
    pub metrics: Metrics,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub policy: PolicyKind,
    pub value: f64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn aggregate(&self, policy: PolicyKind, value: f64, metric: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.policy == policy && a.value == value && a.metric == metric)
    }
}

/// Sample mean and the half-width of the two-sided 95% Student-t interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

fn check_row(row: &ResultRow) -> Result<()> {
    let l = &row.metrics.ledger;
    let sum = l.e_loc() + l.e_d2d() + l.e_bs() + l.e_bs_u() + l.e_block();
    if l.e_total() != sum {
        return Err(Error::Invariant(format!(
            "ledger identity broken for policy={} value={} seed={}",
            row.policy, row.value, row.seed
        )));
    }
    if row.metrics.numeric_fields().iter().any(|(_, v)| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invariant(format!(
            "non-finite or negative metric for policy={} value={} seed={}",
            row.policy, row.value, row.seed
        )));
    }
    Ok(())
}

/// Runs every `(policy, value, seed)` point. Replications may run on
/// several threads; rows come back in a fixed order either way.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut points = Vec::new();
    for &policy in &spec.policies {
        for &value in &spec.values {
            for seed in spec.seeds() {
                points.push((policy, value, seed, spec.point_config(policy, value, seed)?));
            }
        }
    }
    let rows = points
        .into_par_iter()
        .map(|(policy, value, seed, cfg)| {
            let start = Instant::now();
            let metrics = engine::run(&cfg)?;
            let row = ResultRow {
                policy,
                value,
                seed,
                metrics,
                wall_s: start.elapsed().as_secs_f64(),
            };
            check_row(&row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate_rows(&rows);
    Ok(SweepResult {
        parameter: spec.parameter,
        rows,
        aggregates,
    })
}

/// Mean and CI per `(policy, value, metric)`, keeping first-seen order.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((PolicyKind, f64), Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(k, _)| *k == (row.policy, row.value)) {
            Some((_, g)) => g.push(row),
            None => groups.push(((row.policy, row.value), vec![row])),
        }
    }
    let mut out = Vec::new();
    for ((policy, value), group) in groups {
        let columns: Vec<Vec<(String, f64)>> = group.iter().map(|r| r.metrics.numeric_fields()).collect();
        for (i, (metric, _)) in columns[0].iter().enumerate() {
            let xs: Vec<f64> = columns.iter().map(|c| c[i].1).collect();
            let (mean, ci95) = mean_ci95(&xs);
            out.push(AggregateRow {
                policy,
                value,
                metric: metric.clone(),
                n: xs.len(),
                mean,
                ci95,
            });
        }
    }
    out
}

pub fn write_results_csv<W: Write>(parameter: SweepParam, rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header = vec!["policy".to_string(), "parameter".into(), "value".into(), "seed".into(), "config_hash".into()];
        header.extend(first.metrics.numeric_fields().into_iter().map(|(k, _)| k));
        w.write_record(&header)?;
    }
    for r in rows {
        let mut rec = vec![
            r.policy.to_string(),
            parameter.to_string(),
            r.value.to_string(),
            r.seed.to_string(),
            r.metrics.config_hash.clone(),
        ];
        rec.extend(r.metrics.numeric_fields().into_iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates_csv<W: Write>(parameter: SweepParam, rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "parameter", "value", "metric", "n", "mean", "ci95"])?;
    for a in rows {
        w.write_record([
            a.policy.to_string(),
            parameter.to_string(),
            a.value.to_string(),
            a.metric.clone(),
            a.n.to_string(),
            a.mean.to_string(),
            a.ci95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`write_aggregates_csv`].
pub fn read_aggregates_csv(text: &str) -> Result<(Option<SweepParam>, Vec<AggregateRow>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let expected = ["policy", "parameter", "value", "metric", "n", "mean", "ci95"];
    if headers.iter().ne(expected) {
        return Err(Error::Parse(format!("aggregates header must be {}", expected.join(","))));
    }
    let mut parameter = None;
    let mut rows = Vec::new();
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")));
    for rec in r.records() {
        let rec = rec?;
        let p: SweepParam = rec[1].parse()?;
        if parameter.is_some_and(|q| q != p) {
            return Err(Error::Parse("aggregates mix several sweep parameters".into()));
        }
        parameter = Some(p);
        rows.push(AggregateRow {
            policy: rec[0].parse()?,
            value: num(&rec[2])?,
            metric: rec[3].to_string(),
            n: rec[4].parse().map_err(|e| Error::Parse(format!("bad count `{}`: {e}", &rec[4])))?,
            mean: num(&rec[5])?,
            ci95: num(&rec[6])?,
        });
    }
    Ok((parameter, rows))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    parameter: SweepParam,
    values: &'a [f64],
    policies: &'a [PolicyKind],
    replications: u32,
    seeds: Vec<u64>,
    base_config_hash: String,
    base_config: &'a SimConfig,
    rows: usize,
}

/// Writes `results.csv`, `aggregates.csv`, `manifest.json` and
/// `timings.csv` into `dir`. All but the last are reproducible byte for
/// byte.
pub fn write_sweep(dir: &Path, spec: &SweepSpec, result: &SweepResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(result.parameter, &result.rows, fs::File::create(dir.join("results.csv"))?)?;
    write_aggregates_csv(result.parameter, &result.aggregates, fs::File::create(dir.join("aggregates.csv"))?)?;
    let manifest = Manifest {
        parameter: spec.parameter,
        values: &spec.values,
        policies: &spec.policies,
        replications: spec.replications,
        seeds: spec.seeds(),
        base_config_hash: spec.base.hash(),
        base_config: &spec.base,
        rows: result.rows.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["policy", "value", "seed", "wall_s"])?;
    for r in &result.rows {
        w.write_record([r.policy.to_string(), r.value.to_string(), r.seed.to_string(), r.wall_s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

const QUANTITIES: [&str; 6] = ["local", "d2d", "bs", "bs_u", "block", "total"];
const KINDS: [&str; 2] = ["energy", "bits"];

/// Every figure id accepted by [`emit_plot_data`].
pub fn figure_ids() -> Vec<String> {
    let mut ids = Vec::new();
    for p in SweepParam::ALL {
        for q in QUANTITIES {
            for k in KINDS {
                ids.push(format!("{q}_{k}_vs_{}", p.figure_suffix()));
            }
        }
    }
    ids
}

fn components(quantity: &str, kind: &str) -> Vec<String> {
    let prefix = if kind == "energy" { "j_" } else { "b_" };
    let mut out = Vec::new();
    for mode in crate::energy::ServiceMode::ALL {
        for layer in crate::catalog::Layer::ALL {
            for outcome in crate::energy::Outcome::ALL {
                let keep = match quantity {
                    "total" => true,
                    "block" => outcome == crate::energy::Outcome::Fail,
                    q => mode.name() == q && outcome == crate::energy::Outcome::Success,
                };
                if keep {
                    out.push(format!("{prefix}{}", crate::energy::cell_name(mode, layer, outcome)));
                }
            }
        }
    }
    out
}

/// Long-format table behind one stacked figure:
/// `policy,value,component,mean,ci95`, one row per stack component.
pub fn emit_plot_data<W: Write>(parameter: SweepParam, aggregates: &[AggregateRow], figure_id: &str, out: W) -> Result<()> {
    let unknown = || {
        Error::config(
            "figure",
            format!("unknown figure id `{figure_id}`; valid ids: {}", figure_ids().join(", ")),
        )
    };
    let (family, suffix) = figure_id.split_once("_vs_").ok_or_else(unknown)?;
    let target = SweepParam::ALL
        .into_iter()
        .find(|p| p.figure_suffix() == suffix)
        .ok_or_else(unknown)?;
    let (quantity, kind) = KINDS
        .iter()
        .find_map(|k| family.strip_suffix(&format!("_{k}")).map(|q| (q, *k)))
        .ok_or_else(unknown)?;
    if !QUANTITIES.contains(&quantity) {
        return Err(unknown());
    }
    if target != parameter {
        return Err(Error::config(
            "figure",
            format!("figure `{figure_id}` needs a {target} sweep, the aggregates come from a {parameter} sweep"),
        ));
    }
    let wanted = components(quantity, kind);
    let mut index: BTreeMap<(String, String, String), &AggregateRow> = BTreeMap::new();
    let mut points: Vec<(PolicyKind, f64)> = Vec::new();
    for a in aggregates {
        if !points.contains(&(a.policy, a.value)) {
            points.push((a.policy, a.value));
        }
        index.insert((a.policy.to_string(), a.value.to_string(), a.metric.clone()), a);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "value", "component", "mean", "ci95"])?;
    for (policy, value) in points {
        for c in &wanted {
            let a = index
                .get(&(policy.to_string(), value.to_string(), c.clone()))
                .ok_or_else(|| Error::Parse(format!("aggregates lack metric `{c}` for {policy} at {value}")))?;
            let component = c[2..].to_string();
            w.write_record([policy.to_string(), value.to_string(), component, a.mean.to_string(), a.ci95.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One timing measurement of a replacement decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scale: String,
    pub policy: PolicyKind,
    pub items: usize,
    pub capacity_bits: f64,
    pub delta_bits: f64,
    pub seconds_per_decision: f64,
}

/// Median per-call time of `f`, with enough calls per sample to reach
/// `min_sample_s`.
pub fn time_per_call(mut f: impl FnMut(), min_sample_s: f64) -> f64 {
    let mut iters = 1u64;
    loop {
        let start = Instant::now();
        for _ in 0..iters {
            f();
        }
        let t = start.elapsed().as_secs_f64();
        if t >= min_sample_s || iters >= 1 << 24 {
            break;
        }
        iters *= 2;
    }
    let mut samples: Vec<f64> = (0..5)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..iters {
                f();
            }
            start.elapsed().as_secs_f64() / iters as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[2]
}

/// A full cache built from catalog units in random order, plus a fresh unit
/// that forces an eviction. Values are the real prospective energies.
pub fn full_cache_instance(cfg: &SimConfig, capacity_bits: f64, seed: u64) -> Result<(CacheState, Candidate)> {
    let sim = Simulation::with_topology(cfg, crate::topology::Topology::from_positions(Vec::new(), cfg.topology.cell_radius_m, cfg.topology.r_d2d_m)?)?;
    let (catalog, model) = (sim.catalog(), sim.model());
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let candidate = |i: usize| {
        let u = &catalog.units()[i];
        Candidate {
            id: u.id,
            size_bits: u.size_bits,
            e_all: model.e_all(u),
            request_prob: model.request_prob(u),
        }
    };
    let mut cache = CacheState::new(capacity_bits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lru = Policy::new(PolicyKind::Lru, 1.0);
    for &i in &order {
        let c = candidate(i);
        if c.size_bits > cache.free_bits() {
            return Ok((cache, c));
        }
        policies::insert(&lru, &mut cache, &c, &mut rng)?;
    }
    Err(Error::config("capacity", "the catalog fits in the cache; no eviction to measure"))
}

/// Per-decision time of every policy on a full cache at device scale
/// (`C_Dev`, `delta_Dev`) and BS scale (`C_BS`, `delta_BS`). OPT runs the
/// budget-indexed table.
pub fn bench_policies(cfg: &SimConfig, policies_to_run: &[PolicyKind], seed: u64, min_sample_s: f64) -> Result<Vec<BenchRow>> {
    let scales = [
        ("device", cfg.cache.c_dev_bits, cfg.cache.delta_dev_bits),
        ("bs", cfg.cache.c_bs_bits, cfg.cache.delta_bs_bits),
    ];
    let mut rows = Vec::new();
    for (scale, capacity, delta) in scales {
        let (cache, unit) = full_cache_instance(cfg, capacity, seed)?;
        for &kind in policies_to_run {
            let policy = Policy {
                solver: OptSolver::Capacity,
                ..Policy::new(kind, delta)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            policies::decide(&policy, &cache, &unit, &mut rng)?;
            let t = time_per_call(
                || {
                    black_box(policies::decide(&policy, black_box(&cache), &unit, &mut rng).ok());
                },
                min_sample_s,
            );
            rows.push(BenchRow {
                scale: scale.to_string(),
                policy: kind,
                items: cache.len(),
                capacity_bits: capacity,
                delta_bits: delta,
                seconds_per_decision: t,
            });
        }
    }
    Ok(rows)
}

/// Random full cache of `n` residents with unit-scale sizes; the capacity
/// equals the resident total, so one eviction is always needed.
pub fn synthetic_instance(n: usize, seed: u64) -> (CacheState, Candidate) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [3.22e6, 1.52e6];
    let residents: Vec<Candidate> = (0..n)
        .map(|i| Candidate {
            id: crate::catalog::UnitId(i as u32 + 1),
            size_bits: sizes[rng.random_range(0..2)],
            e_all: rng.random_range(0.01..10.0),
            request_prob: rng.random_range(0.0..1.0),
        })
        .collect();
    let total: f64 = residents.iter().map(|c| c.size_bits).sum();
    let mut cache = CacheState::new(total);
    let lru = Policy::new(PolicyKind::Lru, 1.0);
    for c in &residents {
        policies::insert(&lru, &mut cache, c, &mut rng).expect("fits by construction");
    }
    let unit = Candidate {
        id: crate::catalog::UnitId(n as u32 + 1),
        size_bits: 3.22e6,
        e_all: 1.0,
        request_prob: 0.5,
    };
    (cache, unit)
}

/// Decision time of `kind` on synthetic instances of each size.
pub fn bench_scaling(kind: PolicyKind, sizes: &[usize], delta_bits: f64, seed: u64, min_sample_s: f64) -> Result<Vec<BenchRow>> {
    let policy = Policy {
        solver: OptSolver::Capacity,
        ..Policy::new(kind, delta_bits)
    };
    let mut rows = Vec::new();
    for &n in sizes {
        let (cache, unit) = synthetic_instance(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        policies::decide(&policy, &cache, &unit, &mut rng)?;
        let t = time_per_call(
            || {
                black_box(policies::decide(&policy, black_box(&cache), &unit, &mut rng).ok());
            },
            min_sample_s,
        );
        rows.push(BenchRow {
            scale: "synthetic".into(),
            policy: kind,
            items: n,
            capacity_bits: cache.capacity_bits(),
            delta_bits,
            seconds_per_decision: t,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scale", "policy", "items", "capacity_bits", "delta_bits", "seconds_per_decision"])?;
    for r in rows {
        w.write_record([
            r.scale.clone(),
            r.policy.to_string(),
            r.items.to_string(),
            r.capacity_bits.to_string(),
            r.delta_bits.to_string(),
            r.seconds_per_decision.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SweepSpec {
        let mut base = SimConfig::default();
        base.catalog.contents = 5;
        base.catalog.chunks = 4;
        base.topology.density_per_m2 = 0.0001;
        base.sim.duration_s = 30.0;
        base.sim.arrival_rate_per_device_hz = 0.05;
        SweepSpec {
            parameter: SweepParam::CDevBits,
            values: vec![100e6, 300e6],
            policies: vec![PolicyKind::Lru, PolicyKind::Epdc],
            replications: 3,
            base_seed: 7,
            base,
        }
    }

    #[test]
    fn ci_of_three_values() {
        let (m, ci) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // t(0.975, 2) = 4.302652729749464, sd = 1
        assert!((ci - 4.302_652_729_749_464 / 3f64.sqrt()).abs() < 1e-9, "{ci}");
        assert_eq!(mean_ci95(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn sweep_cardinality_and_aggregate_means() {
        let spec = tiny_spec();
        let res = run_sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 2 * 2 * 3);
        for a in res.aggregates.iter().filter(|a| a.metric == "e_total") {
            let xs: Vec<f64> = res
                .rows
                .iter()
                .filter(|r| r.policy == a.policy && r.value == a.value)
                .map(|r| r.metrics.e_total())
                .collect();
            assert_eq!(xs.len(), 3);
            assert!((a.mean - xs.iter().sum::<f64>() / 3.0).abs() <= 1e-12 * a.mean.max(1.0));
        }
        let seeds: Vec<u64> = res.rows.iter().take(3).map(|r| r.seed).collect();
        assert_eq!(seeds, vec![7, 8, 9]);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = tiny_spec();
        let back = SweepSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
        let minimal = SweepSpec::from_toml("parameter = \"r_d2d_m\"\nvalues = [80.0, 240.0]\n").unwrap();
        assert_eq!(minimal.policies.len(), 5);
        assert_eq!(minimal.replications, 10);
        assert!(SweepSpec::from_toml("parameter = \"bogus\"\nvalues = [1.0]\n").is_err());
    }

    #[test]
    fn bad_point_names_the_combination() {
        let mut spec = tiny_spec();
        spec.values = vec![100e6, -1.0];
        let err = run_sweep(&spec).unwrap_err().to_string();
        assert!(err.contains("c_dev_bits=-1") && err.contains("policy=lru"), "{err}");
        spec.parameter = SweepParam::PoolSize;
        spec.values = vec![2.5];
        assert!(run_sweep(&spec).is_err());
        spec.values = vec![];
        assert!(matches!(spec.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn plot_components_sum_to_total() {
        let spec = tiny_spec();
        let res = run_sweep(&spec).unwrap();
        let mut buf = Vec::new();
        emit_plot_data(res.parameter, &res.aggregates, "total_energy_vs_cdev", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("policy,value,component,mean,ci95"));
        let mut sums: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut count = 0;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            *sums.entry((f[0].into(), f[1].into())).or_default() += f[3].parse::<f64>().unwrap();
            count += 1;
        }
        assert_eq!(count, 4 * 16);
        for ((p, v), s) in sums {
            let a = res.aggregate(p.parse().unwrap(), v.parse().unwrap(), "e_total").unwrap();
            assert!((s - a.mean).abs() <= 1e-9 * a.mean.max(1.0), "{s} vs {}", a.mean);
        }
    }

    #[test]
    fn plot_rejects_unknown_or_mismatched_figures() {
        let rows = vec![];
        for id in ["nope", "total_energy_vs_x", "foo_energy_vs_cdev", "total_joules_vs_cdev"] {
            let err = emit_plot_data(SweepParam::CDevBits, &rows, id, Vec::new()).unwrap_err();
            assert!(matches!(err, Error::Config { .. }) && err.to_string().contains("valid ids"), "{id}: {err}");
        }
        assert!(emit_plot_data(SweepParam::RD2dM, &rows, "total_energy_vs_cdev", Vec::new()).is_err());
        assert_eq!(figure_ids().len(), 4 * 6 * 2);
    }

    #[test]
    fn aggregates_round_trip_through_csv() {
        let res = run_sweep(&tiny_spec()).unwrap();
        let mut buf = Vec::new();
        write_aggregates_csv(res.parameter, &res.aggregates, &mut buf).unwrap();
        let (param, rows) = read_aggregates_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(param, Some(SweepParam::CDevBits));
        assert_eq!(rows, res.aggregates);
    }

    #[test]
    fn exponent_fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((fit_exponent(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn instances_need_an_eviction() {
        let (cache, unit) = synthetic_instance(50, 1);
        assert_eq!(cache.len(), 50);
        assert!(unit.size_bits > cache.free_bits());
        let cfg = SimConfig::default();
        let (cache, unit) = full_cache_instance(&cfg, cfg.cache.c_dev_bits, 1).unwrap();
        assert!(unit.size_bits > cache.free_bits() && !cache.is_empty());
    }
}
