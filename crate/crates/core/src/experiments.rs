//! Parameter sweeps, target-rate optimization and gain reporting.
//!
//! Gains are measured against Direct-Link operated at its own best target
//! rate `D* = min_k R_k`. Every sweep point runs each requested scheme on the
//! same topology; seeds are derived from a single master seed so a sweep is
//! reproducible bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{throughput_bound, MacParams};
use crate::error::{Error, Result};
use crate::schemes::{feasibility, max_direct_rate, max_supported_rate, SchemeKind, TargetRate};
use crate::simulator::{self, MetricsReport, SimConfig, StopCondition};
use crate::topology::{ChannelParams, RateTable, Topology};

pub const DEFAULT_D_GRID_POINTS: usize = 40;
pub const DEFAULT_REGIME_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    TxSnr,
    D,
    QLimit,
    N,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::TxSnr => "tx-snr",
            SweepVariable::D => "d",
            SweepVariable::QLimit => "q-limit",
            SweepVariable::N => "n",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tx-snr" | "tx_snr" | "snr" => Ok(SweepVariable::TxSnr),
            "d" | "target-rate" => Ok(SweepVariable::D),
            "q-limit" | "q_limit" | "q" => Ok(SweepVariable::QLimit),
            "n" | "nodes" => Ok(SweepVariable::N),
            other => Err(Error::Config(format!("unknown sweep variable `{other}`"))),
        }
    }
}

/// Parameters held fixed while one variable is swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Defaults {
    pub n: usize,
    /// Linear transmit SNR at unit distance.
    pub tx_snr: f64,
    pub gamma: f64,
    /// Fixed target rate; `None` optimizes it per point over a grid.
    pub d: Option<f64>,
    pub q_limit: u32,
    pub tau: f64,
    pub sigma: f64,
    pub deliveries: u64,
    pub d_grid_points: usize,
    pub regime_tol: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            n: 20,
            tx_snr: 1.0,
            gamma: 2.0,
            d: None,
            q_limit: simulator::DEFAULT_Q_LIMIT,
            tau: simulator::DEFAULT_TAU,
            sigma: simulator::DEFAULT_SIGMA,
            deliveries: simulator::DEFAULT_DELIVERIES,
            d_grid_points: DEFAULT_D_GRID_POINTS,
            regime_tol: DEFAULT_REGIME_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub replications: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "cooperative_schemes")]
    pub schemes: Vec<SchemeKind>,
    /// When set, every replication uses the topology generated from this
    /// seed; otherwise each replication draws its own.
    #[serde(default)]
    pub topology_seed: Option<u64>,
    #[serde(default)]
    pub fixed: Defaults,
}

fn one() -> u32 {
    1
}

fn cooperative_schemes() -> Vec<SchemeKind> {
    vec![SchemeKind::TwoHop, SchemeKind::DecodeForward]
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, values: Vec<f64>) -> Self {
        SweepSpec {
            variable,
            values,
            replications: 1,
            master_seed: 0,
            schemes: cooperative_schemes(),
            topology_seed: None,
            fixed: Defaults::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        let f = &self.fixed;
        if f.deliveries == 0 || f.d_grid_points == 0 {
            return Err(Error::Config("deliveries and d_grid_points must be positive".into()));
        }
        if !(0.0..1.0).contains(&f.regime_tol) {
            return Err(Error::Config("regime_tol must lie in [0, 1)".into()));
        }
        if let Some(d) = f.d {
            TargetRate::new(d)?;
        }
        for &v in &self.values {
            let integral = v.fract() == 0.0 && v >= 1.0;
            match self.variable {
                SweepVariable::TxSnr if v > 0.0 => {}
                SweepVariable::D if v > 0.0 => {}
                SweepVariable::QLimit | SweepVariable::N if integral => {}
                _ => {
                    return Err(Error::Config(format!(
                        "value {v} is invalid for sweep variable {}",
                        self.variable.as_str()
                    )))
                }
            }
        }
        for (point, _) in self.points() {
            ChannelParams::new(point.tx_snr, point.gamma)?;
            MacParams::new(point.n, point.tau, point.sigma)?;
        }
        Ok(())
    }

    /// Fixed parameters with the swept variable substituted, per value.
    fn points(&self) -> impl Iterator<Item = (Defaults, f64)> + '_ {
        self.values.iter().map(move |&v| {
            let mut p = self.fixed.clone();
            match self.variable {
                SweepVariable::TxSnr => p.tx_snr = v,
                SweepVariable::D => p.d = Some(v),
                SweepVariable::QLimit => p.q_limit = v as u32,
                SweepVariable::N => p.n = v as usize,
            }
            (p, v)
        })
    }
}

/// SplitMix64 over the master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

const STREAM_TOPOLOGY: u64 = 1;
const STREAM_BASELINE: u64 = 2;
const STREAM_SCHEME: u64 = 3;

/// Simulation settings shared by every run at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub tau: f64,
    pub sigma: f64,
    pub q_limit: u32,
    pub deliveries: u64,
    pub seed: u64,
}

impl RunParams {
    fn sim_config(&self, scheme: SchemeKind, d: TargetRate) -> SimConfig {
        SimConfig {
            q_limit: self.q_limit,
            tau: self.tau,
            sigma: self.sigma,
            seed: self.seed,
            stop: StopCondition::Deliveries(self.deliveries),
            ..SimConfig::new(scheme, d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub d: f64,
    pub min_throughput: f64,
    pub bound: f64,
}

/// Direct-Link min-throughput at its own best target rate.
pub fn baseline_direct(rates: &RateTable, params: &RunParams) -> Result<Baseline> {
    let d = TargetRate::new(max_direct_rate(rates))
        .map_err(|_| Error::Config("some node has zero direct rate; Direct-Link baseline undefined".into()))?;
    let report = simulator::run_rates(&params.sim_config(SchemeKind::DirectLink, d), rates)?;
    let mac = MacParams::new(rates.len(), params.tau, params.sigma)?;
    Ok(Baseline { d: d.get(), min_throughput: report.min_throughput, bound: throughput_bound(d, &mac) })
}

/// Geometric grid from `D*` up to the largest target rate `scheme` still
/// supports for every node.
pub fn d_grid(rates: &RateTable, scheme: SchemeKind, points: usize) -> Vec<f64> {
    let lo = max_direct_rate(rates);
    let hi = max_supported_rate(rates, scheme);
    if points <= 1 || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![lo];
    }
    let ratio = hi / lo;
    let mut grid: Vec<f64> = (0..points).map(|i| lo * ratio.powf(i as f64 / (points - 1) as f64)).collect();
    grid[points - 1] = hi;
    grid
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub d: f64,
    pub report: MetricsReport,
}

/// Simulates every grid point and keeps the one with the largest measured
/// min-throughput; ties go to the smaller target rate.
pub fn optimize_target_rate(
    rates: &RateTable,
    scheme: SchemeKind,
    params: &RunParams,
    grid: &[f64],
) -> Result<Optimum> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<Optimum> = None;
    for d in sorted {
        let report = simulator::run_rates(&params.sim_config(scheme, TargetRate::new(d)?), rates)?;
        if best.as_ref().is_none_or(|b| report.min_throughput > b.report.min_throughput) {
            best = Some(Optimum { d, report });
        }
    }
    best.ok_or_else(|| Error::Config("target-rate grid is empty".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    BoundTracking,
    MacDegraded,
    Unsupported,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::BoundTracking => "bound-tracking",
            Regime::MacDegraded => "mac-degraded",
            Regime::Unsupported => "unsupported",
        }
    }
}

pub fn classify_regime(measured: f64, bound: f64, supported: bool, tol: f64) -> Regime {
    if !supported {
        Regime::Unsupported
    } else if measured >= (1.0 - tol) * bound {
        Regime::BoundTracking
    } else {
        Regime::MacDegraded
    }
}

/// Relative gain in percent; `None` when the baseline delivers nothing.
pub fn gain_percent(measured: f64, baseline: f64) -> Option<f64> {
    if baseline > 0.0 {
        Some(100.0 * ((measured - baseline) / baseline))
    } else {
        None
    }
}

/// One row of sweep output. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub variable: SweepVariable,
    pub value: f64,
    pub replication: u32,
    pub scheme: SchemeKind,
    pub n: usize,
    pub tx_snr: f64,
    pub q_limit: u32,
    pub d: f64,
    pub min_throughput: f64,
    pub bound: f64,
    pub baseline_d: f64,
    pub baseline_min_throughput: f64,
    pub baseline_bound: f64,
    pub gain_percent: Option<f64>,
    pub bound_gain_percent: Option<f64>,
    pub regime: Regime,
    pub helpers: usize,
    pub helped: usize,
    pub peak_obligation_memory: usize,
    pub deadlocked: bool,
}

struct PointContext<'a> {
    spec: &'a SweepSpec,
    params: Defaults,
    value: f64,
    value_index: usize,
    replication: u32,
}

fn run_point(ctx: &PointContext<'_>, topology: &Topology) -> Result<Vec<GainRecord>> {
    let p = &ctx.params;
    let channel = ChannelParams::new(p.tx_snr, p.gamma)?;
    let rates = RateTable::build(topology, &channel)?;
    let mac = MacParams::new(topology.len(), p.tau, p.sigma)?;
    let run = |seed| RunParams { tau: p.tau, sigma: p.sigma, q_limit: p.q_limit, deliveries: p.deliveries, seed };
    let master = ctx.spec.master_seed;
    let rep = ctx.replication as u64;

    let baseline = baseline_direct(&rates, &run(derive_seed(master, &[STREAM_BASELINE, rep, ctx.value_index as u64])))?;

    let mut out = Vec::with_capacity(ctx.spec.schemes.len());
    for (si, &scheme) in ctx.spec.schemes.iter().enumerate() {
        let params = run(derive_seed(master, &[STREAM_SCHEME, rep, ctx.value_index as u64, si as u64]));
        let (d, report) = match p.d {
            Some(d) => {
                let report = simulator::run_rates(&params.sim_config(scheme, TargetRate::new(d)?), &rates)?;
                (d, report)
            }
            None => {
                let opt = optimize_target_rate(&rates, scheme, &params, &d_grid(&rates, scheme, p.d_grid_points))?;
                (opt.d, opt.report)
            }
        };
        let target = TargetRate::new(d)?;
        let bound = throughput_bound(target, &mac);
        let feas = feasibility(&rates, target, scheme);
        out.push(GainRecord {
            variable: ctx.spec.variable,
            value: ctx.value,
            replication: ctx.replication,
            scheme,
            n: topology.len(),
            tx_snr: p.tx_snr,
            q_limit: p.q_limit,
            d,
            min_throughput: report.min_throughput,
            bound,
            baseline_d: baseline.d,
            baseline_min_throughput: baseline.min_throughput,
            baseline_bound: baseline.bound,
            gain_percent: gain_percent(report.min_throughput, baseline.min_throughput),
            bound_gain_percent: gain_percent(bound, baseline.bound),
            regime: classify_regime(report.min_throughput, bound, feas.is_supported(), p.regime_tol),
            helpers: feas.helpers.len(),
            helped: feas.helped.len(),
            peak_obligation_memory: report.peak_obligation_memory,
            deadlocked: report.deadlocked,
        });
    }
    Ok(out)
}

fn sweep_impl(spec: &SweepSpec, fixed_topology: Option<&Topology>) -> Result<Vec<GainRecord>> {
    spec.validate()?;
    let tasks: Vec<PointContext<'_>> = spec
        .points()
        .enumerate()
        .flat_map(|(value_index, (params, value))| {
            (0..spec.replications).map(move |replication| PointContext {
                spec,
                params: params.clone(),
                value,
                value_index,
                replication,
            })
        })
        .collect();
    let results: Vec<Result<Vec<GainRecord>>> = tasks
        .par_iter()
        .map(|ctx| {
            let topology = match fixed_topology {
                Some(t) => t.clone(),
                None => {
                    let seed = spec.topology_seed.unwrap_or_else(|| {
                        derive_seed(spec.master_seed, &[STREAM_TOPOLOGY, ctx.replication as u64, ctx.params.n as u64])
                    });
                    Topology::generate(ctx.params.n, seed)?
                }
            };
            run_point(ctx, &topology)
        })
        .collect();
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(records)
}

/// Runs the full sweep. Points run in parallel; output keeps spec order
/// (value, then replication, then scheme).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<GainRecord>> {
    sweep_impl(spec, None)
}

/// Runs a sweep on a caller-supplied topology shared by every point.
pub fn run_sweep_on(spec: &SweepSpec, topology: &Topology) -> Result<Vec<GainRecord>> {
    if spec.variable == SweepVariable::N {
        return Err(Error::Config("cannot sweep n over a fixed topology".into()));
    }
    sweep_impl(spec, Some(topology))
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: f64,
    pub scheme: SchemeKind,
    pub replications: usize,
    pub gain_mean: f64,
    pub gain_se: f64,
    pub min_throughput_mean: f64,
    pub min_throughput_se: f64,
    pub bound_gain_mean: f64,
    pub d_mean: f64,
    pub bound_tracking: usize,
    pub mac_degraded: usize,
    pub unsupported: usize,
}

/// Aggregates replications per (value, scheme), preserving first-seen order.
pub fn summarize(records: &[GainRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<(u64, SchemeKind)> = Vec::new();
    let mut groups: BTreeMap<(u64, SchemeKind), Vec<&GainRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.value.to_bits(), r.scheme);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let collect =
                |f: &dyn Fn(&GainRecord) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            let (gain_mean, gain_se) = mean_se(&collect(&|r| r.gain_percent));
            let (thr_mean, thr_se) = mean_se(&collect(&|r| Some(r.min_throughput)));
            let (bound_gain_mean, _) = mean_se(&collect(&|r| r.bound_gain_percent));
            let (d_mean, _) = mean_se(&collect(&|r| Some(r.d)));
            let count = |g| rs.iter().filter(|r| r.regime == g).count();
            SummaryRow {
                value: f64::from_bits(key.0),
                scheme: key.1,
                replications: rs.len(),
                gain_mean,
                gain_se,
                min_throughput_mean: thr_mean,
                min_throughput_se: thr_se,
                bound_gain_mean,
                d_mean,
                bound_tracking: count(Regime::BoundTracking),
                mac_degraded: count(Regime::MacDegraded),
                unsupported: count(Regime::Unsupported),
            }
        })
        .collect()
}

/// Writes sweep records as CSV, preceded by `#` metadata lines holding the
/// resolved spec.
pub fn write_csv<W: Write>(mut w: W, spec: &SweepSpec, records: &[GainRecord]) -> Result<()> {
    writeln!(w, "# fairmac sweep v1")?;
    writeln!(w, "# spec: {}", serde_json::to_string(spec)?)?;
    writeln!(w, "# master_seed: {}", spec.master_seed)?;
    writeln!(w, "# baseline: direct-link at d* = min_k R_k")?;
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<GainRecord>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Reshapes sweep records into one row per swept value with per-scheme
/// mean/standard-error columns.
pub fn write_plot_data<W: Write>(w: W, records: &[GainRecord]) -> Result<()> {
    let summary = summarize(records);
    let mut schemes: Vec<SchemeKind> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for row in &summary {
        if !schemes.contains(&row.scheme) {
            schemes.push(row.scheme);
        }
        if !values.contains(&row.value) {
            values.push(row.value);
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["value".to_string()];
    for s in &schemes {
        for col in ["gain_mean", "gain_se", "bound_gain_mean", "min_throughput_mean", "d_mean"] {
            header.push(format!("{s}_{col}"));
        }
    }
    csv.write_record(&header)?;
    for v in values {
        let mut row = vec![v.to_string()];
        for s in &schemes {
            match summary.iter().find(|r| r.value == v && r.scheme == *s) {
                Some(r) => {
                    for x in [r.gain_mean, r.gain_se, r.bound_gain_mean, r.min_throughput_mean, r.d_mean] {
                        row.push(x.to_string());
                    }
                }
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}
