//! `fairmac` command-line tool.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or arguments,
//! 3 for runtime faults (I/O failures, internal consistency faults).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairmac_core::analytic::{renewal_time, slot_probabilities, throughput_bound, MacParams};
use fairmac_core::experiments::{self, SweepSpec, SweepVariable};
use fairmac_core::schemes::{feasibility, helper_set, max_direct_rate, max_supported_rate};
use fairmac_core::simulator::{self, ContentionMode, SimConfig, Simulator, StopCondition};
use fairmac_core::{ChannelParams, Error, RateTable, Result, SchemeKind, TargetRate, Topology};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "fairmac", version, about = "Cooperative random-access uplink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect a topology file.
    #[command(subcommand)]
    Topology(TopologyCmd),
    /// Print slot probabilities and the min-throughput bound.
    Bound(BoundArgs),
    /// Show helper sets and physical support at a target rate.
    Feasibility(FeasibilityArgs),
    /// Run one simulation and print its metrics as JSON.
    Simulate(SimulateArgs),
    /// Run a parameter sweep and write gain records as CSV.
    Sweep(SweepArgs),
    /// Reshape sweep CSV into one row per swept value for plotting.
    PlotData(PlotDataArgs),
}

#[derive(Subcommand)]
enum TopologyCmd {
    /// Draw nodes uniformly over the unit disk, normalized to max distance 1.
    Generate {
        #[arg(long, short)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print distances and direct rates of a topology file.
    Inspect {
        file: PathBuf,
        #[command(flatten)]
        channel: ChannelArgs,
    },
}

#[derive(Args, Clone)]
struct TopologySource {
    /// Topology file; when absent a topology is generated.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, short, default_value_t = 20)]
    nodes: usize,
    /// Seed for the generated topology.
    #[arg(long, default_value_t = 0)]
    topology_seed: u64,
}

impl TopologySource {
    fn load(&self) -> Result<Topology> {
        match &self.topology {
            Some(path) => Topology::from_text(&read_input(path)?),
            None => Topology::generate(self.nodes, self.topology_seed),
        }
    }
}

#[derive(Args, Clone)]
struct ChannelArgs {
    /// Linear transmit SNR at unit distance.
    #[arg(long, default_value_t = 1.0, conflicts_with = "tx_snr_db")]
    tx_snr: f64,
    /// Transmit SNR at unit distance in dB.
    #[arg(long, allow_hyphen_values = true)]
    tx_snr_db: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
}

impl ChannelArgs {
    fn params(&self) -> Result<ChannelParams> {
        match self.tx_snr_db {
            Some(db) => ChannelParams::from_db(db, self.gamma),
            None => ChannelParams::new(self.tx_snr, self.gamma),
        }
    }
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, short)]
    nodes: usize,
    #[arg(long, default_value_t = simulator::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = simulator::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, short, default_value_t = 1.0)]
    d: f64,
}

#[derive(Args)]
struct FeasibilityArgs {
    #[command(flatten)]
    source: TopologySource,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, short)]
    d: f64,
    #[arg(long, default_value = "decode-forward")]
    scheme: SchemeKind,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: TopologySource,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, default_value = "decode-forward")]
    scheme: SchemeKind,
    /// Target rate; defaults to the Direct-Link optimum min_k R_k.
    #[arg(long, short)]
    d: Option<f64>,
    #[arg(long, short, default_value_t = simulator::DEFAULT_Q_LIMIT)]
    q: u32,
    #[arg(long, default_value_t = simulator::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = simulator::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = simulator::DEFAULT_DELIVERIES, conflicts_with = "time")]
    deliveries: u64,
    /// Stop after this much simulated time instead of a delivery count.
    #[arg(long)]
    time: Option<f64>,
    /// Draw every contention slot individually instead of skipping idle runs.
    #[arg(long)]
    per_slot: bool,
    /// Write a line-per-busy-event run log here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep spec; flags below override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// One of tx-snr, d, q-limit, n.
    #[arg(long)]
    variable: Option<SweepVariable>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long)]
    replications: Option<u32>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SchemeKind>>,
    #[arg(long)]
    topology_seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    tx_snr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, short)]
    d: Option<f64>,
    #[arg(long, short)]
    q: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    deliveries: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    regime_tol: Option<f64>,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn resolve(&self) -> Result<SweepSpec> {
        let mut spec = match &self.config {
            Some(path) => SweepSpec::from_json(&read_input(path)?)?,
            None => {
                let variable =
                    self.variable.ok_or_else(|| Error::Config("--variable is required without --config".into()))?;
                SweepSpec::new(variable, Vec::new())
            }
        };
        if let Some(v) = self.variable {
            spec.variable = v;
        }
        if let Some(v) = &self.values {
            spec.values = v.clone();
        }
        if let Some(v) = self.replications {
            spec.replications = v;
        }
        if let Some(v) = self.master_seed {
            spec.master_seed = v;
        }
        if let Some(v) = &self.schemes {
            spec.schemes = v.clone();
        }
        if self.topology_seed.is_some() {
            spec.topology_seed = self.topology_seed;
        }
        let f = &mut spec.fixed;
        f.n = self.nodes.unwrap_or(f.n);
        f.tx_snr = self.tx_snr.unwrap_or(f.tx_snr);
        f.gamma = self.gamma.unwrap_or(f.gamma);
        if self.d.is_some() {
            f.d = self.d;
        }
        f.q_limit = self.q.unwrap_or(f.q_limit);
        f.tau = self.tau.unwrap_or(f.tau);
        f.sigma = self.sigma.unwrap_or(f.sigma);
        f.deliveries = self.deliveries.unwrap_or(f.deliveries);
        f.d_grid_points = self.grid_points.unwrap_or(f.d_grid_points);
        f.regime_tol = self.regime_tol.unwrap_or(f.regime_tol);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct PlotDataArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut w = io::stdout().lock();
    writeln!(w, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_topology(cmd: TopologyCmd) -> Result<()> {
    match cmd {
        TopologyCmd::Generate { nodes, seed, out } => {
            let topo = Topology::generate(nodes, seed)?;
            output(&out)?.write_all(topo.to_text().as_bytes())?;
        }
        TopologyCmd::Inspect { file, channel } => {
            let topo = Topology::from_text(&read_input(&file)?)?;
            let rates = RateTable::build(&topo, &channel.params()?)?;
            let mut w = io::stdout().lock();
            writeln!(w, "nodes: {}", topo.len())?;
            if let Some(g) = topo.generation() {
                writeln!(w, "generated: n={} seed={}", g.n, g.seed)?;
            }
            writeln!(w, "{:>4} {:>10} {:>10}", "id", "distance", "rate")?;
            for k in topo.nodes() {
                writeln!(w, "{:>4} {:>10.6} {:>10.6}", k.0, topo.distance_to_ap(k), rates.direct(k))?;
            }
            writeln!(w, "d* (direct-link optimum): {:.6}", max_direct_rate(&rates))?;
            for scheme in [SchemeKind::TwoHop, SchemeKind::DecodeForward] {
                writeln!(w, "max supported d ({scheme}): {:.6}", max_supported_rate(&rates, scheme))?;
            }
        }
    }
    Ok(())
}

fn cmd_bound(args: BoundArgs) -> Result<()> {
    let mac = MacParams::new(args.nodes, args.tau, args.sigma)?;
    let d = TargetRate::new(args.d)?;
    let p = slot_probabilities(&mac);
    let out = serde_json::json!({
        "n": mac.n,
        "tau": mac.tau,
        "sigma": mac.sigma,
        "d": d.get(),
        "p_s": p.p_s,
        "p_i": p.p_i,
        "p_c": p.p_c,
        "renewal_time": renewal_time(&mac),
        "throughput_bound": throughput_bound(d, &mac),
    });
    print_json(&out)
}

fn cmd_feasibility(args: FeasibilityArgs) -> Result<()> {
    let topo = args.source.load()?;
    let rates = RateTable::build(&topo, &args.channel.params()?)?;
    let d = TargetRate::new(args.d)?;
    let report = feasibility(&rates, d, args.scheme);
    let mut w = io::stdout().lock();
    writeln!(w, "scheme: {}  d: {}", args.scheme, d.get())?;
    writeln!(w, "{:>4} {:>10} {:>10} {:>12}  helpers", "id", "distance", "rate", "support")?;
    for k in topo.nodes() {
        let support = match report.support[k.0] {
            fairmac_core::Support::Direct => "direct".to_string(),
            fairmac_core::Support::Helped(_) => "helped".to_string(),
            fairmac_core::Support::Unsupported => "unsupported".to_string(),
        };
        let helpers: Vec<String> = if rates.direct(k) < d.get() {
            helper_set(k, &rates, d, args.scheme).iter().map(|h| h.to_string()).collect()
        } else {
            Vec::new()
        };
        writeln!(
            w,
            "{:>4} {:>10.6} {:>10.6} {:>12}  {}",
            k.0,
            topo.distance_to_ap(k),
            rates.direct(k),
            support,
            helpers.join(",")
        )?;
    }
    let join = |s: &std::collections::BTreeSet<fairmac_core::NodeId>| {
        s.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
    };
    writeln!(w, "H (helpers): {{{}}}", join(&report.helpers))?;
    writeln!(w, "C (helped): {{{}}}", join(&report.helped))?;
    writeln!(w, "physically supported: {}", report.is_supported())?;
    writeln!(w, "max supported d: {:.6}", max_supported_rate(&rates, args.scheme))?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let topo = args.source.load()?;
    let rates = RateTable::build(&topo, &args.channel.params()?)?;
    let d = TargetRate::new(args.d.unwrap_or_else(|| max_direct_rate(&rates)))?;
    let config = SimConfig {
        q_limit: args.q,
        tau: args.tau,
        sigma: args.sigma,
        seed: args.seed,
        stop: match args.time {
            Some(t) => StopCondition::Time(t),
            None => StopCondition::Deliveries(args.deliveries),
        },
        contention: if args.per_slot { ContentionMode::PerSlot } else { ContentionMode::Skip },
        trace: args.trace.is_some(),
        ..SimConfig::new(args.scheme, d)
    };
    let mut sim = Simulator::new(config, &rates)?;
    sim.run_to_end()?;
    let report = sim.report();
    let mac = MacParams::new(topo.len(), args.tau, args.sigma)?;
    let out = serde_json::json!({
        "bound": throughput_bound(d, &mac),
        "physically_supported": feasibility(&rates, d, args.scheme).is_supported(),
        "report": report,
    });
    if let Some(path) = args.trace {
        let mut w = output(&Some(path))?;
        for rec in sim.trace().unwrap_or_default() {
            writeln!(w, "{rec}")?;
        }
        w.flush()?;
    }
    print_json(&out)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let spec = args.resolve()?;
    let records = experiments::run_sweep(&spec)?;
    let mut w = output(&args.out)?;
    experiments::write_csv(&mut w, &spec, &records)?;
    w.flush()?;
    Ok(())
}

fn cmd_plot_data(args: PlotDataArgs) -> Result<()> {
    let records = experiments::read_csv(read_input(&args.input)?.as_bytes())?;
    let mut w = output(&args.out)?;
    experiments::write_plot_data(&mut w, &records)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Topology(cmd) => cmd_topology(cmd),
        Command::Bound(args) => cmd_bound(args),
        Command::Feasibility(args) => cmd_feasibility(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::PlotData(args) => cmd_plot_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
