use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use d2dsim::engine::{run_traced, write_trace_csv};
use d2dsim::experiment::{self, SweepSpec};
use d2dsim::{Error, PolicyKind, Result, SimConfig};

#[derive(Parser)]
#[command(name = "d2dsim", version, about = "Energy-aware caching simulator for cellular D2D edge networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Cdev,
    Rd2d,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics.
    Run {
        /// Simulation config (TOML). Defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated policies; one metrics file per policy.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        /// Output directory; metrics go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event trace (needs --out).
        #[arg(long)]
        trace: bool,
    },
    /// Run a parameter sweep with seeded replications.
    Sweep {
        /// Sweep spec (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Built-in sweep over device cache size or D2D radius.
        #[arg(long)]
        preset: Option<Preset>,
        /// Base seed; replication i uses base + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time single replacement decisions of each policy.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        /// Resident counts for the scaling fit.
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10000])]
        sizes: Vec<usize>,
        /// Minimum wall time per timing sample, milliseconds.
        #[arg(long, default_value_t = 20.0)]
        min_sample_ms: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a sweep's aggregates into the long table behind one figure.
    Plotdata {
        /// `aggregates.csv` from a sweep, or the sweep directory.
        #[arg(long, required_unless_present = "list")]
        input: Option<PathBuf>,
        /// Figure id such as `total_energy_vs_cdev`.
        #[arg(long, required_unless_present = "list")]
        figure: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the valid figure ids.
        #[arg(long)]
        list: bool,
    },
    /// Print the default simulation config as TOML.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    let cfg = match path {
        Some(p) => SimConfig::from_toml(&fs::read_to_string(p)?)?,
        None => SimConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(config: Option<PathBuf>, seed: Option<u64>, policies: Vec<PolicyKind>, out: Option<PathBuf>, trace: bool) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    if trace && out.is_none() {
        return Err(Error::Config {
            field: "--trace".into(),
            reason: "needs --out".into(),
        });
    }
    let kinds = if policies.is_empty() { vec![cfg.policy.kind] } else { policies };
    if kinds.len() > 1 && out.is_none() {
        return Err(Error::Config {
            field: "--policies".into(),
            reason: "several policies need --out".into(),
        });
    }
    for kind in &kinds {
        let mut c = cfg.clone();
        c.policy.kind = *kind;
        let (metrics, events) = run_traced(&c, trace)?;
        let suffix = if kinds.len() > 1 { format!("_{kind}") } else { String::new() };
        match &out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                metrics.write_csv(fs::File::create(dir.join(format!("metrics{suffix}.csv")))?)?;
                fs::write(dir.join(format!("config{suffix}.toml")), c.to_toml())?;
                if let Some(events) = events {
                    write_trace_csv(&events, fs::File::create(dir.join(format!("trace{suffix}.csv")))?)?;
                }
            }
            None => metrics.write_csv(io::stdout().lock())?,
        }
    }
    Ok(())
}

fn cmd_sweep(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    policies: Vec<PolicyKind>,
    replications: Option<u32>,
    out: PathBuf,
) -> Result<()> {
    let mut spec = match (config, preset) {
        (Some(p), _) => SweepSpec::from_toml(&fs::read_to_string(p)?)?,
        (None, Some(Preset::Cdev)) => SweepSpec::c_dev_default(),
        (None, Some(Preset::Rd2d)) => SweepSpec::r_d2d_default(),
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    if !policies.is_empty() {
        spec.policies = policies;
    }
    if let Some(r) = replications {
        spec.replications = r;
    }
    let result = experiment::run_sweep(&spec)?;
    experiment::write_sweep(&out, &spec, &result)?;
    eprintln!("{} rows written to {}", result.rows.len(), out.display());
    Ok(())
}

fn cmd_bench(
    config: Option<PathBuf>,
    seed: u64,
    policies: Vec<PolicyKind>,
    sizes: Vec<usize>,
    min_sample_ms: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let kinds = if policies.is_empty() { PolicyKind::ALL.to_vec() } else { policies };
    let min_s = min_sample_ms / 1e3;
    let table = experiment::bench_policies(&cfg, &kinds, seed, min_s)?;
    let mut scaling = Vec::new();
    for &kind in &kinds {
        let delta = cfg.cache.delta_dev_bits;
        let sizes: Vec<usize> = if kind == PolicyKind::Opt {
            sizes.iter().copied().filter(|&n| n <= 1000).collect()
        } else {
            sizes.clone()
        };
        scaling.extend(experiment::bench_scaling(kind, &sizes, delta, seed, min_s)?);
    }
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "scale,policy,items,seconds_per_decision")?;
    for r in &table {
        writeln!(w, "{},{},{},{:.3e}", r.scale, r.policy, r.items, r.seconds_per_decision)?;
    }
    for &kind in &kinds {
        let pts: Vec<(f64, f64)> = scaling
            .iter()
            .filter(|r| r.policy == kind)
            .map(|r| (r.items as f64, r.seconds_per_decision))
            .collect();
        if pts.len() >= 2 {
            writeln!(w, "# {kind}: fitted growth exponent {:.2}", experiment::fit_exponent(&pts))?;
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        experiment::write_bench_csv(&table, fs::File::create(dir.join("bench.csv"))?)?;
        experiment::write_bench_csv(&scaling, fs::File::create(dir.join("scaling.csv"))?)?;
    }
    Ok(())
}

fn cmd_plotdata(input: Option<PathBuf>, figure: Option<String>, out: Option<PathBuf>, list: bool) -> Result<()> {
    if list {
        for id in experiment::figure_ids() {
            println!("{id}");
        }
        return Ok(());
    }
    let (input, figure) = (input.expect("required by clap"), figure.expect("required by clap"));
    let path = if input.is_dir() { input.join("aggregates.csv") } else { input };
    let (parameter, aggregates) = experiment::read_aggregates_csv(&fs::read_to_string(&path)?)?;
    let parameter = parameter.ok_or_else(|| Error::Parse(format!("{} holds no aggregate rows", path.display())))?;
    match out {
        Some(p) => experiment::emit_plot_data(parameter, &aggregates, &figure, fs::File::create(p)?),
        None => experiment::emit_plot_data(parameter, &aggregates, &figure, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            policies,
            out,
            trace,
        } => cmd_run(config, seed, policies, out, trace),
        Command::Sweep {
            config,
            preset,
            seed,
            policies,
            replications,
            out,
        } => cmd_sweep(config, preset, seed, policies, replications, out),
        Command::Bench {
            config,
            seed,
            policies,
            sizes,
            min_sample_ms,
            out,
        } => cmd_bench(config, seed, policies, sizes, min_sample_ms, out),
        Command::Plotdata { input, figure, out, list } => cmd_plotdata(input, figure, out, list),
        Command::Defaults => {
            print!("{}", SimConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
