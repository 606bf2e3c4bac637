use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use concealed_agg::scenario::TopologySource;
use concealed_agg::selftest::{self, Fault};
use concealed_agg::simulator::{measure_scaling, ScalingFamily, Simulation, SCALING_HEADER};
use concealed_agg::topology::{Graph, TopologyError};
use concealed_agg::{AggFunction, Integrity, Scenario};

const SEED_ENV: &str = "CONCEALED_AGG_SEED";

#[derive(Parser)]
#[command(name = "concealed-agg", version, about = "Concealed, verifiable sensor aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write report.txt and metrics.csv.
    Run(RunArgs),
    /// Measure attestation probes against network size.
    Scaling(ScalingArgs),
    /// Check the core algebraic properties.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionArg {
    Sum,
    Mean,
}

#[derive(clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Topology file (`nodes <n>` then `edge <a> <b>` lines); replaces any
    /// topology in the scenario.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Overridden by the CONCEALED_AGG_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rounds: Option<u64>,
    #[arg(long, value_enum)]
    function: Option<FunctionArg>,
    #[arg(long)]
    force_attest: bool,
    #[arg(long, value_parser = probability)]
    audit_prob: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Leave the generation timestamp out of report.txt.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(clap::Args)]
struct ScalingArgs {
    /// Comma-separated sensor counts.
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
    sizes: Vec<u32>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "random-recursive")]
    family: ScalingFamily,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    SeedArithmetic,
    MacCombine,
}

#[derive(clap::Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err("must be within [0, 1]".into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Scaling(args) => cmd_scaling(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn invalid(path: &Path, line: usize, message: impl std::fmt::Display) -> ExitCode {
    if line == 0 {
        eprintln!("error: {}: {message}", path.display());
    } else {
        eprintln!("error: {}:{line}: {message}", path.display());
    }
    ExitCode::from(2)
}

fn load_scenario(args: &RunArgs) -> Result<Scenario, ExitCode> {
    let text = fs::read_to_string(&args.scenario).map_err(|e| invalid(&args.scenario, 0, e))?;
    let mut scenario = Scenario::parse(&text).map_err(|e| invalid(&args.scenario, e.line, e.message))?;
    if let Some(path) = &args.topology {
        let text = fs::read_to_string(path).map_err(|e| invalid(path, 0, e))?;
        let graph = Graph::parse(&text).map_err(|e| match e {
            TopologyError::Parse { line, message } => invalid(path, line, message),
            other => invalid(path, 0, other),
        })?;
        scenario.topology = Some(TopologySource::Inline(graph));
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        scenario.seed = v
            .trim()
            .parse()
            .map_err(|_| invalid(Path::new(SEED_ENV), 0, format!("bad seed `{v}`")))?;
    }
    if let Some(r) = args.rounds {
        scenario.rounds = r;
    }
    if let Some(f) = args.function {
        scenario.function = match f {
            FunctionArg::Sum => AggFunction::Sum,
            FunctionArg::Mean => AggFunction::Mean,
        };
    }
    scenario.force_attest |= args.force_attest;
    if let Some(p) = args.audit_prob {
        scenario.audit_prob = p;
    }
    Ok(scenario)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let scenario = match load_scenario(&args) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let mut sim = match Simulation::from_scenario(&scenario) {
        Ok(s) => s,
        Err(e) => return invalid(&args.scenario, e.line, e.message),
    };
    let output = sim.run(scenario.rounds);

    let mut report = String::new();
    if !args.no_timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        report.push_str(&format!("# generated {secs}\n"));
    }
    report.push_str(&output.report());
    let written = fs::create_dir_all(&args.out)
        .and_then(|_| fs::write(args.out.join("report.txt"), &report))
        .and_then(|_| fs::write(args.out.join("metrics.csv"), output.metrics.to_csv()));
    if let Err(e) = written {
        eprintln!("error: writing to {}: {e}", args.out.display());
        return ExitCode::from(1);
    }

    print!("{}", output.report());
    let count = |i: Integrity| output.results.iter().filter(|r| r.integrity == i).count();
    println!(
        "{} rounds: {} passed, {} attested, {} rejected",
        output.results.len(),
        count(Integrity::Passed),
        count(Integrity::Attested),
        count(Integrity::Rejected)
    );
    ExitCode::SUCCESS
}

fn cmd_scaling(args: ScalingArgs) -> ExitCode {
    let rows = measure_scaling(args.family, &args.sizes, args.trials, args.seed);
    let mut table = format!("{SCALING_HEADER}\n");
    for r in &rows {
        table.push_str(&r.csv_row());
        table.push('\n');
    }
    if let Some(path) = &args.out {
        if let Err(e) = fs::write(path, &table) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    print!("{table}");
    ExitCode::SUCCESS
}

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::SeedArithmetic => Fault::SeedArithmetic,
        FaultArg::MacCombine => Fault::MacCombine,
    });
    match selftest::run(args.trials, args.seed, fault) {
        Ok(()) => {
            for p in selftest::PROPERTIES {
                println!("ok   {p}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("FAIL {}: {f}", f.property);
            ExitCode::from(1)
        }
    }
}
