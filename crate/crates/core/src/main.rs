use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mred::config::{self, preset_json, ConfigFile, RunManifest, PRESET_NAMES};
use mred::report::{compare_runs, summary_lines, write_step_csv};
use mred::{run, GatewayKind, SimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mred",
    version,
    about = "RED / master-equation RED gateway simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and print a summary.
    Run(RunArgs),
    /// Run RED and mRED on the same traffic and compare them.
    Compare(CompareArgs),
    /// Print the bundled preset configurations.
    Presets {
        /// Write `<name>.json` files into this directory instead of printing.
        #[arg(long)]
        write_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    gateway: Option<GatewayArg>,
    /// Per-step CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes `<prefix>_red.csv` and `<prefix>_mred.csv`.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum GatewayArg {
    Red,
    Mred,
}

impl From<GatewayArg> for GatewayKind {
    fn from(g: GatewayArg) -> Self {
        match g {
            GatewayArg::Red => GatewayKind::Red,
            GatewayArg::Mred => GatewayKind::Mred,
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> mred::Result<()> {
    match command {
        Command::Run(args) => run_one(args),
        Command::Compare(args) => compare(args),
        Command::Presets { write_dir } => presets(write_dir),
    }
}

fn run_one(args: RunArgs) -> mred::Result<()> {
    let mut config = config::parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(g) = args.gateway {
        config.gateway = g.into();
    }
    let label = config.gateway.to_string();
    let manifest = RunManifest::new(config, label, args.out)?;
    let stats = run(&manifest.config)?;
    if let Some(path) = &manifest.output_path {
        write_step_csv(&stats, path)?;
    }
    print_lines(&summary_lines("", &stats));
    Ok(())
}

fn compare(args: CompareArgs) -> mred::Result<()> {
    let config: SimConfig = config::parse_config(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let cmp = compare_runs(&config, seed)?;
    if let Some(prefix) = &args.out_prefix {
        for (name, stats) in [("red", &cmp.red), ("mred", &cmp.mred)] {
            let mut path = prefix.clone().into_os_string();
            path.push(format!("_{name}.csv"));
            write_step_csv(stats, PathBuf::from(path))?;
        }
    }
    print_lines(&cmp.summary_lines());
    Ok(())
}

fn presets(write_dir: Option<PathBuf>) -> mred::Result<()> {
    match write_dir {
        Some(dir) => {
            for name in PRESET_NAMES {
                let path = dir.join(format!("{name}.json"));
                std::fs::write(&path, preset_json(name)?)
                    .map_err(|e| mred::Error::Io { path, source: e })?;
            }
        }
        None => {
            let mut all = serde_json::Map::new();
            for name in PRESET_NAMES {
                let file = ConfigFile::from(&config::preset(name)?);
                all.insert(
                    name.to_string(),
                    serde_json::to_value(file).expect("config serializes"),
                );
            }
            let text = serde_json::to_string_pretty(&all).expect("config serializes");
            print_lines(&[text]);
        }
    }
    Ok(())
}

fn print_lines(lines: &[String]) {
    let mut out = std::io::stdout().lock();
    for line in lines {
        // A closed stdout is not worth a failure exit.
        let _ = writeln!(out, "{line}");
    }
}
