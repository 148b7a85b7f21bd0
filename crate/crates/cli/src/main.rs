mod commands;
mod desk;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use terrain_embed_service::ServiceConfig;

use commands::{
    eval_cmd, eval_markdown, exit_code, fit_probes_cmd, grid_cmd, index_cmd, neighbors_csv, retrieve_cmd, scan_cmd, synth,
    train_cmd, usage, EvalArgs, FitProbesArgs, GridArgs, IndexArgs, RetrieveArgs, ScanArgs, SynthArgs, TrainArgs,
};

/// Train, evaluate and serve self-supervised terrain embeddings.
#[derive(Debug, Parser)]
#[command(name = "terrain-embed", version)]
struct Cli {
    /// TOML file of `flag = value` defaults for the subcommand; flags given
    /// on the command line win. Must precede the subcommand.
    #[arg(long, global = true)]
    config_file: Option<PathBuf>,
    /// Worker threads for seed-level loops; all cores when absent. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a fractal elevation raster as GeoTIFF.
    Synth(SynthArgs),
    /// Train an autoencoder checkpoint.
    Train(TrainArgs),
    /// Probe-CNN accuracy across patch radii.
    ScaleScan(ScanArgs),
    /// Linear-probe accuracy of a model on one class.
    Eval(EvalArgs),
    /// Fit calibrated per-class probes for grid classification.
    FitProbes(FitProbesArgs),
    /// Embed coordinates into a retrieval index.
    Index(IndexArgs),
    /// Nearest indexed locations to the mean embedding of query points.
    Retrieve(RetrieveArgs),
    /// Multi-scale detection maps over a bounding box, as GeoJSON.
    GridClassify(GridArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run every experiment on planted synthetic terrain and write a report.
    ReproDesk(desk::DeskArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    /// Service TOML config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured bind address.
    #[arg(long)]
    bind: Option<String>,
}

/// Splice `--config-file` entries in after the subcommand name, skipping
/// flags the command line already sets.
fn expand_config_file(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config-file") else {
        return Ok(args);
    };
    let path = args.get(pos + 1).ok_or_else(|| usage("--config-file needs a path"))?.clone();
    let mut rest: Vec<OsString> = args[..pos].to_vec();
    rest.extend_from_slice(&args[pos + 2..]);
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", PathBuf::from(&path).display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", PathBuf::from(&path).display())))?;
    let mut sub = 1;
    while sub < rest.len() && rest[sub].to_string_lossy().starts_with('-') {
        sub += if rest[sub] == "--jobs" { 2 } else { 1 };
    }
    if sub >= rest.len() {
        return Ok(rest);
    }
    let given: Vec<String> = rest[sub + 1..]
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).to_string()))
        .collect();
    let mut injected = Vec::new();
    for (key, value) in table {
        let flag = key.replace('_', "-");
        if given.contains(&flag) {
            continue;
        }
        let value = match value {
            toml::Value::Boolean(true) => {
                injected.push(OsString::from(format!("--{flag}")));
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s,
            toml::Value::Array(items) => items.iter().map(scalar).collect::<anyhow::Result<Vec<_>>>()?.join(","),
            other => scalar(&other)?,
        };
        injected.push(OsString::from(format!("--{flag}={value}")));
    }
    rest.splice(sub + 1..sub + 1, injected);
    Ok(rest)
}

fn scalar(v: &toml::Value) -> anyhow::Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(usage(format!("unsupported config value {other}"))),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Synth(a) => synth(&a)?,
        Command::Train(a) => {
            let report = train_cmd(&a)?;
            let last = report.records.last().map(|r| r.l_p).unwrap_or(f64::NAN);
            println!(
                "{} steps ({:?}), final reconstruction loss {last:.6}, {} locations rejected",
                report.records.len(),
                report.stop_reason,
                report.rejected
            );
        }
        Command::ScaleScan(a) => {
            let result = scan_cmd(&a)?;
            print!("{}", result.markdown_table());
            let best = result.records.iter().find(|r| r.resolution == result.best_resolution).expect("best is a record");
            println!("best resolution {} m/px (radius {} m)", best.resolution, best.radius_m);
        }
        Command::Eval(a) => print!("{}", eval_markdown(&eval_cmd(&a)?)),
        Command::FitProbes(a) => {
            let set = fit_probes_cmd(&a)?;
            println!("fitted {} probe(s)", set.probes.len());
        }
        Command::Index(a) => {
            let index = index_cmd(&a)?;
            println!("indexed {} locations ({} rejected)", index.len(), index.rejected);
        }
        Command::Retrieve(a) => print!("{}", neighbors_csv(&retrieve_cmd(&a)?)),
        Command::GridClassify(a) => grid_cmd(&a)?,
        Command::Serve(a) => {
            let mut config = ServiceConfig::load(&a.config)?;
            if let Some(bind) = a.bind {
                config.bind = bind;
            }
            tokio::runtime::Runtime::new()?.block_on(terrain_embed_service::serve(config))?;
        }
        Command::ReproDesk(a) => print!("{}", desk::repro_desk(&a)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match expand_config_file(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
