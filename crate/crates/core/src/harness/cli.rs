use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::presets::preset;
use super::runner::{execute_all, load_dataset, write_partition};
use crate::data::emit_partition_histogram;
use crate::error::{Error, Result};
use crate::oracles::{validate_battery, write_relu_grid};

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "ZOHFL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "zohfl",
    version,
    about = "Zeroth-order hierarchical federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Source {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides both the data and the algorithm seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a configuration (or every configuration of a preset).
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the partition plan, shards and client-by-class histogram.
    Partition {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print configuration and partition summaries.
    Inspect {
        #[command(flatten)]
        source: Source,
    },
    /// Run the oracle check battery.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the ReLU implicit-function grid here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configuration of a preset grid in parallel.
    Sweep {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run configurations one after another.
        #[arg(long)]
        sequential: bool,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve(source: &Source) -> Result<Vec<RunConfig>> {
    let mut configs = match (&source.config, &source.preset) {
        (Some(path), None) => vec![RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::config("--config", format!("{}: {source}", path.display())),
            other => other,
        })?],
        (None, Some(name)) => preset(name, source.seed.unwrap_or(0))?,
        _ => {
            return Err(Error::config(
                "--config/--preset",
                "give exactly one of --config or --preset",
            ))
        }
    };
    if let Some(seed) = source.seed {
        configs = configs.into_iter().map(|c| c.with_seed(seed)).collect();
    }
    Ok(configs)
}

fn single(source: &Source) -> Result<RunConfig> {
    let mut configs = resolve(source)?;
    if configs.len() != 1 {
        return Err(Error::config(
            "--preset",
            format!(
                "preset expands to {} configurations; pick one with --config",
                configs.len()
            ),
        ));
    }
    Ok(configs.remove(0))
}

fn run_command(command: Command, stdout: &mut dyn Write) -> Result<bool> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    match command {
        Command::Run { source, out } => {
            let configs = resolve(&source)?;
            let out = out_dir(out);
            let rows = execute_all(&configs, &out, false)?;
            for r in rows {
                writeln!(
                    stdout,
                    "{}: final_loss={} accuracy={}",
                    r.run_id,
                    r.final_loss,
                    r.final_accuracy.map_or("-".into(), |a| a.to_string())
                )
                .map_err(w)?;
            }
            Ok(true)
        }
        Command::Partition { source, out } => {
            let cfg = single(&source)?;
            let out = out_dir(out).join(format!("{}-partition", cfg.run_id));
            let part = write_partition(&cfg, &out)?;
            writeln!(
                stdout,
                "wrote {} client shards to {}",
                part.clients.len(),
                out.display()
            )
            .map_err(w)?;
            Ok(true)
        }
        Command::Inspect { source } => {
            for cfg in resolve(&source)? {
                write!(stdout, "{}", cfg.to_json()?).map_err(w)?;
                if let Ok(data) = load_dataset(&cfg.dataset, cfg.data_seed) {
                    let part = crate::data::partition(
                        &data,
                        cfg.alpha,
                        cfg.clients,
                        cfg.server_fraction,
                        cfg.test_fraction,
                        cfg.data_seed,
                    )?;
                    let hist = emit_partition_histogram(&part.plan, &data);
                    writeln!(
                        stdout,
                        "samples={} server={} test={} clients={:?}",
                        data.len(),
                        part.server.len(),
                        part.test.len(),
                        hist.client_sizes()
                    )
                    .map_err(w)?;
                }
            }
            Ok(true)
        }
        Command::Validate { seed, out } => {
            let reports = validate_battery(seed)?;
            let mut ok = true;
            for r in &reports {
                ok &= r.pass;
                writeln!(stdout, "{}", serde_json::to_string(r)?).map_err(w)?;
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_relu_grid(&dir.join("relu_grid.csv"), 0.05)?;
            }
            Ok(ok)
        }
        Command::Sweep {
            preset: name,
            seed,
            out,
            sequential,
        } => {
            let configs = preset(&name, seed.unwrap_or(0))?;
            let out = out_dir(out).join(&name);
            let rows = execute_all(&configs, &out, !sequential)?;
            writeln!(
                stdout,
                "{} runs, summary at {}",
                rows.len(),
                out.join("summary.csv").display()
            )
            .map_err(w)?;
            Ok(true)
        }
    }
}

/// Parse `args` and run. Returns the process exit code: 0 on success, 1 on a
/// runtime failure (or a failed `validate`), 2 on a usage or config error.
pub fn cli_main<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match run_command(cli.command, stdout) {
        Ok(true) => 0,
        Ok(false) => {
            let _ = writeln!(stderr, "validation failed");
            1
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(stderr, "  caused by: {s}");
                source = s.source();
            }
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

pub fn default_out_dir() -> PathBuf {
    out_dir(None)
}
