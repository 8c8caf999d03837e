use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nnam::commands::{self, CliError, CliResult, References, Source};
use nnam::config::{Config, UsageError};
use nnam_core::cells::CellKind;

#[derive(Parser)]
#[command(name = "nnam", version, about = "Recurrent acoustic models, crogging ensembles, bigram decoding and PER scoring")]
struct Cli {
    /// TOML settings file; tables map to key prefixes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one key, e.g. `--set train.max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Data {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with its decoder tables.
    Synth,
    /// Train one network.
    Train {
        #[command(flatten)]
        data: Data,
        /// lstm, gru, zoneout or ff (key `net.cell`).
        #[arg(long)]
        cell: Option<String>,
    },
    /// Train fold networks and optionally a master and a post-layer.
    TrainEnsemble {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        cell: Option<String>,
        /// Key `ensemble.folds`.
        #[arg(long)]
        folds: Option<usize>,
        /// Also train a master network.
        #[arg(long)]
        master: bool,
        /// Also train a post-layer on held-out fold predictions.
        #[arg(long)]
        rpl: bool,
    },
    /// Decode a corpus split into `<id> <phones...>` lines.
    Decode {
        #[command(flatten)]
        data: Data,
        /// Single model file.
        #[arg(long, conflicts_with_all = ["ensemble", "uniform"])]
        model: Option<PathBuf>,
        /// Ensemble manifest.
        #[arg(long, conflicts_with = "uniform")]
        ensemble: Option<PathBuf>,
        /// master, folds or master+folds (key `decode.scenario`).
        #[arg(long, requires = "ensemble")]
        scenario: Option<String>,
        /// Apply the ensemble's post-layer.
        #[arg(long, requires = "ensemble")]
        rpl: bool,
        /// Uniform acoustic scores: the prior-only baseline.
        #[arg(long)]
        uniform: bool,
        /// train, dev or test (key `decode.split`).
        #[arg(long)]
        split: Option<String>,
    },
    /// Score hypotheses against references.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        /// Reference transcript file.
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        r#ref: Option<PathBuf>,
        /// Take references (and the phone map) from this corpus.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Restrict to these cell kinds.
        #[arg(long = "kind")]
        kinds: Vec<String>,
        /// Perturb the named tensor's analytic gradient (checker self-test).
        #[arg(long)]
        corrupt: Option<String>,
    },
    /// Repeated master/folds/RPL runs, reported as mean ± std per scenario.
    Experiment {
        /// Corpus directory; synthesized from the `synth.*` keys if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cell: Option<String>,
        /// Key `experiment.runs`.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
}

fn build_config(cli: &Cli) -> Result<Config, UsageError> {
    let mut cfg = Config::default();
    if let Some(p) = &cli.config {
        let text = fs::read_to_string(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        cfg.merge_toml(&text, p)?;
    }
    for s in &cli.sets {
        cfg.set_pair(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
    match &cli.command {
        Command::Train { cell, .. } => set("net.cell", cell.clone())?,
        Command::TrainEnsemble {
            cell,
            folds,
            master,
            rpl,
            ..
        } => {
            set("net.cell", cell.clone())?;
            set("ensemble.folds", folds.map(|f| f.to_string()))?;
            set("ensemble.master", master.then(|| "true".into()))?;
            set("ensemble.rpl", rpl.then(|| "true".into()))?;
        }
        Command::Decode {
            scenario,
            rpl,
            uniform,
            split,
            ..
        } => {
            set("decode.scenario", scenario.clone())?;
            set("decode.rpl", rpl.then(|| "true".into()))?;
            set("decode.uniform", uniform.then(|| "true".into()))?;
            set("decode.split", split.clone())?;
        }
        Command::Score { split, .. } => set("decode.split", split.clone())?,
        Command::Experiment { cell, runs, folds, .. } => {
            set("net.cell", cell.clone())?;
            set("experiment.runs", runs.map(|r| r.to_string()))?;
            set("ensemble.folds", folds.map(|f| f.to_string()))?;
        }
        Command::Synth | Command::Gradcheck { .. } => {}
    }
    Ok(cfg)
}

/// `Ok(false)` means the command ran but its check failed.
fn run(cli: &Cli, cfg: &Config) -> CliResult<bool> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth => commands::cmd_synth(cfg, out)?,
        Command::Train { data, .. } => commands::cmd_train(cfg, &data.data, out)?,
        Command::TrainEnsemble { data, .. } => commands::cmd_train_ensemble(cfg, &data.data, out)?,
        Command::Decode {
            data, model, ensemble, ..
        } => {
            let source = match (model, ensemble) {
                _ if cfg.flag("decode.uniform") => Source::Uniform,
                (Some(m), _) => Source::Model(m),
                (_, Some(e)) => Source::Ensemble(e),
                (None, None) => {
                    return Err(CliError::Usage(UsageError(
                        "decode needs --model, --ensemble or --uniform".into(),
                    )))
                }
            };
            commands::cmd_decode(cfg, &data.data, source, out)?
        }
        Command::Score { hyp, r#ref, data, .. } => {
            let refs = match (r#ref, data) {
                (Some(r), _) => References::File(r),
                (None, Some(d)) => References::Corpus(d),
                (None, None) => unreachable!("clap requires one of --ref/--data"),
            };
            commands::cmd_score(cfg, hyp, refs, out)?
        }
        Command::Gradcheck { kinds, corrupt } => {
            let kinds = kinds
                .iter()
                .map(|k| k.parse::<CellKind>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(UsageError(e.to_string())))?;
            return commands::cmd_gradcheck(cfg, &kinds, corrupt.as_deref(), out);
        }
        Command::Experiment { data, .. } => commands::cmd_experiment(cfg, data.as_deref().map(Path::new), out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(1)
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
