//! `dci` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dci_core::experiment::{audit_directionality, ExperimentConfig};
use dci_core::features::FeatureOrder;
use dci_core::stego::StegoSystem;
use dci_core::store::Store;
use dci_core::workflow::{self, CONFIG_FILE};
use dci_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dci", version, about = "Actor-level steganalysis with classifier-inconsistency detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config; defaults to `<out>/config.toml` when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies actor and training-image counts.
    #[arg(long)]
    scale: Option<f64>,
    /// Comma-separated CSM percentages, e.g. `0,50,100`.
    #[arg(long, value_delimiter = ',')]
    csm: Option<Vec<f64>>,
    /// Decision threshold on the estimated accuracy.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate images and manifests.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 2N image models and the two actor models.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved models on every sweep point.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Rebuild the summary from saved verdict files only.
        #[arg(long)]
        from_verdicts: bool,
    },
    /// Measure the share of features whose two embedding changes agree in sign.
    AuditDirectionality {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lsbm")]
        system: SystemArg,
        #[arg(long, default_value_t = 0.4)]
        payload: f64,
        #[arg(long, default_value_t = 200)]
        covers: usize,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        /// Also write the report to `<out>/reports/directionality.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// gen + train + eval in one go.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Lsbm,
    Hill,
    Var,
}

impl From<SystemArg> for StegoSystem {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Lsbm => StegoSystem::LsbMatching,
            SystemArg::Hill => StegoSystem::AdaptiveHill,
            SystemArg::Var => StegoSystem::AdaptiveVar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    First,
    Second,
}

fn load_config(common: &Common, out: Option<&Path>) -> Result<ExperimentConfig> {
    let path = match (&common.config, out) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) if dir.join(CONFIG_FILE).exists() => Some(dir.join(CONFIG_FILE)),
        _ => None,
    };
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(csm) = &common.csm {
        config.csm_sweep = csm.clone();
    }
    if let Some(t) = common.threshold {
        config.threshold = t;
    }
    if let Some(scale) = common.scale {
        config = config.scaled(scale)?;
    }
    config.validate()?;
    Ok(config)
}

/// Train and eval must see the config the dataset was generated with.
fn dataset_config(common: &Common, out: &Path) -> Result<ExperimentConfig> {
    let path = out.join(CONFIG_FILE);
    if common.config.is_none() && !path.exists() {
        return Err(Error::MissingFile(path));
    }
    load_config(common, Some(out))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out } => {
            let config = load_config(&common, None)?;
            print_json(&workflow::generate(&config, &Store::new(out))?)
        }
        Command::Train { common, out } => {
            let config = dataset_config(&common, &out)?;
            let store = Store::new(&out);
            workflow::train_models(&config, &store)?;
            print_json(&workflow::read_training_hashes(&store)?)
        }
        Command::Eval {
            common,
            out,
            from_verdicts,
        } => {
            let config = dataset_config(&common, &out)?;
            let store = Store::new(&out);
            let report = if from_verdicts {
                workflow::summary_from_verdicts(&config, &store, config.threshold)?
            } else {
                workflow::evaluate(&config, &store, config.threshold)?
            };
            print!("{}", report.summary_csv());
            Ok(())
        }
        Command::AuditDirectionality {
            common,
            system,
            payload,
            covers,
            order,
            out,
        } => {
            let mut config = load_config(&common, None)?;
            if let Some(o) = order {
                config.feature_order = match o {
                    OrderArg::First => FeatureOrder::First,
                    OrderArg::Second => FeatureOrder::Second,
                };
            }
            let summary = audit_directionality(&config, system.into(), payload, covers)?;
            if let Some(dir) = out {
                let store = Store::new(dir);
                let text = serde_json::to_string_pretty(&summary)?;
                dci_core::store::write_atomic(&store.report_path("directionality.json"), text.as_bytes())?;
            }
            print_json(&serde_json::json!({
                "source_id": summary.source_id,
                "system": summary.system.name(),
                "payload_bpp": summary.payload_bpp,
                "n_covers": summary.n_covers,
                "overall_fraction": summary.overall_fraction,
                "directional_features": summary.directional_features,
                "feature_dim": summary.feature_dim,
            }))
        }
        Command::Sweep { common, out } => {
            let config = load_config(&common, None)?;
            let store = Store::new(&out);
            workflow::generate(&config, &store)?;
            workflow::train_models(&config, &store)?;
            let report = workflow::evaluate(&config, &store, config.threshold)?;
            print!("{}", report.summary_csv());
            Ok(())
        }
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            return fail("usage", e.to_string());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}

