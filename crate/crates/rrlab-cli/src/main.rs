use clap::{Args, Parser, Subcommand};
use rrlab_cli::{cmd_attack, cmd_eval, cmd_train, cmd_verify, AttackArgs, EvalArgs, EXIT_CONFIG};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "rrlab",
    version,
    about = "Rejection laboratory: train two-head classifiers, attack them, and verify the coupled-rejection guarantees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EvalCommon {
    /// Checkpoint file produced by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV (header `f0,...,label`)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for reports and the manifest
    #[arg(long)]
    out: PathBuf,
    /// Optional attack config; when given, the dataset is attacked first
    #[arg(long)]
    attack: Option<PathBuf>,
    /// Rejection metric: conf, tcon, rcon, or aphi
    #[arg(long, default_value = "rcon")]
    rejector: String,
    /// True positive rate the rejection threshold must retain
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    /// Compute thresholds on clean scores instead of the reported scores
    #[arg(long)]
    threshold_from_clean: bool,
    /// Also write gnuplot companion scripts
    #[arg(long)]
    emit_gnuplot: bool,
    /// Override a config key, e.g. --set epsilon=0.2 (repeatable)
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a two-head model from a key=value config file
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. --set lambda=0.5 (repeatable)
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Score a checkpoint on a dataset under a rejector
    Eval {
        #[command(flatten)]
        common: EvalCommon,
        /// Softmax temperature for the scored metrics
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Eval across a temperature grid (one report per tau)
    SweepTau {
        #[command(flatten)]
        common: EvalCommon,
        /// Comma-separated temperatures; default 2^-4..2^4
        #[arg(long)]
        taus: Option<String>,
    },
    /// Attack a checkpoint: normal, adaptive (objective sweep), or
    /// min-distortion (bisection over the radius)
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Attack config file (key=value)
        #[arg(long)]
        attack: PathBuf,
        #[arg(long, default_value = "normal")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset for the rejector-median reference (min-distortion)
        #[arg(long)]
        median_data: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Machine-verify the separability guarantees and the bin-counting
    /// identities
    Verify {
        /// Sampled instances per proof branch
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Test hook: flip one inequality to prove violations are caught
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn parse_taus(spec: &Option<String>) -> Result<Vec<f64>, String> {
    match spec {
        None => Ok((-4..=4).map(|k| 2.0f64.powi(k)).collect()),
        Some(s) => s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad tau `{t}`")))
            .collect(),
    }
}

fn eval_args(common: EvalCommon, taus: Vec<f64>) -> Result<EvalArgs, String> {
    Ok(EvalArgs {
        checkpoint: common.checkpoint,
        data: common.data,
        out_dir: common.out,
        attack_config: common.attack,
        rejector: common.rejector.parse()?,
        tpr: common.tpr,
        taus,
        threshold_from_clean: common.threshold_from_clean,
        emit_gnuplot: common.emit_gnuplot,
        overrides: common.set,
    })
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train { config, out, set } => cmd_train(&config, &out, &set),
        Command::Eval { common, tau } => match eval_args(common, vec![tau]) {
            Ok(args) => cmd_eval(&args),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::SweepTau { common, taus } => {
            match parse_taus(&taus).and_then(|ts| eval_args(common, ts)) {
                Ok(args) => cmd_eval(&args),
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
        Command::Attack { checkpoint, data, attack, mode, out, median_data, set } => {
            match mode.parse() {
                Ok(mode) => cmd_attack(&AttackArgs {
                    checkpoint,
                    data,
                    attack_config: attack,
                    mode,
                    out_dir: out,
                    median_data,
                    overrides: set,
                }),
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
        Command::Verify { trials, seed, out, inject_fault } => {
            cmd_verify(trials, seed, &out, inject_fault)
        }
    };
    std::process::exit(i32::from(code));
}
