//! `reachgrasp`: synthesize or load hand-tracking trials, train and evaluate
//! the reach and posture predictors, cross-validate the grasp classifiers and
//! render reports.

mod artifacts;
mod check;
mod commands;
mod config;
mod report;
mod stages;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ClassifierName, CvName, HandsName, PostureModelName, ReachModelName};
use crate::stages::Subset;

#[derive(Parser)]
#[command(name = "reachgrasp", version, about = "Reach-to-grasp prediction from hand-tracking trajectories")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// Base random seed (unsigned integer); stochastic commands need it here or in the config file
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory, built in a hidden sibling and renamed into place when complete
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// JSON run configuration; command-line flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (count); defaults to one per available core
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Replace the output directory if it already exists
    #[arg(long, global = true)]
    pub force: bool,
    /// Assert harness invariants and the configured quality thresholds; exit with status 1 on any failure
    #[arg(long, global = true)]
    pub check: bool,
}

#[derive(Args, Clone, Default)]
pub struct KinArgs {
    /// Savitzky-Golay window length (samples, odd) [default: 7]
    #[arg(long, value_name = "SAMPLES")]
    pub sg_window: Option<usize>,
    /// Savitzky-Golay polynomial order (dimensionless) [default: 3]
    #[arg(long, value_name = "ORDER")]
    pub sg_order: Option<usize>,
    /// Movement-onset speed threshold (m/s) [default: 0.03]
    #[arg(long, value_name = "M_PER_S")]
    pub onset_threshold: Option<f64>,
}

impl KinArgs {
    fn apply(&self, cfg: &mut config::RunConfig) {
        let k = &mut cfg.kinematics;
        if let Some(v) = self.sg_window {
            k.sg_window = v;
        }
        if let Some(v) = self.sg_order {
            k.sg_order = v;
        }
        if let Some(v) = self.onset_threshold {
            k.onset_threshold = v;
        }
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic family of minimum-jerk reach trials with a manifest
    Synth {
        /// Number of simulated users (count)
        #[arg(long, value_name = "N")]
        users: Option<usize>,
        /// Trials per user (count)
        #[arg(long, value_name = "N")]
        trials: Option<usize>,
        /// Gaussian position noise per axis (m)
        #[arg(long, value_name = "M")]
        noise: Option<f64>,
        /// Gaussian timestamp jitter (s)
        #[arg(long, value_name = "S")]
        jitter: Option<f64>,
        /// Per-user constant palm offset, per-axis sigma (m)
        #[arg(long, value_name = "M")]
        user_bias: Option<f64>,
        /// Per-user constant fingertip offsets, per-axis sigma (m)
        #[arg(long, value_name = "M")]
        user_style: Option<f64>,
        /// Per-axis spread of the object finger templates (m)
        #[arg(long, value_name = "M")]
        class_separation: Option<f64>,
        /// Also simulate a resting left hand
        #[arg(long)]
        both_hands: bool,
    },
    /// Summarize a dataset directory and verify it against its manifest
    Inspect {
        /// Dataset directory of *.trial.json files
        dataset: PathBuf,
    },
    /// Per-frame grasp features as CSV (to stdout, or features.csv under --out)
    Features {
        /// A trial file or a dataset directory
        input: PathBuf,
        /// Hands contributing features
        #[arg(long, value_enum)]
        hands: Option<HandsName>,
        #[command(flatten)]
        kin: KinArgs,
    },
    /// Fit the minimum-jerk model on sliding windows of one trial; CSV to stdout or fits.csv under --out
    FitMjt {
        /// A trial file
        trial: PathBuf,
        /// Spacing of window ends (s) [default: 0.25]
        #[arg(long, value_name = "S")]
        stride: Option<f64>,
        /// Shortest window (s) [default: 0.125]
        #[arg(long, value_name = "S")]
        min_len: Option<f64>,
        #[command(flatten)]
        kin: KinArgs,
    },
    /// Train a grasp position and time predictor
    TrainReach {
        /// Dataset directory
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ReachModelName,
        /// Training epochs (count)
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Spacing of LSTM-MJT training window ends (s)
        #[arg(long, value_name = "S")]
        stride: Option<f64>,
        /// Trials to train on, from the seeded trial split
        #[arg(long, value_enum, default_value = "train")]
        subset: Subset,
        #[command(flatten)]
        kin: KinArgs,
    },
    /// Train a grasp posture predictor
    TrainPosture {
        /// Dataset directory
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: PostureModelName,
        /// Temporal smoothness weight of lstm-temporal (dimensionless) [default: 0.1]
        #[arg(long, value_name = "WEIGHT")]
        lambda: Option<f64>,
        /// Training epochs (count)
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Trials to train on, from the seeded trial split
        #[arg(long, value_enum, default_value = "train")]
        subset: Subset,
    },
    /// Cross-validate object, size and task classifiers on per-frame features
    Classify {
        /// Dataset directory
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Classifier [default: every classifier in the config]
        #[arg(long, value_enum)]
        classifier: Option<ClassifierName>,
        /// Cross-validation scheme [default: every scheme in the config]
        #[arg(long, value_enum)]
        cv: Option<CvName>,
        /// Frame offsets before grasp, nearest..farthest (frames, negative) [default: -1..-10]
        #[arg(long, value_name = "A..B", allow_hyphen_values = true)]
        window: Option<String>,
        /// Hands contributing features
        #[arg(long, value_enum)]
        hands: Option<HandsName>,
        /// Folds of k-fold cross-validation (count) [default: 5]
        #[arg(long, value_name = "K")]
        folds: Option<usize>,
        #[command(flatten)]
        kin: KinArgs,
    },
    /// Evaluate trained models on sliding windows; one CSV per model
    Evaluate {
        /// Dataset directory
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Model directory written by train-reach or train-posture (repeatable)
        #[arg(long = "model", value_name = "DIR", required = true)]
        models: Vec<PathBuf>,
        /// Trials to evaluate, from the seeded trial split
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
    },
    /// Curves with bootstrap intervals, SVG charts and tables from evaluation outputs
    Report {
        /// Evaluation directory (repeatable)
        #[arg(long = "eval", value_name = "DIR", required = true)]
        evals: Vec<PathBuf>,
        /// Classification directory
        #[arg(long, value_name = "DIR")]
        classify: Option<PathBuf>,
        /// Models that must be present, as family/TAG, e.g. reach/LSTM (repeatable)
        #[arg(long = "require", value_name = "FAMILY/TAG")]
        require: Vec<String>,
    },
    /// Synthesize or load data, train and evaluate every model, classify and report
    Pipeline {
        /// Use this dataset directory instead of synthesizing one
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli.global, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
