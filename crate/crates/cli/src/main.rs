use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use semitrack_cli::config::{Ablation, Phase, RunConfig, TrackMode};
use semitrack_cli::{cmd_eval, cmd_gen, cmd_track, cmd_train};

/// Instance-tracking experiments: synthetic data, embedding training,
/// online tracking, and evaluation.
#[derive(Parser)]
#[command(name = "semitrack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; each overrides one config field.
#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<String>,
    /// Global seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact name prefix (overrides the command's default).
    #[arg(long)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset splits and the flattened image dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of labeled training sequences.
        #[arg(long)]
        train_sequences: Option<usize>,
        /// Number of unlabeled sequences.
        #[arg(long)]
        unlabeled_sequences: Option<usize>,
        /// Number of held-out test sequences.
        #[arg(long)]
        test_sequences: Option<usize>,
    },
    /// Train the embedding model and write a checkpoint plus the loss curve.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (defaults to the output directory).
        #[arg(long)]
        dataset: Option<String>,
        /// Training phases to run.
        #[arg(long, value_enum)]
        phase: Option<Phase>,
        /// Ablation ladder rung; overrides phase and loss weights.
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// Optimizer steps for the supervised phase.
        #[arg(long)]
        steps: Option<usize>,
        /// Starting checkpoint (for correspondence-only runs).
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Track a dataset split with a trained checkpoint.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
        /// Checkpoint to load.
        #[arg(long)]
        checkpoint: Option<String>,
        /// Sequence split to track.
        #[arg(long)]
        split: Option<String>,
        /// Association mode.
        #[arg(long, value_enum)]
        mode: Option<TrackMode>,
        /// Test-time adaptation steps per sequence.
        #[arg(long)]
        ttt_iters: Option<usize>,
        /// Average row and column softmax when matching (true/false).
        #[arg(long)]
        bi_softmax: Option<bool>,
        /// Fuse confidence/IoU/category terms into match scores (true/false).
        #[arg(long)]
        postprocess: Option<bool>,
        /// Write one PPM render per frame, masks colored by track id.
        #[arg(long)]
        render: bool,
    },
    /// Score track runs against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
        /// Track artifacts to score (repeatable).
        #[arg(long)]
        tracks: Vec<String>,
        /// Score every sequence of this track-run label.
        #[arg(long)]
        track_label: Option<String>,
        /// Shared experiment table to append the summary row to.
        #[arg(long)]
        table: Option<String>,
    },
}

fn apply_common(cfg: &mut RunConfig, common: &Common) {
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(label) = &common.label {
        cfg.label = Some(label.clone());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen {
            common,
            train_sequences,
            unlabeled_sequences,
            test_sequences,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if let Some(n) = train_sequences {
                cfg.gen.n_train = n;
            }
            if let Some(n) = unlabeled_sequences {
                cfg.gen.n_unlabeled = n;
            }
            if let Some(n) = test_sequences {
                cfg.gen.n_test = n;
            }
            cmd_gen(&cfg)?
        }
        Command::Train {
            common,
            dataset,
            phase,
            ablation,
            steps,
            checkpoint,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if dataset.is_some() {
                cfg.train_options.dataset = dataset;
            }
            if let Some(p) = phase {
                cfg.train_options.phase = p;
            }
            if ablation.is_some() {
                cfg.train_options.ablation = ablation;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if checkpoint.is_some() {
                cfg.train_options.checkpoint_in = checkpoint;
            }
            cmd_train(&cfg)?
        }
        Command::Track {
            common,
            dataset,
            checkpoint,
            split,
            mode,
            ttt_iters,
            bi_softmax,
            postprocess,
            render,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if dataset.is_some() {
                cfg.track_options.dataset = dataset;
            }
            if checkpoint.is_some() {
                cfg.track_options.checkpoint = checkpoint;
            }
            if let Some(s) = split {
                cfg.track_options.split = s;
            }
            if let Some(m) = mode {
                cfg.track_options.mode = m;
            }
            if let Some(n) = ttt_iters {
                cfg.track_options.ttt_iters = n;
            }
            if let Some(b) = bi_softmax {
                cfg.tracker.use_bi_softmax = b;
            }
            if let Some(p) = postprocess {
                cfg.tracker.use_postprocess = p;
            }
            if render {
                cfg.track_options.render = true;
            }
            cmd_track(&cfg)?
        }
        Command::Eval {
            common,
            dataset,
            tracks,
            track_label,
            table,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if dataset.is_some() {
                cfg.eval_options.dataset = dataset;
            }
            if !tracks.is_empty() {
                cfg.eval_options.tracks = tracks;
            }
            if track_label.is_some() {
                cfg.eval_options.track_label = track_label;
            }
            if table.is_some() {
                cfg.eval_options.table = table;
            }
            cmd_eval(&cfg)?
        }
    };
    println!("wrote {}", outcome.manifest_path.display());
    Ok(())
}
