//! Run configuration: one JSON file covering every command, with
//! command-line flags overriding individual fields (flags win).

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use semitrack_core::model::TrainConfig;
use semitrack_core::synth::SceneSpec;
use semitrack_core::tracker::{SpatialConfig, TrackerConfig};

/// Which training phases a `train` invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Contrastive/center training on labeled images only.
    Supervised,
    /// Cycle-consistency training on unlabeled sequences, starting from a
    /// checkpoint.
    Correspondence,
    /// Supervised, then correspondence.
    Both,
}

/// Ablation ladder rungs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// No embedding training; tracking falls back to spatial matching.
    Baseline,
    /// Instance-contrastive training only (entropy weight forced to zero).
    Ic,
    /// Instance-contrastive plus merge-entropy regularization.
    IcMe,
    /// IC + ME supervised phase, then correspondence on unlabeled video.
    Full,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Ic => "ic",
            Ablation::IcMe => "ic-me",
            Ablation::Full => "full",
        }
    }
}

/// How detections are associated across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrackMode {
    /// Embedding similarity through the memory bank.
    Embedding,
    /// Nearest-center spatial matching with category gating.
    Spatial,
}

/// Dataset shape for `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptions {
    /// Labeled training sequences (flattened into the image dataset).
    pub n_train: usize,
    /// Unlabeled sequences for correspondence training.
    pub n_unlabeled: usize,
    /// Held-out test sequences with full ground truth.
    pub n_test: usize,
    pub train_length: usize,
    pub unlabeled_length: usize,
    pub test_length: usize,
    /// Per-frame feature drift applied to the unlabeled split (the
    /// image-to-video domain gap). Empty = none.
    pub unlabeled_drift: Vec<f64>,
    /// Per-frame feature drift applied to the test split. Empty = none.
    pub test_drift: Vec<f64>,
    /// Extra drift-free test sequences (`test_clean_*`), for measuring
    /// regressions off the shifted domain.
    pub n_test_clean: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            n_train: 4,
            n_unlabeled: 3,
            n_test: 4,
            train_length: 24,
            unlabeled_length: 30,
            test_length: 24,
            unlabeled_drift: Vec::new(),
            test_drift: Vec::new(),
            n_test_clean: 0,
        }
    }
}

/// Embedding head shape for `train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadOptions {
    pub hidden: Option<usize>,
    pub out_dim: usize,
    pub tanh: bool,
    /// Give the model a separate video-space output layer over the shared
    /// trunk instead of reusing the image head for tracking.
    pub video_branch: bool,
}

impl Default for HeadOptions {
    fn default() -> Self {
        Self {
            hidden: Some(16),
            out_dim: 8,
            tanh: true,
            video_branch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub phase: Phase,
    /// When set, overrides phase and loss weights to reproduce one ladder
    /// rung: baseline / ic / ic-me / full.
    pub ablation: Option<Ablation>,
    /// Directory holding the generated dataset; defaults to `out_dir`.
    pub dataset: Option<String>,
    /// Starting checkpoint for a correspondence-only run.
    pub checkpoint_in: Option<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            phase: Phase::Supervised,
            ablation: None,
            dataset: None,
            checkpoint_in: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackOptions {
    /// Checkpoint to track with; defaults to `<out_dir>/<mode label>.checkpoint.json`.
    pub checkpoint: Option<String>,
    /// Directory holding the generated dataset; defaults to `out_dir`.
    pub dataset: Option<String>,
    /// Which sequence files to track: files named `<split>_*.seq.json`.
    pub split: String,
    pub mode: TrackMode,
    /// Test-time adaptation steps per sequence before tracking.
    pub ttt_iters: usize,
    /// Write one PPM image per frame, masks colored by track id.
    pub render: bool,
    pub render_scale: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            split: "test".into(),
            mode: TrackMode::Embedding,
            ttt_iters: 0,
            render: false,
            render_scale: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EvalOptions {
    /// Track artifacts to score; empty means every `<track label>.*.tracks.json`
    /// under `out_dir` for the given track label.
    pub tracks: Vec<String>,
    /// Label of the track run to collect when `tracks` is empty.
    pub track_label: Option<String>,
    /// Directory holding the generated dataset; defaults to `out_dir`.
    pub dataset: Option<String>,
    /// Shared experiment table to append this run's summary row to.
    pub table: Option<String>,
}

/// Everything a run needs, echoed verbatim into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Global seed; per-sequence and per-phase seeds derive from it.
    pub seed: u64,
    pub out_dir: String,
    /// Artifact name prefix; each command has a sensible default.
    pub label: Option<String>,
    pub scene: SceneSpec,
    pub gen: GenOptions,
    pub head: HeadOptions,
    pub train: TrainConfig,
    pub train_options: TrainOptions,
    pub tracker: TrackerConfig,
    pub spatial: SpatialConfig,
    pub track_options: TrackOptions,
    pub eval_options: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: semitrack_core::formats::SCHEMA_VERSION,
            seed: 0,
            out_dir: "runs".into(),
            label: None,
            scene: SceneSpec::default(),
            gen: GenOptions::default(),
            head: HeadOptions::default(),
            train: TrainConfig::default(),
            train_options: TrainOptions::default(),
            tracker: TrackerConfig::default(),
            spatial: SpatialConfig::default(),
            track_options: TrackOptions::default(),
            eval_options: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes =
                    std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = serde_json::from_slice(&bytes)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Deterministic sub-seed for an independent random stream.
    pub fn derive_seed(&self, salt: u64) -> u64 {
        // SplitMix64 over seed ^ salt: cheap, well-spread, reproducible.
        let mut z = self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_partial_files_fill_in() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);

        let partial: RunConfig =
            serde_json::from_str(r#"{"seed": 9, "scene": {"grid_size": 8}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.scene.grid_size, 8);
        assert_eq!(partial.scene.feature_dim, SceneSpec::default().feature_dim);
        assert_eq!(partial.gen.n_train, GenOptions::default().n_train);
    }

    #[test]
    fn derived_seeds_spread_and_repeat() {
        let cfg = RunConfig {
            seed: 42,
            ..RunConfig::default()
        };
        let a = cfg.derive_seed(1);
        let b = cfg.derive_seed(2);
        assert_ne!(a, b);
        assert_eq!(a, cfg.derive_seed(1));
        let other = RunConfig {
            seed: 43,
            ..RunConfig::default()
        };
        assert_ne!(a, other.derive_seed(1));
    }
}
