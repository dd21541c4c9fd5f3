//! The four commands: `gen`, `train`, `track`, `eval`.
//!
//! Every command follows the same shape: resolve inputs (checksummed into
//! the provenance block), compute, write each artifact atomically with the
//! provenance embedded, validate everything written by reading it back, and
//! only then write the manifest. A failed run therefore never leaves a
//! manifest behind, and a rerun with the same config and seed reproduces
//! every byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use semitrack_core::formats::{
    self, Artifact, Checkpoint, DetectionFile, FileEntry, ImageDatasetFile, Manifest, Provenance,
    SequenceFile, TrackFile, SCHEMA_VERSION,
};
use semitrack_core::metrics::{assemble_pred_tracks, evaluate, EvalReport, FrameObject, GtTrack};
use semitrack_core::model::{
    test_time_adapt, train_correspondence, train_supervised, CurvePoint, HeadConfig, LabeledFrame,
    TrackModel,
};
use semitrack_core::synth::{
    generate_sequence, oracle_detections_model, to_image_dataset, SceneSpec, SynthSequence,
};
use semitrack_core::tracker::{track_sequence, track_sequence_spatial, Detection, TrackResult};

use crate::config::{Ablation, Phase, RunConfig, TrackMode};

/// What a command produced; the manifest path is the last file written.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn file_entry(path: &Path) -> Result<FileEntry> {
    Ok(FileEntry {
        path: path.to_string_lossy().into_owned(),
        sha256: formats::file_sha256(path)
            .with_context(|| format!("hashing {}", path.display()))?,
    })
}

fn provenance(command: &str, cfg: &RunConfig, inputs: Vec<FileEntry>) -> Result<Provenance> {
    Ok(Provenance {
        command: command.into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).context("serializing config echo")?,
        inputs,
    })
}

/// One line of provenance for CSV artifacts (as a `#` comment) and PPM
/// headers: command, seed, config hash, and each input's hash.
fn provenance_comment(p: &Provenance) -> String {
    let config_sha = formats::sha256_hex(p.config.to_string().as_bytes());
    let inputs: Vec<String> = p
        .inputs
        .iter()
        .map(|e| format!("{}:{}", e.path, e.sha256))
        .collect();
    format!(
        "# provenance command={} seed={} config_sha256={} inputs={}",
        p.command,
        p.seed,
        config_sha,
        if inputs.is_empty() {
            "-".to_string()
        } else {
            inputs.join(",")
        }
    )
}

struct ArtifactWriter {
    out_dir: PathBuf,
    provenance: Provenance,
    outputs: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new(cfg: &RunConfig, command: &str, inputs: Vec<FileEntry>) -> Result<Self> {
        let out_dir = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output dir {}", out_dir.display()))?;
        Ok(Self {
            out_dir,
            provenance: provenance(command, cfg, inputs)?,
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, payload: T) -> Result<PathBuf> {
        let path = self.path(name);
        let artifact = Artifact::new(self.provenance.clone(), payload);
        formats::write_json_atomic(&path, &artifact)
            .with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn write_csv(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let content = format!("{}\n{}", provenance_comment(&self.provenance), body);
        formats::write_atomic(&path, content.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        formats::write_atomic(&path, bytes)
            .with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Re-reads every JSON output as the given type would be too rigid;
    /// instead each artifact must at least parse and carry the schema
    /// version. Blobs are decoded by their own readers at write time.
    fn validate_outputs(&self) -> Result<()> {
        for path in &self.outputs {
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                let value: serde_json::Value = formats::read_json(path)
                    .with_context(|| format!("validating {}", path.display()))?;
                let version = value.get("schema_version").and_then(|v| v.as_u64());
                if version != Some(SCHEMA_VERSION as u64) {
                    bail!("artifact {} missing schema_version", path.display());
                }
            }
        }
        Ok(())
    }

    /// Validates outputs, then closes the run with its manifest.
    fn finish(mut self, label: &str) -> Result<CommandOutcome> {
        self.validate_outputs()?;
        let outputs = self
            .outputs
            .iter()
            .map(|p| file_entry(p))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            provenance: self.provenance.clone(),
            outputs,
        };
        let path = self.path(&format!("{label}.manifest.json"));
        formats::write_json_atomic(&path, &manifest)
            .with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(CommandOutcome {
            manifest_path: path,
            manifest,
        })
    }
}

fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    formats::read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn dataset_dir(cfg: &RunConfig, explicit: &Option<String>) -> PathBuf {
    PathBuf::from(explicit.as_deref().unwrap_or(&cfg.out_dir))
}

fn head_config(cfg: &RunConfig) -> HeadConfig {
    HeadConfig {
        in_dim: cfg.scene.feature_dim,
        hidden: cfg.head.hidden,
        out_dim: cfg.head.out_dim,
        tanh: cfg.head.tanh,
    }
}

/// Loads one sequence (annotations + feature blob) from the dataset dir.
fn load_sequence(dir: &Path, stem: &str) -> Result<SynthSequence> {
    let ann_path = dir.join(format!("{stem}.seq.json"));
    let artifact: Artifact<SequenceFile> = read_artifact(&ann_path)?;
    let blob_path = dir.join(&artifact.payload.feature_blob);
    let bytes = fs::read(&blob_path).with_context(|| format!("reading {}", blob_path.display()))?;
    let features = formats::decode_feature_blob(&bytes)
        .with_context(|| format!("decoding {}", blob_path.display()))?;
    artifact
        .payload
        .into_sequence(features)
        .with_context(|| format!("rebuilding sequence {stem}"))
}

/// Stems of every `<split>_NNN.seq.json` in the dataset dir, sorted.
fn split_stems(dir: &Path, split: &str) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    let entries =
        fs::read_dir(dir).with_context(|| format!("listing dataset dir {}", dir.display()))?;
    let prefix = format!("{split}_");
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".seq.json") {
            if stem.starts_with(&prefix) && stem[prefix.len()..].chars().all(|c| c.is_ascii_digit())
            {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        bail!("no {split} sequences found in {}", dir.display());
    }
    Ok(stems)
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

/// Writes the three dataset splits plus the flattened image dataset.
pub fn cmd_gen(cfg: &RunConfig) -> Result<CommandOutcome> {
    let label = cfg.label.clone().unwrap_or_else(|| "dataset".into());
    let mut writer = ArtifactWriter::new(cfg, "gen", Vec::new())?;

    let mut train_seqs = Vec::new();
    let splits: [(&str, usize, usize, &[f64]); 4] = [
        ("train", cfg.gen.n_train, cfg.gen.train_length, &[]),
        (
            "unlabeled",
            cfg.gen.n_unlabeled,
            cfg.gen.unlabeled_length,
            &cfg.gen.unlabeled_drift,
        ),
        (
            "test",
            cfg.gen.n_test,
            cfg.gen.test_length,
            &cfg.gen.test_drift,
        ),
        ("test_clean", cfg.gen.n_test_clean, cfg.gen.test_length, &[]),
    ];
    for (salt, (split, count, length, drift)) in splits.iter().enumerate() {
        for i in 0..*count {
            let spec = SceneSpec {
                drift: drift.to_vec(),
                seed: cfg.derive_seed((salt as u64) << 32 | i as u64),
                ..cfg.scene.clone()
            };
            let seq = generate_sequence(&spec, *length)
                .with_context(|| format!("generating {split} sequence {i}"))?;
            let stem = format!("{split}_{i:03}");
            let blob_name = format!("{stem}.features.bin");
            let blob = formats::encode_feature_blob(&seq.feature_frames())?;
            writer.write_bytes(&blob_name, &blob)?;
            writer.write_json(
                &format!("{stem}.seq.json"),
                SequenceFile::from_sequence(&seq, &spec, blob_name),
            )?;
            if *split == "train" {
                train_seqs.push(seq);
            }
        }
    }

    if cfg.gen.n_train > 0 {
        let images = to_image_dataset(&train_seqs, cfg.derive_seed(u64::MAX))?;
        let blob_name = "images.features.bin".to_string();
        let feats: Vec<_> = images.iter().map(|im| im.features.clone()).collect();
        writer.write_bytes(&blob_name, &formats::encode_feature_blob(&feats)?)?;
        writer.write_json(
            "images.json",
            ImageDatasetFile::from_images(&images, blob_name),
        )?;
    }

    writer.finish(&label)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn load_image_frames(dir: &Path) -> Result<(Vec<LabeledFrame>, Vec<FileEntry>)> {
    let ann_path = dir.join("images.json");
    let artifact: Artifact<ImageDatasetFile> = read_artifact(&ann_path)?;
    let blob_path = dir.join(&artifact.payload.feature_blob);
    let bytes = fs::read(&blob_path).with_context(|| format!("reading {}", blob_path.display()))?;
    let features = formats::decode_feature_blob(&bytes)?;
    let images = artifact.payload.into_images(features)?;
    let frames = images
        .into_iter()
        .map(|im| LabeledFrame {
            features: im.features,
            labels: im.labels,
        })
        .collect();
    Ok((
        frames,
        vec![file_entry(&ann_path)?, file_entry(&blob_path)?],
    ))
}

fn load_split_frames(dir: &Path, split: &str) -> Result<(Vec<Vec<LabeledFrame>>, Vec<FileEntry>)> {
    let mut sequences = Vec::new();
    let mut entries = Vec::new();
    for stem in split_stems(dir, split)? {
        let seq = load_sequence(dir, &stem)?;
        entries.push(file_entry(&dir.join(format!("{stem}.seq.json")))?);
        entries.push(file_entry(&dir.join(format!("{stem}.features.bin")))?);
        sequences.push(seq.labeled_frames());
    }
    Ok((sequences, entries))
}

/// Trains per the selected phase or ablation rung and writes a checkpoint
/// plus the loss curve.
pub fn cmd_train(cfg: &RunConfig) -> Result<CommandOutcome> {
    let dataset = dataset_dir(cfg, &cfg.train_options.dataset);
    let ablation = cfg.train_options.ablation;
    let label = cfg.label.clone().unwrap_or_else(|| match ablation {
        Some(a) => a.label().to_string(),
        None => match cfg.train_options.phase {
            Phase::Supervised => "supervised".into(),
            Phase::Correspondence => "correspondence".into(),
            Phase::Both => "both".into(),
        },
    });

    // The rung dictates phases and loss weights; without one, the config's
    // phase and weights apply unchanged.
    let (run_supervised, run_correspondence, mut train_cfg) = match ablation {
        Some(Ablation::Baseline) => {
            let mut t = cfg.train;
            t.steps = 0;
            (true, false, t)
        }
        Some(Ablation::Ic) => {
            let mut t = cfg.train;
            t.mu = 0.0;
            (true, false, t)
        }
        Some(Ablation::IcMe) => (true, false, cfg.train),
        Some(Ablation::Full) => (true, true, cfg.train),
        None => match cfg.train_options.phase {
            Phase::Supervised => (true, false, cfg.train),
            Phase::Correspondence => (false, true, cfg.train),
            Phase::Both => (true, true, cfg.train),
        },
    };
    train_cfg.seed = cfg.derive_seed(0x7261_696e);

    let mut inputs = Vec::new();
    let mut curve: Vec<CurvePoint> = Vec::new();

    // Starting point: an explicit checkpoint, or a fresh random init.
    let mut model = match &cfg.train_options.checkpoint_in {
        Some(path) => {
            let path = PathBuf::from(path);
            let artifact: Artifact<Checkpoint> = read_artifact(&path)?;
            inputs.push(file_entry(&path)?);
            artifact.payload.into_model()?
        }
        None => TrackModel::init(head_config(cfg), cfg.head.video_branch, train_cfg.seed)?,
    };

    if run_supervised {
        let (frames, mut image_inputs) = load_image_frames(&dataset)?;
        inputs.append(&mut image_inputs);
        if train_cfg.steps > 0 {
            let (trained, mut points) =
                train_supervised(&model, &frames, &train_cfg).context("supervised training")?;
            model = trained;
            curve.append(&mut points);
        }
    }
    if run_correspondence {
        let (sequences, mut seq_inputs) = load_split_frames(&dataset, "unlabeled")?;
        inputs.append(&mut seq_inputs);
        let mut corr_cfg = train_cfg;
        corr_cfg.seed = cfg.derive_seed(0x6379_636c);
        let offset = curve.last().map(|p| p.step + 1).unwrap_or(0);
        let (trained, points) = train_correspondence(&model, &sequences, &corr_cfg)
            .context("correspondence training")?;
        model = trained;
        curve.extend(points.into_iter().map(|mut p| {
            p.step += offset;
            p
        }));
    }

    let mut writer = ArtifactWriter::new(cfg, "train", inputs)?;
    writer.write_json(
        &format!("{label}.checkpoint.json"),
        Checkpoint::from_model(&model, &train_cfg),
    )?;
    writer.write_csv(
        &format!("{label}.loss.csv"),
        &formats::loss_curve_csv(&curve),
    )?;
    writer.finish(&label)
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

/// What one tracked sequence looks like on disk: where its inputs live plus
/// the assignments themselves.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackRunFile {
    /// Dataset stem of the sequence this run tracked.
    pub sequence: String,
    /// Sibling detections artifact consumed by the tracker.
    pub detections: String,
    pub ttt_iters: usize,
    pub track: TrackFile,
}

fn default_track_label(cfg: &RunConfig) -> String {
    let mut label = match cfg.track_options.mode {
        TrackMode::Spatial => "track-spatial".to_string(),
        TrackMode::Embedding => format!("track-ttt{}", cfg.track_options.ttt_iters),
    };
    if !cfg.tracker.use_bi_softmax {
        label.push_str("-nobisoftmax");
    }
    if cfg.tracker.use_postprocess {
        label.push_str("-post");
    }
    label
}

/// Runs the tracker over every sequence of the chosen split, with optional
/// test-time adaptation, and writes detections + assignments per sequence.
pub fn cmd_track(cfg: &RunConfig) -> Result<CommandOutcome> {
    let dataset = dataset_dir(cfg, &cfg.track_options.dataset);
    let label = cfg
        .label
        .clone()
        .unwrap_or_else(|| default_track_label(cfg));
    let needs_model =
        cfg.track_options.mode == TrackMode::Embedding || cfg.track_options.ttt_iters > 0;

    let mut inputs = Vec::new();
    let model = if needs_model {
        let ckpt_path = match &cfg.track_options.checkpoint {
            Some(p) => PathBuf::from(p),
            None => bail!("track: no checkpoint configured"),
        };
        let artifact: Artifact<Checkpoint> = read_artifact(&ckpt_path)?;
        inputs.push(file_entry(&ckpt_path)?);
        let train_echo = artifact.payload.train;
        Some((artifact.payload.into_model()?, train_echo))
    } else {
        None
    };

    let stems = split_stems(&dataset, &cfg.track_options.split)?;
    for stem in &stems {
        inputs.push(file_entry(&dataset.join(format!("{stem}.seq.json")))?);
        inputs.push(file_entry(&dataset.join(format!("{stem}.features.bin")))?);
    }

    let mut writer = ArtifactWriter::new(cfg, "track", inputs)?;
    for (i, stem) in stems.iter().enumerate() {
        let seq = load_sequence(&dataset, stem)?;
        let detections: Vec<Vec<Detection>> = match &model {
            Some((m, train_echo)) => {
                let adapted;
                let current = if cfg.track_options.ttt_iters > 0 {
                    let mut ttt_cfg = *train_echo;
                    ttt_cfg.learning_rate = cfg.train.learning_rate;
                    ttt_cfg.temperature = cfg.train.temperature;
                    ttt_cfg.chain_k = cfg.train.chain_k;
                    ttt_cfg.ttt_iters = cfg.track_options.ttt_iters;
                    ttt_cfg.seed = cfg.derive_seed(0x7474_7400 | i as u64);
                    adapted = test_time_adapt(m, &seq.labeled_frames(), &ttt_cfg)
                        .with_context(|| format!("test-time adaptation on {stem}"))?;
                    &adapted
                } else {
                    m
                };
                oracle_detections_model(&seq, current)?
            }
            // The spatial baseline never looks at embeddings; a constant
            // placeholder keeps the detection schema intact.
            None => oracle_placeholder_detections(&seq),
        };

        let det_name = format!("{label}.{stem}.detections.json");
        writer.write_json(&det_name, DetectionFile::from_detections(&detections))?;

        let result: TrackResult = match cfg.track_options.mode {
            TrackMode::Embedding => {
                track_sequence(&detections, &cfg.tracker)
                    .with_context(|| format!("tracking {stem}"))?
                    .0
            }
            TrackMode::Spatial => track_sequence_spatial(&detections, &cfg.spatial)
                .with_context(|| format!("tracking {stem}"))?,
        };

        writer.write_json(
            &format!("{label}.{stem}.tracks.json"),
            TrackRunFile {
                sequence: stem.clone(),
                detections: det_name,
                ttt_iters: cfg.track_options.ttt_iters,
                track: TrackFile::from_result(&result),
            },
        )?;
        writer.write_csv(
            &format!("{label}.{stem}.summary.csv"),
            &formats::track_summary_csv(&result),
        )?;

        if cfg.track_options.render {
            render_frames(&mut writer, &label, stem, &seq, &detections, &result, cfg)?;
        }
    }
    writer.finish(&label)
}

/// Unit-vector embeddings for runs that never read them.
fn oracle_placeholder_detections(seq: &SynthSequence) -> Vec<Vec<Detection>> {
    seq.frames
        .iter()
        .map(|frame| {
            frame
                .objects
                .iter()
                .map(|o| Detection {
                    category: o.category,
                    score: 1.0,
                    bbox: o.bbox,
                    mask: o.mask.clone(),
                    embedding: vec![1.0],
                })
                .collect()
        })
        .collect()
}

fn render_frames(
    writer: &mut ArtifactWriter,
    label: &str,
    stem: &str,
    seq: &SynthSequence,
    detections: &[Vec<Detection>],
    result: &TrackResult,
    cfg: &RunConfig,
) -> Result<()> {
    let comment = provenance_comment(&writer.provenance);
    for (t, assignments) in result.frames.iter().enumerate() {
        let objects: Vec<(u64, &semitrack_core::grid::Mask)> = assignments
            .iter()
            .map(|a| (a.track_id, &detections[t][a.detection_idx].mask))
            .collect();
        let ppm = formats::render_ppm(seq.grid_size, cfg.track_options.render_scale, &objects)?;
        // PPM headers allow `#` comments right after the magic line.
        let mut with_comment = Vec::with_capacity(ppm.len() + comment.len() + 1);
        with_comment.extend_from_slice(b"P6\n");
        with_comment.extend_from_slice(comment.as_bytes());
        with_comment.push(b'\n');
        with_comment.extend_from_slice(&ppm[3..]);
        writer.write_bytes(&format!("{label}.{stem}.f{t:04}.ppm"), &with_comment)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Scores per sequence plus their mean.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRunFile {
    pub per_sequence: Vec<SequenceScore>,
    pub mean: EvalReport,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SequenceScore {
    pub sequence: String,
    pub report: EvalReport,
}

fn mean_reports(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut class_sums: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for r in reports {
        for c in &r.per_class {
            let e = class_sums.entry(c.category).or_insert((0.0, 0));
            e.0 += c.ap;
            e.1 += 1;
        }
    }
    EvalReport {
        ap: avg(|r| r.ap),
        ap50: avg(|r| r.ap50),
        ap75: avg(|r| r.ap75),
        ar1: avg(|r| r.ar1),
        ar10: avg(|r| r.ar10),
        mota: avg(|r| r.mota),
        per_class: class_sums
            .into_iter()
            .map(
                |(category, (sum, count))| semitrack_core::metrics::ClassAp {
                    category,
                    ap: sum / count as f64,
                },
            )
            .collect(),
    }
}

/// Rebuilds predicted tracks from a track artifact plus its detections.
fn pred_tracks_for(
    run: &TrackRunFile,
    detections: &[Vec<Detection>],
) -> Result<Vec<semitrack_core::metrics::PredTrack>> {
    let result = run.track.into_result()?;
    if result.frames.len() != detections.len() {
        bail!(
            "track run covers {} frames but detections have {}",
            result.frames.len(),
            detections.len()
        );
    }
    let frames: Vec<Vec<FrameObject>> = result
        .frames
        .iter()
        .enumerate()
        .map(|(t, assignments)| {
            assignments
                .iter()
                .map(|a| {
                    let d = &detections[t][a.detection_idx];
                    FrameObject {
                        track_id: a.track_id,
                        category: d.category,
                        confidence: d.score,
                        mask: d.mask.clone(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(assemble_pred_tracks(&frames))
}

/// Scores track runs against ground truth and writes the report JSON plus a
/// one-row summary CSV (optionally appending to a shared experiment table).
pub fn cmd_eval(cfg: &RunConfig) -> Result<CommandOutcome> {
    let dataset = dataset_dir(cfg, &cfg.eval_options.dataset);
    let label = cfg.label.clone().unwrap_or_else(|| "eval".into());

    // Collect track artifacts: explicit paths, or every sequence of a run
    // label in out_dir.
    let track_paths: Vec<PathBuf> = if !cfg.eval_options.tracks.is_empty() {
        cfg.eval_options.tracks.iter().map(PathBuf::from).collect()
    } else {
        let run_label = cfg
            .eval_options
            .track_label
            .clone()
            .ok_or_else(|| anyhow::anyhow!("eval: set eval_options.tracks or track_label"))?;
        let dir = PathBuf::from(&cfg.out_dir);
        let mut paths = Vec::new();
        for entry in
            fs::read_dir(&dir).with_context(|| format!("listing out dir {}", dir.display()))?
        {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.starts_with(&format!("{run_label}.")) && name.ends_with(".tracks.json") {
                paths.push(dir.join(name));
            }
        }
        paths.sort();
        if paths.is_empty() {
            bail!(
                "eval: no track artifacts for label {run_label} in {}",
                dir.display()
            );
        }
        paths
    };

    let mut inputs = Vec::new();
    let mut scores = Vec::new();
    for path in &track_paths {
        let artifact: Artifact<TrackRunFile> = read_artifact(path)?;
        inputs.push(file_entry(path)?);
        let run = artifact.payload;

        let det_path = path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&run.detections);
        let det_artifact: Artifact<DetectionFile> = read_artifact(&det_path)?;
        inputs.push(file_entry(&det_path)?);
        let detections = det_artifact.payload.into_detections()?;

        let gt_path = dataset.join(format!("{}.seq.json", run.sequence));
        let seq = load_sequence(&dataset, &run.sequence)?;
        inputs.push(file_entry(&gt_path)?);
        let gts: Vec<GtTrack> = seq.gt_tracks();

        let preds = pred_tracks_for(&run, &detections)?;
        let report = evaluate(&preds, &gts).with_context(|| format!("scoring {}", run.sequence))?;
        scores.push(SequenceScore {
            sequence: run.sequence,
            report,
        });
    }

    let mean = mean_reports(&scores.iter().map(|s| s.report.clone()).collect::<Vec<_>>());
    let table_row = (label.clone(), mean.clone());

    let mut writer = ArtifactWriter::new(cfg, "eval", inputs)?;
    writer.write_json(
        &format!("{label}.eval.json"),
        EvalRunFile {
            per_sequence: scores,
            mean,
        },
    )?;
    writer.write_csv(
        &format!("{label}.eval.csv"),
        &formats::eval_table_csv(std::slice::from_ref(&table_row)),
    )?;

    // A shared table accumulates one row per evaluated run.
    if let Some(table) = &cfg.eval_options.table {
        let path = PathBuf::from(table);
        let mut content = match fs::read_to_string(&path) {
            Ok(existing) => existing,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                formats::eval_table_csv(&[]).to_string()
            }
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let row = formats::eval_table_csv(std::slice::from_ref(&table_row));
        content.push_str(row.lines().nth(1).unwrap_or_default());
        content.push('\n');
        formats::write_atomic(&path, content.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        writer.outputs.push(path);
    }

    writer.finish(&label)
}
