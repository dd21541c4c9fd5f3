//! On-disk formats: versioned JSON schemas for annotations, detections,
//! tracks, checkpoints and reports; a small binary container for feature
//! grids; fixed-column CSV emitters; SHA-256 checksums; and atomic writes
//! (temp file + rename) so a crash never leaves a half-written artifact.
//!
//! Masks serialize either as an explicit row-major bit string or as
//! run-length counts (alternating zero/one runs, starting with zeros); both
//! decode back to the same [`Mask`].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{BBox, InstanceLabelGrid, Mask};
use crate::metrics::EvalReport;
use crate::model::{
    CurvePoint, EmbeddingHead, FeatureGrid, HeadConfig, TrackModel, TrainConfig, VideoBranch,
};
use crate::synth::{SceneSpec, SynthFrame, SynthSequence};
use crate::tracker::{Detection, TrackResult};

/// Version stamped into every JSON artifact and the feature blob header.
pub const SCHEMA_VERSION: u32 = 1;

/// Magic bytes opening a feature blob.
pub const BLOB_MAGIC: &[u8; 4] = b"STFB";

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{what}: schema_version {found} unsupported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mask encodings
// ---------------------------------------------------------------------------

/// A serialized mask, as a bit string or as run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum MaskEncoding {
    /// `bits` holds `'0'`/`'1'` characters, row-major.
    Bitlist {
        width: usize,
        height: usize,
        bits: String,
    },
    /// Alternating run lengths of zeros and ones, starting with zeros
    /// (possibly a zero-length first run), row-major.
    Rle {
        width: usize,
        height: usize,
        runs: Vec<usize>,
    },
}

impl MaskEncoding {
    /// Run-length encoding of a mask (the compact default).
    pub fn rle(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in mask.bits() {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        MaskEncoding::Rle {
            width: mask.width(),
            height: mask.height(),
            runs,
        }
    }

    /// Explicit bit-string encoding.
    pub fn bitlist(mask: &Mask) -> Self {
        let bits = mask
            .bits()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        MaskEncoding::Bitlist {
            width: mask.width(),
            height: mask.height(),
            bits,
        }
    }

    pub fn decode(&self) -> Result<Mask> {
        match self {
            MaskEncoding::Bitlist {
                width,
                height,
                bits,
            } => {
                if bits.len() != width * height {
                    return Err(Error::Format(format!(
                        "bitlist has {} chars for {}x{}",
                        bits.len(),
                        width,
                        height
                    )));
                }
                let mut vals = Vec::with_capacity(bits.len());
                for ch in bits.chars() {
                    match ch {
                        '0' => vals.push(false),
                        '1' => vals.push(true),
                        other => return Err(Error::Format(format!("bad bitlist char {other:?}"))),
                    }
                }
                Mask::from_bits(*width, *height, vals)
            }
            MaskEncoding::Rle {
                width,
                height,
                runs,
            } => {
                let mut vals = Vec::with_capacity(width * height);
                let mut current = false;
                for &run in runs {
                    vals.extend(std::iter::repeat_n(current, run));
                    current = !current;
                }
                if vals.len() != width * height {
                    return Err(Error::Format(format!(
                        "rle runs sum to {} for {}x{}",
                        vals.len(),
                        width,
                        height
                    )));
                }
                Mask::from_bits(*width, *height, vals)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Annotations (ground truth / labeled frames)
// ---------------------------------------------------------------------------

/// One instance in a frame annotation. `track_id` is absent for image
/// datasets, which carry no cross-frame identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub track_id: Option<u64>,
    pub category: u32,
    pub mask: MaskEncoding,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: usize,
    pub instances: Vec<InstanceAnnotation>,
}

/// A generated sequence on disk: annotations in JSON, features in a sibling
/// binary blob named by `feature_blob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFile {
    pub schema_version: u32,
    pub spec: SceneSpec,
    pub n_frames: usize,
    pub feature_blob: String,
    pub frames: Vec<FrameAnnotation>,
}

impl SequenceFile {
    pub fn from_sequence(seq: &SynthSequence, spec: &SceneSpec, feature_blob: String) -> Self {
        let frames = seq
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| FrameAnnotation {
                frame_id: t,
                instances: f
                    .objects
                    .iter()
                    .map(|o| InstanceAnnotation {
                        track_id: Some(o.track_id),
                        category: o.category,
                        mask: MaskEncoding::rle(&o.mask),
                        bbox: o.bbox,
                    })
                    .collect(),
            })
            .collect();
        SequenceFile {
            schema_version: SCHEMA_VERSION,
            spec: spec.clone(),
            n_frames: seq.frames.len(),
            feature_blob,
            frames,
        }
    }

    /// Rebuilds the in-memory sequence from annotations plus the decoded
    /// feature grids (one per frame, from the blob).
    pub fn into_sequence(&self, features: Vec<FeatureGrid>) -> Result<SynthSequence> {
        check_version(self.schema_version, "sequence file")?;
        if features.len() != self.frames.len() {
            return Err(Error::Format(format!(
                "sequence has {} annotated frames but {} feature grids",
                self.frames.len(),
                features.len()
            )));
        }
        let grid_size = self.spec.grid_size;
        let mut frames = Vec::with_capacity(self.frames.len());
        for (ann, feat) in self.frames.iter().zip(features) {
            if feat.grid_size != grid_size || feat.dim != self.spec.feature_dim {
                return Err(Error::Format(format!(
                    "frame {}: feature grid {}x{} does not match spec {}x{}",
                    ann.frame_id, feat.grid_size, feat.dim, grid_size, self.spec.feature_dim
                )));
            }
            let mut labels = vec![None; grid_size * grid_size];
            let mut objects = Vec::with_capacity(ann.instances.len());
            for (k, inst) in ann.instances.iter().enumerate() {
                let track_id = inst.track_id.ok_or_else(|| {
                    Error::Format(format!("frame {}: instance without track_id", ann.frame_id))
                })?;
                let mask = inst.mask.decode()?;
                if mask.width() != grid_size || mask.height() != grid_size {
                    return Err(Error::Format(format!(
                        "frame {}: mask {}x{} does not match grid {}",
                        ann.frame_id,
                        mask.width(),
                        mask.height(),
                        grid_size
                    )));
                }
                for (c, &bit) in mask.bits().iter().enumerate() {
                    if bit {
                        if labels[c].is_some() {
                            return Err(Error::Format(format!(
                                "frame {}: overlapping masks at cell {}",
                                ann.frame_id, c
                            )));
                        }
                        labels[c] = Some(k);
                    }
                }
                objects.push(crate::synth::GtObject {
                    track_id,
                    category: inst.category,
                    mask,
                    bbox: inst.bbox,
                });
            }
            let labels = InstanceLabelGrid {
                grid_size,
                labels,
                kept: (0..objects.len()).collect(),
                dropped: Vec::new(),
            };
            frames.push(SynthFrame {
                features: feat,
                labels,
                objects,
            });
        }
        Ok(SynthSequence {
            grid_size,
            feature_dim: self.spec.feature_dim,
            frames,
        })
    }
}

/// A labeled image dataset on disk: per-image instance annotations without
/// track ids, features in a sibling blob (one grid per image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDatasetFile {
    pub schema_version: u32,
    pub grid_size: usize,
    pub feature_dim: usize,
    pub feature_blob: String,
    pub frames: Vec<FrameAnnotation>,
}

impl ImageDatasetFile {
    pub fn from_images(images: &[crate::synth::LabeledImage], feature_blob: String) -> Self {
        let frames = images
            .iter()
            .enumerate()
            .map(|(i, im)| FrameAnnotation {
                frame_id: i,
                instances: (0..im.labels.n_instances())
                    .map(|k| {
                        let mut mask = Mask::new(im.labels.grid_size, im.labels.grid_size);
                        for c in im.labels.cells_of(k) {
                            mask.set(c % im.labels.grid_size, c / im.labels.grid_size, true);
                        }
                        let bbox = mask.bbox().expect("labeled instance has cells");
                        InstanceAnnotation {
                            track_id: None,
                            category: im.categories[k],
                            mask: MaskEncoding::rle(&mask),
                            bbox,
                        }
                    })
                    .collect(),
            })
            .collect();
        let (grid_size, feature_dim) = images
            .first()
            .map(|im| (im.features.grid_size, im.features.dim))
            .unwrap_or((0, 0));
        ImageDatasetFile {
            schema_version: SCHEMA_VERSION,
            grid_size,
            feature_dim,
            feature_blob,
            frames,
        }
    }

    pub fn into_images(
        &self,
        features: Vec<FeatureGrid>,
    ) -> Result<Vec<crate::synth::LabeledImage>> {
        check_version(self.schema_version, "image dataset")?;
        if features.len() != self.frames.len() {
            return Err(Error::Format(format!(
                "image dataset has {} annotations but {} feature grids",
                self.frames.len(),
                features.len()
            )));
        }
        let mut out = Vec::with_capacity(self.frames.len());
        for (ann, feat) in self.frames.iter().zip(features) {
            let g = self.grid_size;
            if feat.grid_size != g || feat.dim != self.feature_dim {
                return Err(Error::Format(format!(
                    "image {}: feature grid shape mismatch",
                    ann.frame_id
                )));
            }
            let mut labels = vec![None; g * g];
            let mut categories = Vec::with_capacity(ann.instances.len());
            for (k, inst) in ann.instances.iter().enumerate() {
                let mask = inst.mask.decode()?;
                for (c, &bit) in mask.bits().iter().enumerate() {
                    if bit {
                        if labels[c].is_some() {
                            return Err(Error::Format(format!(
                                "image {}: overlapping instance masks",
                                ann.frame_id
                            )));
                        }
                        labels[c] = Some(k);
                    }
                }
                categories.push(inst.category);
            }
            let labels = InstanceLabelGrid {
                grid_size: g,
                labels,
                kept: (0..ann.instances.len()).collect(),
                dropped: Vec::new(),
            };
            out.push(crate::synth::LabeledImage {
                features: feat,
                labels,
                categories,
            });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Provenance and manifests
// ---------------------------------------------------------------------------

/// A path with the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// What produced an artifact: the command, its full config echoed verbatim,
/// the seed, and the checksums of every input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
}

/// A payload wrapped with provenance, the shape of every JSON artifact the
/// command-line tool writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub payload: T,
}

impl<T> Artifact<T> {
    pub fn new(provenance: Provenance, payload: T) -> Self {
        Artifact {
            schema_version: SCHEMA_VERSION,
            provenance,
            payload,
        }
    }
}

/// The closing record of a command run: every output with its checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub outputs: Vec<FileEntry>,
}

// ---------------------------------------------------------------------------
// Feature blob
// ---------------------------------------------------------------------------

// Header: magic, version u32, dtype u32 (0 = f64 little-endian), n_frames
// u32, grid_size u32, dim u32; then frames in order, cells row-major.
const DTYPE_F64_LE: u32 = 0;

/// Serializes feature grids (all the same shape) into the binary container.
pub fn encode_feature_blob(frames: &[FeatureGrid]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("feature blob needs at least one frame".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    for v in [
        SCHEMA_VERSION,
        DTYPE_F64_LE,
        frames.len() as u32,
        first.grid_size as u32,
        first.dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in frames {
        if f.grid_size != first.grid_size || f.dim != first.dim {
            return Err(Error::ShapeMismatch(
                "feature blob frames differ in shape".into(),
            ));
        }
        for x in &f.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a feature blob back into per-frame grids.
pub fn decode_feature_blob(bytes: &[u8]) -> Result<Vec<FeatureGrid>> {
    let header_len = 4 + 5 * 4;
    if bytes.len() < header_len {
        return Err(Error::Format("feature blob shorter than its header".into()));
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Format("feature blob magic mismatch".into()));
    }
    let word = |i: usize| {
        let off = 4 + i * 4;
        u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
    };
    check_version(word(0), "feature blob")?;
    if word(1) != DTYPE_F64_LE {
        return Err(Error::Format(format!(
            "feature blob dtype {} unsupported",
            word(1)
        )));
    }
    let (n_frames, grid_size, dim) = (word(2) as usize, word(3) as usize, word(4) as usize);
    let per_frame = grid_size * grid_size * dim;
    let expected = header_len + n_frames * per_frame * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "feature blob is {} bytes, header promises {}",
            bytes.len(),
            expected
        )));
    }
    let mut frames = Vec::with_capacity(n_frames);
    let mut off = header_len;
    for _ in 0..n_frames {
        let mut data = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            data.push(f64::from_le_bytes(
                bytes[off..off + 8].try_into().expect("8 bytes"),
            ));
            off += 8;
        }
        frames.push(FeatureGrid::from_data(grid_size, dim, data)?);
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Detections and tracks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: u32,
    pub score: f64,
    pub bbox: BBox,
    pub mask: MaskEncoding,
    pub embedding: Vec<f64>,
}

/// Per-frame detections for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub schema_version: u32,
    pub frames: Vec<Vec<DetectionRecord>>,
}

impl DetectionFile {
    pub fn from_detections(frames: &[Vec<Detection>]) -> Self {
        let frames = frames
            .iter()
            .map(|dets| {
                dets.iter()
                    .map(|d| DetectionRecord {
                        category: d.category,
                        score: d.score,
                        bbox: d.bbox,
                        mask: MaskEncoding::rle(&d.mask),
                        embedding: d.embedding.clone(),
                    })
                    .collect()
            })
            .collect();
        DetectionFile {
            schema_version: SCHEMA_VERSION,
            frames,
        }
    }

    pub fn into_detections(&self) -> Result<Vec<Vec<Detection>>> {
        check_version(self.schema_version, "detection file")?;
        self.frames
            .iter()
            .map(|dets| {
                dets.iter()
                    .map(|d| {
                        Ok(Detection {
                            category: d.category,
                            score: d.score,
                            bbox: d.bbox,
                            mask: d.mask.decode()?,
                            embedding: d.embedding.clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame_id: usize,
    pub assignments: Vec<crate::tracker::FrameAssignment>,
}

/// Tracker output for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub schema_version: u32,
    pub frames: Vec<TrackFrame>,
    pub births: Vec<crate::tracker::BirthRecord>,
}

impl TrackFile {
    pub fn from_result(result: &TrackResult) -> Self {
        TrackFile {
            schema_version: SCHEMA_VERSION,
            frames: result
                .frames
                .iter()
                .enumerate()
                .map(|(t, a)| TrackFrame {
                    frame_id: t,
                    assignments: a.clone(),
                })
                .collect(),
            births: result.births.clone(),
        }
    }

    pub fn into_result(&self) -> Result<TrackResult> {
        check_version(self.schema_version, "track file")?;
        for (t, f) in self.frames.iter().enumerate() {
            if f.frame_id != t {
                return Err(Error::Format(format!(
                    "track file frame_id {} at position {}",
                    f.frame_id, t
                )));
            }
        }
        Ok(TrackResult {
            frames: self.frames.iter().map(|f| f.assignments.clone()).collect(),
            births: self.births.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// A trained model plus the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub head: HeadConfig,
    /// Whether a separate video branch exists over the shared trunk.
    pub video_branch: bool,
    pub train: TrainConfig,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &TrackModel, train: &TrainConfig) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            head: model.head.config,
            video_branch: model.video.is_some(),
            train: *train,
            params: model.flat_params(),
        }
    }

    pub fn into_model(&self) -> Result<TrackModel> {
        check_version(self.schema_version, "checkpoint")?;
        let head = EmbeddingHead::new_zero(self.head)?;
        let video = if self.video_branch {
            let h = self.head.hidden.ok_or_else(|| {
                Error::Format("checkpoint has a video branch but no hidden layer".into())
            })?;
            Some(VideoBranch {
                hidden: h,
                out_dim: self.head.out_dim,
                params: vec![0.0; self.head.out_dim * h + self.head.out_dim],
            })
        } else {
            None
        };
        let mut model = TrackModel { head, video };
        model.set_flat_params(&self.params)?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// CSV emitters (fixed columns, deterministic formatting)
// ---------------------------------------------------------------------------

/// Loss curve: `step,loss_total,loss_center,loss_contra,entropy,loss_cyc`.
pub fn loss_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss_total,loss_center,loss_contra,entropy,loss_cyc\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.step, p.total, p.center, p.contra, p.entropy, p.cyc
        ));
    }
    out
}

/// Per-frame tracking summary: `frame,track_count,births`, where
/// `track_count` counts distinct ids assigned in the frame and `births`
/// counts tracks born there.
pub fn track_summary_csv(result: &TrackResult) -> String {
    let mut out = String::from("frame,track_count,births\n");
    for (t, frame) in result.frames.iter().enumerate() {
        let births = result.births.iter().filter(|b| b.frame == t).count();
        out.push_str(&format!("{},{},{}\n", t, frame.len(), births));
    }
    out
}

/// One labeled row per evaluation run, flat enough for experiment tables.
pub fn eval_table_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("run,ap,ap50,ap75,ar1,ar10,mota\n");
    for (label, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            label, r.ap, r.ap50, r.ap75, r.ar1, r.ar10, r.mota
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Hashing and atomic IO
// ---------------------------------------------------------------------------

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes via a temp file in the target directory plus an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline, written atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// A deterministic, well-spread color per track id.
pub fn track_color(track_id: u64) -> [u8; 3] {
    // Walk the hue circle by the golden ratio for maximal separation.
    let hue = (track_id as f64 * 0.618_033_988_749_895) % 1.0;
    let h6 = hue * 6.0;
    let sector = h6 as usize % 6;
    let f = h6 - h6.floor();
    let (v, p, q, t) = (
        230u8,
        46u8,
        (230.0 - f * 184.0) as u8,
        (46.0 + f * 184.0) as u8,
    );
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b]
}

/// Renders one frame's masks into a binary PPM (P6) image, `scale` pixels
/// per cell, each mask colored by its track id over a dark background.
pub fn render_ppm(grid_size: usize, scale: usize, objects: &[(u64, &Mask)]) -> Result<Vec<u8>> {
    if scale == 0 {
        return Err(Error::InvalidArgument(
            "render scale must be positive".into(),
        ));
    }
    let side = grid_size * scale;
    let mut pixels = vec![20u8; side * side * 3];
    for (track_id, mask) in objects {
        if mask.width() != grid_size || mask.height() != grid_size {
            return Err(Error::ShapeMismatch(format!(
                "render: mask {}x{} on grid {}",
                mask.width(),
                mask.height(),
                grid_size
            )));
        }
        let color = track_color(*track_id);
        for y in 0..grid_size {
            for x in 0..grid_size {
                if !mask.get(x, y) {
                    continue;
                }
                for py in y * scale..(y + 1) * scale {
                    for px in x * scale..(x + 1) * scale {
                        let off = (py * side + px) * 3;
                        pixels[off..off + 3].copy_from_slice(&color);
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
