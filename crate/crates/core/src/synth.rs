//! Deterministic synthetic video generator.
//!
//! Scenes are axis-aligned rectangles gliding over a square cell grid with
//! boundary reflection. Each object owns a fixed appearance vector; its
//! cells emit that vector plus i.i.d. Gaussian noise, so appearance
//! difficulty is a dial (noise, and an optional per-frame additive drift
//! that shifts the whole feature field over time without touching geometry
//! or identities). Objects may enter and leave; ground truth is exact:
//! per-frame disjoint masks, boxes, categories, and stable track ids.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{BBox, InstanceLabelGrid, Mask};
use crate::metrics::{assemble_gt_tracks, FrameObject, GtTrack};
use crate::model::{EmbeddingHead, FeatureGrid, LabeledFrame};
use crate::tracker::Detection;

/// How many distinct categories the round-robin assignment cycles through.
pub const N_CATEGORIES: u32 = 3;

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Side length of the square cell grid.
    pub grid_size: usize,
    /// Raw per-cell feature channels.
    pub feature_dim: usize,
    /// Inclusive range for the number of live objects.
    pub n_objects: (usize, usize),
    /// Inclusive speed range in cells per frame.
    pub velocity: (f64, f64),
    /// Standard deviation of per-cell appearance noise.
    pub appearance_noise: f64,
    /// Per-frame probability of one exit event and (independently) one
    /// entry event, clamped so the object count stays within `n_objects`.
    pub entry_exit_prob: f64,
    /// Added to every cell's features once more each frame (frame `t` is
    /// shifted by `t * drift`). Empty means no drift; otherwise the length
    /// must equal `feature_dim`.
    pub drift: Vec<f64>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            grid_size: 16,
            feature_dim: 8,
            n_objects: (3, 6),
            velocity: (0.2, 0.6),
            appearance_noise: 0.1,
            entry_exit_prob: 0.05,
            drift: Vec::new(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid_size {} cannot hold any object",
                self.grid_size
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature_dim must be positive".into(),
            ));
        }
        if self.n_objects.0 < 1 || self.n_objects.0 > self.n_objects.1 {
            return Err(Error::InvalidArgument(format!(
                "bad n_objects range {:?}",
                self.n_objects
            )));
        }
        if !(self.velocity.0 >= 0.0 && self.velocity.1 >= self.velocity.0) {
            return Err(Error::InvalidArgument(format!(
                "bad velocity range {:?}",
                self.velocity
            )));
        }
        if self.appearance_noise.is_nan() || self.appearance_noise < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "appearance_noise {} must be >= 0",
                self.appearance_noise
            )));
        }
        if !(0.0..=1.0).contains(&self.entry_exit_prob) {
            return Err(Error::InvalidArgument(format!(
                "entry_exit_prob {} outside [0, 1]",
                self.entry_exit_prob
            )));
        }
        if !self.drift.is_empty() && self.drift.len() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "drift has {} entries for feature_dim {}",
                self.drift.len(),
                self.feature_dim
            )));
        }
        // Rectangles need room: the largest side we sample must fit, and the
        // maximum object count must fit comfortably for rejection sampling.
        let max_side = max_object_side(self.grid_size);
        if max_side > self.grid_size {
            return Err(Error::InvalidArgument("objects larger than grid".into()));
        }
        let cells = self.grid_size * self.grid_size;
        if self.n_objects.1 * max_side * max_side * 2 > cells {
            return Err(Error::InvalidArgument(format!(
                "{} objects of side up to {} cannot be placed without overlap on a {}x{} grid",
                self.n_objects.1, max_side, self.grid_size, self.grid_size
            )));
        }
        Ok(())
    }
}

fn max_object_side(grid_size: usize) -> usize {
    (grid_size / 5).max(2)
}

/// One object's ground truth in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub track_id: u64,
    pub category: u32,
    pub mask: Mask,
    pub bbox: BBox,
}

/// One generated frame: raw features plus exact ground truth. `labels`
/// indexes into `objects`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub features: FeatureGrid,
    pub labels: InstanceLabelGrid,
    pub objects: Vec<GtObject>,
}

/// A generated video.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub grid_size: usize,
    pub feature_dim: usize,
    pub frames: Vec<SynthFrame>,
}

impl SynthSequence {
    /// Frames paired with their gt cell labels, ready for supervised training.
    pub fn labeled_frames(&self) -> Vec<LabeledFrame> {
        self.frames
            .iter()
            .map(|f| LabeledFrame {
                features: f.features.clone(),
                labels: f.labels.clone(),
            })
            .collect()
    }

    /// Just the feature grids, in order.
    pub fn feature_frames(&self) -> Vec<FeatureGrid> {
        self.frames.iter().map(|f| f.features.clone()).collect()
    }

    /// Ground truth regrouped per track, for evaluation.
    pub fn gt_tracks(&self) -> Vec<GtTrack> {
        let frames: Vec<Vec<FrameObject>> = self
            .frames
            .iter()
            .map(|f| {
                f.objects
                    .iter()
                    .map(|o| FrameObject {
                        track_id: o.track_id,
                        category: o.category,
                        confidence: 1.0,
                        mask: o.mask.clone(),
                    })
                    .collect()
            })
            .collect();
        assemble_gt_tracks(&frames)
    }
}

/// A single labeled frame with cross-frame identity removed.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub features: FeatureGrid,
    pub labels: InstanceLabelGrid,
    /// Category of each labeled instance, aligned with label indices.
    pub categories: Vec<u32>,
}

// Live object state while generating.
#[derive(Debug, Clone)]
struct ObjState {
    track_id: u64,
    category: u32,
    w: usize,
    h: usize,
    // Center position and velocity in cell units.
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    appearance: Vec<f64>,
}

impl ObjState {
    // Integer raster origin, clamped inside the grid.
    fn origin(&self, grid_size: usize) -> (usize, usize) {
        let ix = (self.cx - self.w as f64 / 2.0)
            .round()
            .clamp(0.0, (grid_size - self.w) as f64);
        let iy = (self.cy - self.h as f64 / 2.0)
            .round()
            .clamp(0.0, (grid_size - self.h) as f64);
        (ix as usize, iy as usize)
    }

    fn mask(&self, grid_size: usize) -> Mask {
        let (ix, iy) = self.origin(grid_size);
        let mut m = Mask::new(grid_size, grid_size);
        for y in iy..iy + self.h {
            for x in ix..ix + self.w {
                m.set(x, y, true);
            }
        }
        m
    }

    fn overlaps(&self, other: &ObjState, grid_size: usize) -> bool {
        let (ax, ay) = self.origin(grid_size);
        let (bx, by) = other.origin(grid_size);
        ax < bx + other.w && bx < ax + self.w && ay < by + other.h && by < ay + self.h
    }
}

fn sample_appearance(spec: &SceneSpec, existing: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Keep cluster centers apart so instances stay distinguishable in
    // principle; give up after a bounded number of tries (dense feature
    // spaces make collisions vanishingly rare anyway).
    for _ in 0..64 {
        let v: Vec<f64> = (0..spec.feature_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let min_dist = existing
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if min_dist > 0.5 {
            return v;
        }
    }
    (0..spec.feature_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect()
}

fn sample_object(
    spec: &SceneSpec,
    next_id: &mut u64,
    live: &[ObjState],
    appearances: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Option<ObjState> {
    let max_side = max_object_side(spec.grid_size);
    for _ in 0..200 {
        let w = rng.gen_range(2..=max_side);
        let h = rng.gen_range(2..=max_side);
        let cx = rng.gen_range(w as f64 / 2.0..=spec.grid_size as f64 - w as f64 / 2.0);
        let cy = rng.gen_range(h as f64 / 2.0..=spec.grid_size as f64 - h as f64 / 2.0);
        let speed = rng.gen_range(spec.velocity.0..=spec.velocity.1);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let appearance = sample_appearance(spec, appearances, rng);
        let candidate = ObjState {
            track_id: *next_id,
            category: (*next_id % N_CATEGORIES as u64) as u32,
            w,
            h,
            cx,
            cy,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
            appearance,
        };
        if live.iter().all(|o| !candidate.overlaps(o, spec.grid_size)) {
            *next_id += 1;
            return Some(candidate);
        }
    }
    None
}

// Advance one axis with reflection off the walls, keeping the rectangle's
// extent inside [0, grid_size].
fn reflect_axis(pos: &mut f64, vel: &mut f64, half: f64, size: f64) {
    *pos += *vel;
    for _ in 0..8 {
        if *pos < half {
            *pos = 2.0 * half - *pos;
            *vel = -*vel;
        } else if *pos > size - half {
            *pos = 2.0 * (size - half) - *pos;
            *vel = -*vel;
        } else {
            break;
        }
    }
    *pos = pos.clamp(half, size - half);
}

/// Generates a sequence of `length` frames. Deterministic per spec and seed.
pub fn generate_sequence(spec: &SceneSpec, length: usize) -> Result<SynthSequence> {
    spec.validate()?;
    if length < 1 {
        return Err(Error::InvalidArgument(
            "sequence length must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.appearance_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;

    let mut next_id: u64 = 0;
    let mut live: Vec<ObjState> = Vec::new();
    let mut all_appearances: Vec<Vec<f64>> = Vec::new();
    let initial = rng.gen_range(spec.n_objects.0..=spec.n_objects.1);
    for _ in 0..initial {
        let obj = sample_object(spec, &mut next_id, &live, &all_appearances, &mut rng).ok_or_else(
            || {
                Error::InvalidArgument(
                    "spec infeasible: could not place initial objects without overlap".into(),
                )
            },
        )?;
        all_appearances.push(obj.appearance.clone());
        live.push(obj);
    }

    let mut frames = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            // Motion: objects move one step; a step that would collide with
            // another object's current position is cancelled and the
            // velocity reversed (a bounce), keeping masks disjoint.
            for i in 0..live.len() {
                let mut moved = live[i].clone();
                let size = spec.grid_size as f64;
                reflect_axis(&mut moved.cx, &mut moved.vx, moved.w as f64 / 2.0, size);
                reflect_axis(&mut moved.cy, &mut moved.vy, moved.h as f64 / 2.0, size);
                let collides = live
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != i && moved.overlaps(o, spec.grid_size));
                if collides {
                    live[i].vx = -live[i].vx;
                    live[i].vy = -live[i].vy;
                } else {
                    live[i] = moved;
                }
            }
            // Exit then entry, each with its own coin flip.
            if rng.gen::<f64>() < spec.entry_exit_prob && live.len() > spec.n_objects.0 {
                let gone = rng.gen_range(0..live.len());
                live.remove(gone);
            }
            if rng.gen::<f64>() < spec.entry_exit_prob && live.len() < spec.n_objects.1 {
                if let Some(obj) =
                    sample_object(spec, &mut next_id, &live, &all_appearances, &mut rng)
                {
                    all_appearances.push(obj.appearance.clone());
                    live.push(obj);
                }
            }
        }

        // Rasterize ground truth.
        let mut labels = vec![None; spec.grid_size * spec.grid_size];
        let mut objects = Vec::with_capacity(live.len());
        for (k, obj) in live.iter().enumerate() {
            let mask = obj.mask(spec.grid_size);
            let bbox = mask.bbox().expect("rasterized object is nonempty");
            for (c, &bit) in mask.bits().iter().enumerate() {
                if bit {
                    debug_assert!(labels[c].is_none(), "gt masks must stay disjoint");
                    labels[c] = Some(k);
                }
            }
            objects.push(GtObject {
                track_id: obj.track_id,
                category: obj.category,
                mask,
                bbox,
            });
        }
        let labels = InstanceLabelGrid {
            grid_size: spec.grid_size,
            labels,
            kept: (0..objects.len()).collect(),
            dropped: Vec::new(),
        };

        // Features: per-object appearance + noise on object cells, noise
        // alone on background, plus the accumulated drift everywhere.
        let mut features = FeatureGrid::new(spec.grid_size, spec.feature_dim);
        for c in 0..spec.grid_size * spec.grid_size {
            for d in 0..spec.feature_dim {
                let base = match labels.labels[c] {
                    Some(k) => live[k].appearance[d],
                    None => 0.0,
                };
                let n = if spec.appearance_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let shift = spec.drift.get(d).copied().unwrap_or(0.0) * t as f64;
                features.data[c * spec.feature_dim + d] = base + n + shift;
            }
        }
        frames.push(SynthFrame {
            features,
            labels,
            objects,
        });
    }
    Ok(SynthSequence {
        grid_size: spec.grid_size,
        feature_dim: spec.feature_dim,
        frames,
    })
}

/// Flattens sequences into a shuffled pile of labeled single frames with
/// track identity removed. The shuffle is deterministic in `seed`.
pub fn to_image_dataset(sequences: &[SynthSequence], seed: u64) -> Result<Vec<LabeledImage>> {
    if sequences.is_empty() {
        return Err(Error::InvalidArgument(
            "to_image_dataset: no sequences".into(),
        ));
    }
    let mut images: Vec<LabeledImage> = Vec::new();
    for seq in sequences {
        for frame in &seq.frames {
            images.push(LabeledImage {
                features: frame.features.clone(),
                labels: frame.labels.clone(),
                categories: frame.objects.iter().map(|o| o.category).collect(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    images.shuffle(&mut rng);
    Ok(images)
}

/// Perfect-geometry detections: each gt object becomes a detection with its
/// exact mask and box, confidence 1.0, and an embedding equal to the mean of
/// the head's outputs over the object's labeled cells.
pub fn oracle_detections(seq: &SynthSequence, head: &EmbeddingHead) -> Result<Vec<Vec<Detection>>> {
    if head.config.in_dim != seq.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "head expects {} input dims, sequence has {}",
            head.config.in_dim, seq.feature_dim
        )));
    }
    oracle_detections_with(seq, |f| head.forward(f))
}

/// [`oracle_detections`] in a model's *tracking* embedding space: the video
/// branch over the shared trunk when one exists, the image head otherwise.
pub fn oracle_detections_model(
    seq: &SynthSequence,
    model: &crate::model::TrackModel,
) -> Result<Vec<Vec<Detection>>> {
    oracle_detections_with(seq, |f| model.video_forward(f))
}

fn oracle_detections_with(
    seq: &SynthSequence,
    embed: impl Fn(&FeatureGrid) -> Result<crate::losses::EmbeddingGrid>,
) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let emb = embed(&frame.features)?;
        let mut dets = Vec::with_capacity(frame.objects.len());
        for (k, obj) in frame.objects.iter().enumerate() {
            let cells = frame.labels.cells_of(k);
            if cells.is_empty() {
                return Err(Error::DegenerateInstance(format!(
                    "object {} has no labeled cells",
                    obj.track_id
                )));
            }
            let mut mean = vec![0.0; emb.dim];
            for &c in &cells {
                for (d, m) in mean.iter_mut().enumerate() {
                    *m += emb.cell(c)[d];
                }
            }
            for m in &mut mean {
                *m /= cells.len() as f64;
            }
            dets.push(Detection {
                category: obj.category,
                score: 1.0,
                bbox: obj.bbox,
                mask: obj.mask.clone(),
                embedding: mean,
            });
        }
        out.push(dets);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadConfig;

    fn static_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            velocity: (0.0, 0.0),
            appearance_noise: 0.0,
            entry_exit_prob: 0.0,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn static_scene_repeats_first_frame() {
        let seq = generate_sequence(&static_spec(7), 2).unwrap();
        assert_eq!(seq.frames[0].features.data, seq.frames[1].features.data);
        assert_eq!(seq.frames[0].labels.labels, seq.frames[1].labels.labels);
        assert_eq!(seq.frames[0].objects, seq.frames[1].objects);
    }

    #[test]
    fn no_entry_exit_keeps_object_count_constant() {
        let spec = SceneSpec {
            entry_exit_prob: 0.0,
            seed: 3,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 12).unwrap();
        let n = seq.frames[0].objects.len();
        assert!(seq.frames.iter().all(|f| f.objects.len() == n));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SceneSpec {
            entry_exit_prob: 0.2,
            seed: 11,
            ..SceneSpec::default()
        };
        let a = generate_sequence(&spec, 20).unwrap();
        let b = generate_sequence(&spec, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masks_stay_pairwise_disjoint() {
        let spec = SceneSpec {
            entry_exit_prob: 0.3,
            velocity: (0.3, 1.2),
            seed: 5,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 30).unwrap();
        for frame in &seq.frames {
            for i in 0..frame.objects.len() {
                for j in i + 1..frame.objects.len() {
                    let a = &frame.objects[i].mask;
                    let b = &frame.objects[j].mask;
                    let overlap = a
                        .bits()
                        .iter()
                        .zip(b.bits())
                        .filter(|(x, y)| **x && **y)
                        .count();
                    assert_eq!(overlap, 0, "objects {i} and {j} overlap");
                }
            }
        }
    }

    #[test]
    fn track_ids_are_never_reused() {
        let spec = SceneSpec {
            entry_exit_prob: 0.4,
            n_objects: (2, 5),
            seed: 13,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 40).unwrap();
        // Each id must occupy one contiguous run of frames.
        let mut seen: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
        for (t, frame) in seq.frames.iter().enumerate() {
            for obj in &frame.objects {
                seen.entry(obj.track_id).or_default().push(t);
            }
        }
        assert!(seen.len() > spec.n_objects.1, "expected some turnover");
        for (id, frames) in seen {
            for w in frames.windows(2) {
                assert_eq!(w[1], w[0] + 1, "track {id} reappeared after exit");
            }
        }
    }

    #[test]
    fn every_labeled_cell_points_at_a_live_object() {
        let spec = SceneSpec {
            entry_exit_prob: 0.2,
            seed: 21,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 15).unwrap();
        for frame in &seq.frames {
            for l in frame.labels.labels.iter().flatten() {
                assert!(*l < frame.objects.len());
            }
            for (k, obj) in frame.objects.iter().enumerate() {
                assert_eq!(frame.labels.cells_of(k).len(), obj.mask.area());
            }
        }
    }

    #[test]
    fn drift_shifts_features_but_not_geometry() {
        let base = SceneSpec {
            seed: 9,
            ..SceneSpec::default()
        };
        let drifted = SceneSpec {
            drift: vec![0.1; base.feature_dim],
            ..base.clone()
        };
        let a = generate_sequence(&base, 6).unwrap();
        let b = generate_sequence(&drifted, 6).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.objects, fb.objects);
            assert_eq!(fa.labels.labels, fb.labels.labels);
        }
        assert_eq!(a.frames[0].features.data, b.frames[0].features.data);
        assert_ne!(a.frames[1].features.data, b.frames[1].features.data);
        // The shift at frame t is exactly t * drift.
        let t = 3;
        for (x, y) in a.frames[t]
            .features
            .data
            .iter()
            .zip(&b.frames[t].features.data)
        {
            approx::assert_abs_diff_eq!(y - x, 0.1 * t as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn image_dataset_flattens_and_shuffles_deterministically() {
        let specs = [static_spec(1), static_spec(2)];
        let seqs: Vec<SynthSequence> = specs
            .iter()
            .map(|s| generate_sequence(s, 3).unwrap())
            .collect();
        let a = to_image_dataset(&seqs, 77).unwrap();
        let b = to_image_dataset(&seqs, 77).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        let total_instances: usize = a.iter().map(|im| im.categories.len()).sum();
        let expected: usize = seqs
            .iter()
            .flat_map(|s| s.frames.iter().map(|f| f.objects.len()))
            .sum();
        assert_eq!(total_instances, expected);
    }

    #[test]
    fn oracle_detections_match_object_count_and_geometry() {
        let spec = SceneSpec {
            entry_exit_prob: 0.2,
            seed: 31,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 10).unwrap();
        let head = EmbeddingHead::init_random(
            HeadConfig {
                in_dim: spec.feature_dim,
                hidden: Some(8),
                out_dim: 6,
                tanh: true,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let dets = oracle_detections(&seq, &head).unwrap();
        for (frame, frame_dets) in seq.frames.iter().zip(&dets) {
            assert_eq!(frame.objects.len(), frame_dets.len());
            for (obj, det) in frame.objects.iter().zip(frame_dets) {
                assert_eq!(det.category, obj.category);
                assert_eq!(det.score, 1.0);
                assert_eq!(det.mask, obj.mask);
            }
        }
    }

    #[test]
    fn identity_head_recovers_appearance_centers() {
        let spec = SceneSpec {
            feature_dim: 4,
            velocity: (0.0, 0.0),
            appearance_noise: 0.0,
            entry_exit_prob: 0.0,
            seed: 17,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 1).unwrap();
        let mut head = EmbeddingHead::new_zero(HeadConfig {
            in_dim: 4,
            hidden: None,
            out_dim: 4,
            tanh: false,
        })
        .unwrap();
        // W = I, b = 0.
        for d in 0..4 {
            head.params[d * 4 + d] = 1.0;
        }
        let dets = oracle_detections(&seq, &head).unwrap();
        let frame = &seq.frames[0];
        for (k, det) in dets[0].iter().enumerate() {
            // With zero noise every cell carries the center exactly, so the
            // mean over cells is the center itself.
            let cell = frame.labels.cells_of(k)[0];
            assert_eq!(det.embedding, frame.features.cell(cell).to_vec());
        }
        // Distinct objects keep distinct embeddings.
        for i in 0..dets[0].len() {
            for j in i + 1..dets[0].len() {
                let dist: f64 = dets[0][i]
                    .embedding
                    .iter()
                    .zip(&dets[0][j].embedding)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 0.0, "objects {i} and {j} share an embedding");
            }
        }
    }

    #[test]
    fn infeasible_specs_error() {
        let tiny = SceneSpec {
            grid_size: 1,
            ..SceneSpec::default()
        };
        assert!(generate_sequence(&tiny, 2).is_err());
        let crowded = SceneSpec {
            grid_size: 4,
            n_objects: (50, 60),
            ..SceneSpec::default()
        };
        assert!(generate_sequence(&crowded, 2).is_err());
    }

    #[test]
    fn gt_tracks_regroup_by_id() {
        let spec = SceneSpec {
            entry_exit_prob: 0.3,
            seed: 41,
            ..SceneSpec::default()
        };
        let seq = generate_sequence(&spec, 20).unwrap();
        let tracks = seq.gt_tracks();
        let ids: std::collections::BTreeSet<u64> = seq
            .frames
            .iter()
            .flat_map(|f| f.objects.iter().map(|o| o.track_id))
            .collect();
        assert_eq!(tracks.len(), ids.len());
        for tr in &tracks {
            assert_eq!(tr.masks.len(), seq.frames.len());
            let present = tr.masks.iter().filter(|m| m.is_some()).count();
            assert!(present >= 1);
        }
    }
}
