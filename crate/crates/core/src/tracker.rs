//! Online embedding tracker: a memory bank of per-track prototypes, scored
//! against each frame's detections, with thresholded birth of new tracks.
//!
//! Per frame: cosine similarity between detection embeddings and bank
//! prototypes, sharpened by a bi-directional softmax (average of row-wise
//! and column-wise softmax — a mutual-best match scores high in both
//! directions, a one-sided match does not), optionally fused with detection
//! confidence, box overlap and category agreement. Detections claim bank
//! entries greedily by descending score, one entry per frame; anything that
//! scores below the threshold against every free entry becomes a new track.
//! Matched prototypes move toward the new embedding under momentum and are
//! renormalized; the bank never forgets by default, so an object that skips
//! frames can recover its id.
//!
//! [`track_sequence_spatial`] is a deliberately embedding-free baseline
//! (nearest box center, same category) used to measure what the embeddings
//! buy.

use crate::error::{Error, Result};
use crate::grid::{bbox_iou, BBox, Mask};

/// One detected instance at one frame.
#[derive(Debug, Clone)]
pub struct Detection {
    pub category: u32,
    /// Confidence in [0, 1].
    pub score: f64,
    pub bbox: BBox,
    pub mask: Mask,
    pub embedding: Vec<f64>,
}

/// One remembered track.
#[derive(Debug, Clone)]
pub struct BankEntry {
    pub track_id: u64,
    /// Unit-norm embedding prototype.
    pub prototype: Vec<f64>,
    pub category: u32,
    pub bbox: BBox,
    pub mask: Mask,
    pub last_seen_frame: usize,
}

/// All tracks seen so far. Track ids count up from 0 and are never reused.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    pub entries: Vec<BankEntry>,
    next_id: u64,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The id the next new track will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Score below which a detection starts a new track.
    pub new_object_threshold: f64,
    /// Weight of the old prototype in the momentum update.
    pub momentum: f64,
    /// Flip the momentum reading: weight the *new* embedding by `momentum`.
    pub momentum_weights_new: bool,
    /// Fusion weight of detection confidence.
    pub alpha: f64,
    /// Fusion weight of bounding-box IoU.
    pub beta: f64,
    /// Fusion weight of category agreement.
    pub gamma: f64,
    /// Average row and column softmax; off = row softmax only.
    pub use_bi_softmax: bool,
    /// Add the confidence/IoU/category terms to the match score.
    pub use_postprocess: bool,
    /// Solve the frame assignment optimally instead of greedily.
    pub use_hungarian: bool,
    /// Hide bank entries unseen for more than this many frames.
    pub max_age: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            new_object_threshold: 0.3,
            momentum: 0.7,
            momentum_weights_new: false,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            use_bi_softmax: true,
            use_postprocess: false,
            use_hungarian: false,
            max_age: None,
        }
    }
}

impl TrackerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.new_object_threshold > 0.0 && self.new_object_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "new_object_threshold {} outside (0, 1)",
                self.new_object_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidArgument(
                "fusion weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// What happened to one detection during association.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Matched an existing track.
    Existing(u64),
    /// Started this track.
    New(u64),
}

impl Decision {
    pub fn track_id(&self) -> u64 {
        match self {
            Decision::Existing(id) | Decision::New(id) => *id,
        }
    }
}

/// (detection index, track id) for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameAssignment {
    pub detection_idx: usize,
    pub track_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BirthRecord {
    pub track_id: u64,
    pub frame: usize,
}

/// Assignments per frame plus when each track was born.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrackResult {
    pub frames: Vec<Vec<FrameAssignment>>,
    pub births: Vec<BirthRecord>,
}

impl TrackResult {
    /// Number of distinct tracks.
    pub fn track_count(&self) -> usize {
        self.births.len()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity matrix between detections and bank entries, row-major
/// `dets.len() x entries.len()`. Errors on zero-norm embeddings.
pub fn similarity(dets: &[Detection], entries: &[BankEntry]) -> Result<Vec<f64>> {
    if dets.is_empty() || entries.is_empty() {
        return Err(Error::InvalidArgument(
            "similarity: empty detections or bank".into(),
        ));
    }
    let d_norms: Vec<f64> = dets.iter().map(|d| norm(&d.embedding)).collect();
    let e_norms: Vec<f64> = entries.iter().map(|e| norm(&e.prototype)).collect();
    if d_norms.iter().chain(e_norms.iter()).any(|&n| n == 0.0) {
        return Err(Error::DegenerateInstance(
            "similarity: zero-norm embedding".into(),
        ));
    }
    let mut out = vec![0.0; dets.len() * entries.len()];
    for (n, det) in dets.iter().enumerate() {
        for (m, e) in entries.iter().enumerate() {
            if det.embedding.len() != e.prototype.len() {
                return Err(Error::ShapeMismatch(format!(
                    "similarity: embedding dims {} vs {}",
                    det.embedding.len(),
                    e.prototype.len()
                )));
            }
            let dot: f64 = det
                .embedding
                .iter()
                .zip(&e.prototype)
                .map(|(a, b)| a * b)
                .sum();
            out[n * entries.len() + m] = dot / (d_norms[n] * e_norms[m]);
        }
    }
    Ok(out)
}

fn softmax_rows(mat: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = mat.to_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn softmax_cols(mat: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = mat.to_vec();
    for c in 0..cols {
        let mut m = f64::NEG_INFINITY;
        for r in 0..rows {
            m = m.max(out[r * cols + c]);
        }
        let mut z = 0.0;
        for r in 0..rows {
            let v = (out[r * cols + c] - m).exp();
            out[r * cols + c] = v;
            z += v;
        }
        for r in 0..rows {
            out[r * cols + c] /= z;
        }
    }
    out
}

/// Elementwise average of the row-wise and column-wise softmax of `sim`.
/// A pair that is the best match in both directions keeps a high score;
/// one-directional matches are pulled down by the other direction.
pub fn bi_softmax(sim: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let r = softmax_rows(sim, rows, cols);
    let c = softmax_cols(sim, rows, cols);
    r.iter().zip(&c).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Adds the post-processing terms to each match score: `s(n, m) = score(n,
/// m) + alpha * confidence(n) + beta * IoU(box_n, box_m) + gamma *
/// [category_n == category_m]`. Degenerate boxes contribute zero overlap
/// instead of failing.
pub fn fuse_scores(
    scores: &[f64],
    dets: &[Detection],
    entries: &[BankEntry],
    cfg: &TrackerConfig,
) -> Vec<f64> {
    let cols = entries.len();
    let mut out = scores.to_vec();
    for (n, det) in dets.iter().enumerate() {
        for (m, e) in entries.iter().enumerate() {
            let iou = bbox_iou(&det.bbox, &e.bbox).unwrap_or(0.0);
            let delta = if det.category == e.category { 1.0 } else { 0.0 };
            out[n * cols + m] += cfg.alpha * det.score + cfg.beta * iou + cfg.gamma * delta;
        }
    }
    out
}

/// The match score matrix association actually uses.
fn score_matrix(
    dets: &[Detection],
    entries: &[BankEntry],
    cfg: &TrackerConfig,
) -> Result<Vec<f64>> {
    let sim = similarity(dets, entries)?;
    let (rows, cols) = (dets.len(), entries.len());
    let scores = if cfg.use_bi_softmax {
        bi_softmax(&sim, rows, cols)
    } else {
        softmax_rows(&sim, rows, cols)
    };
    Ok(if cfg.use_postprocess {
        fuse_scores(&scores, dets, entries, cfg)
    } else {
        scores
    })
}

/// Decides, for every detection of one frame, whether it continues an
/// existing track or starts a new one. Pure: the bank is not modified, and
/// new ids are taken consecutively from [`MemoryBank::next_id`] in detection
/// order. Conflicts go to the higher score (greedy), or to the optimal
/// assignment in Hungarian mode; either way one entry serves at most one
/// detection per frame.
pub fn associate(
    dets: &[Detection],
    bank: &MemoryBank,
    frame: usize,
    cfg: &TrackerConfig,
) -> Result<Vec<Decision>> {
    cfg.validate()?;
    // Candidate entries: everything, unless an age limit hides stale tracks.
    let candidates: Vec<usize> = bank
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| match cfg.max_age {
            Some(age) => frame.saturating_sub(e.last_seen_frame) <= age,
            None => true,
        })
        .map(|(i, _)| i)
        .collect();

    let mut decisions: Vec<Option<Decision>> = vec![None; dets.len()];
    if !dets.is_empty() && !candidates.is_empty() {
        let cand_entries: Vec<BankEntry> = candidates
            .iter()
            .map(|&i| bank.entries[i].clone())
            .collect();
        let scores = score_matrix(dets, &cand_entries, cfg)?;
        let cols = cand_entries.len();
        let matches = if cfg.use_hungarian {
            hungarian_matches(&scores, dets.len(), cols, cfg.new_object_threshold)
        } else {
            greedy_matches(&scores, dets.len(), cols, cfg.new_object_threshold)
        };
        for (n, m) in matches {
            decisions[n] = Some(Decision::Existing(cand_entries[m].track_id));
        }
    }
    // Everything unmatched becomes a new track, ids in detection order.
    let mut next = bank.next_id;
    for d in decisions.iter_mut() {
        if d.is_none() {
            *d = Some(Decision::New(next));
            next += 1;
        }
    }
    Ok(decisions
        .into_iter()
        .map(|d| d.expect("every detection decided"))
        .collect())
}

/// Greedy one-to-one matching by descending score; pairs below the threshold
/// never match. Ties break on lower detection index, then lower entry index.
fn greedy_matches(scores: &[f64], rows: usize, cols: usize, threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..rows)
        .flat_map(|n| (0..cols).map(move |m| (n, m)))
        .filter(|&(n, m)| scores[n * cols + m] >= threshold)
        .collect();
    pairs.sort_by(|&(n1, m1), &(n2, m2)| {
        let s1 = scores[n1 * cols + m1];
        let s2 = scores[n2 * cols + m2];
        s2.partial_cmp(&s1)
            .expect("finite scores")
            .then(n1.cmp(&n2))
            .then(m1.cmp(&m2))
    });
    let mut det_taken = vec![false; rows];
    let mut entry_taken = vec![false; cols];
    let mut out = Vec::new();
    for (n, m) in pairs {
        if !det_taken[n] && !entry_taken[m] {
            det_taken[n] = true;
            entry_taken[m] = true;
            out.push((n, m));
        }
    }
    out
}

/// Optimal one-to-one matching maximizing total score, then dropping pairs
/// below the threshold. The rectangular problem is padded square; dummy
/// pairs cost nothing and never block a real match.
fn hungarian_matches(
    scores: &[f64],
    rows: usize,
    cols: usize,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let n = rows.max(cols);
    let max_score = scores.iter().cloned().fold(0.0_f64, f64::max);
    // Minimize (max - score); padding cells cost max (i.e. score zero).
    let mut cost = vec![max_score; n * n];
    for r in 0..rows {
        for c in 0..cols {
            cost[r * n + c] = max_score - scores[r * cols + c];
        }
    }
    let col_of_row = hungarian_min(&cost, n);
    let mut out = Vec::new();
    for (r, &c) in col_of_row.iter().enumerate() {
        if r < rows && c < cols && scores[r * cols + c] >= threshold {
            out.push((r, c));
        }
    }
    out
}

/// Classic potentials-based assignment solver on a square cost matrix;
/// returns the column chosen for each row.
fn hungarian_min(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-indexed internally; p[j] is the row matched to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Applies one frame's decisions to the bank: matched prototypes mix with
/// the detection embedding under momentum and renormalize to unit norm (a
/// zero mixed vector keeps the old prototype, the only way to stay total and
/// unit-norm); new tracks append with their normalized embedding. Metadata
/// (box, mask, category, last-seen) always refreshes.
pub fn update_bank(
    bank: &mut MemoryBank,
    decisions: &[Decision],
    dets: &[Detection],
    frame: usize,
    cfg: &TrackerConfig,
) -> Result<()> {
    cfg.validate()?;
    if decisions.len() != dets.len() {
        return Err(Error::ShapeMismatch(format!(
            "update_bank: {} decisions for {} detections",
            decisions.len(),
            dets.len()
        )));
    }
    for (decision, det) in decisions.iter().zip(dets) {
        let emb_norm = norm(&det.embedding);
        if emb_norm == 0.0 {
            return Err(Error::DegenerateInstance(
                "update_bank: zero-norm embedding".into(),
            ));
        }
        let unit_emb: Vec<f64> = det.embedding.iter().map(|v| v / emb_norm).collect();
        match decision {
            Decision::Existing(id) => {
                let e = bank
                    .entries
                    .iter_mut()
                    .find(|e| e.track_id == *id)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("update_bank: unknown track id {}", id))
                    })?;
                let m = if cfg.momentum_weights_new {
                    1.0 - cfg.momentum
                } else {
                    cfg.momentum
                };
                let mixed: Vec<f64> = e
                    .prototype
                    .iter()
                    .zip(&unit_emb)
                    .map(|(old, new)| m * old + (1.0 - m) * new)
                    .collect();
                let mn = norm(&mixed);
                if mn > 0.0 {
                    e.prototype = mixed.iter().map(|v| v / mn).collect();
                }
                e.category = det.category;
                e.bbox = det.bbox;
                e.mask = det.mask.clone();
                e.last_seen_frame = frame;
            }
            Decision::New(id) => {
                if bank.entries.iter().any(|e| e.track_id == *id) {
                    return Err(Error::InvalidArgument(format!(
                        "update_bank: track id {} already exists",
                        id
                    )));
                }
                bank.entries.push(BankEntry {
                    track_id: *id,
                    prototype: unit_emb,
                    category: det.category,
                    bbox: det.bbox,
                    mask: det.mask.clone(),
                    last_seen_frame: frame,
                });
                bank.next_id = bank.next_id.max(*id + 1);
            }
        }
    }
    Ok(())
}

/// Tracks a whole sequence online: frame t sees only frames up to t.
/// Returns the assignments plus the final bank.
pub fn track_sequence(
    frames: &[Vec<Detection>],
    cfg: &TrackerConfig,
) -> Result<(TrackResult, MemoryBank)> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("track_sequence: no frames".into()));
    }
    for (t, dets) in frames.iter().enumerate() {
        for (i, d) in dets.iter().enumerate() {
            if d.embedding.iter().any(|v| !v.is_finite()) || norm(&d.embedding) == 0.0 {
                return Err(Error::DegenerateInstance(format!(
                    "track_sequence: detection {} at frame {} has a degenerate embedding",
                    i, t
                )));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::InvalidArgument(format!(
                    "track_sequence: detection {} at frame {} has score {} outside [0, 1]",
                    i, t, d.score
                )));
            }
        }
    }

    let mut bank = MemoryBank::new();
    let mut result = TrackResult {
        frames: Vec::with_capacity(frames.len()),
        births: Vec::new(),
    };
    for (t, dets) in frames.iter().enumerate() {
        let decisions = associate(dets, &bank, t, cfg)?;
        let mut assignments = Vec::with_capacity(dets.len());
        for (i, d) in decisions.iter().enumerate() {
            assignments.push(FrameAssignment {
                detection_idx: i,
                track_id: d.track_id(),
            });
            if let Decision::New(id) = d {
                result.births.push(BirthRecord {
                    track_id: *id,
                    frame: t,
                });
            }
        }
        update_bank(&mut bank, &decisions, dets, t, cfg)?;
        result.frames.push(assignments);
    }
    Ok((result, bank))
}

/// Configuration of the embedding-free baseline tracker.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SpatialConfig {
    /// Maximum box-center distance (in cells) for a match.
    pub max_dist: f64,
    /// Only match detections to tracks of the same category.
    pub same_category_only: bool,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            max_dist: 4.0,
            same_category_only: true,
        }
    }
}

/// Nearest-box-center baseline: greedy one-to-one matching by ascending
/// center distance, gated by `max_dist` and (optionally) category equality.
/// No embeddings anywhere — this is the floor the embedding tracker is
/// measured against.
pub fn track_sequence_spatial(
    frames: &[Vec<Detection>],
    cfg: &SpatialConfig,
) -> Result<TrackResult> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument(
            "track_sequence_spatial: no frames".into(),
        ));
    }
    if cfg.max_dist <= 0.0 {
        return Err(Error::InvalidArgument(
            "track_sequence_spatial: max_dist must be > 0".into(),
        ));
    }
    struct Track {
        id: u64,
        center: (f64, f64),
        category: u32,
    }
    let center_of = |b: &BBox| (b.x + 0.5 * b.w, b.y + 0.5 * b.h);
    let mut tracks: Vec<Track> = Vec::new();
    let mut next_id = 0u64;
    let mut result = TrackResult {
        frames: Vec::with_capacity(frames.len()),
        births: Vec::new(),
    };

    for (t, dets) in frames.iter().enumerate() {
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (n, det) in dets.iter().enumerate() {
            let dc = center_of(&det.bbox);
            for (m, tr) in tracks.iter().enumerate() {
                if cfg.same_category_only && det.category != tr.category {
                    continue;
                }
                let dist = ((dc.0 - tr.center.0).powi(2) + (dc.1 - tr.center.1).powi(2)).sqrt();
                if dist <= cfg.max_dist {
                    pairs.push((n, m, dist));
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .expect("finite distances")
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let mut det_taken = vec![false; dets.len()];
        let mut track_taken = vec![false; tracks.len()];
        let mut assignment: Vec<Option<u64>> = vec![None; dets.len()];
        for (n, m, _) in pairs {
            if !det_taken[n] && !track_taken[m] {
                det_taken[n] = true;
                track_taken[m] = true;
                assignment[n] = Some(tracks[m].id);
                tracks[m].center = center_of(&dets[n].bbox);
                tracks[m].category = dets[n].category;
            }
        }
        let mut frame_out = Vec::with_capacity(dets.len());
        for (n, a) in assignment.iter().enumerate() {
            let id = match a {
                Some(id) => *id,
                None => {
                    let id = next_id;
                    next_id += 1;
                    tracks.push(Track {
                        id,
                        center: center_of(&dets[n].bbox),
                        category: dets[n].category,
                    });
                    result.births.push(BirthRecord {
                        track_id: id,
                        frame: t,
                    });
                    id
                }
            };
            frame_out.push(FrameAssignment {
                detection_idx: n,
                track_id: id,
            });
        }
        result.frames.push(frame_out);
    }
    Ok(result)
}
