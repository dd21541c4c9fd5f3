//! Cycle-consistent correspondence across frames.
//!
//! A frame is reduced to one embedding per instance. Walking a chain of
//! frames forward and back multiplies row-stochastic affinity matrices; if
//! the embeddings identify instances consistently, the round trip lands on
//! the instance it started from, so the round-trip matrix should look like
//! the identity. The cross-entropy against the identity is a training signal
//! that needs no track labels at all — only per-frame instance masks.
//!
//! The backward chain recomputes affinities in the reverse direction (fresh
//! softmaxes), not transposes of the forward ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Instance embeddings at one frame: `len` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInstanceSet {
    pub dim: usize,
    /// Row-major `len * dim` values.
    pub embeddings: Vec<f64>,
    /// Caller-side identity of each row (e.g. a track id); not used by the
    /// loss, carried for provenance.
    pub ids: Vec<u64>,
}

impl FrameInstanceSet {
    pub fn new(dim: usize, embeddings: Vec<f64>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "frame instance set: {} values do not split into rows of {}",
                embeddings.len(),
                dim
            )));
        }
        if embeddings.len() / dim != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "frame instance set: {} rows but {} ids",
                embeddings.len() / dim,
                ids.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::DegenerateInstance(
                "frame instance set with no instances".into(),
            ));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame instance set embeddings".into()));
        }
        Ok(Self {
            dim,
            embeddings,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }
}

/// A row-stochastic transition matrix between two frames' instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows * cols` probabilities; each row sums to 1.
    pub probs: Vec<f64>,
}

/// Cycle loss value plus the gradient for every frame's embeddings
/// (same layout as [`FrameInstanceSet::embeddings`]).
#[derive(Debug, Clone)]
pub struct CycleLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

fn matmul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), ac * bc);
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let aik = a[i * ac + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * bc..(k + 1) * bc];
            let orow = &mut out[i * bc..(i + 1) * bc];
            for (o, v) in orow.iter_mut().zip(brow) {
                *o += aik * v;
            }
        }
    }
    out
}

fn transpose(a: &[f64], ar: usize, ac: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..ar {
        for j in 0..ac {
            out[j * ar + i] = a[i * ac + j];
        }
    }
    out
}

/// Row-softmax of the scaled dot products between `a`'s and `b`'s instances:
/// entry (i, j) is the probability that instance i of `a` transitions to
/// instance j of `b`.
pub fn pairwise_affinity(
    a: &FrameInstanceSet,
    b: &FrameInstanceSet,
    temperature: f64,
) -> Result<AffinityMatrix> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pairwise_affinity: temperature {} must be positive",
            temperature
        )));
    }
    if a.dim != b.dim {
        return Err(Error::ShapeMismatch(format!(
            "pairwise_affinity: dims {} vs {}",
            a.dim, b.dim
        )));
    }
    let (p, q) = (a.len(), b.len());
    let mut probs = vec![0.0; p * q];
    for i in 0..p {
        let xi = a.row(i);
        let row = &mut probs[i * q..(i + 1) * q];
        for (j, slot) in row.iter_mut().enumerate() {
            let dot: f64 = xi.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            *slot = dot / temperature;
        }
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
    Ok(AffinityMatrix {
        rows: p,
        cols: q,
        probs,
    })
}

/// Product of a chain of affinities, left to right. The product of
/// row-stochastic matrices is itself row-stochastic.
pub fn chain_affinity(chain: &[AffinityMatrix]) -> Result<AffinityMatrix> {
    let first = chain
        .first()
        .ok_or_else(|| Error::InvalidArgument("chain_affinity: empty chain".into()))?;
    let mut acc = first.probs.clone();
    let rows = first.rows;
    let mut cols = first.cols;
    for a in &chain[1..] {
        if a.rows != cols {
            return Err(Error::ShapeMismatch(format!(
                "chain_affinity: {} columns feed a {}-row matrix",
                cols, a.rows
            )));
        }
        acc = matmul(&acc, rows, cols, &a.probs, a.cols);
        cols = a.cols;
    }
    Ok(AffinityMatrix {
        rows,
        cols,
        probs: acc,
    })
}

/// Cycle-consistency loss over a chain of frames.
///
/// Affinities run forward along `frames` and then backward (recomputed in
/// the reverse direction); the loss is the row-averaged cross-entropy of the
/// round-trip product against the identity. Returns the gradient with
/// respect to every frame's embeddings.
pub fn cycle_loss(frames: &[FrameInstanceSet], temperature: f64) -> Result<CycleLoss> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(
            "cycle_loss: needs at least two frames (k >= 1)".into(),
        ));
    }
    let dim = frames[0].dim;
    for f in frames {
        if f.dim != dim {
            return Err(Error::ShapeMismatch(
                "cycle_loss: frames disagree on dim".into(),
            ));
        }
        if f.is_empty() {
            return Err(Error::DegenerateInstance("cycle_loss: empty frame".into()));
        }
    }
    let k = frames.len() - 1;

    // Chain positions 0..k are forward hops t -> t+1; positions k..2k are
    // backward hops in descending order: k -> k-1, ..., 1 -> 0.
    // hop_frames[m] = (source frame, target frame) of chain position m.
    let mut hops = Vec::with_capacity(2 * k);
    let mut hop_frames = Vec::with_capacity(2 * k);
    for t in 0..k {
        hops.push(pairwise_affinity(&frames[t], &frames[t + 1], temperature)?);
        hop_frames.push((t, t + 1));
    }
    for t in (0..k).rev() {
        hops.push(pairwise_affinity(&frames[t + 1], &frames[t], temperature)?);
        hop_frames.push((t + 1, t));
    }

    let p0 = frames[0].len();
    let round_trip = chain_affinity(&hops)?;
    debug_assert_eq!(round_trip.rows, p0);
    debug_assert_eq!(round_trip.cols, p0);

    let mut value = 0.0;
    let mut d_round = vec![0.0; p0 * p0];
    for i in 0..p0 {
        let mii = round_trip.probs[i * p0 + i];
        if mii <= 0.0 {
            return Err(Error::NonFinite(
                "cycle_loss: zero diagonal in round trip".into(),
            ));
        }
        value -= mii.ln();
        d_round[i * p0 + i] = -1.0 / (p0 as f64 * mii);
    }
    value /= p0 as f64;

    // Prefix products pre[m] = hops[0..m], suffix products suf[m] = hops[m..].
    let n = hops.len();
    let mut pre: Vec<(Vec<f64>, usize, usize)> = Vec::with_capacity(n + 1);
    pre.push((identity(p0), p0, p0));
    for h in &hops {
        let (acc, r, c) = pre.last().unwrap();
        debug_assert_eq!(*c, h.rows);
        let next = matmul(acc, *r, *c, &h.probs, h.cols);
        pre.push((next, *r, h.cols));
    }
    let mut suf: Vec<(Vec<f64>, usize, usize)> = vec![(identity(p0), p0, p0)];
    for h in hops.iter().rev() {
        let (acc, _, c) = suf.last().unwrap();
        let next = matmul(&h.probs, h.rows, h.cols, acc, *c);
        suf.push((next, h.rows, *c));
    }
    suf.reverse(); // suf[m] now multiplies hops m..n

    let mut grads: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| vec![0.0; f.embeddings.len()])
        .collect();
    for (m, h) in hops.iter().enumerate() {
        // dL/dA_m = pre[m]^T · dL/dM · suf[m+1]^T
        let (p, pr, pc) = &pre[m];
        let (s, sr, sc) = &suf[m + 1];
        debug_assert_eq!((*pr, *pc), (p0, h.rows));
        debug_assert_eq!((*sr, *sc), (h.cols, p0));
        let pt = transpose(p, *pr, *pc);
        let st = transpose(s, *sr, *sc);
        let tmp = matmul(&pt, h.rows, p0, &d_round, p0);
        let d_aff = matmul(&tmp, h.rows, p0, &st, h.cols);

        // Softmax backward per row, then into the two frames' embeddings.
        let (src, dst) = hop_frames[m];
        let x = &frames[src];
        let y = &frames[dst];
        let mut dz = vec![0.0; h.rows * h.cols];
        for i in 0..h.rows {
            let arow = &h.probs[i * h.cols..(i + 1) * h.cols];
            let drow = &d_aff[i * h.cols..(i + 1) * h.cols];
            let row_dot: f64 = arow.iter().zip(drow).map(|(a, d)| a * d).sum();
            for j in 0..h.cols {
                dz[i * h.cols + j] = arow[j] * (drow[j] - row_dot);
            }
        }
        let inv_t = 1.0 / temperature;
        // dX += dZ · Y / temperature
        for i in 0..h.rows {
            let gx = &mut grads[src][i * dim..(i + 1) * dim];
            for j in 0..h.cols {
                let c = dz[i * h.cols + j] * inv_t;
                if c == 0.0 {
                    continue;
                }
                for (g, v) in gx.iter_mut().zip(y.row(j)) {
                    *g += c * v;
                }
            }
        }
        // dY += dZ^T · X / temperature
        for j in 0..h.cols {
            let gy = &mut grads[dst][j * dim..(j + 1) * dim];
            for i in 0..h.rows {
                let c = dz[i * h.cols + j] * inv_t;
                if c == 0.0 {
                    continue;
                }
                for (g, v) in gy.iter_mut().zip(x.row(i)) {
                    *g += c * v;
                }
            }
        }
    }

    Ok(CycleLoss { value, grads })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Samples `k + 1` strictly increasing frame indices whose consecutive gaps
/// are uniform in `[2, 8]`, with the start position uniform over everything
/// that keeps the group inside the sequence. The sequence must be able to
/// hold `k` maximum-span intervals (`length >= 8k + 1`) so every gap choice
/// is feasible and the interval distribution stays unbiased.
pub fn sample_frame_group_with<R: Rng>(
    rng: &mut R,
    sequence_length: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "sample_frame_group: k must be at least 1".into(),
        ));
    }
    if sequence_length < 8 * k + 1 {
        return Err(Error::SequenceTooShort(format!(
            "sample_frame_group: length {} cannot hold {} intervals of span 8",
            sequence_length, k
        )));
    }
    let gaps: Vec<usize> = (0..k).map(|_| rng.gen_range(2..=8)).collect();
    let span: usize = gaps.iter().sum();
    let start = rng.gen_range(0..=sequence_length - 1 - span);
    let mut out = Vec::with_capacity(k + 1);
    let mut t = start;
    out.push(t);
    for g in gaps {
        t += g;
        out.push(t);
    }
    Ok(out)
}

/// Seeded wrapper around [`sample_frame_group_with`].
pub fn sample_frame_group(sequence_length: usize, k: usize, rng_seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_frame_group_with(&mut rng, sequence_length, k)
}
