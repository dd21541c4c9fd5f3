//! Trainable embedding heads and the loops that fit them.
//!
//! A head maps raw per-cell features to embeddings, cell by cell: one affine
//! layer, or two with an optional tanh between. A [`TrackModel`] couples the
//! image head with an optional *video branch*, a second output layer over
//! the shared first-layer activations. The split mirrors a backbone/branch
//! design: self-supervised correspondence training and test-time adaptation
//! update the shared trunk and the video branch while the image output layer
//! stays frozen, so improvements learned from unlabeled video flow into the
//! image embeddings through the trunk.
//!
//! All training is plain Adam over explicit analytic gradients. Everything
//! is seeded and accumulates in fixed order, so a (seed, config, data)
//! triple reproduces parameters bitwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspond::{cycle_loss, sample_frame_group_with, FrameInstanceSet};
use crate::error::{Error, Result};
use crate::grid::InstanceLabelGrid;
use crate::losses::{
    center_loss, contrastive_center_loss, instance_centers, merge_entropy, EmbeddingGrid,
};

/// Per-cell feature input; same layout as an embedding grid.
pub type FeatureGrid = EmbeddingGrid;

/// Shape of an embedding head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub in_dim: usize,
    /// Width of the optional hidden layer.
    pub hidden: Option<usize>,
    pub out_dim: usize,
    /// Apply tanh after the first layer (only meaningful with a hidden layer).
    pub tanh: bool,
}

impl HeadConfig {
    pub fn param_count(&self) -> usize {
        match self.hidden {
            Some(h) => h * self.in_dim + h + self.out_dim * h + self.out_dim,
            None => self.out_dim * self.in_dim + self.out_dim,
        }
    }
}

/// One or two affine layers with an optional tanh between, parameters flat.
///
/// Layout: first-layer weights (rows x in_dim, row-major), first-layer bias,
/// then (with a hidden layer) second-layer weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    pub config: HeadConfig,
    pub params: Vec<f64>,
}

impl EmbeddingHead {
    /// All-zero parameters (maps everything to zero).
    pub fn new_zero(config: HeadConfig) -> Result<Self> {
        validate_config(&config)?;
        Ok(Self {
            params: vec![0.0; config.param_count()],
            config,
        })
    }

    /// Random initialization, uniform in `±0.5 / sqrt(fan_in)` per layer.
    pub fn init_random(config: HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        validate_config(&config)?;
        let mut head = Self::new_zero(config)?;
        match config.hidden {
            Some(h) => {
                let s1 = 0.5 / (config.in_dim as f64).sqrt();
                let s2 = 0.5 / (h as f64).sqrt();
                let split = h * config.in_dim + h;
                for (i, p) in head.params.iter_mut().enumerate() {
                    let s = if i < split { s1 } else { s2 };
                    *p = rng.gen_range(-s..=s);
                }
            }
            None => {
                let s = 0.5 / (config.in_dim as f64).sqrt();
                for p in head.params.iter_mut() {
                    *p = rng.gen_range(-s..=s);
                }
            }
        }
        Ok(head)
    }

    /// Maps every cell of `features` through the head.
    pub fn forward(&self, features: &FeatureGrid) -> Result<EmbeddingGrid> {
        if features.dim != self.config.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} input dims, features have {}",
                self.config.in_dim, features.dim
            )));
        }
        let n = features.n_cells();
        let mut out = EmbeddingGrid::new(features.grid_size, self.config.out_dim);
        match self.config.hidden {
            None => {
                let (w, b) = self.single_layer();
                for c in 0..n {
                    affine(w, b, features.cell(c), out.cell_mut(c));
                }
            }
            Some(h) => {
                let (w1, b1, w2, b2) = self.two_layers();
                let mut z = vec![0.0; h];
                for c in 0..n {
                    affine(w1, b1, features.cell(c), &mut z);
                    if self.config.tanh {
                        for v in z.iter_mut() {
                            *v = v.tanh();
                        }
                    }
                    affine(w2, b2, &z, out.cell_mut(c));
                }
            }
        }
        Ok(out)
    }

    /// First-layer activations for every cell (`n_cells x hidden`).
    /// Errors if the head has no hidden layer.
    fn trunk_forward(&self, features: &FeatureGrid) -> Result<Vec<f64>> {
        let h = self.config.hidden.ok_or_else(|| {
            Error::InvalidArgument("trunk activations need a hidden layer".into())
        })?;
        if features.dim != self.config.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} input dims, features have {}",
                self.config.in_dim, features.dim
            )));
        }
        let n = features.n_cells();
        let (w1, b1, _, _) = self.two_layers();
        let mut acts = vec![0.0; n * h];
        for c in 0..n {
            let dst = &mut acts[c * h..(c + 1) * h];
            affine(w1, b1, features.cell(c), dst);
            if self.config.tanh {
                for v in dst.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        Ok(acts)
    }

    fn single_layer(&self) -> (&[f64], &[f64]) {
        let (o, i) = (self.config.out_dim, self.config.in_dim);
        (&self.params[..o * i], &self.params[o * i..o * i + o])
    }

    fn two_layers(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let h = self.config.hidden.expect("two_layers requires hidden");
        let (i, o) = (self.config.in_dim, self.config.out_dim);
        let w1 = &self.params[..h * i];
        let b1 = &self.params[h * i..h * i + h];
        let w2 = &self.params[h * i + h..h * i + h + o * h];
        let b2 = &self.params[h * i + h + o * h..];
        (w1, b1, w2, b2)
    }
}

fn validate_config(config: &HeadConfig) -> Result<()> {
    if config.in_dim == 0 || config.out_dim == 0 || config.hidden == Some(0) {
        return Err(Error::InvalidArgument(
            "head dimensions must be positive".into(),
        ));
    }
    Ok(())
}

/// `out = W x + b` with `W` row-major `out.len() x x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *slot = acc;
    }
}

/// Chain rule through the head: turns a gradient with respect to the output
/// embeddings into a gradient over the flat parameter vector.
pub fn backward_chain(
    head: &EmbeddingHead,
    features: &FeatureGrid,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let n = features.n_cells();
    let o = head.config.out_dim;
    if upstream.len() != n * o {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient length {} does not match {} cells x {}",
            upstream.len(),
            n,
            o
        )));
    }
    if features.dim != head.config.in_dim {
        return Err(Error::ShapeMismatch("backward_chain: feature dim".into()));
    }
    let mut grad = vec![0.0; head.params.len()];
    match head.config.hidden {
        None => {
            let i = head.config.in_dim;
            let (gw, gb) = grad.split_at_mut(o * i);
            for c in 0..n {
                let x = features.cell(c);
                let up = &upstream[c * o..(c + 1) * o];
                for (oo, u) in up.iter().enumerate() {
                    gb[oo] += u;
                    let row = &mut gw[oo * i..(oo + 1) * i];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += u * xv;
                    }
                }
            }
        }
        Some(h) => {
            let i = head.config.in_dim;
            let (w1, _, w2, _) = head.two_layers();
            let w1 = w1.to_vec();
            let w2 = w2.to_vec();
            let mut z = vec![0.0; h];
            let mut dz = vec![0.0; h];
            let b1: Vec<f64> = head.params[h * i..h * i + h].to_vec();
            for c in 0..n {
                let x = features.cell(c);
                affine(&w1, &b1, x, &mut z);
                if head.config.tanh {
                    for v in z.iter_mut() {
                        *v = v.tanh();
                    }
                }
                let up = &upstream[c * o..(c + 1) * o];
                // Second layer grads and the pull-back onto activations.
                for (j, d) in dz.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (oo, u) in up.iter().enumerate() {
                        acc += u * w2[oo * h + j];
                    }
                    *d = if head.config.tanh {
                        acc * (1.0 - z[j] * z[j])
                    } else {
                        acc
                    };
                }
                let base2 = h * i + h;
                for (oo, u) in up.iter().enumerate() {
                    grad[base2 + o * h + oo] += u; // b2
                    let roww = &mut grad[base2 + oo * h..base2 + (oo + 1) * h];
                    for (g, a) in roww.iter_mut().zip(&z) {
                        *g += u * a;
                    }
                }
                for (j, d) in dz.iter().enumerate() {
                    grad[h * i + j] += d; // b1
                    let row = &mut grad[j * i..(j + 1) * i];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += d * xv;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// A second output layer over the trunk activations, used as the video
/// embedding space. Layout: weights (out_dim x hidden, row-major) then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBranch {
    pub hidden: usize,
    pub out_dim: usize,
    pub params: Vec<f64>,
}

impl VideoBranch {
    pub fn param_count(&self) -> usize {
        self.out_dim * self.hidden + self.out_dim
    }

    fn split(&self) -> (&[f64], &[f64]) {
        (
            &self.params[..self.out_dim * self.hidden],
            &self.params[self.out_dim * self.hidden..],
        )
    }
}

/// The image head plus an optional video branch sharing its trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackModel {
    pub head: EmbeddingHead,
    pub video: Option<VideoBranch>,
}

impl TrackModel {
    /// Randomly initialized model. A separate video branch needs a hidden
    /// layer to share, so `with_video` with `hidden: None` is rejected.
    pub fn init(config: HeadConfig, with_video: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = EmbeddingHead::init_random(config, &mut rng)?;
        let video = if with_video {
            let h = config.hidden.ok_or_else(|| {
                Error::InvalidArgument("a separate video branch requires a hidden layer".into())
            })?;
            let s = 0.5 / (h as f64).sqrt();
            let n = config.out_dim * h + config.out_dim;
            let params = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
            Some(VideoBranch {
                hidden: h,
                out_dim: config.out_dim,
                params,
            })
        } else {
            None
        };
        Ok(Self { head, video })
    }

    /// Image-space embeddings for every cell.
    pub fn image_forward(&self, features: &FeatureGrid) -> Result<EmbeddingGrid> {
        self.head.forward(features)
    }

    /// Video-space embeddings for every cell: the video branch over the
    /// shared trunk when present, otherwise the image head output.
    pub fn video_forward(&self, features: &FeatureGrid) -> Result<EmbeddingGrid> {
        match &self.video {
            None => self.head.forward(features),
            Some(v) => {
                let acts = self.head.trunk_forward(features)?;
                let (w, b) = v.split();
                let n = features.n_cells();
                let mut out = EmbeddingGrid::new(features.grid_size, v.out_dim);
                for c in 0..n {
                    affine(
                        w,
                        b,
                        &acts[c * v.hidden..(c + 1) * v.hidden],
                        out.cell_mut(c),
                    );
                }
                Ok(out)
            }
        }
    }

    /// Flat view of all parameters: head, then video branch.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.head.params.clone();
        if let Some(v) = &self.video {
            p.extend_from_slice(&v.params);
        }
        p
    }

    /// Inverse of [`Self::flat_params`]; shapes must match this model.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let n_head = self.head.params.len();
        let n_video = self.video.as_ref().map_or(0, |v| v.params.len());
        if params.len() != n_head + n_video {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} does not match model ({} + {})",
                params.len(),
                n_head,
                n_video
            )));
        }
        self.head.params.copy_from_slice(&params[..n_head]);
        if let Some(v) = &mut self.video {
            v.params.copy_from_slice(&params[n_head..]);
        }
        Ok(())
    }
}

/// Gradient over all model parameters (same layout as `flat_params`) for a
/// loss on the *video-space* cell embeddings. With a separate branch, the
/// image output layer's region is zero: only the trunk and branch learn.
pub fn backward_video(
    model: &TrackModel,
    features: &FeatureGrid,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    match &model.video {
        None => backward_chain(&model.head, features, upstream),
        Some(v) => {
            let h = v.hidden;
            let o = v.out_dim;
            let n = features.n_cells();
            if upstream.len() != n * o {
                return Err(Error::ShapeMismatch(
                    "backward_video: upstream length".into(),
                ));
            }
            let acts = model.head.trunk_forward(features)?;
            let (w, _) = v.split();
            let i = model.head.config.in_dim;
            let mut grad = vec![0.0; model.head.params.len() + v.params.len()];
            let video_base = model.head.params.len();
            let mut dz = vec![0.0; h];
            for c in 0..n {
                let a = &acts[c * h..(c + 1) * h];
                let up = &upstream[c * o..(c + 1) * o];
                for (j, d) in dz.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (oo, u) in up.iter().enumerate() {
                        acc += u * w[oo * h + j];
                    }
                    *d = if model.head.config.tanh {
                        acc * (1.0 - a[j] * a[j])
                    } else {
                        acc
                    };
                }
                for (oo, u) in up.iter().enumerate() {
                    grad[video_base + o * h + oo] += u; // branch bias
                    let row = &mut grad[video_base + oo * h..video_base + (oo + 1) * h];
                    for (g, av) in row.iter_mut().zip(a) {
                        *g += u * av;
                    }
                }
                let x = features.cell(c);
                for (j, d) in dz.iter().enumerate() {
                    grad[h * i + j] += d; // trunk bias
                    let row = &mut grad[j * i..(j + 1) * i];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += d * xv;
                    }
                }
            }
            Ok(grad)
        }
    }
}

/// Adam with standard decay constants (0.9 / 0.999) and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Everything a training loop needs to know.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Weight of the center cross-entropy inside the instance objective.
    pub lambda: f64,
    /// Weight of the (maximized) merge entropy.
    pub mu: f64,
    /// Affinity softmax temperature for the correspondence phase.
    pub temperature: f64,
    /// Weight of the cycle loss in the correspondence phase.
    pub cycle_weight: f64,
    /// Chain length for the correspondence sampler (k + 1 frames per group).
    pub chain_k: usize,
    pub seed: u64,
    /// Adaptation steps per test sequence.
    pub ttt_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            steps: 200,
            batch_size: 4,
            lambda: 1.0,
            mu: 0.1,
            temperature: 1.0,
            cycle_weight: 1.0,
            chain_k: 1,
            seed: 0,
            ttt_iters: 5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        if self.chain_k == 0 {
            return Err(Error::InvalidArgument("chain_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One frame of training data: raw features plus instance labels.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub features: FeatureGrid,
    pub labels: InstanceLabelGrid,
}

/// One point of a loss curve; unused components are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub total: f64,
    pub center: f64,
    pub contra: f64,
    pub entropy: f64,
    pub cyc: f64,
}

/// Fits the image head on labeled frames by minimizing
/// `center + lambda * contra - mu * entropy`, averaged over each batch.
/// Returns the trained model and the per-step loss curve.
pub fn train_supervised(
    model: &TrackModel,
    frames: &[LabeledFrame],
    cfg: &TrainConfig,
) -> Result<(TrackModel, Vec<CurvePoint>)> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("train_supervised: no frames".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.labels.n_instances() == 0 {
            return Err(Error::DegenerateInstance(format!(
                "train_supervised: frame {} has no instances",
                i
            )));
        }
    }
    let mut model = model.clone();
    let mut adam = Adam::new(cfg.learning_rate, model.head.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut pgrad = vec![0.0; model.head.params.len()];
        let (mut s_total, mut s_center, mut s_contra, mut s_entropy) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let f = &frames[rng.gen_range(0..frames.len())];
            let out = model.head.forward(&f.features)?;
            let c = center_loss(&out, &f.labels)?;
            let cc = contrastive_center_loss(&out, &f.labels)?;
            let me = merge_entropy(&out, &f.labels)?;
            s_center += c.value;
            s_contra += cc.value;
            s_entropy += me.value;
            s_total += c.value + cfg.lambda * cc.value - cfg.mu * me.value;
            let upstream: Vec<f64> = (0..c.grad.len())
                .map(|i| c.grad[i] + cfg.lambda * cc.grad[i] - cfg.mu * me.grad[i])
                .collect();
            let g = backward_chain(&model.head, &f.features, &upstream)?;
            for (acc, v) in pgrad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        let inv = 1.0 / cfg.batch_size as f64;
        for g in &mut pgrad {
            *g *= inv;
        }
        let total = s_total * inv;
        if !total.is_finite() {
            return Err(Error::Divergence { step, loss: total });
        }
        curve.push(CurvePoint {
            step,
            total,
            center: s_center * inv,
            contra: s_contra * inv,
            entropy: s_entropy * inv,
            cyc: 0.0,
        });
        adam.step(&mut model.head.params, &pgrad);
    }
    Ok((model, curve))
}

/// Video-space instance embeddings of one frame, for the cycle loss.
fn frame_instance_set(model: &TrackModel, frame: &LabeledFrame) -> Result<FrameInstanceSet> {
    let out = model.video_forward(&frame.features)?;
    let centers = instance_centers(&out, &frame.labels)?;
    let ids = frame.labels.kept.iter().map(|&i| i as u64).collect();
    FrameInstanceSet::new(out.dim, centers, ids)
}

/// Scatters a gradient over instance embeddings back to the member cells
/// that were averaged, producing a per-cell upstream gradient.
fn instance_grad_to_cells(
    labels: &InstanceLabelGrid,
    d_instances: &[f64],
    dim: usize,
    n_cells: usize,
) -> Vec<f64> {
    let mut counts = vec![0usize; labels.n_instances()];
    for l in labels.labels.iter().flatten() {
        counts[*l] += 1;
    }
    let mut up = vec![0.0; n_cells * dim];
    for (c, l) in labels.labels.iter().enumerate() {
        if let Some(k) = l {
            let inv = 1.0 / counts[*k] as f64;
            let src = &d_instances[k * dim..(k + 1) * dim];
            let dst = &mut up[c * dim..(c + 1) * dim];
            for (g, v) in dst.iter_mut().zip(src) {
                *g += inv * v;
            }
        }
    }
    up
}

/// One correspondence update step over `steps` sampled cycle groups;
/// shared by the trainer and test-time adaptation.
fn correspondence_steps(
    model: &mut TrackModel,
    sequences: &[&[LabeledFrame]],
    steps: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step_offset: usize,
    curve: &mut Vec<CurvePoint>,
) -> Result<()> {
    let usable: Vec<&&[LabeledFrame]> = sequences
        .iter()
        .filter(|s| s.len() > 8 * cfg.chain_k)
        .collect();
    if usable.is_empty() {
        return Err(Error::SequenceTooShort(format!(
            "correspondence training: no sequence holds {} intervals of span 8",
            cfg.chain_k
        )));
    }
    let n_flat = model.flat_params().len();
    let mut adam = Adam::new(cfg.learning_rate, n_flat);

    for step in 0..steps {
        let mut pgrad = vec![0.0; n_flat];
        let mut s_cyc = 0.0;
        let mut used = 0usize;
        for _ in 0..cfg.batch_size {
            let seq = usable[rng.gen_range(0..usable.len())];
            let group = sample_frame_group_with(rng, seq.len(), cfg.chain_k)?;
            // Frames without instances cannot anchor a cycle; skip the group.
            if group.iter().any(|&t| seq[t].labels.n_instances() == 0) {
                continue;
            }
            used += 1;
            let picked: Vec<&LabeledFrame> = group.iter().map(|&t| &seq[t]).collect();
            let sets = picked
                .iter()
                .map(|f| frame_instance_set(model, f))
                .collect::<Result<Vec<_>>>()?;
            let cl = cycle_loss(&sets, cfg.temperature)?;
            s_cyc += cl.value;
            for (f, d_inst) in picked.iter().zip(&cl.grads) {
                let out_dim = sets[0].dim;
                let upstream =
                    instance_grad_to_cells(&f.labels, d_inst, out_dim, f.features.n_cells());
                let scaled: Vec<f64> = upstream.iter().map(|g| g * cfg.cycle_weight).collect();
                let g = backward_video(model, &f.features, &scaled)?;
                for (acc, v) in pgrad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
        }
        if used == 0 {
            return Err(Error::DegenerateInstance(
                "correspondence training: every sampled group had an empty frame".into(),
            ));
        }
        let inv = 1.0 / used as f64;
        for g in &mut pgrad {
            *g *= inv;
        }
        let cyc = cfg.cycle_weight * s_cyc * inv;
        if !cyc.is_finite() {
            return Err(Error::Divergence {
                step: step_offset + step,
                loss: cyc,
            });
        }
        curve.push(CurvePoint {
            step: step_offset + step,
            total: cyc,
            center: 0.0,
            contra: 0.0,
            entropy: 0.0,
            cyc,
        });
        let mut flat = model.flat_params();
        adam.step(&mut flat, &pgrad);
        model.set_flat_params(&flat)?;
    }
    Ok(())
}

/// Fits the video-trainable parameters (trunk + video branch, or the whole
/// head in shared mode) by minimizing the cycle loss over sampled frame
/// groups from unlabeled sequences. Instance membership per frame still
/// comes from the frame's labels; track identity across frames is never
/// used, which is the point of the cycle objective.
pub fn train_correspondence(
    model: &TrackModel,
    sequences: &[Vec<LabeledFrame>],
    cfg: &TrainConfig,
) -> Result<(TrackModel, Vec<CurvePoint>)> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::InvalidArgument(
            "train_correspondence: no sequences".into(),
        ));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    let refs: Vec<&[LabeledFrame]> = sequences.iter().map(|s| s.as_slice()).collect();
    correspondence_steps(&mut model, &refs, cfg.steps, cfg, &mut rng, 0, &mut curve)?;
    Ok((model, curve))
}

/// Adapts a model to one test sequence: exactly `ttt_iters` cycle-loss update
/// steps with a fresh optimizer, touching only the video-trainable parameters.
/// The input model is never mutated; `ttt_iters == 0` returns it bit-for-bit.
pub fn test_time_adapt(
    model: &TrackModel,
    sequence: &[LabeledFrame],
    cfg: &TrainConfig,
) -> Result<TrackModel> {
    cfg.validate()?;
    let mut adapted = model.clone();
    if cfg.ttt_iters == 0 {
        return Ok(adapted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::new();
    correspondence_steps(
        &mut adapted,
        &[sequence],
        cfg.ttt_iters,
        cfg,
        &mut rng,
        0,
        &mut curve,
    )?;
    Ok(adapted)
}

/// Mean cycle loss over `n_groups` sampled frame groups, without updating
/// anything — the before/after measurement for adaptation.
pub fn mean_cycle_loss(
    model: &TrackModel,
    sequence: &[LabeledFrame],
    temperature: f64,
    k: usize,
    n_groups: usize,
    seed: u64,
) -> Result<f64> {
    if n_groups == 0 {
        return Err(Error::InvalidArgument(
            "mean_cycle_loss: n_groups must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut used = 0usize;
    for _ in 0..n_groups {
        let group = sample_frame_group_with(&mut rng, sequence.len(), k)?;
        if group.iter().any(|&t| sequence[t].labels.n_instances() == 0) {
            continue;
        }
        let sets = group
            .iter()
            .map(|&t| frame_instance_set(model, &sequence[t]))
            .collect::<Result<Vec<_>>>()?;
        total += cycle_loss(&sets, temperature)?.value;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateInstance(
            "mean_cycle_loss: every sampled group had an empty frame".into(),
        ));
    }
    Ok(total / used as f64)
}
