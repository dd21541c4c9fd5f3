//! Loss kernels over per-cell embeddings, each returning its value together
//! with the analytic gradient with respect to every embedding entry.
//!
//! All kernels share one convention: embeddings live in an [`EmbeddingGrid`]
//! (row-major cells x dim), instance membership comes from an
//! [`InstanceLabelGrid`], and gradients come back in the same layout as the
//! embedding data. Sums always run in fixed (ascending cell index) order so
//! results are bitwise reproducible.
//!
//! The kernels:
//! - [`info_nce_loss`]: per-cell contrast where same-instance cells attract
//!   and the partition runs over other-instance cells only.
//! - [`center_loss`]: L1 pull of member cells toward their instance mean.
//! - [`contrastive_center_loss`]: cross-entropy pushing the row-softmaxed
//!   Gram matrix of instance centers toward the identity.
//! - [`merge_entropy`]: entropy of the off-diagonal similarity mass; training
//!   maximizes it so distinct instances spread apart instead of collapsing
//!   onto a shared direction.
//! - [`ic_loss`] / [`ic_me_objective`]: the weighted combinations used by the
//!   trainer.

use crate::error::{Error, Result};
use crate::grid::InstanceLabelGrid;

/// Per-cell embeddings on a square grid, row-major, `dim` values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    pub grid_size: usize,
    pub dim: usize,
    /// `grid_size * grid_size * dim` values; cell `c` occupies
    /// `data[c * dim .. (c + 1) * dim]`.
    pub data: Vec<f64>,
}

impl EmbeddingGrid {
    /// An all-zero embedding grid.
    pub fn new(grid_size: usize, dim: usize) -> Self {
        Self {
            grid_size,
            dim,
            data: vec![0.0; grid_size * grid_size * dim],
        }
    }

    pub fn from_data(grid_size: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid_size * grid_size * dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding data length {} does not match grid {} dim {}",
                data.len(),
                grid_size,
                dim
            )));
        }
        Ok(Self {
            grid_size,
            dim,
            data,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.dim..(c + 1) * self.dim]
    }
}

/// A loss value and its gradient, laid out like [`EmbeddingGrid::data`].
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_shapes(emb: &EmbeddingGrid, labels: &InstanceLabelGrid) -> Result<()> {
    if labels.grid_size != emb.grid_size {
        return Err(Error::ShapeMismatch(format!(
            "label grid {} does not match embedding grid {}",
            labels.grid_size, emb.grid_size
        )));
    }
    Ok(())
}

/// Cell indices per kept instance, each list ascending.
fn instance_cells(labels: &InstanceLabelGrid) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new(); labels.n_instances()];
    for (c, l) in labels.labels.iter().enumerate() {
        if let Some(k) = l {
            cells[*k].push(c);
        }
    }
    cells
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Mean embedding of every instance, flattened to `K * dim`.
/// Errors if there are no instances.
pub fn instance_centers(emb: &EmbeddingGrid, labels: &InstanceLabelGrid) -> Result<Vec<f64>> {
    check_shapes(emb, labels)?;
    let cells = instance_cells(labels);
    if cells.is_empty() {
        return Err(Error::DegenerateInstance(
            "instance_centers: no instances".into(),
        ));
    }
    let d = emb.dim;
    let mut centers = vec![0.0; cells.len() * d];
    for (i, members) in cells.iter().enumerate() {
        debug_assert!(!members.is_empty(), "kept instances always own cells");
        for &q in members {
            let f = emb.cell(q);
            for (dst, src) in centers[i * d..(i + 1) * d].iter_mut().zip(f) {
                *dst += src;
            }
        }
        let inv = 1.0 / members.len() as f64;
        for v in &mut centers[i * d..(i + 1) * d] {
            *v *= inv;
        }
    }
    Ok(centers)
}

/// Row-softmax of the Gram matrix of `k` centers of dimension `dim`,
/// returned as a row-major `k * k` matrix. Every row sums to 1.
pub fn similarity_matrix(centers: &[f64], k: usize, dim: usize) -> Result<Vec<f64>> {
    if centers.len() != k * dim {
        return Err(Error::ShapeMismatch(format!(
            "similarity_matrix: centers length {} does not match {}x{}",
            centers.len(),
            k,
            dim
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument(
            "similarity_matrix: no centers".into(),
        ));
    }
    let mut s = vec![0.0; k * k];
    for i in 0..k {
        let ci = &centers[i * dim..(i + 1) * dim];
        let row = &mut s[i * k..(i + 1) * k];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = dot(ci, &centers[j * dim..(j + 1) * dim]);
        }
        softmax_in_place(row)?;
    }
    Ok(s)
}

/// Numerically stable in-place softmax.
fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite("softmax over non-finite logits".into()));
    }
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    Ok(())
}

/// Per-cell contrastive loss.
///
/// For every ordered pair (q, p) of distinct cells of the same instance, the
/// term is `-log( exp(f_p . f_q) / sum_k exp(f_k . f_q) )` where k ranges over
/// the cells of *other* instances only. Terms are averaged. Needs at least
/// two instances so the partition is never empty; if every instance is a
/// singleton there are no pairs and the loss is zero.
pub fn info_nce_loss(emb: &EmbeddingGrid, labels: &InstanceLabelGrid) -> Result<LossValue> {
    check_shapes(emb, labels)?;
    let cells = instance_cells(labels);
    let k_inst = cells.len();
    if k_inst < 2 {
        return Err(Error::InvalidArgument(
            "info_nce_loss: needs at least two instances".into(),
        ));
    }
    let d = emb.dim;
    let mut value = 0.0;
    let mut grad = vec![0.0; emb.data.len()];
    let mut terms = 0usize;

    for (i, members) in cells.iter().enumerate() {
        if members.len() < 2 {
            continue;
        }
        // Negatives: cells of every other instance, in ascending instance
        // then cell order.
        let negatives: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, m)| m.iter().copied())
            .collect();
        let n_pos = members.len() - 1; // positives per query
        for &q in members {
            let fq = emb.cell(q).to_vec();
            // Log-sum-exp over the negatives, shared by every positive of q.
            let logits: Vec<f64> = negatives.iter().map(|&k| dot(emb.cell(k), &fq)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let lse = m + z.ln();
            let scale = n_pos as f64;

            for (&k, l) in negatives.iter().zip(&logits) {
                let w = (l - m).exp() / z;
                let fk = emb.cell(k);
                let gk = &mut grad[k * d..(k + 1) * d];
                for (g, v) in gk.iter_mut().zip(&fq) {
                    *g += scale * w * v;
                }
                let gq = &mut grad[q * d..(q + 1) * d];
                for (g, v) in gq.iter_mut().zip(fk) {
                    *g += scale * w * v;
                }
            }
            for &p in members {
                if p == q {
                    continue;
                }
                terms += 1;
                let fp = emb.cell(p);
                value += -dot(fp, &fq) + lse;
                let gp = &mut grad[p * d..(p + 1) * d];
                for (g, v) in gp.iter_mut().zip(&fq) {
                    *g -= v;
                }
                let fp = emb.cell(p).to_vec();
                let gq = &mut grad[q * d..(q + 1) * d];
                for (g, v) in gq.iter_mut().zip(&fp) {
                    *g -= v;
                }
            }
        }
    }

    if terms == 0 {
        return Ok(LossValue { value: 0.0, grad });
    }
    let inv = 1.0 / terms as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(LossValue {
        value: value * inv,
        grad,
    })
}

/// L1 pull of every member cell toward its instance mean:
/// `sum_i sum_{q in instance i} |C_i - f_q|_1` with `C_i` the member mean.
///
/// The subgradient uses sign(0) = 0, so the kernel is exact away from ties
/// between a coordinate and its center.
pub fn center_loss(emb: &EmbeddingGrid, labels: &InstanceLabelGrid) -> Result<LossValue> {
    check_shapes(emb, labels)?;
    let cells = instance_cells(labels);
    if cells.is_empty() {
        return Err(Error::DegenerateInstance(
            "center_loss: no instances".into(),
        ));
    }
    let d = emb.dim;
    let centers = instance_centers(emb, labels)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; emb.data.len()];

    for (i, members) in cells.iter().enumerate() {
        let ci = &centers[i * d..(i + 1) * d];
        let inv_n = 1.0 / members.len() as f64;
        // Per-dimension sum of signs, reused by every member's gradient
        // because each member moves the shared center by 1/N.
        let mut sign_sum = vec![0.0; d];
        for &q in members {
            let fq = emb.cell(q);
            for ((s, &c), &f) in sign_sum.iter_mut().zip(ci).zip(fq) {
                let diff = c - f;
                value += diff.abs();
                *s += sign(diff);
            }
        }
        for &q in members {
            let fq = emb.cell(q);
            let gq = &mut grad[q * d..(q + 1) * d];
            for (((g, &c), &f), s) in gq.iter_mut().zip(ci).zip(fq).zip(&sign_sum) {
                *g += -sign(c - f) + inv_n * s;
            }
        }
    }
    Ok(LossValue { value, grad })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient with respect to centers propagated back to the member cells
/// that average into each center.
fn center_grad_to_cells(d_centers: &[f64], cells: &[Vec<usize>], dim: usize, grad: &mut [f64]) {
    for (i, members) in cells.iter().enumerate() {
        let inv_n = 1.0 / members.len() as f64;
        let dc = &d_centers[i * dim..(i + 1) * dim];
        for &q in members {
            let gq = &mut grad[q * dim..(q + 1) * dim];
            for (g, v) in gq.iter_mut().zip(dc) {
                *g += inv_n * v;
            }
        }
    }
}

/// Backward pass through `G = C C^T` given `dL/dG`, producing `dL/dC`.
fn gram_backward(d_gram: &[f64], centers: &[f64], k: usize, dim: usize) -> Vec<f64> {
    // dL/dC = (dG + dG^T) C
    let mut d_centers = vec![0.0; k * dim];
    for a in 0..k {
        let dst = &mut d_centers[a * dim..(a + 1) * dim];
        for j in 0..k {
            let coeff = d_gram[a * k + j] + d_gram[j * k + a];
            if coeff == 0.0 {
                continue;
            }
            let cj = &centers[j * dim..(j + 1) * dim];
            for (g, v) in dst.iter_mut().zip(cj) {
                *g += coeff * v;
            }
        }
    }
    d_centers
}

/// Cross-entropy between the row-softmaxed Gram matrix of instance centers
/// and the identity: `-(1/K) sum_i log S_ii`. With a single instance the
/// matrix is the 1x1 identity and the loss is exactly zero.
pub fn contrastive_center_loss(
    emb: &EmbeddingGrid,
    labels: &InstanceLabelGrid,
) -> Result<LossValue> {
    check_shapes(emb, labels)?;
    let cells = instance_cells(labels);
    let k = cells.len();
    if k == 0 {
        return Err(Error::DegenerateInstance(
            "contrastive_center_loss: no instances".into(),
        ));
    }
    let d = emb.dim;
    let centers = instance_centers(emb, labels)?;
    let s = similarity_matrix(&centers, k, d)?;

    let mut value = 0.0;
    for i in 0..k {
        value -= s[i * k + i].ln();
    }
    value /= k as f64;

    // Softmax + cross-entropy backward: dL/dG = (S - I) / K, row by row.
    let inv_k = 1.0 / k as f64;
    let mut d_gram = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let delta = if i == j { 1.0 } else { 0.0 };
            d_gram[i * k + j] = inv_k * (s[i * k + j] - delta);
        }
    }
    let d_centers = gram_backward(&d_gram, &centers, k, d);
    let mut grad = vec![0.0; emb.data.len()];
    center_grad_to_cells(&d_centers, &cells, d, &mut grad);
    Ok(LossValue { value, grad })
}

/// Entropy of the off-diagonal similarity mass:
/// `H = -sum_i sum_{j != i} S_ij log S_ij` over the row-softmaxed Gram matrix
/// of instance centers. Training *maximizes* H (the objective subtracts it),
/// which spreads the similarity an instance assigns to the others instead of
/// letting one rival soak it all up — the failure mode behind merged tracks.
///
/// The returned gradient is `dH/d emb`, so callers subtract it when they
/// subtract H.
pub fn merge_entropy(emb: &EmbeddingGrid, labels: &InstanceLabelGrid) -> Result<LossValue> {
    check_shapes(emb, labels)?;
    let cells = instance_cells(labels);
    let k = cells.len();
    if k == 0 {
        return Err(Error::DegenerateInstance(
            "merge_entropy: no instances".into(),
        ));
    }
    let d = emb.dim;
    let centers = instance_centers(emb, labels)?;
    let s = similarity_matrix(&centers, k, d)?;

    let mut value = 0.0;
    // dH/dS_ij = -(ln S_ij + 1) off the diagonal, 0 on it.
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let sij = s[i * k + j];
            if sij <= 0.0 {
                return Err(Error::NonFinite(
                    "merge_entropy: similarity entry underflowed to zero".into(),
                ));
            }
            value -= sij * sij.ln();
            h[i * k + j] = -(sij.ln() + 1.0);
        }
    }

    // Softmax backward per row: dH/dG_ik = S_ik * (h_ik - sum_j h_ij S_ij).
    let mut d_gram = vec![0.0; k * k];
    for i in 0..k {
        let mut row_dot = 0.0;
        for j in 0..k {
            row_dot += h[i * k + j] * s[i * k + j];
        }
        for jj in 0..k {
            d_gram[i * k + jj] = s[i * k + jj] * (h[i * k + jj] - row_dot);
        }
    }
    let d_centers = gram_backward(&d_gram, &centers, k, d);
    let mut grad = vec![0.0; emb.data.len()];
    center_grad_to_cells(&d_centers, &cells, d, &mut grad);
    Ok(LossValue { value, grad })
}

/// Center loss plus `lambda` times the center cross-entropy.
pub fn ic_loss(emb: &EmbeddingGrid, labels: &InstanceLabelGrid, lambda: f64) -> Result<LossValue> {
    let c = center_loss(emb, labels)?;
    let cc = contrastive_center_loss(emb, labels)?;
    let grad = c
        .grad
        .iter()
        .zip(cc.grad.iter())
        .map(|(a, b)| a + lambda * b)
        .collect();
    Ok(LossValue {
        value: c.value + lambda * cc.value,
        grad,
    })
}

/// The full embedding objective: [`ic_loss`] minus `mu` times the merge
/// entropy (so gradient descent *raises* the entropy).
pub fn ic_me_objective(
    emb: &EmbeddingGrid,
    labels: &InstanceLabelGrid,
    lambda: f64,
    mu: f64,
) -> Result<LossValue> {
    let ic = ic_loss(emb, labels, lambda)?;
    let me = merge_entropy(emb, labels)?;
    let grad = ic
        .grad
        .iter()
        .zip(me.grad.iter())
        .map(|(a, b)| a - mu * b)
        .collect();
    Ok(LossValue {
        value: ic.value - mu * me.value,
        grad,
    })
}
