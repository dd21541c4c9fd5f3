//! Instance masks on a square cell grid and the rules that turn a set of
//! masks into per-cell instance labels.
//!
//! Training operates on a coarse grid: every cell either belongs to exactly
//! one instance or to none. An instance claims the cells whose centers fall
//! inside a shrunken box around its center of mass; contested cells go to
//! the smaller instance so thin objects are not swallowed by large ones.

use crate::error::{Error, Result};

/// A binary instance mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    /// Creates an all-zero mask.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Builds a mask from row-major bits. Errors if the lengths disagree.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask bits length {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Number of set cells.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Row-major bit slice.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Tight bounding box of the set cells in cell units, or `None` if empty.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if !any {
            return None;
        }
        Some(BBox {
            x: x0 as f64,
            y: y0 as f64,
            w: (x1 - x0 + 1) as f64,
            h: (y1 - y0 + 1) as f64,
        })
    }
}

/// An axis-aligned box in continuous cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Controls how masks are converted to per-cell labels.
#[derive(Debug, Clone, Copy)]
pub struct GridAssignConfig {
    /// Side length of the square grid; masks must have matching dimensions.
    pub grid_size: usize,
    /// Shrink factor for the box an instance claims around its center of
    /// mass: the box spans `epsilon * extent` in each axis. Must lie in (0, 1].
    pub epsilon: f64,
}

impl Default for GridAssignConfig {
    fn default() -> Self {
        Self {
            grid_size: 16,
            epsilon: 0.2,
        }
    }
}

/// Why an instance received no cells during assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// The shrunken box covered no cell centers at all.
    EmptyRegion,
    /// Every covered cell was won by a smaller instance.
    AllCellsContested,
}

/// An instance that ended up with zero cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedInstance {
    /// Index into the original mask list.
    pub index: usize,
    pub reason: DropReason,
}

/// Per-cell instance labels produced by [`assign_instances`].
///
/// `labels` indexes into `kept`, which in turn holds original mask indices in
/// ascending order, so instances that lost every cell simply vanish from the
/// label space instead of leaving holes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabelGrid {
    pub grid_size: usize,
    /// Row-major; `Some(k)` means the cell belongs to kept instance `k`.
    pub labels: Vec<Option<usize>>,
    /// Original mask index of each kept instance, ascending.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedInstance>,
}

impl InstanceLabelGrid {
    pub fn n_instances(&self) -> usize {
        self.kept.len()
    }

    /// Row-major cell indices labeled with kept instance `k`, ascending.
    pub fn cells_of(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(k))
            .map(|(c, _)| c)
            .collect()
    }
}

/// Arithmetic mean of the centers of the set cells, in cell units (the cell
/// at column x, row y has center (x + 0.5, y + 0.5)). Errors on an empty mask.
pub fn center_of_mass(mask: &Mask) -> Result<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::DegenerateInstance(
            "center of mass of empty mask".into(),
        ));
    }
    Ok((sx / n as f64, sy / n as f64))
}

/// Assigns grid cells to instances.
///
/// Each instance claims the cells whose centers fall (inclusively) inside the
/// box of size `epsilon * extent` centered on its center of mass, where
/// `extent` is the tight bounding box of its mask. A cell claimed by several
/// instances goes to the one with the smallest mask area; on equal areas the
/// lower mask index wins. Instances that end up with zero cells are reported
/// in `dropped` rather than failing the whole call.
pub fn assign_instances(masks: &[Mask], config: &GridAssignConfig) -> Result<InstanceLabelGrid> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("assign_instances: no masks".into()));
    }
    if config.grid_size == 0 {
        return Err(Error::InvalidArgument(
            "assign_instances: grid_size is zero".into(),
        ));
    }
    if !(config.epsilon > 0.0 && config.epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "assign_instances: epsilon {} outside (0, 1]",
            config.epsilon
        )));
    }
    let s = config.grid_size;
    for (i, m) in masks.iter().enumerate() {
        if m.width() != s || m.height() != s {
            return Err(Error::ShapeMismatch(format!(
                "mask {} is {}x{} but the grid is {}x{}",
                i,
                m.width(),
                m.height(),
                s,
                s
            )));
        }
    }

    struct Region {
        cx: f64,
        cy: f64,
        half_w: f64,
        half_h: f64,
        area: usize,
    }
    let mut regions = Vec::with_capacity(masks.len());
    for m in masks {
        let (cx, cy) = center_of_mass(m)?;
        let b = m.bbox().expect("non-empty mask has a bbox");
        regions.push(Region {
            cx,
            cy,
            half_w: 0.5 * config.epsilon * b.w,
            half_h: 0.5 * config.epsilon * b.h,
            area: m.area(),
        });
    }

    // Winner per cell, by original mask index.
    let mut winner: Vec<Option<usize>> = vec![None; s * s];
    // Whether each instance's box covered at least one cell center.
    let mut covered = vec![false; masks.len()];
    for y in 0..s {
        for x in 0..s {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut best: Option<usize> = None;
            for (i, r) in regions.iter().enumerate() {
                if (px - r.cx).abs() <= r.half_w && (py - r.cy).abs() <= r.half_h {
                    covered[i] = true;
                    best = match best {
                        None => Some(i),
                        Some(b) if regions[i].area < regions[b].area => Some(i),
                        Some(b) => Some(b),
                    };
                }
            }
            winner[y * s + x] = best;
        }
    }

    let mut cell_count = vec![0usize; masks.len()];
    for w in winner.iter().flatten() {
        cell_count[*w] += 1;
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut remap = vec![None; masks.len()];
    for i in 0..masks.len() {
        if cell_count[i] > 0 {
            remap[i] = Some(kept.len());
            kept.push(i);
        } else {
            let reason = if covered[i] {
                DropReason::AllCellsContested
            } else {
                DropReason::EmptyRegion
            };
            dropped.push(DroppedInstance { index: i, reason });
        }
    }
    let labels = winner.iter().map(|w| w.and_then(|i| remap[i])).collect();
    Ok(InstanceLabelGrid {
        grid_size: s,
        labels,
        kept,
        dropped,
    })
}

/// Intersection over union of two masks of equal dimensions.
/// Errors if the union is empty (both masks all-zero).
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "mask_iou: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (pa, pb) in a.bits().iter().zip(b.bits().iter()) {
        if *pa && *pb {
            inter += 1;
        }
        if *pa || *pb {
            union += 1;
        }
    }
    if union == 0 {
        return Err(Error::DegenerateInstance(
            "mask_iou of two empty masks".into(),
        ));
    }
    Ok(inter as f64 / union as f64)
}

/// Intersection over union of two axis-aligned boxes; 0 when disjoint.
/// Errors if either box has a negative side or both have zero area.
pub fn bbox_iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.w < 0.0 || a.h < 0.0 || b.w < 0.0 || b.h < 0.0 {
        return Err(Error::InvalidArgument("bbox_iou: negative box side".into()));
    }
    let area_a = a.w * a.h;
    let area_b = b.w * b.h;
    if area_a == 0.0 && area_b == 0.0 {
        return Err(Error::DegenerateInstance(
            "bbox_iou of two zero-area boxes".into(),
        ));
    }
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return Ok(0.0);
    }
    let inter = ix * iy;
    Ok(inter / (area_a + area_b - inter))
}
