//! Evaluation: video instance segmentation AP/AR over spatio-temporal IoU,
//! and MOTA for tracking.
//!
//! The AP side follows the familiar recipe: per category, predictions sorted
//! by confidence greedily claim the best still-unclaimed ground-truth track
//! whose whole-video IoU clears the threshold; precision-recall points are
//! integrated exactly under the monotone envelope and averaged over the
//! 0.50:0.05:0.95 threshold grid. MOTA runs frame by frame: matches persist
//! from the previous frame while they still overlap, the rest re-match
//! greedily at mask IoU >= 0.5, and misses, false positives and identity
//! switches accumulate into `1 - (FN + FP + IDSW) / total_gt`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::Mask;

/// A ground-truth track: one optional mask per frame.
#[derive(Debug, Clone)]
pub struct GtTrack {
    pub track_id: u64,
    pub category: u32,
    pub masks: Vec<Option<Mask>>,
}

/// A predicted track with a confidence for ranking.
#[derive(Debug, Clone)]
pub struct PredTrack {
    pub track_id: u64,
    pub category: u32,
    pub confidence: f64,
    pub masks: Vec<Option<Mask>>,
}

/// Mean AP for one category.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassAp {
    pub category: u32,
    pub ap: f64,
}

/// The AP/AR half of an evaluation.
#[derive(Debug, Clone)]
pub struct ApSummary {
    /// Mean over categories and thresholds.
    pub ap: f64,
    /// (threshold, mean-over-categories AP) per requested threshold.
    pub ap_at: Vec<(f64, f64)>,
    /// Recall keeping only the top-1 / top-10 predictions per category,
    /// averaged over thresholds and categories.
    pub ar1: f64,
    pub ar10: f64,
    pub per_class: Vec<ClassAp>,
}

/// Everything the eval command reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub mota: f64,
    pub per_class: Vec<ClassAp>,
}

/// MOTA with its error components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotaStats {
    pub mota: f64,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    pub total_gt: usize,
}

/// The standard threshold grid 0.50, 0.55, ..., 0.95.
pub fn iou_threshold_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Spatio-temporal IoU: summed per-frame intersections over summed unions,
/// with a missing frame counting as an empty mask. Errors when both tracks
/// are entirely empty.
pub fn st_iou(a: &[Option<Mask>], b: &[Option<Mask>]) -> Result<f64> {
    let frames = a.len().max(b.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for t in 0..frames {
        let ma = a.get(t).and_then(|m| m.as_ref());
        let mb = b.get(t).and_then(|m| m.as_ref());
        match (ma, mb) {
            (Some(x), Some(y)) => {
                if x.width() != y.width() || x.height() != y.height() {
                    return Err(Error::ShapeMismatch(format!(
                        "st_iou frame {}: {}x{} vs {}x{}",
                        t,
                        x.width(),
                        x.height(),
                        y.width(),
                        y.height()
                    )));
                }
                for (pa, pb) in x.bits().iter().zip(y.bits()) {
                    if *pa && *pb {
                        inter += 1;
                    }
                    if *pa || *pb {
                        union += 1;
                    }
                }
            }
            (Some(x), None) => union += x.area(),
            (None, Some(y)) => union += y.area(),
            (None, None) => {}
        }
    }
    if union == 0 {
        return Err(Error::DegenerateInstance(
            "st_iou of two empty tracks".into(),
        ));
    }
    Ok(inter as f64 / union as f64)
}

fn validate_tracks(preds: &[PredTrack], gts: &[GtTrack]) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one gt track".into(),
        ));
    }
    for g in gts {
        if !g.masks.iter().any(|m| m.is_some()) {
            return Err(Error::DegenerateInstance(format!(
                "gt track {} has no frames with a mask",
                g.track_id
            )));
        }
    }
    for p in preds {
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::InvalidArgument(format!(
                "pred track {} confidence {} outside [0, 1]",
                p.track_id, p.confidence
            )));
        }
    }
    Ok(())
}

/// Greedy confidence-ordered matching for one category at one threshold:
/// true-positive flags in the given (sorted) prediction order.
fn match_flags(iou: &[Vec<f64>], n_gts: usize, threshold: f64) -> Vec<bool> {
    let mut gt_taken = vec![false; n_gts];
    let mut flags = Vec::with_capacity(iou.len());
    for row in iou {
        let mut best: Option<usize> = None;
        for (g, &v) in row.iter().enumerate() {
            if gt_taken[g] || v < threshold {
                continue;
            }
            best = match best {
                None => Some(g),
                Some(b) if v > row[b] => Some(g),
                Some(b) => Some(b),
            };
        }
        if let Some(g) = best {
            gt_taken[g] = true;
            flags.push(true);
        } else {
            flags.push(false);
        }
    }
    flags
}

/// Exact area under the monotone precision envelope of the PR curve drawn by
/// true-positive flags in rank order.
fn ap_from_flags(flags: &[bool], n_gts: usize) -> f64 {
    if n_gts == 0 {
        return 0.0;
    }
    let mut recalls = Vec::with_capacity(flags.len());
    let mut precisions = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / n_gts as f64);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..flags.len()).rev() {
        envelope = envelope.max(precisions[i]);
        let prev_r = if i == 0 { 0.0 } else { recalls[i - 1] };
        ap += (recalls[i] - prev_r) * envelope;
    }
    ap
}

/// AP and AR over whole-video track matching.
///
/// Categories are evaluated independently against their own ground truth;
/// categories without any gt track are ignored. Predictions sort by
/// descending confidence (ties by ascending track id, so the result does not
/// depend on input order).
pub fn video_ap(preds: &[PredTrack], gts: &[GtTrack], thresholds: &[f64]) -> Result<ApSummary> {
    validate_tracks(preds, gts)?;
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("video_ap: no thresholds".into()));
    }

    let mut classes: Vec<u32> = gts.iter().map(|g| g.category).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::with_capacity(classes.len());
    let mut ap_rows: Vec<Vec<f64>> = Vec::with_capacity(classes.len()); // [class][threshold]
    let (mut ar1_sum, mut ar10_sum) = (0.0, 0.0);

    for &cat in &classes {
        let class_gts: Vec<&GtTrack> = gts.iter().filter(|g| g.category == cat).collect();
        let mut class_preds: Vec<&PredTrack> = preds.iter().filter(|p| p.category == cat).collect();
        class_preds.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .expect("finite confidence")
                .then(a.track_id.cmp(&b.track_id))
        });

        // Track-level IoUs, computed once per class.
        let mut iou = vec![vec![0.0; class_gts.len()]; class_preds.len()];
        for (pi, p) in class_preds.iter().enumerate() {
            let pred_empty = !p.masks.iter().any(|m| m.is_some());
            for (gi, g) in class_gts.iter().enumerate() {
                iou[pi][gi] = if pred_empty {
                    0.0
                } else {
                    st_iou(&p.masks, &g.masks)?
                };
            }
        }

        let mut ap_per_thr = Vec::with_capacity(thresholds.len());
        let (mut r1, mut r10) = (0.0, 0.0);
        for &thr in thresholds {
            let flags = match_flags(&iou, class_gts.len(), thr);
            ap_per_thr.push(ap_from_flags(&flags, class_gts.len()));
            for (k, acc) in [(1usize, &mut r1), (10usize, &mut r10)] {
                let top = &iou[..class_preds.len().min(k)];
                let top_flags = match_flags(top, class_gts.len(), thr);
                let tp = top_flags.iter().filter(|&&f| f).count();
                *acc += tp as f64 / class_gts.len() as f64;
            }
        }
        let n_thr = thresholds.len() as f64;
        per_class.push(ClassAp {
            category: cat,
            ap: ap_per_thr.iter().sum::<f64>() / n_thr,
        });
        ar1_sum += r1 / n_thr;
        ar10_sum += r10 / n_thr;
        ap_rows.push(ap_per_thr);
    }

    let n_classes = classes.len() as f64;
    let ap_at: Vec<(f64, f64)> = thresholds
        .iter()
        .enumerate()
        .map(|(ti, &thr)| {
            (
                thr,
                ap_rows.iter().map(|row| row[ti]).sum::<f64>() / n_classes,
            )
        })
        .collect();
    let ap = per_class.iter().map(|c| c.ap).sum::<f64>() / n_classes;
    Ok(ApSummary {
        ap,
        ap_at,
        ar1: ar1_sum / n_classes,
        ar10: ar10_sum / n_classes,
        per_class,
    })
}

/// Frame-by-frame tracking accuracy with its components. Matching at each
/// frame first persists still-overlapping previous-frame pairs, then matches
/// the rest greedily by descending mask IoU, gated at 0.5. An identity
/// switch is counted when a gt object's matched prediction differs from the
/// last prediction it was ever matched to.
pub fn mota_stats(preds: &[PredTrack], gts: &[GtTrack]) -> Result<MotaStats> {
    validate_tracks(preds, gts)?;
    let n_frames = preds
        .iter()
        .map(|p| p.masks.len())
        .chain(gts.iter().map(|g| g.masks.len()))
        .max()
        .unwrap_or(0);

    let gate = 0.5;
    let mut prev_match: Vec<Option<usize>> = vec![None; gts.len()]; // at t-1
    let mut last_match: Vec<Option<usize>> = vec![None; gts.len()]; // most recent ever
    let (mut fn_count, mut fp_count, mut idsw, mut total_gt) = (0usize, 0usize, 0usize, 0usize);

    for t in 0..n_frames {
        let gt_at = |g: usize| gts[g].masks.get(t).and_then(|m| m.as_ref());
        let pred_at = |p: usize| preds[p].masks.get(t).and_then(|m| m.as_ref());
        let gt_present: Vec<usize> = (0..gts.len()).filter(|&g| gt_at(g).is_some()).collect();
        let pred_present: Vec<usize> = (0..preds.len()).filter(|&p| pred_at(p).is_some()).collect();
        total_gt += gt_present.len();

        let pair_iou = |g: usize, p: usize| -> Result<f64> {
            let (mg, mp) = (gt_at(g).unwrap(), pred_at(p).unwrap());
            crate::grid::mask_iou(mg, mp)
        };

        let mut gt_match: Vec<Option<usize>> = vec![None; gts.len()];
        let mut pred_taken = vec![false; preds.len()];
        // Keep yesterday's pairs that still overlap.
        for &g in &gt_present {
            if let Some(p) = prev_match[g] {
                if pred_at(p).is_some() && !pred_taken[p] && pair_iou(g, p)? >= gate {
                    gt_match[g] = Some(p);
                    pred_taken[p] = true;
                }
            }
        }
        // Greedy best-overlap for everything else.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for &g in &gt_present {
            if gt_match[g].is_some() {
                continue;
            }
            for &p in &pred_present {
                if pred_taken[p] {
                    continue;
                }
                let v = pair_iou(g, p)?;
                if v >= gate {
                    pairs.push((g, p, v));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("finite IoU")
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        for (g, p, _) in pairs {
            if gt_match[g].is_none() && !pred_taken[p] {
                gt_match[g] = Some(p);
                pred_taken[p] = true;
            }
        }

        for &g in &gt_present {
            match gt_match[g] {
                Some(p) => {
                    if let Some(last) = last_match[g] {
                        if last != p {
                            idsw += 1;
                        }
                    }
                    last_match[g] = Some(p);
                }
                None => fn_count += 1,
            }
        }
        fp_count += pred_present.iter().filter(|&&p| !pred_taken[p]).count();
        prev_match = gt_match;
    }

    if total_gt == 0 {
        return Err(Error::DegenerateInstance("mota: zero gt objects".into()));
    }
    let mota = 1.0 - (fn_count + fp_count + idsw) as f64 / total_gt as f64;
    Ok(MotaStats {
        mota,
        false_negatives: fn_count,
        false_positives: fp_count,
        id_switches: idsw,
        total_gt,
    })
}

/// Just the MOTA scalar.
pub fn mota(preds: &[PredTrack], gts: &[GtTrack]) -> Result<f64> {
    Ok(mota_stats(preds, gts)?.mota)
}

/// Full report: AP/AR over the standard threshold grid plus MOTA.
pub fn evaluate(preds: &[PredTrack], gts: &[GtTrack]) -> Result<EvalReport> {
    let thresholds = iou_threshold_grid();
    let summary = video_ap(preds, gts, &thresholds)?;
    let at = |t: f64| {
        summary
            .ap_at
            .iter()
            .find(|(thr, _)| (*thr - t).abs() < 1e-9)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    };
    let mota = mota_stats(preds, gts)?.mota;
    Ok(EvalReport {
        ap: summary.ap,
        ap50: at(0.50),
        ap75: at(0.75),
        ar1: summary.ar1,
        ar10: summary.ar10,
        mota,
        per_class: summary.per_class,
    })
}

/// One tracked object at one frame, for assembling per-track mask series
/// out of per-frame tracker output.
#[derive(Debug, Clone)]
pub struct FrameObject {
    pub track_id: u64,
    pub category: u32,
    pub confidence: f64,
    pub mask: Mask,
}

/// Groups per-frame objects into [`PredTrack`]s (ascending track id).
/// A track's category is its first observation's; its confidence is the mean
/// over its observations.
pub fn assemble_pred_tracks(frames: &[Vec<FrameObject>]) -> Vec<PredTrack> {
    let mut by_id: BTreeMap<u64, PredTrack> = BTreeMap::new();
    let mut conf_sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (t, objs) in frames.iter().enumerate() {
        for o in objs {
            let track = by_id.entry(o.track_id).or_insert_with(|| PredTrack {
                track_id: o.track_id,
                category: o.category,
                confidence: 0.0,
                masks: vec![None; frames.len()],
            });
            track.masks[t] = Some(o.mask.clone());
            let e = conf_sums.entry(o.track_id).or_insert((0.0, 0));
            e.0 += o.confidence;
            e.1 += 1;
        }
    }
    let mut out: Vec<PredTrack> = by_id.into_values().collect();
    for track in &mut out {
        let (sum, n) = conf_sums[&track.track_id];
        track.confidence = sum / n as f64;
    }
    out
}

/// Groups per-frame objects into [`GtTrack`]s (ascending track id);
/// confidences are ignored.
pub fn assemble_gt_tracks(frames: &[Vec<FrameObject>]) -> Vec<GtTrack> {
    assemble_pred_tracks(frames)
        .into_iter()
        .map(|p| GtTrack {
            track_id: p.track_id,
            category: p.category,
            masks: p.masks,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mask_cells(size: usize, cells: &[(usize, usize)]) -> Mask {
        let mut m = Mask::new(size, size);
        for &(x, y) in cells {
            m.set(x, y, true);
        }
        m
    }

    fn gt(track_id: u64, category: u32, masks: Vec<Option<Mask>>) -> GtTrack {
        GtTrack {
            track_id,
            category,
            masks,
        }
    }

    fn pred(track_id: u64, category: u32, confidence: f64, masks: Vec<Option<Mask>>) -> PredTrack {
        PredTrack {
            track_id,
            category,
            confidence,
            masks,
        }
    }

    #[test]
    fn st_iou_identical_is_one() {
        let m = mask_cells(4, &[(0, 0), (1, 0)]);
        let track = vec![Some(m.clone()), Some(m)];
        assert_abs_diff_eq!(st_iou(&track, &track).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn st_iou_temporally_disjoint_is_zero() {
        let m = mask_cells(4, &[(0, 0)]);
        let a = vec![Some(m.clone()), None];
        let b = vec![None, Some(m)];
        assert_abs_diff_eq!(st_iou(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn st_iou_known_fraction() {
        // Per frame: a has 4 cells, b has 4 cells, overlapping in 2, so the
        // frame union is 6; two frames give (2+2)/(6+6) = 1/3.
        let a_mask = mask_cells(4, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let b_mask = mask_cells(4, &[(2, 0), (3, 0), (0, 1), (1, 1)]);
        let a = vec![Some(a_mask.clone()), Some(a_mask)];
        let b = vec![Some(b_mask.clone()), Some(b_mask)];
        assert_abs_diff_eq!(st_iou(&a, &b).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn st_iou_is_symmetric_and_single_frame_matches_mask_iou() {
        let a_mask = mask_cells(4, &[(0, 0), (1, 0), (1, 1)]);
        let b_mask = mask_cells(4, &[(1, 0), (1, 1), (2, 2), (3, 3)]);
        let a = vec![Some(a_mask.clone())];
        let b = vec![Some(b_mask.clone())];
        let ab = st_iou(&a, &b).unwrap();
        let ba = st_iou(&b, &a).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ab,
            crate::grid::mask_iou(&a_mask, &b_mask).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn st_iou_both_empty_errors() {
        let a: Vec<Option<Mask>> = vec![None, None];
        assert!(matches!(st_iou(&a, &a), Err(Error::DegenerateInstance(_))));
    }

    #[test]
    fn video_ap_perfect_predictions() {
        let m0 = mask_cells(4, &[(0, 0)]);
        let m1 = mask_cells(4, &[(3, 3)]);
        let gts = vec![
            gt(0, 1, vec![Some(m0.clone()), Some(m0.clone())]),
            gt(1, 2, vec![Some(m1.clone()), Some(m1.clone())]),
        ];
        let preds = vec![
            pred(10, 1, 0.9, vec![Some(m0.clone()), Some(m0)]),
            pred(11, 2, 0.8, vec![Some(m1.clone()), Some(m1)]),
        ];
        let r = evaluate(&preds, &gts).unwrap();
        assert_abs_diff_eq!(r.ap, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ap50, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ap75, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ar1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ar10, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mota, 1.0, epsilon = 1e-12);
        assert_eq!(r.per_class.len(), 2);
    }

    #[test]
    fn video_ap_no_predictions_is_zero() {
        let m0 = mask_cells(4, &[(0, 0)]);
        let gts = vec![gt(0, 1, vec![Some(m0)])];
        let s = video_ap(&[], &gts, &iou_threshold_grid()).unwrap();
        assert_eq!(s.ap, 0.0);
        assert_eq!(s.ar1, 0.0);
    }

    #[test]
    fn video_ap_spurious_low_confidence_does_not_hurt() {
        // Correct high-confidence prediction plus a spurious low-confidence
        // one: full recall happens before the precision drop, so the
        // envelope keeps AP at 1.
        let m0 = mask_cells(4, &[(0, 0), (1, 0)]);
        let junk = mask_cells(4, &[(3, 3)]);
        let gts = vec![gt(0, 1, vec![Some(m0.clone())])];
        let preds = vec![
            pred(0, 1, 0.9, vec![Some(m0)]),
            pred(1, 1, 0.1, vec![Some(junk)]),
        ];
        let s = video_ap(&preds, &gts, &iou_threshold_grid()).unwrap();
        assert_abs_diff_eq!(s.ap, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn video_ap_is_input_order_invariant() {
        let m0 = mask_cells(4, &[(0, 0), (1, 0)]);
        let m1 = mask_cells(4, &[(2, 2), (3, 2)]);
        let near_m1 = mask_cells(4, &[(2, 2), (3, 2), (3, 3)]);
        let gts = vec![gt(0, 1, vec![Some(m0.clone())]), gt(1, 1, vec![Some(m1)])];
        let preds = vec![
            pred(0, 1, 0.9, vec![Some(m0)]),
            pred(1, 1, 0.7, vec![Some(near_m1)]),
            pred(2, 1, 0.3, vec![Some(mask_cells(4, &[(0, 3)]))]),
        ];
        let a = video_ap(&preds, &gts, &iou_threshold_grid()).unwrap();
        let mut shuffled = preds.clone();
        shuffled.reverse();
        let b = video_ap(&shuffled, &gts, &iou_threshold_grid()).unwrap();
        assert_eq!(a.ap, b.ap);
        assert_eq!(a.ar10, b.ar10);
    }

    #[test]
    fn relabeling_track_ids_changes_nothing() {
        let m0 = mask_cells(4, &[(0, 0), (1, 0)]);
        let m1 = mask_cells(4, &[(2, 2), (3, 2)]);
        let gts = vec![gt(0, 1, vec![Some(m0.clone()), Some(m0.clone())])];
        let preds = vec![
            pred(5, 1, 0.9, vec![Some(m0.clone()), Some(m0.clone())]),
            pred(6, 1, 0.4, vec![Some(m1.clone()), Some(m1.clone())]),
        ];
        let relabeled = vec![
            pred(1006, 1, 0.9, vec![Some(m0.clone()), Some(m0)]),
            pred(5, 1, 0.4, vec![Some(m1.clone()), Some(m1)]),
        ];
        let a = evaluate(&preds, &gts).unwrap();
        let b = evaluate(&relabeled, &gts).unwrap();
        assert_eq!(a.ap, b.ap);
        assert_eq!(a.mota, b.mota);
    }

    #[test]
    fn mota_hand_trace_point_eight() {
        // Two gt tracks over 5 frames = 10 gt objects. The first prediction
        // misses one frame (1 FN), a third prediction is spurious for one
        // frame (1 FP), no switches: 1 - 2/10 = 0.8.
        let ma = mask_cells(4, &[(0, 0)]);
        let mb = mask_cells(4, &[(3, 3)]);
        let junk = mask_cells(4, &[(0, 3)]);
        let gts = vec![
            gt(0, 1, vec![Some(ma.clone()); 5]),
            gt(1, 1, vec![Some(mb.clone()); 5]),
        ];
        let mut a_masks = vec![Some(ma.clone()); 5];
        a_masks[4] = None;
        let preds = vec![
            pred(0, 1, 1.0, a_masks),
            pred(1, 1, 1.0, vec![Some(mb); 5]),
            pred(2, 1, 1.0, vec![Some(junk), None, None, None, None]),
        ];
        let s = mota_stats(&preds, &gts).unwrap();
        assert_eq!(s.total_gt, 10);
        assert_eq!(s.false_negatives, 1);
        assert_eq!(s.false_positives, 1);
        assert_eq!(s.id_switches, 0);
        assert_abs_diff_eq!(s.mota, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn mota_identity_swap_counts_two_switches() {
        // Predictions follow the right objects for 3 frames, then swap for
        // the remaining 3: exactly 2 switch events, no misses, no FPs.
        let ma = mask_cells(4, &[(0, 0)]);
        let mb = mask_cells(4, &[(3, 3)]);
        let gts = vec![
            gt(0, 1, vec![Some(ma.clone()); 6]),
            gt(1, 1, vec![Some(mb.clone()); 6]),
        ];
        let x: Vec<Option<Mask>> = (0..6)
            .map(|t| Some(if t < 3 { ma.clone() } else { mb.clone() }))
            .collect();
        let y: Vec<Option<Mask>> = (0..6)
            .map(|t| Some(if t < 3 { mb.clone() } else { ma.clone() }))
            .collect();
        let preds = vec![pred(0, 1, 1.0, x), pred(1, 1, 1.0, y)];
        let s = mota_stats(&preds, &gts).unwrap();
        assert_eq!(s.id_switches, 2);
        assert_eq!(s.false_negatives, 0);
        assert_eq!(s.false_positives, 0);
        assert_abs_diff_eq!(s.mota, 1.0 - 2.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn mota_can_go_negative() {
        let m = mask_cells(4, &[(0, 0)]);
        let gts = vec![gt(0, 1, vec![Some(m)])];
        let preds: Vec<PredTrack> = (0..3)
            .map(|i| pred(i, 1, 1.0, vec![Some(mask_cells(4, &[(3, 3 - i as usize)]))]))
            .collect();
        let s = mota_stats(&preds, &gts).unwrap();
        assert_eq!(s.false_negatives, 1);
        assert_eq!(s.false_positives, 3);
        assert_abs_diff_eq!(s.mota, -3.0, epsilon = 1e-12);
        assert!(s.mota <= 1.0);
    }

    #[test]
    fn mota_zero_gt_errors() {
        let m = mask_cells(4, &[(0, 0)]);
        let preds = vec![pred(0, 1, 1.0, vec![Some(m)])];
        assert!(mota_stats(&preds, &[]).is_err());
    }

    #[test]
    fn assemble_tracks_groups_by_id() {
        let m0 = mask_cells(4, &[(0, 0)]);
        let m1 = mask_cells(4, &[(3, 3)]);
        let frames = vec![
            vec![
                FrameObject {
                    track_id: 2,
                    category: 1,
                    confidence: 0.8,
                    mask: m0.clone(),
                },
                FrameObject {
                    track_id: 5,
                    category: 2,
                    confidence: 0.6,
                    mask: m1.clone(),
                },
            ],
            vec![FrameObject {
                track_id: 2,
                category: 1,
                confidence: 0.4,
                mask: m0.clone(),
            }],
        ];
        let tracks = assemble_pred_tracks(&frames);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].track_id, 2);
        assert_abs_diff_eq!(tracks[0].confidence, 0.6, epsilon = 1e-12);
        assert!(tracks[0].masks[0].is_some() && tracks[0].masks[1].is_some());
        assert_eq!(tracks[1].track_id, 5);
        assert!(tracks[1].masks[1].is_none());
        let gt_tracks = assemble_gt_tracks(&frames);
        assert_eq!(gt_tracks.len(), 2);
        assert_eq!(gt_tracks[0].category, 1);
    }
}
