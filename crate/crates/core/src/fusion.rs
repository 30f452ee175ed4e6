//! Post-processing of scored oriented boxes: rotated NMS, linear soft-NMS and
//! weighted rotated boxes fusion (WRBF).

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::geometry::{obb_iou, ObbBox};

/// Which branch produced a box. Carried for diagnostics only; fusion weights
/// by confidence alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Detection,
    Segmentation,
}

fn check_iou_thr(iou_thr: f64) -> Result<()> {
    if iou_thr > 0.0 && iou_thr < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("IoU threshold {iou_thr} outside (0, 1)")))
    }
}

/// Indices of `boxes` by descending score; equal scores keep input order.
fn by_score_desc(boxes: &[ObbBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score_or_zero().total_cmp(&boxes[a].score_or_zero()));
    order
}

/// Greedy rotated NMS. Survivors are returned by descending score and every
/// surviving pair has IoU below `iou_thr`.
pub fn rotated_nms(boxes: &[ObbBox], iou_thr: f64) -> Result<Vec<ObbBox>> {
    check_iou_thr(iou_thr)?;
    let mut keep: Vec<ObbBox> = Vec::new();
    for i in by_score_desc(boxes) {
        let cand = &boxes[i];
        if keep.iter().all(|k| obb_iou(k, cand) < iou_thr) {
            keep.push(*cand);
        }
    }
    Ok(keep)
}

/// Linear soft-NMS: after each selection, remaining boxes overlapping the
/// selected one with IoU >= `iou_thr` have their score multiplied by
/// `1 - IoU`. Boxes whose score falls below `score_floor` are dropped.
pub fn soft_nms(boxes: &[ObbBox], iou_thr: f64, score_floor: f64) -> Result<Vec<ObbBox>> {
    check_iou_thr(iou_thr)?;
    if !(0.0..1.0).contains(&score_floor) {
        return Err(Error::InvalidArgument(format!(
            "score floor {score_floor} outside [0, 1)"
        )));
    }
    let mut pool: Vec<ObbBox> = boxes.iter().filter(|b| b.score_or_zero() >= score_floor).copied().collect();
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let best = by_score_desc(&pool)[0];
        let sel = pool.remove(best);
        for b in pool.iter_mut() {
            let iou = obb_iou(&sel, b);
            if iou >= iou_thr {
                b.score = Some(b.score_or_zero() * (1.0 - iou));
            }
        }
        pool.retain(|b| b.score_or_zero() >= score_floor);
        out.push(sel);
    }
    Ok(out)
}

/// A group of boxes fused into one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCluster {
    pub members: Vec<(ObbBox, Source)>,
    pub fused: ObbBox,
}

impl FusionCluster {
    fn seed(b: ObbBox, source: Source) -> Self {
        Self {
            members: vec![(b, source)],
            fused: b,
        }
    }

    fn absorb(&mut self, b: ObbBox, source: Source) -> Result<()> {
        self.members.push((b, source));
        self.fused = fuse_members(self.members.iter().map(|(m, _)| m))?;
        Ok(())
    }
}

/// Shifts `theta` by multiples of `pi` into `(reference - pi/2, reference + pi/2]`.
fn align_angle(theta: f64, reference: f64) -> f64 {
    let mut t = theta;
    while t - reference > FRAC_PI_2 {
        t -= PI;
    }
    while t - reference <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Fused box of a cluster: mean confidence, confidence-weighted centre and
/// sides, and the confidence-weighted mean direction of the member angles
/// after aligning them to the first (seed) member.
fn fuse_members<'a>(members: impl Iterator<Item = &'a ObbBox> + Clone) -> Result<ObbBox> {
    let mut it = members.clone();
    let seed = *it.next().ok_or(Error::Empty("fusion cluster"))?;
    if it.next().is_none() {
        return Ok(seed);
    }

    let (mut count, mut conf_sum) = (0usize, 0.0);
    for m in members.clone() {
        count += 1;
        conf_sum += m.score_or_zero();
    }
    // All-zero confidences fall back to equal weights.
    let weight = |m: &ObbBox| if conf_sum > 0.0 { m.score_or_zero() } else { 1.0 };
    let total_weight = if conf_sum > 0.0 { conf_sum } else { count as f64 };

    let (mut cx, mut cy, mut h, mut w, mut cos, mut sin) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for m in members {
        let c = weight(m);
        cx += c * m.cx;
        cy += c * m.cy;
        h += c * m.h;
        w += c * m.w;
        let t = align_angle(m.theta, seed.theta);
        cos += c * t.cos();
        sin += c * t.sin();
    }
    let mut fused = ObbBox::canonicalize(
        cx / total_weight,
        cy / total_weight,
        h / total_weight,
        w / total_weight,
        (sin / total_weight).atan2(cos / total_weight),
    )?;
    fused.score = Some(conf_sum / count as f64);
    Ok(fused)
}

/// Weighted rotated boxes fusion of detection-branch and segmentation-branch
/// boxes.
///
/// Boxes are visited by descending confidence (ties: detection boxes first,
/// then input order). Each joins the first existing cluster, in creation
/// order, whose fused box has IoU >= `iou_thr` with it, otherwise it seeds a
/// new cluster. Clusters are returned by descending fused confidence (ties
/// in creation order).
pub fn wrbf_clusters(det_boxes: &[ObbBox], seg_boxes: &[ObbBox], iou_thr: f64) -> Result<Vec<FusionCluster>> {
    check_iou_thr(iou_thr)?;
    let mut all: Vec<(ObbBox, Source)> = det_boxes
        .iter()
        .map(|b| (*b, Source::Detection))
        .chain(seg_boxes.iter().map(|b| (*b, Source::Segmentation)))
        .collect();
    all.sort_by(|a, b| b.0.score_or_zero().total_cmp(&a.0.score_or_zero()));

    let mut clusters: Vec<FusionCluster> = Vec::new();
    for (b, src) in all {
        match clusters.iter_mut().find(|c| obb_iou(&c.fused, &b) >= iou_thr) {
            Some(c) => c.absorb(b, src)?,
            None => clusters.push(FusionCluster::seed(b, src)),
        }
    }
    clusters.sort_by(|a, b| b.fused.score_or_zero().total_cmp(&a.fused.score_or_zero()));
    Ok(clusters)
}

/// Fused boxes from [`wrbf_clusters`].
pub fn wrbf(det_boxes: &[ObbBox], seg_boxes: &[ObbBox], iou_thr: f64) -> Result<Vec<ObbBox>> {
    Ok(wrbf_clusters(det_boxes, seg_boxes, iou_thr)?
        .into_iter()
        .map(|c| c.fused)
        .collect())
}
