//! Detection evaluation (matching, precision/recall/F1, AP) and despeckling
//! quality metrics (ENL, EPD-ROA), plus a multiplicative speckle simulator.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::geometry::{obb_iou, ObbBox};
use crate::grid::Grid;

/// Default IoU threshold for AP50 and for P/R/F1.
pub const IOU_THR: f64 = 0.5;
/// Stricter IoU threshold for AP75.
pub const IOU_THR_HIGH: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutcome {
    /// Index into the prediction slice passed to [`match_detections`].
    pub index: usize,
    pub score: f64,
    pub true_positive: bool,
    /// Matched ground-truth index for true positives.
    pub gt: Option<usize>,
    /// Best IoU against the ground truths still unmatched at this point.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Outcomes in processing order (descending score, ties by index).
    pub outcomes: Vec<PredictionOutcome>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

impl MatchResult {
    pub fn n_predictions(&self) -> usize {
        self.n_tp + self.n_fp
    }

    pub fn n_ground_truth(&self) -> usize {
        self.n_tp + self.n_fn
    }
}

fn check_iou_thr(iou_thr: f64) -> Result<()> {
    if iou_thr > 0.0 && iou_thr < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("IoU threshold {iou_thr} outside (0, 1)")))
    }
}

/// Greedy matching: predictions by descending score each take the unmatched
/// ground truth with the highest IoU (ties go to the lower index) and are
/// true positives iff that IoU reaches `iou_thr`.
pub fn match_detections(preds: &[ObbBox], gts: &[ObbBox], iou_thr: f64) -> Result<MatchResult> {
    check_iou_thr(iou_thr)?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score_or_zero().total_cmp(&preds[a].score_or_zero()));

    let mut taken = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(preds.len());
    let (mut n_tp, mut n_fp) = (0, 0);
    for i in order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let iou = obb_iou(p, g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        let iou = best.map_or(0.0, |b| b.1);
        let hit = best.filter(|&(_, v)| v >= iou_thr).map(|b| b.0);
        if let Some(j) = hit {
            taken[j] = true;
            n_tp += 1;
        } else {
            n_fp += 1;
        }
        outcomes.push(PredictionOutcome {
            index: i,
            score: p.score_or_zero(),
            true_positive: hit.is_some(),
            gt: hit,
            iou,
        });
    }
    Ok(MatchResult {
        outcomes,
        n_tp,
        n_fp,
        n_fn: gts.len() - n_tp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 from match tallies. Empty denominators give 0.
pub fn precision_recall_f1(m: &MatchResult) -> PrecisionRecallF1 {
    prf_from_counts(m.n_tp, m.n_fp, m.n_fn)
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> PrecisionRecallF1 {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrecisionRecallF1 {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the prediction that produced this point.
    pub score: f64,
}

/// Precision-recall samples, one per prediction in descending score order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

/// Per-image boxes keyed by image id.
pub type DetectionSet = BTreeMap<String, Vec<ObbBox>>;

/// Aggregated evaluation of a whole corpus at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvaluation {
    pub curve: PrCurve,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

/// Matches every image (missing keys count as empty), then sweeps all
/// predictions globally by (score desc, image id, index).
pub fn evaluate_corpus(preds: &DetectionSet, gts: &DetectionSet, iou_thr: f64) -> Result<CorpusEvaluation> {
    check_iou_thr(iou_thr)?;
    let empty = Vec::new();
    let images: BTreeSet<&String> = preds.keys().chain(gts.keys()).collect();
    let mut flagged: Vec<(f64, &str, usize, bool)> = Vec::new();
    let (mut n_tp, mut n_fp, mut n_fn, mut n_gt) = (0, 0, 0, 0);
    for id in images {
        let p = preds.get(id).unwrap_or(&empty);
        let g = gts.get(id).unwrap_or(&empty);
        let m = match_detections(p, g, iou_thr)?;
        n_tp += m.n_tp;
        n_fp += m.n_fp;
        n_fn += m.n_fn;
        n_gt += g.len();
        flagged.extend(m.outcomes.iter().map(|o| (o.score, id.as_str(), o.index, o.true_positive)));
    }
    flagged.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(flagged.len());
    for (score, _, _, hit) in flagged {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(PrPoint {
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / (tp + fp) as f64,
            score,
        });
    }
    Ok(CorpusEvaluation {
        curve: PrCurve { points, n_gt },
        n_tp,
        n_fp,
        n_fn,
    })
}

/// Global precision-recall curve. Errors when there is no ground truth at all.
pub fn pr_curve(preds: &DetectionSet, gts: &DetectionSet, iou_thr: f64) -> Result<PrCurve> {
    if gts.values().all(|g| g.is_empty()) {
        return Err(Error::Empty("ground truth (recall is undefined)"));
    }
    Ok(evaluate_corpus(preds, gts, iou_thr)?.curve)
}

/// Area under the precision envelope (all-points interpolation), where the
/// envelope at recall `r` is the best precision at any recall `>= r`.
pub fn average_precision(c: &PrCurve) -> f64 {
    let mut envelope: Vec<f64> = c.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in c.points.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// Half-open pixel window `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSpec {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RegionSpec {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(g: &Grid) -> Self {
        Self::new(0, 0, g.width(), g.height())
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn validate(&self, g: &Grid) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidArgument(format!("empty region {self:?}")));
        }
        if self.x1 > g.width() || self.y1 > g.height() {
            return Err(Error::InvalidArgument(format!(
                "region {self:?} exceeds {}x{} grid",
                g.width(),
                g.height()
            )));
        }
        Ok(())
    }

    fn values<'a>(&self, g: &'a Grid) -> impl Iterator<Item = f64> + 'a {
        let r = *self;
        (r.y0..r.y1).flat_map(move |y| (r.x0..r.x1).map(move |x| g.get(x, y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enl {
    /// `mean^2 / variance`, `+inf` when the variance is zero.
    pub value: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub zero_variance: bool,
}

/// Equivalent number of looks over a homogeneous region.
pub fn enl(img: &Grid, region: &RegionSpec) -> Result<Enl> {
    region.validate(img)?;
    if region.area() < 2 {
        return Err(Error::InvalidArgument("ENL needs at least two pixels".into()));
    }
    let n = region.area() as f64;
    let mean = region.values(img).sum::<f64>() / n;
    let variance = region.values(img).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let zero_variance = variance == 0.0;
    Ok(Enl {
        value: if zero_variance {
            f64::INFINITY
        } else {
            mean * mean / variance
        },
        mean,
        variance,
        zero_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpdRoa {
    pub value: f64,
    pub pairs_used: usize,
    /// Pairs dropped because a divisor pixel was zero in either image.
    pub pairs_skipped: usize,
}

/// Edge preservation degree based on the ratio of average: the sum of
/// `|v1 / v2|` over adjacent pixel pairs of the denoised image divided by the
/// same sum on the original. Pairs slide by one pixel inside the region.
pub fn epd_roa(original: &Grid, denoised: &Grid, region: &RegionSpec, direction: Direction) -> Result<EpdRoa> {
    original.ensure_same_shape(denoised, "epd_roa")?;
    region.validate(original)?;
    let (dx, dy) = match direction {
        Direction::Horizontal => (1, 0),
        Direction::Vertical => (0, 1),
    };
    if region.width() < 1 + dx || region.height() < 1 + dy {
        return Err(Error::InvalidArgument(format!(
            "region {region:?} too small for {direction:?} pairs"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    let (mut used, mut skipped) = (0, 0);
    for y in region.y0..region.y1 - dy {
        for x in region.x0..region.x1 - dx {
            let (o1, o2) = (original.get(x, y), original.get(x + dx, y + dy));
            let (d1, d2) = (denoised.get(x, y), denoised.get(x + dx, y + dy));
            if o2 == 0.0 || d2 == 0.0 {
                skipped += 1;
                continue;
            }
            num += (d1 / d2).abs();
            den += (o1 / o2).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(format!(
            "all {skipped} pixel pairs have a zero divisor"
        )));
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("original image ratios sum to zero".into()));
    }
    Ok(EpdRoa {
        value: num / den,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

/// Mean of the horizontal and vertical EPD-ROA.
pub fn epd_roa_mean(original: &Grid, denoised: &Grid, region: &RegionSpec) -> Result<f64> {
    let h = epd_roa(original, denoised, region, Direction::Horizontal)?;
    let v = epd_roa(original, denoised, region, Direction::Vertical)?;
    Ok(0.5 * (h.value + v.value))
}

/// Multiplies every pixel by an independent `Gamma(looks, 1 / looks)` draw
/// (unit mean, variance `1 / looks`). Deterministic for a given seed.
pub fn simulate_speckle(clean: &Grid, looks: u32, seed: u64) -> Result<Grid> {
    if looks == 0 {
        return Err(Error::InvalidArgument("looks must be >= 1".into()));
    }
    if let Some(v) = clean.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("negative reflectivity {v}")));
    }
    let l = f64::from(looks);
    let gamma = Gamma::new(l, 1.0 / l).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = clean.data().iter().map(|&v| v * gamma.sample(&mut rng)).collect();
    Grid::new(clean.width(), clean.height(), data)
}
