//! Independent reference implementations and seeded generators shared by the
//! integration suites.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shipdet::geometry::obb_iou;
use shipdet::ObbBox;

pub type Corpus = BTreeMap<String, Vec<ObbBox>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn boxed(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> ObbBox {
    ObbBox::canonicalize(cx, cy, a, b, theta).expect("generated sides are positive")
}

/// Box near `base`: centre shifted by up to `shift`, sides scaled by up to
/// `scale`, angle turned by up to `turn` radians.
pub fn jitter(r: &mut ChaCha8Rng, base: &ObbBox, shift: f64, scale: f64, turn: f64) -> ObbBox {
    boxed(
        base.cx + r.random_range(-shift..=shift),
        base.cy + r.random_range(-shift..=shift),
        base.h * (1.0 + r.random_range(-scale..=scale)),
        base.w * (1.0 + r.random_range(-scale..=scale)),
        base.theta + r.random_range(-turn..=turn),
    )
}

/// Score that is often shared with other boxes (multiples of 0.1), so tie
/// rules get exercised.
pub fn tied_score(r: &mut ChaCha8Rng) -> f64 {
    if r.random_bool(0.4) {
        f64::from(r.random_range(1..=9u8)) / 10.0
    } else {
        r.random_range(0.01..1.0)
    }
}

// ---------------------------------------------------------------------------
// Weighted rotated boxes fusion, written out step by step.

#[derive(Debug, Clone, Copy)]
pub struct FusedRef {
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
    pub theta: f64,
}

fn wrap_half_open(t: f64) -> f64 {
    let w = t - PI * ((t + FRAC_PI_2) / PI).floor();
    if w >= FRAC_PI_2 {
        w - PI
    } else {
        w
    }
}

fn fuse_ref(members: &[ObbBox]) -> FusedRef {
    let first = members[0];
    if members.len() == 1 {
        return FusedRef {
            score: first.score.unwrap(),
            cx: first.cx,
            cy: first.cy,
            h: first.h,
            w: first.w,
            theta: first.theta,
        };
    }
    let mut total = 0.0;
    for m in members {
        total += m.score.unwrap();
    }
    let score = total / members.len() as f64;
    let weights: Vec<f64> = if total > 0.0 {
        members.iter().map(|m| m.score.unwrap()).collect()
    } else {
        vec![1.0; members.len()]
    };
    let wsum: f64 = weights.iter().sum();
    let wmean = |f: &dyn Fn(&ObbBox) -> f64| members.iter().zip(&weights).map(|(m, c)| c * f(m)).sum::<f64>() / wsum;

    // Angles are only defined modulo pi; bring each within a quarter turn of
    // the first member before averaging directions.
    let aligned = |m: &ObbBox| {
        let d = (m.theta - first.theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
        first.theta + d
    };
    let s = wmean(&|m| aligned(m).sin());
    let c = wmean(&|m| aligned(m).cos());
    let (h, w) = (wmean(&|m| m.h), wmean(&|m| m.w));
    let (mut h, mut w, mut theta) = (h, w, s.atan2(c));
    if h < w {
        std::mem::swap(&mut h, &mut w);
        theta += FRAC_PI_2;
    }
    FusedRef {
        score,
        cx: wmean(&|m| m.cx),
        cy: wmean(&|m| m.cy),
        h,
        w,
        theta: wrap_half_open(theta),
    }
}

/// Reference fusion: visit boxes by descending score (detection before
/// segmentation, then input order); each box joins the first cluster whose
/// current fused box overlaps it by at least `thr`, else opens a cluster.
pub fn wrbf_oracle(det: &[ObbBox], seg: &[ObbBox], thr: f64) -> Vec<FusedRef> {
    let mut order: Vec<(f64, usize, usize, ObbBox)> = Vec::new();
    for (i, b) in det.iter().enumerate() {
        order.push((b.score.unwrap(), 0, i, *b));
    }
    for (i, b) in seg.iter().enumerate() {
        order.push((b.score.unwrap(), 1, i, *b));
    }
    order.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut lists: Vec<Vec<ObbBox>> = Vec::new();
    let mut fused: Vec<FusedRef> = Vec::new();
    for (_, _, _, b) in order {
        let mut home = None;
        for (k, f) in fused.iter().enumerate() {
            let fb = ObbBox {
                cx: f.cx,
                cy: f.cy,
                h: f.h,
                w: f.w,
                theta: f.theta,
                score: Some(f.score),
            };
            if obb_iou(&fb, &b) >= thr {
                home = Some(k);
                break;
            }
        }
        match home {
            Some(k) => {
                lists[k].push(b);
                fused[k] = fuse_ref(&lists[k]);
            }
            None => {
                lists.push(vec![b]);
                fused.push(fuse_ref(&[b]));
            }
        }
    }
    let mut idx: Vec<usize> = (0..fused.len()).collect();
    idx.sort_by(|&a, &b| fused[b].score.partial_cmp(&fused[a].score).unwrap().then(a.cmp(&b)));
    idx.into_iter().map(|i| fused[i]).collect()
}

/// One WRBF instance: up to six boxes scattered around one or two ships.
pub fn wrbf_instance(r: &mut ChaCha8Rng) -> (Vec<ObbBox>, Vec<ObbBox>) {
    let ships: Vec<ObbBox> = (0..r.random_range(1..=2))
        .map(|_| {
            let w = r.random_range(6.0..20.0);
            boxed(
                r.random_range(20.0..80.0),
                r.random_range(20.0..80.0),
                w * r.random_range(1.0..5.0),
                w,
                r.random_range(-PI..PI),
            )
        })
        .collect();
    let total = r.random_range(1..=6usize);
    let n_det = r.random_range(0..=total);
    let make = |r: &mut ChaCha8Rng| {
        let ship = ships[r.random_range(0..ships.len())];
        let s = tied_score(r);
        jitter(r, &ship, 3.0, 0.15, 0.2).with_score(s).unwrap()
    };
    let det = (0..n_det).map(|_| make(r)).collect();
    let seg = (0..total - n_det).map(|_| make(r)).collect();
    (det, seg)
}

// ---------------------------------------------------------------------------
// Evaluation by brute force.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteEval {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Matches a score-ordered list of predictions of one image greedily.
fn naive_tp(preds: &[&ObbBox], gts: &[ObbBox], thr: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for p in preds {
        let mut best = -1.0;
        let mut best_j = usize::MAX;
        for (j, g) in gts.iter().enumerate() {
            let v = obb_iou(p, g);
            if !used[j] && v > best {
                best = v;
                best_j = j;
            }
        }
        if best_j != usize::MAX && best >= thr {
            used[best_j] = true;
            tp += 1;
        }
    }
    tp
}

/// AP by recomputing precision and recall from scratch for every cut-off
/// rank, then integrating the envelope `p(r) = max{P_k : R_k >= r}` interval
/// by interval, probing each interval at its midpoint.
pub fn brute_eval(preds: &Corpus, gts: &Corpus, thr: f64) -> BruteEval {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    let mut ranked: Vec<(f64, &String, usize)> = Vec::new();
    for (id, ps) in preds {
        for (i, p) in ps.iter().enumerate() {
            ranked.push((p.score.unwrap(), id, i));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

    let empty = Vec::new();
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut last_tp = 0;
    for k in 1..=ranked.len() {
        let mut tp = 0;
        for id in preds.keys() {
            let top: Vec<&ObbBox> = ranked[..k]
                .iter()
                .filter(|e| e.1 == id)
                .map(|e| &preds[id][e.2])
                .collect();
            tp += naive_tp(&top, gts.get(id).unwrap_or(&empty), thr);
        }
        samples.push((tp as f64 / n_gt as f64, tp as f64 / k as f64));
        last_tp = tp;
    }

    let mut cuts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    cuts.push(0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut ap = 0.0;
    for pair in cuts.windows(2) {
        let mid = 0.5 * (pair[0] + pair[1]);
        let env = samples
            .iter()
            .filter(|s| s.0 >= mid)
            .map(|s| s.1)
            .fold(0.0, f64::max);
        ap += (pair[1] - pair[0]) * env;
    }
    BruteEval {
        ap,
        tp: last_tp,
        fp: ranked.len() - last_tp,
        fn_: n_gt - last_tp,
    }
}

/// One evaluation instance: one to three images, at most five ground truths
/// and ten predictions overall, at least one ground truth.
pub fn eval_instance(r: &mut ChaCha8Rng, tag: &str) -> (Corpus, Corpus) {
    let n_images = r.random_range(1..=3usize);
    let n_gt = r.random_range(1..=5usize);
    let n_pred = r.random_range(0..=10usize);
    let ids: Vec<String> = (0..n_images).map(|i| format!("{tag}_{i}")).collect();
    let mut gts = Corpus::new();
    for _ in 0..n_gt {
        let w = r.random_range(8.0..20.0);
        let b = boxed(
            r.random_range(30.0..170.0),
            r.random_range(30.0..170.0),
            w * r.random_range(1.0..5.0),
            w,
            r.random_range(-PI..PI),
        );
        gts.entry(ids[r.random_range(0..n_images)].clone()).or_default().push(b);
    }
    let mut preds = Corpus::new();
    for _ in 0..n_pred {
        let id = ids[r.random_range(0..n_images)].clone();
        let s = tied_score(r);
        let b = match gts.get(&id) {
            Some(g) if r.random_bool(0.75) => {
                let base = g[r.random_range(0..g.len())];
                jitter(r, &base, 2.0, 0.15, 0.12)
            }
            _ => {
                let w = r.random_range(8.0..20.0);
                boxed(
                    r.random_range(30.0..170.0),
                    r.random_range(30.0..170.0),
                    w * r.random_range(1.0..5.0),
                    w,
                    r.random_range(-PI..PI),
                )
            }
        };
        preds.entry(id).or_default().push(b.with_score(s).unwrap());
    }
    (preds, gts)
}

/// Snaps box parameters to what survives a trip through detection records
/// (degrees on file), so file-based and in-memory evaluations agree.
pub fn through_records(set: &Corpus) -> Corpus {
    set.iter()
        .map(|(id, boxes)| {
            let boxes = boxes
                .iter()
                .map(|b| {
                    let rec = shipdet::io::DetectionRecord::from_box(id, b);
                    let line = rec.to_json_line();
                    let back: shipdet::io::DetectionRecord = serde_json::from_str(&line).unwrap();
                    back.to_box().unwrap()
                })
                .collect();
            (id.clone(), boxes)
        })
        .collect()
}

/// The committed evaluation corpus: 200 instances merged into one file,
/// images tagged by instance.
pub fn eval_corpus(seed: u64) -> (Corpus, Corpus) {
    let mut r = rng(seed);
    let (mut preds, mut gts) = (Corpus::new(), Corpus::new());
    for k in 0..200 {
        let (p, g) = eval_instance(&mut r, &format!("inst{k:03}"));
        preds.extend(through_records(&p));
        gts.extend(through_records(&g));
    }
    (preds, gts)
}

pub const CORPUS_SEED: u64 = 20_240_611;

pub fn records_text(set: &Corpus) -> String {
    let mut buf = Vec::new();
    shipdet::io::write_detections(&mut buf, set).unwrap();
    String::from_utf8(buf).unwrap()
}
