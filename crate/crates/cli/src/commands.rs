use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde_json::json;
use shipdet::fusion::{rotated_nms, soft_nms, wrbf_clusters};
use shipdet::geometry::obb_iou;
use shipdet::io::{parse_detections, read_grid, write_detections, write_grid, DetectionRecord, RecordKind};
use shipdet::losses::{detection_loss, joint_loss, AnchorPrediction, AnchorTarget, LossConfig, RegressionTarget};
use shipdet::masks::{mask_to_obbs, rotated_gaussian_mask, AxisPairing, GaussParams};
use shipdet::metrics::{
    average_precision, enl, epd_roa, evaluate_corpus, prf_from_counts, simulate_speckle, DetectionSet, Direction,
    RegionSpec,
};
use shipdet::{Grid, ObbBox};

use crate::report::{num, Report, Table};
use crate::{
    gradcheck, DespeckleArgs, EvalArgs, Failure, FuseArgs, GaussArgs, IouArgs, LossArgs, Mask2ObbArgs, Method,
    Pairing, SpeckleArgs,
};

/// A failed subcommand, possibly with a partial report worth printing.
pub struct Outcome {
    pub report: Option<Report>,
    pub failure: Failure,
}

impl<E: Into<anyhow::Error>> From<E> for Outcome {
    fn from(e: E) -> Self {
        Outcome {
            report: None,
            failure: Failure::Input(e.into()),
        }
    }
}

type CmdResult = std::result::Result<Report, Outcome>;

fn invariant(report: Option<Report>, msg: String) -> Outcome {
    Outcome {
        report,
        failure: Failure::Invariant(msg),
    }
}

fn load(path: &Path, kind: RecordKind) -> anyhow::Result<DetectionSet> {
    Ok(parse_detections(path, kind)
        .with_context(|| format!("reading {}", path.display()))?
        .boxes)
}

fn check_canonical(b: &ObbBox) -> Result<(), String> {
    let ok = b.w > 0.0
        && b.h >= b.w
        && (-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&b.theta)
        && b.score.is_none_or(|s| (0.0..=1.0).contains(&s));
    if ok {
        Ok(())
    } else {
        Err(format!("non-canonical output box {b:?}"))
    }
}

fn write_set(path: &Path, set: &DetectionSet) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_detections(std::io::BufWriter::new(file), set)?;
    Ok(())
}

/// Table and records listing detection boxes.
fn box_report(title: &str, set: &DetectionSet) -> Report {
    let mut table = Table::new(title, &["image_id", "cx", "cy", "h", "w", "theta_deg", "score"]);
    let mut records = Vec::new();
    for (id, boxes) in set {
        for b in boxes {
            let rec = DetectionRecord::from_box(id, b);
            table.push(vec![
                id.clone(),
                num(rec.cx),
                num(rec.cy),
                num(rec.h),
                num(rec.w),
                num(rec.theta_deg),
                rec.score.map_or("-".into(), num),
            ]);
            records.push(serde_json::to_value(&rec).expect("records serialize"));
        }
    }
    Report {
        tables: vec![table],
        records,
    }
}

pub fn iou(a: IouArgs) -> CmdResult {
    let kind = if a.ground_truth {
        RecordKind::GroundTruth
    } else {
        RecordKind::Prediction
    };
    let left = load(&a.file, kind)?;
    let right = a.against.as_deref().map(|p| load(p, kind)).transpose()?;
    let empty = Vec::new();
    let images: BTreeSet<&String> = left.keys().chain(right.iter().flat_map(|r| r.keys())).collect();

    let mut table = Table::new("pairwise IoU", &["image_id", "i", "j", "iou"]);
    let mut records = Vec::new();
    for id in images {
        let l = left.get(id).unwrap_or(&empty);
        let pairs: Vec<(usize, usize, f64)> = match &right {
            Some(r) => {
                let r = r.get(id).unwrap_or(&empty);
                (0..l.len())
                    .flat_map(|i| (0..r.len()).map(move |j| (i, j)))
                    .map(|(i, j)| (i, j, obb_iou(&l[i], &r[j])))
                    .collect()
            }
            None => (0..l.len())
                .flat_map(|i| (i + 1..l.len()).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, obb_iou(&l[i], &l[j])))
                .collect(),
        };
        for (i, j, v) in pairs {
            if !(0.0..=1.0).contains(&v) {
                return Err(invariant(None, format!("IoU {v} outside [0, 1] for {id} ({i}, {j})")));
            }
            table.push(vec![id.clone(), i.to_string(), j.to_string(), num(v)]);
            records.push(json!({"record": "iou", "image_id": id, "i": i, "j": j, "iou": v}));
        }
    }
    Ok(Report {
        tables: vec![table],
        records,
    })
}

pub fn fuse(a: FuseArgs) -> CmdResult {
    let det = load(&a.det, RecordKind::Prediction)?;
    let seg = a.seg.as_deref().map(|p| load(p, RecordKind::Prediction)).transpose()?.unwrap_or_default();
    let empty = Vec::new();
    let images: BTreeSet<&String> = det.keys().chain(seg.keys()).collect();

    let mut fused = DetectionSet::new();
    for id in images {
        let d = det.get(id).unwrap_or(&empty);
        let s = seg.get(id).unwrap_or(&empty);
        let all: Vec<ObbBox> = d.iter().chain(s).copied().collect();
        let out = match a.method {
            Method::Nms => rotated_nms(&all, a.iou_thr)?,
            Method::Softnms => soft_nms(&all, a.iou_thr, a.score_floor)?,
            Method::Wrbf => wrbf_clusters(d, s, a.iou_thr)?.into_iter().map(|c| c.fused).collect(),
        };
        for b in &out {
            check_canonical(b).map_err(|m| invariant(None, format!("{id}: {m}")))?;
        }
        fused.insert(id.clone(), out);
    }
    if let Some(path) = &a.out {
        write_set(path, &fused)?;
    }
    let title = match a.method {
        Method::Nms => "rotated NMS",
        Method::Softnms => "soft-NMS",
        Method::Wrbf => "weighted rotated boxes fusion",
    };
    Ok(box_report(title, &fused))
}

pub fn gaussmask(a: GaussArgs) -> CmdResult {
    let params = GaussParams {
        lambda_w: a.lambda_w,
        lambda_h: a.lambda_h,
        pairing: match a.pairing {
            Pairing::Literal => AxisPairing::Literal,
            Pairing::LongAxis => AxisPairing::LongAxis,
        },
    };
    let boxes: Vec<ObbBox> = match (&a.boxes, a.cx, a.cy, a.h, a.w, a.theta_deg) {
        (Some(path), ..) => {
            let id = a.image_id.as_deref().unwrap_or_default();
            let set = load(path, RecordKind::GroundTruth)?;
            match set.get(id) {
                Some(b) => b.clone(),
                None => return Err(anyhow!("no boxes for image `{id}` in {}", path.display()).into()),
            }
        }
        (None, Some(cx), Some(cy), Some(h), Some(w), Some(t)) => vec![ObbBox::from_degrees(cx, cy, h, w, t)?],
        _ => return Err(anyhow!("give either --boxes with --image-id, or all of --cx --cy --h --w --theta-deg").into()),
    };

    let mut grid = Grid::filled(a.width, a.height, 0.0)?;
    for b in &boxes {
        let m = rotated_gaussian_mask(b, a.width, a.height, &params)?;
        grid = Grid::new(
            a.width,
            a.height,
            grid.data().iter().zip(m.data()).map(|(x, y)| x.max(*y)).collect(),
        )?;
    }
    let max = grid.data().iter().cloned().fold(0.0, f64::max);
    if max > 1.0 {
        return Err(invariant(None, format!("mask value {max} above 1")));
    }
    write_grid(&a.out, &grid).with_context(|| format!("writing {}", a.out.display()))?;

    let mean = grid.data().iter().sum::<f64>() / grid.len() as f64;
    let mut table = Table::new("gaussian mask", &["width", "height", "boxes", "max", "mean"]);
    table.push(vec![
        a.width.to_string(),
        a.height.to_string(),
        boxes.len().to_string(),
        num(max),
        num(mean),
    ]);
    Ok(Report {
        tables: vec![table],
        records: vec![json!({
            "record": "gaussmask", "width": a.width, "height": a.height,
            "boxes": boxes.len(), "max": max, "mean": mean,
        })],
    })
}

pub fn mask2obb(a: Mask2ObbArgs) -> CmdResult {
    let grid = read_grid(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let boxes = mask_to_obbs(&grid, a.tau, a.min_area)?;
    for b in &boxes {
        check_canonical(b).map_err(|m| invariant(None, m))?;
    }
    let set: DetectionSet = [(a.image_id, boxes)].into();
    if let Some(path) = &a.out {
        write_set(path, &set)?;
    }
    Ok(box_report("boxes from mask", &set))
}

fn ap_label(thr: f64) -> String {
    format!("AP{}", (thr * 100.0).round())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let preds = load(&a.pred, RecordKind::Prediction)?;
    let gts = load(&a.gt, RecordKind::GroundTruth)?;
    let n_gt: usize = gts.values().map(Vec::len).sum();
    let n_pred: usize = preds.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(anyhow!("{} holds no ground truth; recall and AP are undefined", a.gt.display()).into());
    }

    let empty = Vec::new();
    let images: BTreeSet<&String> = preds.keys().chain(gts.keys()).collect();
    let mut per_image = Table::new(
        format!("per image at IoU {}", a.iou_thr),
        &["image_id", "pred", "gt", "tp", "fp", "fn", "precision", "recall", "f1"],
    );
    let mut records = Vec::new();
    for id in images {
        let p = preds.get(id).unwrap_or(&empty);
        let g = gts.get(id).unwrap_or(&empty);
        let m = shipdet::metrics::match_detections(p, g, a.iou_thr)?;
        let prf = prf_from_counts(m.n_tp, m.n_fp, m.n_fn);
        per_image.push(vec![
            id.clone(),
            p.len().to_string(),
            g.len().to_string(),
            m.n_tp.to_string(),
            m.n_fp.to_string(),
            m.n_fn.to_string(),
            num(prf.precision),
            num(prf.recall),
            num(prf.f1),
        ]);
        records.push(json!({
            "record": "image", "image_id": id, "iou_thr": a.iou_thr,
            "tp": m.n_tp, "fp": m.n_fp, "fn": m.n_fn,
            "precision": prf.precision, "recall": prf.recall, "f1": prf.f1,
        }));
    }

    let mut summary = Table::new(
        "summary",
        &["iou_thr", "tp", "fp", "fn", "precision", "recall", "f1", "ap"],
    );
    let mut pr_records = Vec::new();
    let mut aps = Vec::new();
    for thr in [a.iou_thr, a.iou_thr_high] {
        let ev = evaluate_corpus(&preds, &gts, thr)?;
        let prf = prf_from_counts(ev.n_tp, ev.n_fp, ev.n_fn);
        let ap = average_precision(&ev.curve);
        if ev.n_tp + ev.n_fp != n_pred || ev.n_tp + ev.n_fn != n_gt || !(0.0..=1.0).contains(&ap) {
            return Err(invariant(
                None,
                format!("tallies at IoU {thr}: tp {} fp {} fn {} ap {ap}", ev.n_tp, ev.n_fp, ev.n_fn),
            ));
        }
        summary.push(vec![
            num(thr),
            ev.n_tp.to_string(),
            ev.n_fp.to_string(),
            ev.n_fn.to_string(),
            num(prf.precision),
            num(prf.recall),
            num(prf.f1),
            num(ap),
        ]);
        records.push(json!({
            "record": "summary", "iou_thr": thr, "tp": ev.n_tp, "fp": ev.n_fp, "fn": ev.n_fn,
            "precision": prf.precision, "recall": prf.recall, "f1": prf.f1, "ap": ap,
        }));
        if a.pr_points {
            for (rank, pt) in ev.curve.points.iter().enumerate() {
                pr_records.push(json!({
                    "record": "pr_point", "iou_thr": thr, "rank": rank,
                    "recall": pt.recall, "precision": pt.precision, "score": pt.score,
                }));
            }
        }
        aps.push((ap_label(thr), ap));
    }
    records.extend(pr_records);
    let mut headline = Table::new("average precision", &aps.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>());
    headline.push(aps.iter().map(|(_, v)| num(*v)).collect());
    Ok(Report {
        tables: vec![per_image, summary, headline],
        records,
    })
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

pub fn despeckle_eval(a: DespeckleArgs) -> CmdResult {
    let original = read_grid(&a.original).with_context(|| format!("reading {}", a.original.display()))?;
    let denoised = read_grid(&a.denoised).with_context(|| format!("reading {}", a.denoised.display()))?;
    if !original.same_shape(&denoised) {
        return Err(anyhow!(
            "original is {}x{} but denoised is {}x{}",
            original.width(),
            original.height(),
            denoised.width(),
            denoised.height()
        ).into());
    }
    let regions = if a.region.is_empty() {
        vec![RegionSpec::full(&original)]
    } else {
        a.region
    };

    let mut table = Table::new(
        "despeckling metrics",
        &["region", "enl_original", "enl_denoised", "epd_hd", "epd_vd", "epd_mean", "skipped"],
    );
    let mut records = Vec::new();
    for r in regions {
        let label = format!("{},{},{},{}", r.x0, r.y0, r.x1, r.y1);
        let e_orig = enl(&original, &r)?;
        let e_den = enl(&denoised, &r)?;
        let hd = epd_roa(&original, &denoised, &r, Direction::Horizontal)?;
        let vd = epd_roa(&original, &denoised, &r, Direction::Vertical)?;
        let mean = 0.5 * (hd.value + vd.value);
        table.push(vec![
            label.clone(),
            num(e_orig.value),
            num(e_den.value),
            num(hd.value),
            num(vd.value),
            num(mean),
            (hd.pairs_skipped + vd.pairs_skipped).to_string(),
        ]);
        records.push(json!({
            "record": "despeckle", "region": [r.x0, r.y0, r.x1, r.y1],
            "enl_original": finite_or_null(e_orig.value), "enl_original_zero_variance": e_orig.zero_variance,
            "enl_denoised": finite_or_null(e_den.value), "enl_denoised_zero_variance": e_den.zero_variance,
            "epd_hd": hd.value, "epd_vd": vd.value, "epd_mean": mean,
            "skipped_hd": hd.pairs_skipped, "skipped_vd": vd.pairs_skipped,
        }));
    }
    Ok(Report {
        tables: vec![table],
        records,
    })
}

pub fn speckle_sim(a: SpeckleArgs) -> CmdResult {
    let clean = match &a.clean {
        Some(path) => read_grid(path).with_context(|| format!("reading {}", path.display()))?,
        None => Grid::filled(a.width, a.height, a.value)?,
    };
    let noisy = simulate_speckle(&clean, a.looks, a.seed)?;
    write_grid(&a.out, &noisy).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.clean_out {
        write_grid(path, &clean).with_context(|| format!("writing {}", path.display()))?;
    }
    let whole = RegionSpec::full(&noisy);
    let e = enl(&noisy, &whole)?;
    let mut table = Table::new("speckle simulation", &["width", "height", "looks", "seed", "mean", "enl"]);
    table.push(vec![
        noisy.width().to_string(),
        noisy.height().to_string(),
        a.looks.to_string(),
        a.seed.to_string(),
        num(e.mean),
        num(e.value),
    ]);
    Ok(Report {
        tables: vec![table],
        records: vec![json!({
            "record": "speckle", "width": noisy.width(), "height": noisy.height(),
            "looks": a.looks, "seed": a.seed, "mean": e.mean, "enl": finite_or_null(e.value),
        })],
    })
}

/// Detection loss of a small fixed batch, reported alongside the gradient
/// checks so the configured `r` and `gamma` show up in absolute values.
fn sample_detection_loss(cfg: &LossConfig) -> shipdet::Result<f64> {
    let reg = |tx, ty, tw, th, theta| RegressionTarget {
        tx,
        ty,
        tw,
        th,
        theta,
    };
    let targets = [
        AnchorTarget {
            reg: reg(0.1, -0.2, 0.05, 0.3, 0.4),
            positive: true,
        },
        AnchorTarget {
            reg: reg(0.0, 0.0, 0.0, 0.0, -1.2),
            positive: false,
        },
    ];
    let preds = [
        AnchorPrediction {
            reg: reg(0.0, -0.1, 0.2, 0.1, 0.1),
            prob: 0.7,
        },
        AnchorPrediction {
            reg: reg(0.3, 0.1, -0.2, 0.0, 1.3),
            prob: 0.2,
        },
    ];
    let boxes = [
        ObbBox::canonicalize(0.0, 0.0, 30.0, 8.0, 0.4)?,
        ObbBox::canonicalize(0.0, 0.0, 12.0, 10.0, -1.2)?,
    ];
    Ok(detection_loss(&targets, &preds, &boxes, cfg)?.total)
}

pub fn loss_check(a: LossArgs) -> CmdResult {
    let cfg = LossConfig {
        r: a.r,
        gamma: a.gamma,
        ..LossConfig::default()
    };
    let checks = gradcheck::check_losses(&cfg, a.seed, a.points)?;

    let mut table = Table::new("loss gradients", &["term", "points", "mean_loss", "max_rel_err", "status"]);
    let mut records = Vec::new();
    let mut failing = Vec::new();
    for c in &checks {
        let ok = c.max_rel_err <= a.tolerance;
        if !ok {
            failing.push(c.name);
        }
        table.push(vec![
            c.name.to_string(),
            c.points.to_string(),
            num(c.mean_loss),
            format!("{:.3e}", c.max_rel_err),
            if ok { "ok" } else { "FAIL" }.to_string(),
        ]);
        records.push(json!({
            "record": "gradient", "term": c.name, "points": c.points,
            "mean_loss": c.mean_loss, "max_rel_err": c.max_rel_err, "ok": ok,
        }));
    }

    let det = sample_detection_loss(&cfg)?;
    let by_name: BTreeMap<&str, f64> = checks.iter().map(|c| (c.name, c.mean_loss)).collect();
    let (d, s) = (by_name["denoise_mse"], by_name["segmentation"]);
    let mut totals = Table::new("joint loss by stage", &["stage", "denoise", "segment", "object", "total"]);
    for (stage, stage_cfg) in [("one", LossConfig::stage_one()), ("two", LossConfig::stage_two()), ("joint", cfg)] {
        let total = joint_loss(d, s, det, &stage_cfg);
        totals.push(vec![stage.to_string(), num(d), num(s), num(det), num(total)]);
        records.push(json!({"record": "joint", "stage": stage, "denoise": d, "segment": s, "object": det, "total": total}));
    }

    let report = Report {
        tables: vec![table, totals],
        records,
    };
    if failing.is_empty() {
        Ok(report)
    } else {
        Err(invariant(
            Some(report),
            format!("gradient mismatch above {} in {}", a.tolerance, failing.join(", ")),
        ))
    }
}
