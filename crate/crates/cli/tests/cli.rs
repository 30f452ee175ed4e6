mod common;

use std::fs;
use std::path::Path;

use common::{brute_eval, eval_corpus, fixtures, records_text, CORPUS_SEED};
use serde_json::Value;
use shipdet::io::{parse_detections, RecordKind};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["shipdet"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = shipdet_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn records(stdout: &str) -> Vec<Value> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn summary(recs: &[Value], thr: f64) -> &Value {
    recs.iter()
        .find(|r| r["record"] == "summary" && r["iou_thr"] == thr)
        .expect("summary record")
}

#[test]
fn exact_match_eval_is_perfect() {
    let (code, out, err) = run(&[
        "--format",
        "jsonl",
        "eval",
        "--pred",
        &fixture("exact_pred.jsonl"),
        "--gt",
        &fixture("exact_gt.jsonl"),
    ]);
    assert_eq!(code, 0, "{err}");
    let recs = records(&out);
    for thr in [0.5, 0.75] {
        let s = summary(&recs, thr);
        for key in ["precision", "recall", "f1", "ap"] {
            assert_eq!(s[key], 1.0, "{key} at {thr}");
        }
    }
}

#[test]
fn wrbf_fuses_pair_to_mean_confidence() {
    let (code, out, err) = run(&[
        "--format",
        "jsonl",
        "fuse",
        "--method",
        "wrbf",
        "--det",
        &fixture("wrbf_det.jsonl"),
        "--seg",
        &fixture("wrbf_seg.jsonl"),
    ]);
    assert_eq!(code, 0, "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    assert!((recs[0]["score"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(recs[0]["image_id"], "scene");
}

#[test]
fn nms_keeps_the_stronger_box_of_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("nms.jsonl");
    let (code, _, err) = run(&[
        "fuse",
        "--method",
        "nms",
        "--det",
        &fixture("wrbf_det.jsonl"),
        "--seg",
        &fixture("wrbf_seg.jsonl"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let kept = parse_detections(&out_path, RecordKind::Prediction).unwrap();
    assert_eq!(kept.boxes["scene"].len(), 1);
    assert_eq!(kept.boxes["scene"][0].score, Some(0.8));
}

#[test]
fn corpus_eval_matches_committed_oracle() {
    let (code, out, err) = run(&[
        "--format",
        "jsonl",
        "eval",
        "--pred",
        &fixture("corpus_pred.jsonl"),
        "--gt",
        &fixture("corpus_gt.jsonl"),
    ]);
    assert_eq!(code, 0, "{err}");
    let recs = records(&out);
    let oracle: Value = serde_json::from_str(&fs::read_to_string(fixtures().join("corpus_oracle.json")).unwrap()).unwrap();
    for (thr, key) in [(0.5, "iou_0.5"), (0.75, "iou_0.75")] {
        let s = summary(&recs, thr);
        let o = &oracle[key];
        assert!((s["ap"].as_f64().unwrap() - o["ap"].as_f64().unwrap()).abs() < 1e-9, "AP at {thr}");
        for k in ["tp", "fp", "fn"] {
            assert_eq!(s[k], o[k], "{k} at {thr}");
        }
    }
}

#[test]
fn committed_corpus_matches_generator() {
    let (preds, gts) = eval_corpus(CORPUS_SEED);
    assert_eq!(fs::read_to_string(fixtures().join("corpus_pred.jsonl")).unwrap(), records_text(&preds));
    assert_eq!(fs::read_to_string(fixtures().join("corpus_gt.jsonl")).unwrap(), records_text(&gts));
}

#[test]
fn table_rows_follow_image_id_order() {
    let (code, out, _) = run(&[
        "eval",
        "--pred",
        &fixture("corpus_pred.jsonl"),
        "--gt",
        &fixture("corpus_gt.jsonl"),
    ]);
    assert_eq!(code, 0);
    let ids: Vec<&str> = out
        .lines()
        .skip(3)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert!(ids.len() > 200);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(out.contains("AP50") && out.contains("AP75"));
}

#[test]
fn gaussmask_then_mask2obb_recovers_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("mask.f32");
    let lambda = (8.0 * 2f64.ln()).to_string();
    let (code, _, err) = run(&[
        "gaussmask", "--width", "120", "--height", "100", "--cx", "60", "--cy", "50", "--h", "80", "--w", "24",
        "--theta-deg", "0", "--lambda-w", &lambda, "--lambda-h", &lambda, "--pairing", "long-axis", "--out",
        grid.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = run(&["--format", "jsonl", "mask2obb", grid.to_str().unwrap(), "--image-id", "m"]);
    assert_eq!(code, 0, "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert!((r["cx"].as_f64().unwrap() - 60.0).abs() < 1.0);
    assert!((r["h"].as_f64().unwrap() - 80.0).abs() < 2.0);
    assert!((r["w"].as_f64().unwrap() - 24.0).abs() < 2.0);
    // Pixel staircases let a slightly tilted rectangle beat the axis-aligned
    // one by a few square pixels.
    assert!(r["theta_deg"].as_f64().unwrap().abs() < 5.0);
}

#[test]
fn speckle_pair_and_despeckle_report() {
    let dir = tempfile::tempdir().unwrap();
    let (noisy, clean) = (dir.path().join("noisy.f32"), dir.path().join("clean.f32"));
    let (code, _, err) = run(&[
        "speckle-sim", "--width", "64", "--height", "64", "--value", "2", "--looks", "4", "--seed", "9", "--out",
        noisy.to_str().unwrap(), "--clean-out", clean.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = run(&[
        "--format", "jsonl", "despeckle-eval", "--original", noisy.to_str().unwrap(), "--denoised",
        noisy.to_str().unwrap(), "--region", "0,0,32,32", "--region", "8,8,64,40",
    ]);
    assert_eq!(code, 0, "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), 2);
    for r in &recs {
        assert_eq!(r["epd_hd"], 1.0);
        assert_eq!(r["epd_vd"], 1.0);
        assert_eq!(r["enl_original"], r["enl_denoised"]);
    }
    // The clean scene is constant: ENL is infinite and flagged.
    let (code, out, _) = run(&[
        "--format", "jsonl", "despeckle-eval", "--original", noisy.to_str().unwrap(), "--denoised",
        clean.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let r = &records(&out)[0];
    assert_eq!(r["enl_denoised"], Value::Null);
    assert_eq!(r["enl_denoised_zero_variance"], true);
}

#[test]
fn iou_lists_each_pair_once() {
    let (code, out, _) = run(&["--format", "jsonl", "iou", &fixture("wrbf_det.jsonl"), "--against", &fixture("wrbf_seg.jsonl")]);
    assert_eq!(code, 0);
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["iou"], 1.0);
    let (code, out, _) = run(&["--format", "jsonl", "iou", "--ground-truth", &fixture("exact_gt.jsonl")]);
    assert_eq!(code, 0);
    let n: usize = 3;
    assert_eq!(records(&out).len(), n * (n - 1) / 2);
}

#[test]
fn loss_check_passes_and_flags_impossible_tolerance() {
    let (code, out, err) = run(&["loss-check", "--points", "20"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("segmentation") && !out.contains("FAIL"));
    let (code, out, err) = run(&["loss-check", "--points", "20", "--tolerance", "0"]);
    assert_eq!(code, 2);
    assert!(out.contains("FAIL"));
    assert!(err.contains("internal invariant"));
}

#[test]
fn input_errors_exit_with_one() {
    let (code, _, err) = run(&["eval", "--pred", "/nonexistent.jsonl", "--gt", &fixture("exact_gt.jsonl")]);
    assert_eq!(code, 1);
    assert!(err.contains("nonexistent"));
    assert_eq!(run(&["fuse", "--bogus"]).0, 1);
    assert_eq!(run(&["nope"]).0, 1);
    // Ground truth where predictions are expected: the score is missing.
    let (code, _, err) = run(&["fuse", "--det", &fixture("exact_gt.jsonl")]);
    assert_eq!(code, 1);
    assert!(err.contains("line 1"), "{err}");
    assert_eq!(run(&["fuse", "--det", &fixture("wrbf_det.jsonl"), "--iou-thr", "1.5"]).0, 1);
    assert_eq!(run(&["despeckle-eval", "--original", "a", "--denoised", "b", "--region", "4,4,2,9"]).0, 1);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("mask2obb"));
}

/// Regenerates the committed corpus and its oracle file.
#[test]
#[ignore]
fn bless_fixtures() {
    let (preds, gts) = eval_corpus(CORPUS_SEED);
    let dir = fixtures();
    fs::write(dir.join("corpus_pred.jsonl"), records_text(&preds)).unwrap();
    fs::write(dir.join("corpus_gt.jsonl"), records_text(&gts)).unwrap();
    let load = |p: &Path, k| parse_detections(p, k).unwrap().boxes;
    let p = load(&dir.join("corpus_pred.jsonl"), RecordKind::Prediction);
    let g = load(&dir.join("corpus_gt.jsonl"), RecordKind::GroundTruth);
    let mut oracle = serde_json::Map::new();
    for thr in [0.5, 0.75] {
        let b = brute_eval(&p, &g, thr);
        oracle.insert(
            format!("iou_{thr}"),
            serde_json::json!({"ap": b.ap, "tp": b.tp, "fp": b.fp, "fn": b.fn_}),
        );
    }
    fs::write(dir.join("corpus_oracle.json"), serde_json::to_string_pretty(&oracle).unwrap() + "\n").unwrap();
}
