//! Scalar loss kernels for the detection, denoising and segmentation heads,
//! together with their analytic gradients.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ObbBox};
use crate::grid::Grid;

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Aspect-ratio threshold of the angle loss.
    pub r: f64,
    /// Focal exponent.
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            r: 1.5,
            gamma: 2.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossConfig {
    /// Denoising-only schedule: `(1, 0, 0)`.
    pub fn stage_one() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..Self::default()
        }
    }

    /// Segmentation + detection schedule: `(0, 1, 1)`.
    pub fn stage_two() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda3: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidArgument(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Angular period multiplier: 1 for elongated boxes (`h / w > r`), 2 otherwise.
pub fn aspect_alpha(h: f64, w: f64, r: f64) -> Result<f64> {
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::InvalidBox(format!(
            "side lengths must be positive, got {h} x {w}"
        )));
    }
    Ok(if h / w > r { 1.0 } else { 2.0 })
}

/// Wrapped angle difference `wrap(theta_gt) - wrap(theta_pred)`, in `(-pi, pi)`.
#[inline]
pub fn angle_delta(theta_gt: f64, theta_pred: f64) -> f64 {
    wrap_angle(theta_gt) - wrap_angle(theta_pred)
}

/// Aspect-ratio weighted angle loss `|sin(alpha * d)| * smooth_l1(d)`.
///
/// `h` and `w` are the ground-truth long and short sides.
pub fn arw_angle_loss(theta_gt: f64, theta_pred: f64, h: f64, w: f64, cfg: &LossConfig) -> Result<f64> {
    let alpha = aspect_alpha(h, w, cfg.r)?;
    let d = angle_delta(theta_gt, theta_pred);
    Ok((alpha * d).sin().abs() * smooth_l1(d))
}

/// Derivative of [`arw_angle_loss`] with respect to `theta_pred`.
///
/// Undefined where `sin(alpha * d) = 0` (the absolute value kinks); the
/// one-sided branch with `signum(+0) = 1` is returned there.
pub fn arw_angle_loss_grad(
    theta_gt: f64,
    theta_pred: f64,
    h: f64,
    w: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    let alpha = aspect_alpha(h, w, cfg.r)?;
    let d = angle_delta(theta_gt, theta_pred);
    let s = (alpha * d).sin();
    let d_loss_d_delta = alpha * (alpha * d).cos() * s.signum() * smooth_l1(d) + s.abs() * smooth_l1_grad(d);
    // d(delta)/d(theta_pred) = -1 away from the wrap boundary.
    Ok(-d_loss_d_delta)
}

/// Focal term `-(1 - pt)^gamma * ln(pt)` for a clamped `pt`.
#[inline]
fn focal_term(pt: f64, gamma: f64) -> f64 {
    -(1.0 - pt).powf(gamma) * pt.ln()
}

/// Derivative of [`focal_term`] with respect to `pt`.
#[inline]
fn focal_term_grad(pt: f64, gamma: f64) -> f64 {
    let q = 1.0 - pt;
    let lead = if gamma == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * pt.ln()
    };
    lead - q.powf(gamma) / pt
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary focal loss with the balancing factor fixed at 1.
pub fn focal_cls_loss(positive: bool, p_pred: f64, cfg: &LossConfig) -> f64 {
    let p = clamp_prob(p_pred);
    let pt = if positive { p } else { 1.0 - p };
    focal_term(pt, cfg.gamma)
}

/// Derivative of [`focal_cls_loss`] with respect to `p_pred` (zero inside the clamp).
pub fn focal_cls_loss_grad(positive: bool, p_pred: f64, cfg: &LossConfig) -> f64 {
    if p_pred <= PROB_EPS || p_pred >= 1.0 - PROB_EPS {
        return 0.0;
    }
    let pt = if positive { p_pred } else { 1.0 - p_pred };
    let sign = if positive { 1.0 } else { -1.0 };
    sign * focal_term_grad(pt, cfg.gamma)
}

/// Regression offsets of one anchor plus its angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub theta: f64,
}

impl RegressionTarget {
    fn offsets(&self) -> [f64; 4] {
        [self.tx, self.ty, self.th, self.tw]
    }

    fn is_finite(&self) -> bool {
        self.offsets().iter().all(|v| v.is_finite()) && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTarget {
    pub reg: RegressionTarget,
    /// Ship (true) or background.
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPrediction {
    pub reg: RegressionTarget,
    /// Predicted ship probability.
    pub prob: f64,
}

/// Batch-averaged detection loss, split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionLoss {
    pub regression: f64,
    pub angle: f64,
    pub classification: f64,
    pub total: f64,
}

/// Detection loss over `N` aligned anchors: mean smooth-L1 over the four
/// offsets, mean angle loss (with `boxes[n]` supplying the ground-truth
/// aspect ratio) and mean focal classification loss.
pub fn detection_loss(
    targets: &[AnchorTarget],
    preds: &[AnchorPrediction],
    boxes: &[ObbBox],
    cfg: &LossConfig,
) -> Result<DetectionLoss> {
    if targets.is_empty() {
        return Err(Error::Empty("detection batch"));
    }
    if preds.len() != targets.len() || boxes.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "detection batch: {} targets, {} predictions, {} boxes",
            targets.len(),
            preds.len(),
            boxes.len()
        )));
    }
    let (mut reg, mut ang, mut cls) = (0.0, 0.0, 0.0);
    for ((t, p), b) in targets.iter().zip(preds).zip(boxes) {
        if !t.reg.is_finite() || !p.reg.is_finite() {
            return Err(Error::InvalidArgument("non-finite regression target".into()));
        }
        reg += t
            .reg
            .offsets()
            .iter()
            .zip(p.reg.offsets())
            .map(|(a, b)| smooth_l1(a - b))
            .sum::<f64>();
        ang += arw_angle_loss(t.reg.theta, p.reg.theta, b.h, b.w, cfg)?;
        cls += focal_cls_loss(t.positive, p.prob, cfg);
    }
    let n = targets.len() as f64;
    let (regression, angle, classification) = (reg / n, ang / n, cls / n);
    Ok(DetectionLoss {
        regression,
        angle,
        classification,
        total: regression + angle + classification,
    })
}

/// Mean squared error between a reference and an estimated image.
pub fn denoise_mse(y: &Grid, y_hat: &Grid) -> Result<f64> {
    y.ensure_same_shape(y_hat, "denoise_mse")?;
    let sum: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y.len() as f64)
}

/// Gradient of [`denoise_mse`] with respect to `y_hat`.
pub fn denoise_mse_grad(y: &Grid, y_hat: &Grid) -> Result<Vec<f64>> {
    y.ensure_same_shape(y_hat, "denoise_mse")?;
    let scale = 2.0 / y.len() as f64;
    Ok(y.data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| scale * (b - a))
        .collect())
}

fn check_segmentation_inputs(p: &Grid, y: &Grid, g: &Grid) -> Result<()> {
    p.ensure_same_shape(y, "segmentation probabilities vs labels")?;
    p.ensure_same_shape(g, "segmentation probabilities vs weights")?;
    if let Some(v) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
    }
    if let Some(v) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("label {v} is not 0 or 1")));
    }
    if let Some(v) = g.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("negative weight {v}")));
    }
    Ok(())
}

/// Gaussian-weighted focal segmentation loss,
/// `-(1/WH) sum g (1 - p_hat)^gamma ln(p_hat)` with `p_hat = p` on ship
/// pixels and `1 - p` on background.
pub fn segmentation_loss(p: &Grid, y: &Grid, g: &Grid, cfg: &LossConfig) -> Result<f64> {
    check_segmentation_inputs(p, y, g)?;
    let sum: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&pv, &yv), &gv)| gv * focal_cls_loss(yv == 1.0, pv, cfg))
        .sum();
    Ok(sum / p.len() as f64)
}

/// Gradient of [`segmentation_loss`] with respect to each probability.
pub fn segmentation_loss_grad(p: &Grid, y: &Grid, g: &Grid, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_segmentation_inputs(p, y, g)?;
    let n = p.len() as f64;
    Ok(p.data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&pv, &yv), &gv)| gv * focal_cls_loss_grad(yv == 1.0, pv, cfg) / n)
        .collect())
}

/// `lambda1 * denoise + lambda2 * segment + lambda3 * object`.
pub fn joint_loss(l_denoise: f64, l_segment: f64, l_object: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda1 * l_denoise + cfg.lambda2 * l_segment + cfg.lambda3 * l_object
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        // C1 at the seam
        assert!((smooth_l1(1.0 - 1e-12) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn arw_examples() {
        assert_eq!(arw_angle_loss(0.3, 0.3, 10.0, 3.0, &cfg()).unwrap(), 0.0);

        // h/w = 1.2 -> alpha 2; d = pi/2 sits on a zero of |sin(2d)|
        let l = arw_angle_loss(0.3, 0.3 - FRAC_PI_2, 12.0, 10.0, &cfg()).unwrap();
        assert!(l < 1e-12, "{l}");

        // h/w = 3 -> alpha 1
        let l = arw_angle_loss(0.7, 0.7 - FRAC_PI_2, 30.0, 10.0, &cfg()).unwrap();
        assert!((l - (FRAC_PI_2 - 0.5)).abs() < 1e-12);
        assert!((l - 1.0708).abs() < 1e-4);
    }

    #[test]
    fn arw_square_like_pair_is_nearly_free() {
        let gt = (-70.6f64).to_radians();
        let pred = 19.7f64.to_radians();
        let l = arw_angle_loss(gt, pred, 50.0, 50.0, &cfg()).unwrap();
        let weight = (2.0 * angle_delta(gt, pred)).sin().abs();
        assert!((weight - 0.6f64.to_radians().sin()).abs() < 1e-12);
        assert!((l - weight * smooth_l1(angle_delta(gt, pred))).abs() < 1e-15);
        assert!(l < 0.02);
    }

    #[test]
    fn arw_alpha_switch_is_exclusive_at_r() {
        assert_eq!(aspect_alpha(1.5, 1.0, 1.5).unwrap(), 2.0);
        assert_eq!(aspect_alpha(1.5 + 1e-6, 1.0, 1.5).unwrap(), 1.0);
        assert!(matches!(aspect_alpha(1.0, 0.0, 1.5), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn focal_examples() {
        let c0 = LossConfig { gamma: 0.0, ..cfg() };
        assert!((focal_cls_loss(true, 0.5, &c0) - LN_2).abs() < 1e-12);
        assert!((focal_cls_loss(true, 0.5, &cfg()) - 0.25 * LN_2).abs() < 1e-12);
        assert!(focal_cls_loss(true, 1.0 - 1e-9, &cfg()) < 1e-12);
        assert!(focal_cls_loss(false, 0.0, &cfg()) < 1e-12);
        assert!(focal_cls_loss(true, 0.0, &cfg()).is_finite());
    }

    fn anchor(tx: f64, theta: f64) -> (AnchorTarget, AnchorPrediction) {
        let reg = RegressionTarget {
            tx,
            ty: 0.1,
            tw: -0.2,
            th: 0.3,
            theta,
        };
        (
            AnchorTarget { reg, positive: true },
            AnchorPrediction { reg, prob: 1.0 },
        )
    }

    #[test]
    fn detection_loss_perfect_prediction_vanishes() {
        let (t, p) = anchor(0.4, 0.2);
        let b = ObbBox::canonicalize(0.0, 0.0, 30.0, 10.0, 0.2).unwrap();
        let l = detection_loss(&[t], &[p], &[b], &cfg()).unwrap();
        assert_eq!(l.regression, 0.0);
        assert_eq!(l.angle, 0.0);
        assert!(l.total < 1e-12);
    }

    #[test]
    fn detection_loss_square_quarter_turn_costs_nothing() {
        let (t, mut p) = anchor(0.0, 0.3);
        p.reg.theta = 0.3 - FRAC_PI_2;
        let b = ObbBox::canonicalize(0.0, 0.0, 20.0, 20.0, 0.3).unwrap();
        let l = detection_loss(&[t], &[p], &[b], &cfg()).unwrap();
        assert!(l.angle < 1e-12);
    }

    #[test]
    fn detection_loss_is_mean_of_single_terms() {
        let (t1, mut p1) = anchor(0.4, 0.2);
        p1.reg.tx = -1.6;
        p1.reg.theta = -0.5;
        p1.prob = 0.7;
        let (mut t2, mut p2) = anchor(-0.1, -1.0);
        t2.positive = false;
        p2.reg.th = 2.0;
        p2.prob = 0.35;
        let b1 = ObbBox::canonicalize(0.0, 0.0, 30.0, 10.0, 0.2).unwrap();
        let b2 = ObbBox::canonicalize(5.0, 5.0, 11.0, 10.0, -1.0).unwrap();

        let single = |t, p, b| detection_loss(&[t], &[p], &[b], &cfg()).unwrap().total;
        let expect = (single(t1, p1, b1) + single(t2, p2, b2)) / 2.0;
        let got = detection_loss(&[t1, t2], &[p1, p2], &[b1, b2], &cfg()).unwrap();
        assert!((got.total - expect).abs() < 1e-12);
        assert!((got.total - (got.regression + got.angle + got.classification)).abs() < 1e-15);
    }

    #[test]
    fn detection_loss_errors() {
        let (t, p) = anchor(0.0, 0.0);
        let b = ObbBox::canonicalize(0.0, 0.0, 3.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            detection_loss(&[], &[], &[], &cfg()),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            detection_loss(&[t, t], &[p], &[b, b], &cfg()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let a = Grid::new(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Grid::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(denoise_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(denoise_mse(&a, &b).unwrap(), 1.0);
        let c = Grid::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let d = Grid::new(2, 2, vec![1.0, 3.0, 1.0, 1.0]).unwrap();
        assert_eq!(denoise_mse(&c, &d).unwrap(), 1.0);
        assert!(matches!(denoise_mse(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn segmentation_perfect_and_bce_reduction() {
        let y = Grid::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ones = Grid::filled(2, 2, 1.0).unwrap();
        assert!(segmentation_loss(&y, &y, &ones, &cfg()).unwrap() < 1e-12);

        let p = Grid::new(2, 2, vec![0.9, 0.2, 0.6, 0.3]).unwrap();
        let c0 = LossConfig { gamma: 0.0, ..cfg() };
        let bce = -((0.9f64).ln() + (0.8f64).ln() + (0.4f64).ln() + (0.3f64).ln()) / 4.0;
        assert!((segmentation_loss(&p, &y, &ones, &c0).unwrap() - bce).abs() < 1e-12);
    }

    #[test]
    fn segmentation_rejects_bad_inputs() {
        let y = Grid::new(2, 1, vec![1.0, 0.0]).unwrap();
        let g = Grid::filled(2, 1, 1.0).unwrap();
        let bad_p = Grid::new(2, 1, vec![1.2, 0.0]).unwrap();
        assert!(segmentation_loss(&bad_p, &y, &g, &cfg()).is_err());
        let bad_y = Grid::new(2, 1, vec![0.5, 0.0]).unwrap();
        assert!(segmentation_loss(&y, &bad_y, &g, &cfg()).is_err());
        let small = Grid::filled(1, 1, 1.0).unwrap();
        assert!(matches!(
            segmentation_loss(&y, &y, &small, &cfg()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn joint_schedules() {
        let one = LossConfig::stage_one();
        assert_eq!(joint_loss(0.3, 0.5, 0.7, &one), 0.3);
        let two = LossConfig::stage_two();
        assert_eq!(joint_loss(0.3, 0.5, 0.7, &two), 0.5 + 0.7);
        let zero = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..cfg()
        };
        assert_eq!(joint_loss(0.3, 0.5, 0.7, &zero), 0.0);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-5);
        let g = finite_diff_grad(|x| smooth_l1(x[0]), &[0.3], 1e-5);
        assert!((g[0] - 0.3).abs() < 1e-5);

        let (gt, pred, h, w) = (0.4, -0.3, 30.0, 10.0);
        let fd = finite_diff_grad(|x| arw_angle_loss(gt, x[0], h, w, &cfg()).unwrap(), &[pred], 1e-6);
        let an = arw_angle_loss_grad(gt, pred, h, w, &cfg()).unwrap();
        assert!(((fd[0] - an) / an).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(LossConfig { r: 0.0, ..cfg() }.validate().is_err());
        assert!(LossConfig { gamma: -1.0, ..cfg() }.validate().is_err());
        assert!(LossConfig { lambda2: -0.1, ..cfg() }.validate().is_err());
    }
}
