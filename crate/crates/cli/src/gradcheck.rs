//! Seeded comparison of analytic loss gradients with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shipdet::losses::{
    arw_angle_loss, arw_angle_loss_grad, denoise_mse, denoise_mse_grad, finite_diff_grad, focal_cls_loss,
    focal_cls_loss_grad, segmentation_loss, segmentation_loss_grad, smooth_l1, smooth_l1_grad, LossConfig,
};
use shipdet::{Grid, Result};

pub const FD_STEP: f64 = 1e-6;
/// Denominator floor so exact zeros compare absolutely.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermCheck {
    pub name: &'static str,
    pub points: usize,
    pub mean_loss: f64,
    pub max_rel_err: f64,
}

struct Acc {
    name: &'static str,
    points: usize,
    loss: f64,
    worst: f64,
}

impl Acc {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            points: 0,
            loss: 0.0,
            worst: 0.0,
        }
    }

    fn add(&mut self, loss: f64, analytic: &[f64], numeric: &[f64]) {
        self.points += 1;
        self.loss += loss;
        for (a, n) in analytic.iter().zip(numeric) {
            self.worst = self.worst.max(rel_err(*a, *n));
        }
    }

    fn finish(self) -> TermCheck {
        TermCheck {
            name: self.name,
            points: self.points,
            mean_loss: if self.points == 0 { 0.0 } else { self.loss / self.points as f64 },
            max_rel_err: self.worst,
        }
    }
}

fn grid(w: usize, h: usize, mut f: impl FnMut() -> f64) -> Result<Grid> {
    Grid::from_fn(w, h, |_, _| f())
}

/// Checks smooth-L1, focal, angle, denoise MSE and segmentation loss at
/// `points` seeded inputs each. Angle points avoid the kinks of `|sin|` and
/// the angle wrap boundary.
pub fn check_losses(cfg: &LossConfig, seed: u64, points: usize) -> Result<Vec<TermCheck>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sl1 = Acc::new("smooth_l1");
    for _ in 0..points {
        let x = rng.random_range(-3.0..3.0);
        let num = finite_diff_grad(|v| smooth_l1(v[0]), &[x], FD_STEP);
        sl1.add(smooth_l1(x), &[smooth_l1_grad(x)], &num);
    }

    let mut focal = Acc::new("focal");
    for _ in 0..points {
        let positive = rng.random_bool(0.5);
        let p = rng.random_range(0.01..0.99);
        let num = finite_diff_grad(|v| focal_cls_loss(positive, v[0], cfg), &[p], FD_STEP);
        focal.add(focal_cls_loss(positive, p, cfg), &[focal_cls_loss_grad(positive, p, cfg)], &num);
    }

    let mut arw = Acc::new("arw_angle");
    let margin = 0.05;
    while arw.points < points {
        let (h, w) = if rng.random_bool(0.5) {
            (rng.random_range(10.0..40.0), rng.random_range(2.0..6.0))
        } else {
            let w: f64 = rng.random_range(5.0..20.0);
            (w * rng.random_range(1.0..1.4), w)
        };
        let lim = std::f64::consts::FRAC_PI_2 - margin;
        let gt = rng.random_range(-lim..lim);
        let pred = rng.random_range(-lim..lim);
        let alpha = shipdet::losses::aspect_alpha(h, w, cfg.r)?;
        if (alpha * (gt - pred)).sin().abs() < 1e-2 {
            continue;
        }
        let num = finite_diff_grad(|v| arw_angle_loss(gt, v[0], h, w, cfg).unwrap_or(f64::NAN), &[pred], FD_STEP);
        arw.add(arw_angle_loss(gt, pred, h, w, cfg)?, &[arw_angle_loss_grad(gt, pred, h, w, cfg)?], &num);
    }

    let mut mse = Acc::new("denoise_mse");
    for _ in 0..points {
        let y = grid(3, 3, || rng.random_range(0.0..2.0))?;
        let y_hat = grid(3, 3, || rng.random_range(0.0..2.0))?;
        let f = |v: &[f64]| denoise_mse(&y, &Grid::new(3, 3, v.to_vec()).unwrap()).unwrap();
        let num = finite_diff_grad(f, y_hat.data(), FD_STEP);
        mse.add(denoise_mse(&y, &y_hat)?, &denoise_mse_grad(&y, &y_hat)?, &num);
    }

    let mut seg = Acc::new("segmentation");
    for _ in 0..points {
        let p = grid(3, 3, || rng.random_range(0.01..0.99))?;
        let y = grid(3, 3, || if rng.random_bool(0.3) { 1.0 } else { 0.0 })?;
        let g = grid(3, 3, || rng.random_range(0.0..1.0))?;
        let f = |v: &[f64]| segmentation_loss(&Grid::new(3, 3, v.to_vec()).unwrap(), &y, &g, cfg).unwrap();
        let num = finite_diff_grad(f, p.data(), FD_STEP);
        seg.add(segmentation_loss(&p, &y, &g, cfg)?, &segmentation_loss_grad(&p, &y, &g, cfg)?, &num);
    }

    Ok(vec![sl1.finish(), focal.finish(), arw.finish(), mse.finish(), seg.finish()])
}
