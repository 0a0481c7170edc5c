//! Finite-difference verification of analytic gradients.
//!
//! Each parameter entry is probed with a central difference and compared
//! against the gradient produced by `backward`. Piecewise-linear ops (relu,
//! max, clamp) make some probe points genuinely non-differentiable: when a
//! nudge of `h` crosses a kink, the central quotient lands between the two
//! one-sided slopes and no tolerance rescues it, no matter how small `h` is.
//! For entries that fail the central comparison, the checker therefore forms
//! both one-sided quotients from the already-computed endpoint losses; if the
//! two sides disagree with each other, the point is a kink at resolution `h`
//! and the analytic gradient must match one of the sides instead. A wrong
//! gradient still fails: away from kinks the one-sided slopes agree with each
//! other, so the central comparison stands.
//!
//! Losses are stored in f32, so no quotient can resolve slopes below the
//! rounding noise of the endpoint evaluations: the final store alone moves
//! each endpoint by up to half an ulp of the loss, and the ops feeding it
//! round too, so each endpoint is budgeted one ulp, `eps * |loss| / h` for
//! the central difference. When the loss magnitude pushes that noise above
//! the configured absolute floor, the noise becomes the floor.

use super::Tensor;
use crate::error::Result;

pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f32,
    /// Relative tolerance, `|fd - analytic| / max(|fd|, |analytic|)`.
    pub rel_tol: f64,
    /// Absolute differences at or below this floor pass regardless of the
    /// relative error, which otherwise blows up near zero gradients.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-3,
            rel_tol: 1e-2,
            abs_floor: 1e-4,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Entries that sat on a kink of a piecewise-linear op and were validated
    /// against a one-sided slope instead of the central difference.
    pub kinks: usize,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub worst: Option<WorstEntry>,
}

#[derive(Debug)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn discrepancy(a: f64, b: f64) -> (f64, f64) {
    let abs = (a - b).abs();
    let denom = a.abs().max(b.abs());
    let rel = if denom > 0.0 { abs / denom } else { 0.0 };
    (abs, rel)
}

/// Compare analytic gradients against finite differences for every entry of
/// every named parameter. `loss_fn` must rebuild the loss from scratch on each
/// call so perturbed parameter values are re-read, and must be deterministic
/// across calls.
pub fn check_gradients<F>(
    params: &[(String, Tensor)],
    mut loss_fn: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    let base = loss.value() as f64;
    loss.backward()?;
    let analytic: Vec<Vec<f32>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        kinks: 0,
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        worst: None,
    };
    let h = config.h as f64;
    for (pi, (name, p)) in params.iter().enumerate() {
        for j in 0..p.numel() {
            p.nudge(j, config.h);
            let up = loss_fn()?.value() as f64;
            p.nudge(j, -2.0 * config.h);
            let down = loss_fn()?.value() as f64;
            p.nudge(j, config.h);

            let an = analytic[pi][j] as f64;
            let central = (up - down) / (2.0 * h);
            let (mut abs_diff, mut rel_diff) = discrepancy(an, central);
            let mut fd = central;
            let scale = base.abs().max(up.abs()).max(down.abs());
            let central_floor = config.abs_floor.max(f32::EPSILON as f64 * scale / h);
            let mut ok = abs_diff <= central_floor || rel_diff <= config.rel_tol;

            if !ok {
                // One-sided quotients reuse the endpoint losses already in
                // hand. They carry roughly twice the f32 rounding noise of the
                // central quotient (the base evaluation enters each one), so
                // side comparisons get a noise-aware absolute floor.
                let plus = (up - base) / h;
                let minus = (base - down) / h;
                let floor = config
                    .abs_floor
                    .max(4.0 * f32::EPSILON as f64 * scale / h);
                let (side_abs, side_rel) = discrepancy(plus, minus);
                let sides_disagree = side_abs > config.abs_floor && side_rel > config.rel_tol;
                if sides_disagree {
                    let (pa, pr) = discrepancy(an, plus);
                    let (ma, mr) = discrepancy(an, minus);
                    let (side, sa, sr) = if pa <= ma {
                        (plus, pa, pr)
                    } else {
                        (minus, ma, mr)
                    };
                    // A nudge can cross kinks in both directions at once (a
                    // bias shifts every row of its layer), contaminating both
                    // sides; the analytic slope then lies between them. Only
                    // accept a hull narrow enough to still pin the gradient.
                    let in_hull = an >= plus.min(minus) - floor
                        && an <= plus.max(minus) + floor
                        && side_abs <= 4.0 * (an.abs() + floor);
                    if sa <= floor || sr <= config.rel_tol || in_hull {
                        ok = true;
                        report.kinks += 1;
                        fd = side;
                        abs_diff = sa;
                        rel_diff = sr;
                    }
                }
            }

            report.checked += 1;
            if !ok {
                report.failures += 1;
            }
            let worse = match &report.worst {
                None => true,
                Some(w) => {
                    // Track the entry with the largest rel error among those
                    // above the absolute floor; fall back to abs otherwise.
                    if abs_diff > config.abs_floor && w.abs_diff > config.abs_floor {
                        rel_diff > w.rel_diff
                    } else {
                        abs_diff > w.abs_diff
                    }
                }
            };
            if worse {
                report.worst = Some(WorstEntry {
                    param: name.clone(),
                    index: j,
                    analytic: an,
                    fd,
                    abs_diff,
                    rel_diff,
                });
            }
            report.max_abs_diff = report.max_abs_diff.max(abs_diff);
            if abs_diff > config.abs_floor {
                report.max_rel_diff = report.max_rel_diff.max(rel_diff);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_simple_composite() {
        let w = Tensor::param(vec![0.3, -0.7, 0.2, 0.9], vec![2, 2]).unwrap();
        let x = Tensor::constant(vec![1.0, 2.0], vec![1, 2]).unwrap();
        let params = vec![("w".to_string(), w.clone())];
        let report = check_gradients(
            &params,
            || {
                let y = x.matmul(&w)?;
                Ok(y.gelu().sigmoid().sum())
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst);
        assert_eq!(report.checked, 4);
        assert_eq!(report.kinks, 0);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        let w = Tensor::param(vec![0.5], vec![1]).unwrap();
        let params = vec![("w".to_string(), w.clone())];
        // Scale the loss after backward has run once: re-evaluations in the FD
        // loop see a different function than the one differentiated.
        let mut calls = 0;
        let report = check_gradients(
            &params,
            || {
                calls += 1;
                let factor = if calls == 1 { 1.0 } else { 3.0 };
                Ok(w.scale(factor).mul(&w.scale(factor))?.sum())
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn relu_kink_at_zero_matches_a_one_sided_slope() {
        let w = Tensor::param(vec![0.0], vec![1]).unwrap();
        let params = vec![("w".to_string(), w.clone())];
        let report = check_gradients(
            &params,
            || Ok(w.relu().sum()),
            &GradCheckConfig::default(),
        )
        .unwrap();
        // Central difference sees slope 1/2; the analytic gradient (0, the
        // left slope) must be accepted via the one-sided comparison.
        assert!(report.passed(), "{:?}", report.worst);
        assert_eq!(report.kinks, 1);
    }

    #[test]
    fn relu_kink_inside_the_step_matches_the_crossing_side() {
        let w = Tensor::param(vec![5e-4], vec![1]).unwrap();
        let params = vec![("w".to_string(), w.clone())];
        let report = check_gradients(
            &params,
            || Ok(w.relu().sum()),
            &GradCheckConfig::default(),
        )
        .unwrap();
        // w - h crosses zero, so the central quotient is 3/4; analytic slope 1
        // agrees with the right-hand quotient.
        assert!(report.passed(), "{:?}", report.worst);
        assert_eq!(report.kinks, 1);
    }

    #[test]
    fn tiny_slope_on_a_large_loss_passes_within_f32_noise() {
        // Slope 1.2e-4 sits just above the configured floor, but riding on an
        // offset of 4.0 the h-sized nudges move the f32 loss by fractions of
        // an ulp, so the quotients read 0 or one rounding step. The noise
        // floor eps * 4 / (2h) ~ 2.4e-4 must absorb the discrepancy.
        let w = Tensor::param(vec![0.5], vec![1]).unwrap();
        let offset = Tensor::constant(vec![4.0], vec![1]).unwrap();
        let params = vec![("w".to_string(), w.clone())];
        let report = check_gradients(
            &params,
            || Ok(w.scale(1.2e-4).add(&offset)?.sum()),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst);
    }
}
