//! Central finite-difference gradient verification.
//!
//! Independent of the reverse-mode pass: only forward evaluations are used
//! to form (f(x+h) - f(x-h)) / 2h per coordinate, which is then compared
//! against the analytic gradient produced by `backward`.

use super::rng::SplitRng;
use super::Tensor;
use crate::error::Result;

/// One failed coordinate comparison.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param_index: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked_coords: usize,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

// The denominator floor keeps near-zero gradients from being judged by a
// pure ratio, where central-difference roundoff would dominate.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Verify analytic gradients of `loss_fn` w.r.t. `params` against central
/// finite differences with step `h`, at relative tolerance `rel_tol`.
///
/// `loss_fn` must rebuild the loss from the current parameter values on
/// every call. When `coords_per_param` is given, that many coordinates per
/// tensor are sampled (deterministically from `rng`) instead of sweeping
/// every element.
pub fn check_gradients(
    params: &[Tensor],
    loss_fn: impl Fn() -> Result<Tensor>,
    h: f64,
    rel_tol: f64,
    coords_per_param: Option<usize>,
    rng: &mut SplitRng,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;

    let mut report = GradCheckReport {
        checked_coords: 0,
        mismatches: Vec::new(),
    };

    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        if n == 0 {
            continue; // zero-sized parameters never enter the graph
        }
        let analytic = p.grad().ok_or_else(|| {
            crate::error::Error::contract(format!("parameter {pi} has no gradient after backward"))
        })?;
        let coords: Vec<usize> = match coords_per_param {
            Some(k) if k < n => {
                let mut picked: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut picked);
                picked.truncate(k);
                picked
            }
            _ => (0..n).collect(),
        };
        for &c in &coords {
            let orig = p.to_vec()[c];
            p.apply_update(|i, v| {
                if i == c {
                    *v = orig + h;
                }
            });
            let up = loss_fn()?.item()?;
            p.apply_update(|i, v| {
                if i == c {
                    *v = orig - h;
                }
            });
            let down = loss_fn()?.item()?;
            p.apply_update(|i, v| {
                if i == c {
                    *v = orig;
                }
            });
            let numeric = (up - down) / (2.0 * h);
            let rel = rel_error(analytic[c], numeric);
            report.checked_coords += 1;
            if rel > rel_tol {
                report.mismatches.push(GradMismatch {
                    param_index: pi,
                    coord: c,
                    analytic: analytic[c],
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
