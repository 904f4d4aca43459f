//! Local surrogate explanations for text classifiers.
//!
//! Perturbs the input by dropping random token subsets, records the
//! classifier's probability for the target label on each perturbation, and
//! fits a ridge-regularized weighted linear model over the keep/drop mask
//! features. Coefficients score each token's contribution to the decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::rng::SplitRng;

/// Per-token attribution for one classified text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub tokens: Vec<String>,
    /// One signed weight per input token position.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Weighted R-squared of the surrogate on its perturbation sample.
    pub r2: f64,
}

#[derive(Debug, Clone)]
pub struct LimeOptions {
    pub num_samples: usize,
    /// Width of the exponential proximity kernel over cosine distance.
    pub kernel_width: f64,
    /// Ridge penalty on the token coefficients (not the intercept).
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeOptions {
    fn default() -> Self {
        LimeOptions {
            num_samples: 5000,
            kernel_width: 0.25,
            ridge: 1.0,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }
}

/// Solve a dense symmetric positive-definite-ish system by Gaussian
/// elimination with partial pivoting. Sized for (tokens + 1) unknowns.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::numeric(
                "singular system in surrogate fit".to_string(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Explain one prediction. `predict` must return the classifier's
/// probability of the target label for an arbitrary token-id sequence;
/// dropped tokens are removed, not masked. The all-ones mask is always
/// included as the first sample. Deterministic per seed.
pub fn lime_explain(
    predict: impl Fn(&[u32]) -> Result<f64>,
    token_ids: &[u32],
    token_names: &[String],
    opts: &LimeOptions,
) -> Result<Explanation> {
    if token_ids.is_empty() {
        return Err(Error::contract("cannot explain an empty text".to_string()));
    }
    if token_ids.len() != token_names.len() {
        return Err(Error::contract(format!(
            "token id/name count mismatch: {} vs {}",
            token_ids.len(),
            token_names.len()
        )));
    }
    if opts.num_samples < 10 {
        return Err(Error::contract(format!(
            "lime needs at least 10 samples, got {}",
            opts.num_samples
        )));
    }
    let t = token_ids.len();
    let mut rng = SplitRng::new(opts.seed);

    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(opts.num_samples);
    masks.push(vec![true; t]);
    for _ in 1..opts.num_samples {
        masks.push((0..t).map(|_| rng.uniform() < 0.5).collect());
    }

    let mut ys = Vec::with_capacity(masks.len());
    let mut weights = Vec::with_capacity(masks.len());
    for mask in &masks {
        let kept: Vec<u32> = token_ids
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect();
        ys.push(predict(&kept)?);
        let k = mask.iter().filter(|&&m| m).count();
        // cosine distance between the mask and the all-ones vector
        let d = 1.0 - (k as f64 / t as f64).sqrt();
        weights.push((-d * d / (opts.kernel_width * opts.kernel_width)).exp());
    }

    // weighted ridge regression on [intercept | mask features]
    let dim = t + 1;
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    for (mask, (&y, &w)) in masks.iter().zip(ys.iter().zip(&weights)) {
        let mut row = Vec::with_capacity(dim);
        row.push(1.0);
        row.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        for i in 0..dim {
            if row[i] == 0.0 {
                continue;
            }
            let wi = w * row[i];
            for j in 0..dim {
                xtx[i][j] += wi * row[j];
            }
            xty[i] += wi * y;
        }
    }
    for i in 1..dim {
        xtx[i][i] += opts.ridge;
    }
    let beta = solve_linear(xtx, xty)?;

    // weighted R^2 against the surrogate's predictions
    let wsum: f64 = weights.iter().sum();
    let ymean: f64 = ys.iter().zip(&weights).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (mask, (&y, &w)) in masks.iter().zip(ys.iter().zip(&weights)) {
        let mut pred = beta[0];
        for (j, &m) in mask.iter().enumerate() {
            if m {
                pred += beta[j + 1];
            }
        }
        ss_res += w * (y - pred) * (y - pred);
        ss_tot += w * (y - ymean) * (y - ymean);
    }
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };

    Ok(Explanation {
        tokens: token_names.to_vec(),
        weights: beta[1..].to_vec(),
        intercept: beta[0],
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tok{i}")).collect()
    }

    #[test]
    fn constant_classifier_gets_near_zero_weights() {
        let ids = [4u32, 5, 6, 7];
        let opts = LimeOptions {
            num_samples: 5000,
            ..Default::default()
        };
        let exp = lime_explain(|_| Ok(0.7), &ids, &names(4), &opts).unwrap();
        for w in &exp.weights {
            assert!(w.abs() < 1e-3, "{w}");
        }
        assert!((exp.intercept - 0.7).abs() < 1e-6);
    }

    #[test]
    fn presence_detector_puts_max_weight_on_its_token() {
        // classifier fires iff token 9 ("great") survives the perturbation
        let ids = [3u32, 9, 5, 6];
        let opts = LimeOptions {
            num_samples: 2000,
            ..Default::default()
        };
        let exp = lime_explain(
            |kept| Ok(if kept.contains(&9) { 1.0 } else { 0.0 }),
            &ids,
            &names(4),
            &opts,
        )
        .unwrap();
        let detector_weight = exp.weights[1];
        assert!(detector_weight > 0.0);
        for (i, w) in exp.weights.iter().enumerate() {
            if i != 1 {
                assert!(detector_weight > *w, "weights {:?}", exp.weights);
                assert!(w.abs() < 0.1 * detector_weight);
            }
        }
        assert!(exp.r2 > 0.99);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let ids = [1u32, 2, 3];
        let predict =
            |kept: &[u32]| Ok(kept.iter().map(|&t| t as f64).sum::<f64>() / 10.0);
        let opts = LimeOptions {
            num_samples: 500,
            seed: 99,
            ..Default::default()
        };
        let a = lime_explain(predict, &ids, &names(3), &opts).unwrap();
        let b = lime_explain(predict, &ids, &names(3), &opts).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.intercept, b.intercept);
    }

    #[test]
    fn linear_bag_of_words_signs_recovered() {
        // target probability is a linear function of kept tokens
        let coefs = [0.3, -0.2, 0.15, -0.05, 0.1];
        let ids: Vec<u32> = (0..5).collect();
        let predict = |kept: &[u32]| {
            Ok(0.5 + kept.iter().map(|&t| coefs[t as usize]).sum::<f64>())
        };
        let opts = LimeOptions {
            num_samples: 10_000,
            ..Default::default()
        };
        let exp = lime_explain(predict, &ids, &names(5), &opts).unwrap();
        for (w, c) in exp.weights.iter().zip(&coefs) {
            assert_eq!(w.signum(), c.signum(), "weights {:?}", exp.weights);
        }
    }

    #[test]
    fn too_few_samples_is_contract_error() {
        let r = lime_explain(
            |_| Ok(0.5),
            &[1, 2],
            &names(2),
            &LimeOptions {
                num_samples: 9,
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }
}
