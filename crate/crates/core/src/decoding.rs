//! Autoregressive generation: temperature/top-k/top-p (nucleus) sampling
//! and expert/anti-expert steered decoding.
//!
//! Steering combines three logit vectors conditioned on the same prefix:
//! the base model's logits are first restricted to their `filter_p`
//! nucleus, then shifted by `alpha * (expert - anti_expert)`, tempered,
//! softmaxed, and finally nucleus-filtered at `p`.

use std::collections::HashSet;

use crate::corpus::{vocab, Corpus, Label, Review, Vocabulary};
use crate::error::{Error, Result};
use crate::model::LmModel;
use crate::tensor::rng::SplitRng;
use crate::tensor::softmax_slice;

/// Plain sampling parameters.
#[derive(Debug, Clone)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub no_repeat_ngram_size: usize,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_new_tokens: 30,
            temperature: 1.0,
            top_p: 0.8,
            top_k: 0,
            no_repeat_ngram_size: 1,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::contract(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(Error::contract(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Steered decoding parameters.
#[derive(Debug, Clone)]
pub struct SteeringParams {
    /// Strength of the expert/anti-expert logit difference.
    pub alpha: f64,
    /// Applied to the combined logits before the softmax.
    pub temperature: f64,
    /// Nucleus threshold applied to the base distribution pre-combination.
    pub filter_p: f64,
    /// Nucleus threshold applied to the combined distribution.
    pub p: f64,
    pub seed: u64,
}

impl Default for SteeringParams {
    fn default() -> Self {
        SteeringParams::positive_preset()
    }
}

impl SteeringParams {
    /// Bundled positive-steering values.
    pub fn positive_preset() -> SteeringParams {
        SteeringParams {
            alpha: 1.2,
            temperature: 1.1,
            filter_p: 1.0,
            p: 0.9,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }

    /// Bundled negative-steering values.
    pub fn negative_preset() -> SteeringParams {
        SteeringParams {
            alpha: 1.2,
            temperature: 1.8,
            filter_p: 0.9,
            p: 0.9,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::contract(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        for (name, v) in [("filter_p", self.filter_p), ("p", self.p)] {
            if v <= 0.0 || v > 1.0 {
                return Err(Error::contract(format!("{name} {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Indices of the smallest descending-probability prefix whose cumulative
/// mass reaches `p`; the boundary token crossing `p` is included. Ties in
/// probability break toward the lower token id.
fn nucleus_indices(probs: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept
}

/// Nucleus (top-p) filter over a probability distribution: zeroes tokens
/// outside the top-p prefix and renormalizes. `p = 1` is the identity.
pub fn top_p_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if p <= 0.0 {
        return Err(Error::contract(format!(
            "top_p threshold {p} must be positive"
        )));
    }
    if p >= 1.0 {
        return Ok(probs.to_vec());
    }
    let kept = nucleus_indices(probs, p);
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for &i in &kept {
        out[i] = probs[i] / total;
    }
    Ok(out)
}

/// Keep the `k` most probable tokens (ties toward lower id), renormalized.
/// `k = 0` disables the filter.
pub fn top_k_filter(probs: &[f64], k: usize) -> Vec<f64> {
    if k == 0 || k >= probs.len() {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; probs.len()];
    let total: f64 = order[..k].iter().map(|&i| probs[i]).sum();
    for &i in &order[..k] {
        out[i] = probs[i] / total;
    }
    out
}

/// Tokens that would complete an `n`-gram already present in `context`.
/// With `n = 1` every context token is banned.
pub fn banned_tokens(context: &[u32], n: usize) -> HashSet<u32> {
    let mut banned = HashSet::new();
    if n == 0 || context.len() < n - 1 {
        return banned;
    }
    if n == 1 {
        banned.extend(context.iter().copied());
        return banned;
    }
    let tail = &context[context.len() - (n - 1)..];
    for window in context.windows(n) {
        if &window[..n - 1] == tail {
            banned.insert(window[n - 1]);
        }
    }
    banned
}

/// Temperature, softmax, top-k, top-p: the plain-mode distribution shape.
fn plain_distribution(logits: &[f64], params: &GenerationParams) -> Result<Vec<f64>> {
    params.validate()?;
    let scaled: Vec<f64> = logits.iter().map(|z| z / params.temperature).collect();
    let probs = softmax_slice(&scaled);
    let probs = top_k_filter(&probs, params.top_k);
    top_p_filter(&probs, params.top_p)
}

/// Zero out banned ids plus structural markers and renormalize. Returns
/// None when nothing remains to sample.
fn apply_bans(mut probs: Vec<f64>, banned: &HashSet<u32>) -> Option<Vec<f64>> {
    for (i, v) in probs.iter_mut().enumerate() {
        let id = i as u32;
        if id == vocab::PAD || id == vocab::START || banned.contains(&id) {
            *v = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for v in probs.iter_mut() {
        *v /= total;
    }
    Some(probs)
}

/// The model's next-token distribution after temperature, top-k, top-p,
/// and repeat bans. Errors when every candidate is banned.
pub fn next_distribution(
    model: &LmModel,
    prefix: &[u32],
    generated: &[u32],
    params: &GenerationParams,
) -> Result<Vec<f64>> {
    let logits = model.next_logits(prefix, generated)?;
    let probs = plain_distribution(&logits, params)?;
    let mut context = prefix.to_vec();
    context.extend_from_slice(generated);
    let banned = banned_tokens(&context, params.no_repeat_ngram_size);
    apply_bans(probs, &banned)
        .ok_or_else(|| Error::numeric("no tokens available after filters".to_string()))
}

/// Combine base, expert, and anti-expert logits into a steered next-token
/// distribution: restrict base logits to their `filter_p` nucleus, add
/// `alpha * (expert - anti_expert)`, apply temperature and softmax, then
/// nucleus-filter at `p`.
pub fn steered_distribution(
    base: &[f64],
    expert: &[f64],
    anti_expert: &[f64],
    sp: &SteeringParams,
) -> Result<Vec<f64>> {
    sp.validate()?;
    if base.len() != expert.len() || base.len() != anti_expert.len() {
        return Err(Error::contract(format!(
            "logit length mismatch: {} / {} / {}",
            base.len(),
            expert.len(),
            anti_expert.len()
        )));
    }
    let mut combined: Vec<f64> = if sp.filter_p < 1.0 {
        let base_probs = softmax_slice(base);
        let kept: HashSet<usize> =
            nucleus_indices(&base_probs, sp.filter_p).into_iter().collect();
        base.iter()
            .enumerate()
            .map(|(i, &z)| if kept.contains(&i) { z } else { f64::NEG_INFINITY })
            .collect()
    } else {
        base.to_vec()
    };
    // alpha == 0 leaves the base logits untouched bit-for-bit
    if sp.alpha != 0.0 {
        for (i, c) in combined.iter_mut().enumerate() {
            if c.is_finite() {
                *c += sp.alpha * (expert[i] - anti_expert[i]);
            }
        }
    }
    if sp.temperature != 1.0 {
        for c in combined.iter_mut() {
            *c /= sp.temperature;
        }
    }
    let probs = softmax_slice(&combined);
    top_p_filter(&probs, sp.p)
}

/// Models driving one generation pass.
pub enum GeneratorSetup<'a> {
    Plain(&'a LmModel),
    /// Expert/anti-expert steering; the base is typically the expert.
    Steered {
        base: &'a LmModel,
        expert: &'a LmModel,
        anti_expert: &'a LmModel,
        steering: SteeringParams,
    },
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub params: GenerationParams,
    /// How many tokens of each input review seed the generation.
    pub prefix_len: usize,
    /// Label stamped on the emitted reviews.
    pub intended_label: Option<Label>,
    /// Provenance tag stored per record.
    pub source_model: String,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            params: GenerationParams::default(),
            prefix_len: 4,
            intended_label: None,
            source_model: String::new(),
        }
    }
}

fn sample_sequence(
    setup: &GeneratorSetup,
    prefix: &[u32],
    opts: &GenerateOptions,
    rng: &mut SplitRng,
) -> Result<Vec<u32>> {
    let mut generated: Vec<u32> = Vec::new();
    for _ in 0..opts.params.max_new_tokens {
        let mut context = prefix.to_vec();
        context.extend_from_slice(&generated);
        let banned = banned_tokens(&context, opts.params.no_repeat_ngram_size);
        let dist = match setup {
            GeneratorSetup::Plain(model) => {
                let logits = model.next_logits(prefix, &generated)?;
                plain_distribution(&logits, &opts.params)?
            }
            GeneratorSetup::Steered {
                base,
                expert,
                anti_expert,
                steering,
            } => {
                let zb = base.next_logits(prefix, &generated)?;
                let zp = expert.next_logits(prefix, &generated)?;
                let zm = anti_expert.next_logits(prefix, &generated)?;
                steered_distribution(&zb, &zp, &zm, steering)?
            }
        };
        let dist = match apply_bans(dist, &banned) {
            Some(d) => d,
            None => break, // every candidate banned; stop early
        };
        let token = rng.sample_weighted(&dist) as u32;
        if token == vocab::EOS {
            break;
        }
        generated.push(token);
    }
    Ok(generated)
}

/// Generate one review per requested sample, conditioning each on the
/// first `prefix_len` tokens of the corresponding input review (cycling
/// when `n_samples` exceeds the input count). The emitted text is the
/// prefix plus the sampled completion. Deterministic per seed: sample `i`
/// draws from an RNG stream derived from (seed, i), so any parallel
/// schedule reproduces the serial output.
pub fn generate(
    setup: &GeneratorSetup,
    inputs: &Corpus,
    n_samples: usize,
    vocabulary: &Vocabulary,
    opts: &GenerateOptions,
) -> Result<Corpus> {
    if inputs.is_empty() {
        return Err(Error::contract("empty input corpus".to_string()));
    }
    let seed = match setup {
        GeneratorSetup::Plain(_) => opts.params.seed,
        GeneratorSetup::Steered { steering, .. } => steering.seed,
    };
    let root = SplitRng::new(seed);
    let mut reviews = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let input = &inputs.reviews[i % inputs.len()];
        let ids = input
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::contract(format!("input review {i} is not tokenized")))?;
        let prefix: Vec<u32> = ids.iter().take(opts.prefix_len).copied().collect();
        let mut rng = root.derive(i as u64);
        let generated = sample_sequence(setup, &prefix, opts, &mut rng)?;
        let mut full = prefix;
        full.extend_from_slice(&generated);
        let mut review = Review::new(vocabulary.detokenize(&full));
        review.label = opts.intended_label;
        review.source_model = if opts.source_model.is_empty() {
            None
        } else {
            Some(opts.source_model.clone())
        };
        review.token_ids = Some(full);
        reviews.push(review);
    }
    Ok(Corpus::new(
        reviews,
        format!("generated({})", opts.source_model),
    ))
}
