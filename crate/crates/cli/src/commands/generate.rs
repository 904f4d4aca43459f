//! Generation: plain sampling from one generator per label, or steered
//! decoding where the target-sentiment generator serves as base and expert
//! and the opposite-sentiment generator as anti-expert.

use std::path::Path;

use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::Label;
use promptgen_core::decoding::{generate, GenerateOptions, GeneratorSetup, SteeringParams};
use promptgen_core::model::LmModel;
use promptgen_core::{Error, Result};

use super::train_generator::generator_name;

fn steering_for(preset: &str, label: Label, config: &ExperimentConfig) -> Result<SteeringParams> {
    let mut params = match preset {
        "auto" => match label {
            Label::Positive => SteeringParams::positive_preset(),
            Label::Negative => SteeringParams::negative_preset(),
        },
        "positive" => SteeringParams::positive_preset(),
        "negative" => SteeringParams::negative_preset(),
        "config" => config.steering.params(),
        other => {
            return Err(Error::config(format!(
                "unknown steering preset {other:?}; use auto, positive, negative, or config"
            )))
        }
    };
    // explicit config/flag overrides still win over the preset defaults
    if preset == "auto" || preset == "positive" || preset == "negative" {
        let defaults = promptgen_core::config::SteeringSection::default();
        let section = &config.steering;
        if section.alpha != defaults.alpha {
            params.alpha = section.alpha;
        }
        if section.p != defaults.p {
            params.p = section.p;
        }
        if section.filter_p != defaults.filter_p && preset != "negative" {
            params.filter_p = section.filter_p;
        }
        if section.temperature != defaults.temperature && preset != "negative" {
            params.temperature = section.temperature;
        }
    }
    params.seed = config.steering.seed;
    Ok(params)
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    mode: &str,
    labels: &[Label],
    tag: &str,
    inputs: Option<&Path>,
    split: &str,
    steer_preset: &str,
) -> Result<()> {
    if !matches!(split, "train" | "validation" | "test") {
        return Err(Error::config(format!(
            "unknown split {split:?}; use train, validation, or test"
        )));
    }
    let vocab = super::load_vocab(out_dir)?;
    let inputs_path = super::resolve(inputs, out_dir, &format!("dataset-3/{split}.jsonl"));
    let input_corpus = super::load_tokenized(&inputs_path, &vocab, "generation input corpus")?;

    for &label in labels {
        let target_path = out_dir.join(generator_name(tag, label));
        if !target_path.exists() {
            return Err(Error::config(format!(
                "missing generator checkpoint: {}",
                target_path.display()
            )));
        }
        let target = LmModel::load(&target_path)?;

        // steering conditions on inputs of the intended label only; plain
        // generation does the same so the prefixes match the label
        let label_inputs = input_corpus.filter_label(label);
        let inputs_for_label = if label_inputs.is_empty() {
            &input_corpus
        } else {
            &label_inputs
        };
        let n_samples = if config.generation.n_samples > 0 {
            config.generation.n_samples
        } else {
            inputs_for_label.len()
        };

        let source_tag = |kind: &str| {
            if tag.is_empty() {
                format!("{kind}-{label}")
            } else {
                format!("{kind}-{tag}-{label}")
            }
        };

        let (corpus, out_name) = match mode {
            "plain" => {
                let opts = GenerateOptions {
                    params: config.generation.params(),
                    prefix_len: config.generation.prefix_len,
                    intended_label: Some(label),
                    source_model: source_tag("plain"),
                };
                let corpus = generate(
                    &GeneratorSetup::Plain(&target),
                    inputs_for_label,
                    n_samples,
                    &vocab,
                    &opts,
                )?;
                (corpus, format!("generated-{}.jsonl", source_tag("plain")))
            }
            "steer" => {
                let anti_path = out_dir.join(generator_name(tag, label.opposite()));
                if !anti_path.exists() {
                    return Err(Error::config(format!(
                        "steer mode needs the anti-expert checkpoint: {}",
                        anti_path.display()
                    )));
                }
                let anti = LmModel::load(&anti_path)?;
                let steering = steering_for(steer_preset, label, config)?;
                let opts = GenerateOptions {
                    params: config.generation.params(),
                    prefix_len: config.generation.prefix_len,
                    intended_label: Some(label),
                    source_model: source_tag("steer"),
                };
                let corpus = generate(
                    &GeneratorSetup::Steered {
                        base: &target,
                        expert: &target,
                        anti_expert: &anti,
                        steering,
                    },
                    inputs_for_label,
                    n_samples,
                    &vocab,
                    &opts,
                )?;
                (corpus, format!("generated-{}.jsonl", source_tag("steer")))
            }
            other => {
                return Err(Error::config(format!(
                    "unknown mode {other:?}; use plain or steer"
                )))
            }
        };

        corpus.write_jsonl(&out_dir.join(&out_name))?;
        println!("{label}: {} reviews -> {out_name}", corpus.len());
    }
    super::write_snapshot(config, out_dir, "generate")
}
