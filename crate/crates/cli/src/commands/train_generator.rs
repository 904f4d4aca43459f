//! Prompt tuning: one generator per sentiment label, trained on the
//! matching half of dataset-2 with the backbone frozen.

use std::path::Path;

use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::Label;
use promptgen_core::model::train::train_prompts;
use promptgen_core::model::{Architecture, LmModel, PromptSite};
use promptgen_core::tensor::rng::SplitRng;
use promptgen_core::{Error, Result};

fn parse_sites(names: &[String]) -> Result<Vec<PromptSite>> {
    names
        .iter()
        .map(|s| match s.as_str() {
            "input" => Ok(PromptSite::Input),
            "encoder" => Ok(PromptSite::Encoder),
            "decoder" => Ok(PromptSite::Decoder),
            other => Err(Error::config(format!(
                "unknown prompt site {other:?}; use input, encoder, or decoder"
            ))),
        })
        .collect()
}

fn check_sites(architecture: Architecture, sites: &[PromptSite]) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::config("no prompt sites configured".to_string()));
    }
    for site in sites {
        let ok = matches!(
            (architecture, site),
            (Architecture::DecoderOnly, PromptSite::Input)
                | (Architecture::EncoderDecoder, PromptSite::Encoder)
                | (Architecture::EncoderDecoder, PromptSite::Decoder)
        );
        if !ok {
            return Err(Error::config(format!(
                "prompt site {site:?} is invalid for {architecture:?}"
            )));
        }
    }
    Ok(())
}

pub fn generator_name(tag: &str, label: Label) -> String {
    if tag.is_empty() {
        format!("generator-{label}.plm")
    } else {
        format!("generator-{tag}-{label}.plm")
    }
}

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    backbone: Option<&Path>,
    prompt_sites: Option<&[String]>,
    tag: &str,
) -> Result<()> {
    let sites = match prompt_sites {
        Some(names) => parse_sites(names)?,
        None => config.model.prompt_sites.clone(),
    };
    check_sites(config.model.architecture, &sites)?;

    let vocab = super::load_vocab(out_dir)?;
    let train = super::load_tokenized(
        &out_dir.join("dataset-2/train.jsonl"),
        &vocab,
        "dataset-2 train split",
    )?;
    let val = super::load_tokenized(
        &out_dir.join("dataset-2/validation.jsonl"),
        &vocab,
        "dataset-2 validation split",
    )?;

    let backbone_path = backbone.map(|p| p.to_path_buf());
    if let Some(path) = &backbone_path {
        if !path.exists() {
            return Err(Error::config(format!(
                "pretrained backbone not found: {}",
                path.display()
            )));
        }
    }

    let opts = config.training.prompt_tuning_options();
    for label in [Label::Positive, Label::Negative] {
        let mut model = match &backbone_path {
            Some(path) => LmModel::load(path)?,
            None => {
                log::warn!("no --backbone given; tuning prompts on an untrained backbone");
                let mut rng = SplitRng::new(config.seed);
                let m = LmModel::init(config.model.model_config(vocab.len()), &mut rng)?;
                m.freeze_backbone();
                m
            }
        };
        let prompt_seed = SplitRng::new(config.training.seed)
            .derive(label.index() as u64)
            .seed();
        for &site in &sites {
            model.init_soft_prompt(site, config.model.prompt_length, prompt_seed)?;
        }

        let label_train = train.filter_label(label);
        let label_val = val.filter_label(label);
        log::info!(
            "tuning {label} generator: {} prompts x {} rows, {} sequences",
            sites.len(),
            config.model.prompt_length,
            label_train.len()
        );
        let log = train_prompts(&model, &label_train, &label_val, &opts)?;

        let name = generator_name(tag, label);
        model.save(&out_dir.join(&name))?;
        let log_name = name.replace(".plm", "-log.jsonl");
        log.write_jsonl(&out_dir.join(log_name))?;
        println!(
            "{label} generator: best val loss {:.4} at epoch {} -> {name}",
            log.best_val_loss, log.best_epoch
        );
    }
    super::write_snapshot(config, out_dir, "train-generator")
}
