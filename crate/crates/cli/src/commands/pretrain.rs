//! Backbone pretraining on dataset-2 with the next-token objective.

use std::path::Path;

use promptgen_core::config::ExperimentConfig;
use promptgen_core::model::train::pretrain_backbone;
use promptgen_core::model::LmModel;
use promptgen_core::tensor::rng::SplitRng;
use promptgen_core::Result;

pub fn run(config: &ExperimentConfig, out_dir: &Path, output: Option<&Path>) -> Result<()> {
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

    let mut rng = SplitRng::new(config.seed);
    let model_config = config.model.model_config(vocab.len());
    let model = LmModel::init(model_config, &mut rng)?;
    let opts = config.training.pretrain_options();
    log::info!(
        "pretraining backbone: {} epochs over {} sequences",
        opts.epochs,
        train.len()
    );
    let log = pretrain_backbone(&model, &train, &val, &opts)?;

    let out_path = super::resolve(output, out_dir, "backbone.plm");
    model.save(&out_path)?;
    log.write_jsonl(&out_dir.join("pretrain-log.jsonl"))?;
    println!(
        "backbone: best val loss {:.4} at epoch {} -> {}",
        log.best_val_loss,
        log.best_epoch,
        out_path.display()
    );
    super::write_snapshot(config, out_dir, "pretrain-backbone")
}
