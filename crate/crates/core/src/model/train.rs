//! Training loops: backbone pretraining and prompt tuning.
//!
//! A single epoch/batch loop drives both; the difference is which parameter
//! set the optimizer is bound to. The epoch with the lowest validation loss
//! is kept (its parameter values are restored at the end).

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{vocab, Corpus};
use crate::error::{Error, Result};
use crate::model::{Architecture, LmModel};
use crate::tensor::adafactor::{AdafactorConfig, AdafactorState};
use crate::tensor::rng::SplitRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdafactorConfig,
    pub seed: u64,
    /// Fraction of training sequences whose token positions are shifted by
    /// a random amount, so every position-table row gets trained. Used for
    /// backbone pretraining; prompt tuning and inference run at offset zero.
    pub position_offset_fraction: f64,
    /// Draw separate encoder and decoder shifts. This blocks the trivial
    /// position-aligned reconstruction circuit, keeping next-token
    /// distributions smooth enough to sample from.
    pub decoupled_position_offsets: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 10,
            optimizer: AdafactorConfig::default(),
            seed: crate::tensor::rng::DEFAULT_SEED,
            position_offset_fraction: 0.0,
            decoupled_position_offsets: false,
        }
    }
}

/// One epoch's record in the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainingLog {
    /// Line-delimited JSON: one epoch record per line, summary line last.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(
                &serde_json::to_string(e)
                    .map_err(|e| Error::data(format!("serialize epoch record: {e}")))?,
            );
            out.push('\n');
        }
        out.push_str(&format!(
            "{{\"best_epoch\":{},\"best_val_loss\":{}}}\n",
            self.best_epoch, self.best_val_loss
        ));
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Token sequences for LM training: token ids plus a closing end-of-sequence
/// marker. Requires corpora to be tokenized beforehand.
fn training_sequences(corpus: &Corpus) -> Result<Vec<Vec<u32>>> {
    let mut seqs = Vec::with_capacity(corpus.len());
    for (i, r) in corpus.reviews.iter().enumerate() {
        let ids = r.token_ids.as_ref().ok_or_else(|| {
            Error::contract(format!("review {i} is not tokenized"))
        })?;
        let mut x = ids.clone();
        x.push(vocab::EOS);
        seqs.push(x);
    }
    Ok(seqs)
}

fn mean_loss(model: &LmModel, seqs: &[Vec<u32>]) -> Result<f64> {
    let mut total = 0.0;
    for x in seqs {
        total += model.lm_loss(x)?.item()?;
    }
    Ok(total / seqs.len() as f64)
}

/// Epoch/batch loop over `params` with per-batch optimizer steps. Restores
/// the parameter values from the epoch with the lowest validation loss.
fn run_loop(
    model: &LmModel,
    params: Vec<Tensor>,
    train_seqs: &[Vec<u32>],
    val_seqs: &[Vec<u32>],
    opts: &TrainOptions,
) -> Result<TrainingLog> {
    if train_seqs.is_empty() {
        return Err(Error::contract("empty training corpus".to_string()));
    }
    if params.is_empty() {
        return Err(Error::contract("no trainable parameters".to_string()));
    }
    let batch_size = opts.batch_size.max(1);
    let mut opt = AdafactorState::new(params.clone(), opts.optimizer.clone());
    let rng = SplitRng::new(opts.seed);

    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best_snapshot: Vec<Vec<f64>> = params.iter().map(|p| p.to_vec()).collect();
    let started = Instant::now();

    for epoch in 0..opts.epochs {
        let mut epoch_rng = rng.derive(epoch as u64);
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        epoch_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let mut batch_loss: Option<Tensor> = None;
            for &i in chunk {
                let max = model.max_offset(train_seqs[i].len());
                let draw_offset = |rng: &mut SplitRng| {
                    if opts.position_offset_fraction > 0.0
                        && max > 0
                        && rng.uniform() < opts.position_offset_fraction
                    {
                        rng.below(max + 1)
                    } else {
                        0
                    }
                };
                let offset = draw_offset(&mut epoch_rng);
                let loss = if opts.decoupled_position_offsets
                    && model.config().architecture == Architecture::EncoderDecoder
                {
                    let dec_offset = draw_offset(&mut epoch_rng);
                    model.enc_dec_prompt_lm_loss_offsets(&train_seqs[i], offset, dec_offset)?
                } else {
                    model.lm_loss_at(&train_seqs[i], offset)?
                };
                batch_loss = Some(match batch_loss {
                    Some(acc) => acc.add(&loss)?,
                    None => loss,
                });
            }
            let loss = batch_loss.expect("non-empty chunk").scale(1.0 / chunk.len() as f64);
            epoch_loss += loss.item()?;
            batches += 1;
            loss.backward()?;
            opt.step()?;
        }

        let val_loss = if val_seqs.is_empty() {
            epoch_loss / batches as f64
        } else {
            mean_loss(model, val_seqs)?
        };
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_snapshot = params.iter().map(|p| p.to_vec()).collect();
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }

    for (p, snap) in params.iter().zip(best_snapshot) {
        p.set_data(snap)?;
    }
    Ok(log)
}

/// Tune the attached soft prompts on a frozen backbone. Only the prompt
/// embeddings receive updates; the backbone is bit-identical afterwards.
pub fn train_prompts(
    model: &LmModel,
    train: &Corpus,
    val: &Corpus,
    opts: &TrainOptions,
) -> Result<TrainingLog> {
    if train.is_empty() {
        return Err(Error::contract("empty training corpus".to_string()));
    }
    model.freeze_backbone();
    let params = model.trainable_params();
    let train_seqs = training_sequences(train)?;
    let val_seqs = training_sequences(val)?;
    run_loop(model, params, &train_seqs, &val_seqs, opts)
}

/// Pretrain the whole backbone with the LM objective (no prompts), then
/// freeze it. Stands in for large-scale language-model adaptation.
pub fn pretrain_backbone(
    model: &LmModel,
    train: &Corpus,
    val: &Corpus,
    opts: &TrainOptions,
) -> Result<TrainingLog> {
    if train.is_empty() {
        return Err(Error::contract("empty training corpus".to_string()));
    }
    if !model.trainable_params().is_empty() {
        return Err(Error::contract(
            "pretraining expects a model without attached prompts".to_string(),
        ));
    }
    model.backbone().set_trainable(true);
    let params: Vec<Tensor> = model
        .backbone()
        .named_params()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let train_seqs = training_sequences(train)?;
    let val_seqs = training_sequences(val)?;
    let log = run_loop(model, params, &train_seqs, &val_seqs, opts);
    model.freeze_backbone();
    log
}
