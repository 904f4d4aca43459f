//! Binary sentiment classifier: a small self-attention encoder with mean
//! pooling and a two-logit head. Used both as the intrinsic judge (trained
//! on real labelled data) and as the extrinsic-evaluation trainee (trained
//! on generated data). All parameters train; the optimizer is momentum SGD.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{vocab, Corpus, Label};
use crate::error::{Error, Result};
use crate::model::transformer::{layer_forward, Layer, RMS_EPS};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::rng::SplitRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            vocab_size: 2000,
            embed_dim: 32,
            layers: 1,
            heads: 2,
            ffn_dim: 64,
            max_seq_len: 64,
        }
    }
}

pub struct ClassifierModel {
    config: ClassifierConfig,
    embed: Tensor,
    pos: Tensor,
    layers: Vec<Layer>,
    final_norm: Tensor,
    head_w: Tensor,
    head_b: Tensor,
}

impl ClassifierModel {
    pub fn init(config: ClassifierConfig, rng: &mut SplitRng) -> ClassifierModel {
        let d = config.embed_dim;
        let mut r = rng.derive(0xc1);
        ClassifierModel {
            embed: Tensor::randn(vec![config.vocab_size, d], 0.5, &mut r),
            pos: Tensor::randn(vec![config.max_seq_len, d], 0.5, &mut r),
            layers: (0..config.layers)
                .map(|_| Layer::init(d, config.ffn_dim, false, &mut r))
                .collect(),
            final_norm: Tensor::param(vec![1.0; d], vec![d]).expect("norm shape"),
            head_w: Tensor::randn(vec![d, 2], 1.0 / (d as f64).sqrt(), &mut r),
            head_b: Tensor::param(vec![0.0, 0.0], vec![1, 2]).expect("bias shape"),
            config,
        }
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("embed".to_string(), self.embed.clone()),
            ("pos".to_string(), self.pos.clone()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named(&format!("layer{i}"), &mut out);
        }
        out.push(("final_norm".to_string(), self.final_norm.clone()));
        out.push(("head.w".to_string(), self.head_w.clone()));
        out.push(("head.b".to_string(), self.head_b.clone()));
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Two logits for one token sequence. Empty input is classified from a
    /// single pad token.
    pub fn logits(&self, tokens: &[u32]) -> Result<Tensor> {
        let ids: Vec<usize> = if tokens.is_empty() {
            vec![vocab::PAD as usize]
        } else {
            tokens
                .iter()
                .take(self.config.max_seq_len)
                .map(|&t| t as usize)
                .collect()
        };
        let emb = Tensor::embedding(&self.embed, &ids)?;
        let mut h = emb.add(&self.pos.slice_rows(0, ids.len())?)?;
        for layer in &self.layers {
            h = layer_forward(layer, &h, None, self.config.heads, None)?;
        }
        let pooled = h.rms_norm(&self.final_norm, RMS_EPS)?.mean_rows()?;
        pooled.matmul(&self.head_w)?.add(&self.head_b)
    }

    /// Class probabilities (negative, positive) for one sequence.
    pub fn predict_proba(&self, tokens: &[u32]) -> Result<[f64; 2]> {
        let logits = self.logits(tokens)?;
        let probs = logits.softmax(1)?.to_vec();
        Ok([probs[0], probs[1]])
    }

    /// Argmax label; ties resolve to negative.
    pub fn predict(&self, tokens: &[u32]) -> Result<Label> {
        let p = self.predict_proba(tokens)?;
        Ok(if p[1] > p[0] {
            Label::Positive
        } else {
            Label::Negative
        })
    }

    /// Predictions for every review in a corpus (uses cached token ids).
    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<Vec<Label>> {
        corpus
            .reviews
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let ids = r.token_ids.as_ref().ok_or_else(|| {
                    Error::contract(format!("review {i} is not tokenized"))
                })?;
                self.predict(ids)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let json = serde_json::to_string(&self.config)
            .map_err(|e| Error::data(format!("serialize classifier config: {e}")))?;
        let mut ckpt = Checkpoint::new(json);
        for (name, t) in self.named_params() {
            ckpt.push(name, t.shape(), t.to_vec());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<ClassifierModel> {
        let ckpt = Checkpoint::load(path)?;
        let config: ClassifierConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::data(format!("parse classifier config: {e}")))?;
        let mut rng = SplitRng::new(0);
        let model = ClassifierModel::init(config, &mut rng);
        for (name, t) in model.named_params() {
            let rec = ckpt
                .find(&name)
                .ok_or_else(|| Error::data(format!("checkpoint missing parameter {name}")))?;
            if rec.shape != t.shape() {
                return Err(Error::data(format!(
                    "checkpoint parameter {name}: shape {:?} != expected {:?}",
                    rec.shape,
                    t.shape()
                )));
            }
            t.set_data(rec.data.clone())?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainOptions {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainOptions {
    fn default() -> Self {
        ClassifierTrainOptions {
            // from-scratch toy default; the bundled `table6` preset carries
            // the published fine-tuning value instead
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            epochs: 5,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epochs: Vec<ClassifierEpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl ClassifierLog {
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
            "{{\"best_epoch\":{},\"best_val_accuracy\":{}}}\n",
            self.best_epoch, self.best_val_accuracy
        ));
        std::fs::write(path, out)?;
        Ok(())
    }
}

struct MomentumSgd {
    params: Vec<Tensor>,
    velocity: Vec<Vec<f64>>,
    lr: f64,
    momentum: f64,
}

impl MomentumSgd {
    fn new(params: Vec<Tensor>, lr: f64, momentum: f64) -> MomentumSgd {
        let velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        MomentumSgd {
            params,
            velocity,
            lr,
            momentum,
        }
    }

    fn step(&mut self) -> Result<()> {
        for (p, v) in self.params.iter().zip(self.velocity.iter_mut()) {
            let grad = p
                .grad()
                .ok_or_else(|| Error::contract("sgd step without gradient".to_string()))?;
            for (vi, gi) in v.iter_mut().zip(&grad) {
                *vi = self.momentum * *vi + gi;
            }
            let lr = self.lr;
            p.apply_update(|i, x| *x -= lr * v[i]);
            p.zero_grad();
        }
        Ok(())
    }
}

fn labelled_sequences(corpus: &Corpus) -> Result<Vec<(Vec<u32>, usize)>> {
    let mut out = Vec::with_capacity(corpus.len());
    for (i, r) in corpus.reviews.iter().enumerate() {
        let ids = r
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::contract(format!("review {i} is not tokenized")))?;
        let label = r
            .label
            .ok_or_else(|| Error::contract(format!("review {i} has no label")))?;
        out.push((ids.clone(), label.index()));
    }
    Ok(out)
}

fn accuracy_on(model: &ClassifierModel, data: &[(Vec<u32>, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (ids, label) in data {
        if model.predict(ids)?.index() == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Train a fresh classifier with cross-entropy and momentum SGD, keeping
/// the epoch with the best validation accuracy. A single-class training
/// set is rejected.
pub fn train_classifier(
    config: ClassifierConfig,
    train: &Corpus,
    val: &Corpus,
    opts: &ClassifierTrainOptions,
) -> Result<(ClassifierModel, ClassifierLog)> {
    let train_data = labelled_sequences(train)?;
    if train_data.is_empty() {
        return Err(Error::contract("empty training corpus".to_string()));
    }
    let classes: std::collections::HashSet<usize> =
        train_data.iter().map(|(_, l)| *l).collect();
    if classes.len() < 2 {
        return Err(Error::contract(
            "training set contains a single class".to_string(),
        ));
    }
    let val_data = labelled_sequences(val)?;

    let mut rng = SplitRng::new(opts.seed);
    let model = ClassifierModel::init(config, &mut rng);
    let params = model.params();
    let mut opt = MomentumSgd::new(params.clone(), opts.learning_rate, opts.momentum);

    let mut log = ClassifierLog {
        best_val_accuracy: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best_snapshot: Vec<Vec<f64>> = params.iter().map(|p| p.to_vec()).collect();
    let started = Instant::now();
    let batch_size = opts.batch_size.max(1);

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        rng.derive(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let mut batch_loss: Option<Tensor> = None;
            for &i in chunk {
                let (ids, label) = &train_data[i];
                let logits = model.logits(ids)?;
                let loss = Tensor::cross_entropy(&logits, &[*label], &[true])?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => acc.add(&loss)?,
                    None => loss,
                });
            }
            let loss = batch_loss
                .expect("non-empty chunk")
                .scale(1.0 / chunk.len() as f64);
            epoch_loss += loss.item()?;
            batches += 1;
            loss.backward()?;
            opt.step()?;
        }
        let val_accuracy = if val_data.is_empty() {
            accuracy_on(&model, &train_data)?
        } else {
            accuracy_on(&model, &val_data)?
        };
        if val_accuracy > log.best_val_accuracy {
            log.best_val_accuracy = val_accuracy;
            log.best_epoch = epoch;
            best_snapshot = params.iter().map(|p| p.to_vec()).collect();
        }
        log.epochs.push(ClassifierEpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }

    for (p, snap) in params.iter().zip(best_snapshot) {
        p.set_data(snap)?;
    }
    Ok((model, log))
}

/// Confusion-matrix-derived metrics for a binary labelling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// counts[gold][pred], indexed by Label::index()
    pub confusion: [[usize; 2]; 2],
    pub accuracy: f64,
    /// (precision, recall, f1) per label, indexed by Label::index()
    pub per_label: [(f64, f64, f64); 2],
}

impl ClassifierReport {
    pub fn precision(&self, label: Label) -> f64 {
        self.per_label[label.index()].0
    }
    pub fn recall(&self, label: Label) -> f64 {
        self.per_label[label.index()].1
    }
    pub fn f1(&self, label: Label) -> f64 {
        self.per_label[label.index()].2
    }
}

impl std::fmt::Display for ClassifierReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "label     precision  recall     f1")?;
        for label in [Label::Negative, Label::Positive] {
            let (p, r, f1) = self.per_label[label.index()];
            writeln!(f, "{:<9} {:<10.4} {:<10.4} {:<10.4}", label.as_str(), p, r, f1)?;
        }
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        write!(
            f,
            "confusion [gold negative: {} {}] [gold positive: {} {}]",
            self.confusion[0][0], self.confusion[0][1], self.confusion[1][0], self.confusion[1][1]
        )
    }
}

/// Standard confusion-matrix metrics; undefined ratios report as zero.
pub fn report(preds: &[Label], gold: &[Label]) -> Result<ClassifierReport> {
    if preds.len() != gold.len() {
        return Err(Error::contract(format!(
            "prediction/gold length mismatch: {} vs {}",
            preds.len(),
            gold.len()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, g) in preds.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let total = preds.len();
    let correct = confusion[0][0] + confusion[1][1];
    let accuracy = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    let mut per_label = [(0.0, 0.0, 0.0); 2];
    for label in 0..2 {
        let tp = confusion[label][label];
        let fp = confusion[1 - label][label];
        let fn_ = confusion[label][1 - label];
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_label[label] = (precision, recall, f1);
    }
    Ok(ClassifierReport {
        confusion,
        accuracy,
        per_label,
    })
}
