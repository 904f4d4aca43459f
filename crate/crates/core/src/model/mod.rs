//! Miniature transformer language models with soft prompts.
//!
//! A backbone (encoder-decoder or decoder-only) is pretrained with a
//! next-token objective, then frozen. Afterwards the only trainable
//! parameters are soft prompts: small blocks of continuous embeddings
//! prepended to the encoder and/or decoder input (or the single input of a
//! decoder-only model). Prompt rows are initialized by copying uniformly
//! sampled rows of the corresponding embedding table.
//!
//! Sequence conventions for an input x = x_1..x_n:
//!   decoder-only     input  [S_in; <s>; x_1..x_{n-1}], loss on x_1..x_n
//!   encoder side     input  [S_en; x_1..x_n], bidirectional
//!   decoder side     input  [S_de; <s>; x_1..x_{n-1}], causal + cross
//! Prompt positions contribute attention context but never loss; the loss
//! always covers exactly n positions.

pub mod train;
pub mod transformer;


use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::rng::SplitRng;
use crate::tensor::Tensor;
use transformer::{causal_mask, layer_forward, Layer, RMS_EPS};

/// Backbone topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    EncoderDecoder,
    DecoderOnly,
}

/// Where a soft prompt attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSite {
    /// Single input of a decoder-only model.
    Input,
    /// Encoder input of an encoder-decoder model.
    Encoder,
    /// Decoder input of an encoder-decoder model.
    Decoder,
}

impl PromptSite {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptSite::Input => "input",
            PromptSite::Encoder => "encoder",
            PromptSite::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Layers per stack.
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2000,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_seq_len: 96,
            architecture: Architecture::EncoderDecoder,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.vocab_size < vocab::RESERVED.len() {
            return Err(Error::config(format!(
                "vocab_size {} below reserved token count",
                self.vocab_size
            )));
        }
        if self.layers == 0 || self.ffn_dim == 0 || self.max_seq_len == 0 {
            return Err(Error::config("zero-sized model dimension".to_string()));
        }
        Ok(())
    }
}

/// A trainable block of prompt embeddings of shape [length, embed_dim].
pub struct SoftPrompt {
    pub site: PromptSite,
    pub embeddings: Tensor,
}

impl SoftPrompt {
    pub fn len(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct EncoderSide {
    embed: Tensor,
    layers: Vec<Layer>,
    final_norm: Tensor,
}

/// Frozen-after-pretraining transformer backbone. The position table is
/// shared between the stacks so encoder/decoder position alignment carries
/// over to offsets never seen in training.
pub struct Backbone {
    config: ModelConfig,
    encoder: Option<EncoderSide>,
    pos: Tensor,
    dec_embed: Tensor,
    dec_layers: Vec<Layer>,
    dec_final_norm: Tensor,
    head: Tensor,
}

impl Backbone {
    pub fn init(config: ModelConfig, rng: &mut SplitRng) -> Result<Backbone> {
        config.validate()?;
        let d = config.embed_dim;
        let v = config.vocab_size;
        let ml = config.max_seq_len;
        let mut r = rng.derive(0xb0);
        let encoder = match config.architecture {
            Architecture::EncoderDecoder => Some(EncoderSide {
                embed: Tensor::randn(vec![v, d], 0.5, &mut r),
                layers: (0..config.layers)
                    .map(|_| Layer::init(d, config.ffn_dim, false, &mut r))
                    .collect(),
                final_norm: Tensor::param(vec![1.0; d], vec![d])?,
            }),
            Architecture::DecoderOnly => None,
        };
        let with_cross = encoder.is_some();
        Ok(Backbone {
            encoder,
            // position signal carries the same weight as word identity;
            // cross-attention alignment depends on it
            pos: Tensor::randn(vec![ml, d], 0.5, &mut r),
            dec_embed: Tensor::randn(vec![v, d], 0.5, &mut r),
            dec_layers: (0..config.layers)
                .map(|_| Layer::init(d, config.ffn_dim, with_cross, &mut r))
                .collect(),
            dec_final_norm: Tensor::param(vec![1.0; d], vec![d])?,
            head: Tensor::randn(vec![d, v], 1.0 / (d as f64).sqrt(), &mut r),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All backbone parameters in a stable name order.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(enc) = &self.encoder {
            out.push(("encoder.embed".to_string(), enc.embed.clone()));
            for (i, layer) in enc.layers.iter().enumerate() {
                layer.named(&format!("encoder.layer{i}"), &mut out);
            }
            out.push(("encoder.final_norm".to_string(), enc.final_norm.clone()));
        }
        out.push(("pos".to_string(), self.pos.clone()));
        out.push(("decoder.embed".to_string(), self.dec_embed.clone()));
        for (i, layer) in self.dec_layers.iter().enumerate() {
            layer.named(&format!("decoder.layer{i}"), &mut out);
        }
        out.push(("decoder.final_norm".to_string(), self.dec_final_norm.clone()));
        out.push(("head".to_string(), self.head.clone()));
        out
    }

    /// Flip gradient tracking on every backbone parameter.
    pub fn set_trainable(&self, trainable: bool) {
        for (_, t) in self.named_params() {
            t.set_requires_grad(trainable);
        }
    }

    /// FNV-1a checksum over the raw bits of all parameters, in name order.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in self.named_params() {
            for b in name.as_bytes() {
                hash = (hash ^ *b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in t.to_vec() {
                for b in v.to_le_bytes() {
                    hash = (hash ^ b as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        hash
    }

    /// Embedding table feeding the given prompt site.
    fn site_table(&self, site: PromptSite) -> Result<&Tensor> {
        match (self.config.architecture, site) {
            (Architecture::DecoderOnly, PromptSite::Input) => Ok(&self.dec_embed),
            (Architecture::EncoderDecoder, PromptSite::Encoder) => {
                Ok(&self.encoder.as_ref().expect("encoder side").embed)
            }
            (Architecture::EncoderDecoder, PromptSite::Decoder) => Ok(&self.dec_embed),
            (arch, site) => Err(Error::contract(format!(
                "prompt site {site:?} is invalid for {arch:?}"
            ))),
        }
    }
}

/// Config block stored inside model checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub prompts: Vec<(PromptSite, usize)>,
}

/// A backbone plus zero, one, or two attached soft prompts. The unit of
/// training, generation, and steering.
pub struct LmModel {
    backbone: Backbone,
    prompts: BTreeMap<PromptSite, SoftPrompt>,
}

impl LmModel {
    pub fn new(backbone: Backbone) -> LmModel {
        LmModel {
            backbone,
            prompts: BTreeMap::new(),
        }
    }

    /// Fresh randomly initialized model (backbone trainable until frozen).
    pub fn init(config: ModelConfig, rng: &mut SplitRng) -> Result<LmModel> {
        Ok(LmModel::new(Backbone::init(config, rng)?))
    }

    pub fn config(&self) -> &ModelConfig {
        self.backbone.config()
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn prompt(&self, site: PromptSite) -> Option<&SoftPrompt> {
        self.prompts.get(&site)
    }

    /// Handle to the decoder-side embedding table (the shared input table
    /// of a decoder-only model). Used as the default similarity embedder.
    pub fn decoder_embedding(&self) -> Tensor {
        self.backbone.dec_embed.clone()
    }

    pub fn prompt_len(&self, site: PromptSite) -> usize {
        self.prompts.get(&site).map(|p| p.len()).unwrap_or(0)
    }

    /// Freeze the backbone; prompts remain trainable.
    pub fn freeze_backbone(&self) {
        self.backbone.set_trainable(false);
    }

    /// Initialize a soft prompt of `length` rows, each copied from a
    /// uniformly sampled row of the site's embedding table, and attach it.
    pub fn init_soft_prompt(
        &mut self,
        site: PromptSite,
        length: usize,
        seed: u64,
    ) -> Result<()> {
        let table = self.backbone.site_table(site)?;
        let d = self.config().embed_dim;
        let v = self.config().vocab_size;
        let table_data = table.to_vec();
        let mut rng = SplitRng::new(seed).derive(site as u64);
        let mut data = Vec::with_capacity(length * d);
        for _ in 0..length {
            let row = rng.below(v);
            data.extend_from_slice(&table_data[row * d..(row + 1) * d]);
        }
        let embeddings = Tensor::param(data, vec![length, d])?;
        self.prompts.insert(site, SoftPrompt { site, embeddings });
        Ok(())
    }

    /// Attach an existing prompt (validated against the architecture).
    pub fn set_prompt(&mut self, prompt: SoftPrompt) -> Result<()> {
        self.backbone.site_table(prompt.site)?;
        if prompt.embeddings.shape()[1] != self.config().embed_dim {
            return Err(Error::shape(format!(
                "prompt width {} != embed_dim {}",
                prompt.embeddings.shape()[1],
                self.config().embed_dim
            )));
        }
        self.prompts.insert(prompt.site, prompt);
        Ok(())
    }

    /// Exactly the soft prompt embedding tensors; backbone excluded.
    pub fn trainable_params(&self) -> Vec<Tensor> {
        self.prompts.values().map(|p| p.embeddings.clone()).collect()
    }

    fn check_len(&self, needed: usize) -> Result<()> {
        if needed > self.config().max_seq_len {
            return Err(Error::contract(format!(
                "sequence length {needed} exceeds max {}",
                self.config().max_seq_len
            )));
        }
        Ok(())
    }

    fn prompt_rows(&self, site: PromptSite) -> Option<Tensor> {
        self.prompts.get(&site).and_then(|p| {
            if p.is_empty() {
                None
            } else {
                Some(p.embeddings.clone())
            }
        })
    }

    /// Assemble [prompt?; embed(ids)] + positions(offset..) for one stack.
    fn assemble(
        &self,
        prompt: Option<Tensor>,
        table: &Tensor,
        pos: &Tensor,
        ids: &[usize],
        offset: usize,
    ) -> Result<Tensor> {
        let emb = Tensor::embedding(table, ids)?;
        let seq = match prompt {
            Some(p) => Tensor::concat_rows(&[p, emb])?,
            None => emb,
        };
        let t = seq.shape()[0];
        seq.add(&pos.slice_rows(offset, t)?)
    }

    /// Decoder-only forward over [S_in?; <s>; tokens], returning hidden
    /// states after the final norm.
    fn decoder_only_hidden(&self, tokens: &[u32], offset: usize) -> Result<Tensor> {
        let ids: Vec<usize> = std::iter::once(vocab::START as usize)
            .chain(tokens.iter().map(|&t| t as usize))
            .collect();
        let prompt = self.prompt_rows(PromptSite::Input);
        let l = prompt.as_ref().map(|p| p.shape()[0]).unwrap_or(0);
        self.check_len(offset + l + ids.len())?;
        let mut h = self.assemble(
            prompt,
            &self.backbone.dec_embed,
            &self.backbone.pos,
            &ids,
            offset,
        )?;
        let mask = causal_mask(h.shape()[0]);
        for layer in &self.backbone.dec_layers {
            h = layer_forward(layer, &h, None, self.config().heads, Some(&mask))?;
        }
        h.rms_norm(&self.backbone.dec_final_norm, RMS_EPS)
    }

    /// Encoder forward over [S_en?; x], bidirectional, final-normed.
    fn encoder_hidden(&self, input: &[u32], offset: usize) -> Result<Tensor> {
        let enc = self
            .backbone
            .encoder
            .as_ref()
            .ok_or_else(|| Error::contract("encoder pass on a decoder-only model".to_string()))?;
        let ids: Vec<usize> = input.iter().map(|&t| t as usize).collect();
        let prompt = self.prompt_rows(PromptSite::Encoder);
        let l = prompt.as_ref().map(|p| p.shape()[0]).unwrap_or(0);
        self.check_len(offset + l + ids.len())?;
        let mut h = self.assemble(prompt, &enc.embed, &self.backbone.pos, &ids, offset)?;
        for layer in &enc.layers {
            h = layer_forward(layer, &h, None, self.config().heads, None)?;
        }
        h.rms_norm(&enc.final_norm, RMS_EPS)
    }

    /// Decoder forward over [S_de?; <s>; tokens] with cross-attention,
    /// final-normed.
    fn decoder_hidden(&self, enc_out: &Tensor, tokens: &[u32], offset: usize) -> Result<Tensor> {
        let ids: Vec<usize> = std::iter::once(vocab::START as usize)
            .chain(tokens.iter().map(|&t| t as usize))
            .collect();
        let prompt = self.prompt_rows(PromptSite::Decoder);
        let l = prompt.as_ref().map(|p| p.shape()[0]).unwrap_or(0);
        self.check_len(offset + l + ids.len())?;
        let mut h = self.assemble(
            prompt,
            &self.backbone.dec_embed,
            &self.backbone.pos,
            &ids,
            offset,
        )?;
        let mask = causal_mask(h.shape()[0]);
        for layer in &self.backbone.dec_layers {
            h = layer_forward(layer, &h, Some(enc_out), self.config().heads, Some(&mask))?;
        }
        h.rms_norm(&self.backbone.dec_final_norm, RMS_EPS)
    }

    /// Next-token loss for a decoder-only model with an input prompt:
    /// mean cross-entropy over the n real-token positions only.
    pub fn input_prompt_lm_loss(&self, x: &[u32]) -> Result<Tensor> {
        self.input_prompt_lm_loss_at(x, 0)
    }

    /// Same loss with token positions shifted by `offset`. Pretraining
    /// randomizes the shift so every table row and alignment gets trained.
    pub fn input_prompt_lm_loss_at(&self, x: &[u32], offset: usize) -> Result<Tensor> {
        if self.config().architecture != Architecture::DecoderOnly {
            return Err(Error::contract(
                "input-prompt loss requires a decoder-only model".to_string(),
            ));
        }
        if x.is_empty() {
            return Err(Error::contract("empty sequence".to_string()));
        }
        let hidden = self.decoder_only_hidden(&x[..x.len() - 1], offset)?;
        let l = self.prompt_len(PromptSite::Input);
        let outputs = hidden.slice_rows(l, x.len())?;
        let logits = outputs.matmul(&self.backbone.head)?;
        let targets: Vec<usize> = x.iter().map(|&t| t as usize).collect();
        Tensor::cross_entropy(&logits, &targets, &vec![true; x.len()])
    }

    /// Next-token loss for an encoder-decoder model with encoder and/or
    /// decoder prompts: the encoder reads the whole sequence, the decoder
    /// predicts it token by token. Mean cross-entropy over n positions.
    pub fn enc_dec_prompt_lm_loss(&self, x: &[u32]) -> Result<Tensor> {
        self.enc_dec_prompt_lm_loss_at(x, 0)
    }

    /// Same loss with token positions shifted by `offset` on both stacks.
    pub fn enc_dec_prompt_lm_loss_at(&self, x: &[u32], offset: usize) -> Result<Tensor> {
        self.enc_dec_prompt_lm_loss_offsets(x, offset, offset)
    }

    /// Encoder and decoder positions shifted independently. Pretraining
    /// with decoupled shifts removes the fixed cross-stack alignment, so
    /// the model conditions on the encoder as an order-soft context
    /// instead of reconstructing it position by position.
    pub fn enc_dec_prompt_lm_loss_offsets(
        &self,
        x: &[u32],
        enc_offset: usize,
        dec_offset: usize,
    ) -> Result<Tensor> {
        if self.config().architecture != Architecture::EncoderDecoder {
            return Err(Error::contract(
                "encoder/decoder-prompt loss requires an encoder-decoder model".to_string(),
            ));
        }
        if x.is_empty() {
            return Err(Error::contract("empty sequence".to_string()));
        }
        let enc_out = self.encoder_hidden(x, enc_offset)?;
        let hidden = self.decoder_hidden(&enc_out, &x[..x.len() - 1], dec_offset)?;
        let l = self.prompt_len(PromptSite::Decoder);
        let outputs = hidden.slice_rows(l, x.len())?;
        let logits = outputs.matmul(&self.backbone.head)?;
        let targets: Vec<usize> = x.iter().map(|&t| t as usize).collect();
        Tensor::cross_entropy(&logits, &targets, &vec![true; x.len()])
    }

    /// Architecture-dispatched LM loss.
    pub fn lm_loss(&self, x: &[u32]) -> Result<Tensor> {
        self.lm_loss_at(x, 0)
    }

    pub fn lm_loss_at(&self, x: &[u32], offset: usize) -> Result<Tensor> {
        match self.config().architecture {
            Architecture::DecoderOnly => self.input_prompt_lm_loss_at(x, offset),
            Architecture::EncoderDecoder => self.enc_dec_prompt_lm_loss_at(x, offset),
        }
    }

    /// Largest position offset usable for a sequence of `n` tokens.
    pub fn max_offset(&self, n: usize) -> usize {
        let l = self
            .prompts
            .values()
            .map(|p| p.len())
            .max()
            .unwrap_or(0);
        self.config().max_seq_len.saturating_sub(l + n + 1)
    }

    /// Raw logits for the next token given a conditioning prefix and the
    /// tokens generated so far. For an encoder-decoder model the prefix
    /// feeds the encoder; for a decoder-only model it is part of the
    /// decoder context.
    pub fn next_logits(&self, prefix: &[u32], generated: &[u32]) -> Result<Vec<f64>> {
        let hidden = match self.config().architecture {
            Architecture::DecoderOnly => {
                let mut ctx = prefix.to_vec();
                ctx.extend_from_slice(generated);
                self.decoder_only_hidden(&ctx, 0)?
            }
            Architecture::EncoderDecoder => {
                let enc_out = self.encoder_hidden(prefix, 0)?;
                self.decoder_hidden(&enc_out, generated, 0)?
            }
        };
        let rows = hidden.shape()[0];
        let last = hidden.slice_rows(rows - 1, 1)?;
        Ok(last.matmul(&self.backbone.head)?.to_vec())
    }

    /// Summed next-token negative log-likelihood and token count for one
    /// sequence, teacher-forced, no sampling filters.
    pub fn sequence_nll(&self, x: &[u32]) -> Result<(f64, usize)> {
        let loss = self.lm_loss(x)?.item()?;
        Ok((loss * x.len() as f64, x.len()))
    }

    /// Serialize config, backbone, and prompts.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let cfg = CheckpointConfig {
            model: self.config().clone(),
            prompts: self.prompts.values().map(|p| (p.site, p.len())).collect(),
        };
        let json = serde_json::to_string(&cfg)
            .map_err(|e| Error::data(format!("serialize checkpoint config: {e}")))?;
        let mut ckpt = Checkpoint::new(json);
        for (name, t) in self.backbone.named_params() {
            ckpt.push(name, t.shape(), t.to_vec());
        }
        for p in self.prompts.values() {
            ckpt.push(
                format!("prompt.{}", p.site.as_str()),
                p.embeddings.shape(),
                p.embeddings.to_vec(),
            );
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Rebuild a model from a checkpoint. The backbone loads frozen;
    /// prompts load trainable.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<LmModel> {
        let cfg: CheckpointConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::data(format!("parse checkpoint config: {e}")))?;
        let mut rng = SplitRng::new(0);
        let backbone = Backbone::init(cfg.model.clone(), &mut rng)?;
        for (name, t) in backbone.named_params() {
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
        backbone.set_trainable(false);
        let mut model = LmModel::new(backbone);
        for (site, len) in cfg.prompts {
            let name = format!("prompt.{}", site.as_str());
            let rec = ckpt
                .find(&name)
                .ok_or_else(|| Error::data(format!("checkpoint missing parameter {name}")))?;
            if rec.shape != vec![len, cfg.model.embed_dim] {
                return Err(Error::data(format!(
                    "checkpoint prompt {name}: bad shape {:?}",
                    rec.shape
                )));
            }
            let embeddings = Tensor::param(rec.data.clone(), rec.shape.clone())?;
            model.set_prompt(SoftPrompt { site, embeddings })?;
        }
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<LmModel> {
        LmModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}
