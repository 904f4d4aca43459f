//! Transformer building blocks: multi-head attention, pre-norm residual
//! layers, and stack assembly. Shared by the language models and the
//! classifier encoder.

use crate::error::Result;
use crate::tensor::rng::SplitRng;
use crate::tensor::Tensor;

pub const RMS_EPS: f64 = 1e-6;

/// Additive mask value for disallowed attention positions. Large enough to
/// zero the softmax weight, small enough to keep the arithmetic finite.
pub const MASK_NEG: f64 = -1e30;

/// Projection weights for one attention block, each of shape [d, d].
pub struct Attention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl Attention {
    pub fn init(d: usize, rng: &mut SplitRng) -> Attention {
        let std = 1.0 / (d as f64).sqrt();
        Attention {
            wq: Tensor::randn(vec![d, d], std, rng),
            wk: Tensor::randn(vec![d, d], std, rng),
            wv: Tensor::randn(vec![d, d], std, rng),
            wo: Tensor::randn(vec![d, d], std, rng),
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.wq"), self.wq.clone()));
        out.push((format!("{prefix}.wk"), self.wk.clone()));
        out.push((format!("{prefix}.wv"), self.wv.clone()));
        out.push((format!("{prefix}.wo"), self.wo.clone()));
    }
}

/// One pre-norm transformer layer. `cross` is present on decoder layers of
/// an encoder-decoder stack and attends over the encoder output.
pub struct Layer {
    pub self_norm: Tensor,
    pub self_attn: Attention,
    pub cross: Option<(Tensor, Attention)>,
    pub ffn_norm: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_w2: Tensor,
}

impl Layer {
    pub fn init(d: usize, ffn: usize, with_cross: bool, rng: &mut SplitRng) -> Layer {
        let w_std = 1.0 / (d as f64).sqrt();
        let f_std = 1.0 / (ffn as f64).sqrt();
        Layer {
            self_norm: Tensor::param(vec![1.0; d], vec![d]).expect("norm shape"),
            self_attn: Attention::init(d, rng),
            cross: if with_cross {
                Some((
                    Tensor::param(vec![1.0; d], vec![d]).expect("norm shape"),
                    Attention::init(d, rng),
                ))
            } else {
                None
            },
            ffn_norm: Tensor::param(vec![1.0; d], vec![d]).expect("norm shape"),
            ffn_w1: Tensor::randn(vec![d, ffn], w_std, rng),
            ffn_w2: Tensor::randn(vec![ffn, d], f_std, rng),
        }
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.self_norm"), self.self_norm.clone()));
        self.self_attn.named(&format!("{prefix}.self_attn"), out);
        if let Some((norm, attn)) = &self.cross {
            out.push((format!("{prefix}.cross_norm"), norm.clone()));
            attn.named(&format!("{prefix}.cross_attn"), out);
        }
        out.push((format!("{prefix}.ffn_norm"), self.ffn_norm.clone()));
        out.push((format!("{prefix}.ffn_w1"), self.ffn_w1.clone()));
        out.push((format!("{prefix}.ffn_w2"), self.ffn_w2.clone()));
    }
}

/// Scaled dot-product multi-head attention. `mask` (if any) is added to the
/// pre-softmax scores and must have shape [rows(q_input), rows(kv_input)].
pub fn attention_forward(
    q_input: &Tensor,
    kv_input: &Tensor,
    p: &Attention,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let d = q_input.shape()[1];
    let dh = d / heads;
    let q = q_input.matmul(&p.wq)?;
    let k = kv_input.matmul(&p.wk)?;
    let v = kv_input.matmul(&p.wv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, dh)?;
        let kh = k.slice_cols(h * dh, dh)?;
        let vh = v.slice_cols(h * dh, dh)?;
        let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        let probs = scores.softmax(1)?;
        head_outs.push(probs.matmul(&vh)?);
    }
    Tensor::concat_cols(&head_outs)?.matmul(&p.wo)
}

/// One layer: pre-norm self-attention, optional pre-norm cross-attention
/// over `enc_out`, pre-norm feed-forward, each with a residual connection.
pub fn layer_forward(
    layer: &Layer,
    x: &Tensor,
    enc_out: Option<&Tensor>,
    heads: usize,
    self_mask: Option<&Tensor>,
) -> Result<Tensor> {
    let normed = x.rms_norm(&layer.self_norm, RMS_EPS)?;
    let attn = attention_forward(&normed, &normed, &layer.self_attn, heads, self_mask)?;
    let mut h = x.add(&attn)?;
    if let Some((cross_norm, cross_attn)) = &layer.cross {
        let enc = enc_out.expect("cross layer requires encoder output");
        let normed = h.rms_norm(cross_norm, RMS_EPS)?;
        let cross = attention_forward(&normed, enc, cross_attn, heads, None)?;
        h = h.add(&cross)?;
    }
    let normed = h.rms_norm(&layer.ffn_norm, RMS_EPS)?;
    let ffn = normed.matmul(&layer.ffn_w1)?.relu().matmul(&layer.ffn_w2)?;
    h.add(&ffn)
}

/// Causal self-attention mask for `t` positions: position i may attend to
/// positions <= i.
pub fn causal_mask(t: usize) -> Tensor {
    let mut data = vec![0.0; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            data[i * t + j] = MASK_NEG;
        }
    }
    Tensor::constant(data, vec![t, t]).expect("mask shape")
}
