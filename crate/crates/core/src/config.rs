//! Experiment configuration: a flat-sectioned TOML schema with one section
//! per module, bundled hyperparameter presets, and conversions into the
//! per-module option structs. Unknown keys are rejected; a resolved copy
//! of the configuration is written alongside every run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierTrainOptions};
use crate::corpus::SynthConfig;
use crate::decoding::{GenerationParams, SteeringParams};
use crate::error::{Error, Result};
use crate::model::train::TrainOptions;
use crate::model::{Architecture, ModelConfig, PromptSite};
use crate::tensor::adafactor::AdafactorConfig;
use crate::tensor::rng::DEFAULT_SEED;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Synthetic pool size per class (raw records before preprocessing).
    pub synth_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub exclusive_rate: f64,
    pub cross_noise: f64,
    pub max_vocab: usize,
    /// Per-dataset per-label split sizes (train : validation : test).
    pub train_per_label: usize,
    pub val_per_label: usize,
    pub test_per_label: usize,
    /// Number of disjoint datasets carved from the pool.
    pub dataset_count: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            synth_per_class: 1300,
            min_len: 8,
            max_len: 18,
            exclusive_rate: 0.4,
            cross_noise: 0.01,
            max_vocab: 2000,
            train_per_label: 250,
            val_per_label: 50,
            test_per_label: 50,
            dataset_count: 3,
        }
    }
}

impl CorpusSection {
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            per_class: self.synth_per_class,
            min_len: self.min_len,
            max_len: self.max_len,
            exclusive_rate: self.exclusive_rate,
            cross_noise: self.cross_noise,
            seed,
        }
    }

    pub fn per_label_total(&self) -> usize {
        self.train_per_label + self.val_per_label + self.test_per_label
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub prompt_sites: Vec<PromptSite>,
    pub prompt_length: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            architecture: Architecture::EncoderDecoder,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            ffn_dim: 64,
            max_seq_len: 64,
            prompt_sites: vec![PromptSite::Encoder, PromptSite::Decoder],
            prompt_length: 20,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            architecture: self.architecture,
        }
    }
}

/// Generator/backbone optimizer settings. Defaults carry the bundled
/// `table7` preset. `relative_step`, `scale_parameter`, and `warmup_init`
/// are accepted for compatibility and must stay disabled; `beta1` must stay
/// unset (no first-moment accumulator).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub eps: (f64, f64),
    pub clip_threshold: f64,
    pub decay_rate: f64,
    pub beta1: Option<f64>,
    pub weight_decay: f64,
    pub relative_step: bool,
    pub scale_parameter: bool,
    pub warmup_init: bool,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Backbone pretraining knobs (LM objective, all parameters trainable).
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_warmup_steps: u64,
    pub pretrain_weight_decay: f64,
    pub position_offset_fraction: f64,
    pub decoupled_position_offsets: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            learning_rate: 0.15,
            eps: (1e-30, 1e-3),
            clip_threshold: 1.0,
            decay_rate: -0.8,
            beta1: None,
            weight_decay: 0.1,
            relative_step: false,
            scale_parameter: false,
            warmup_init: false,
            epochs: 20,
            warmup_steps: 500,
            batch_size: 10,
            seed: DEFAULT_SEED,
            pretrain_epochs: 40,
            pretrain_learning_rate: 0.015,
            pretrain_warmup_steps: 30,
            pretrain_weight_decay: 0.0,
            position_offset_fraction: 1.0,
            decoupled_position_offsets: true,
        }
    }
}

impl TrainingSection {
    pub fn validate(&self) -> Result<()> {
        if self.relative_step || self.scale_parameter || self.warmup_init {
            return Err(Error::config(
                "relative_step, scale_parameter, and warmup_init must stay false".to_string(),
            ));
        }
        if self.beta1.is_some() {
            return Err(Error::config(
                "beta1 must stay unset: no first-moment accumulator".to_string(),
            ));
        }
        Ok(())
    }

    fn adafactor(&self, lr: f64, warmup: u64, weight_decay: f64) -> AdafactorConfig {
        AdafactorConfig {
            eps: self.eps,
            clip_threshold: self.clip_threshold,
            decay_rate: self.decay_rate,
            weight_decay,
            learning_rate: lr,
            warmup_steps: warmup,
        }
    }

    pub fn prompt_tuning_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.adafactor(self.learning_rate, self.warmup_steps, self.weight_decay),
            seed: self.seed,
            position_offset_fraction: 0.0,
            decoupled_position_offsets: false,
        }
    }

    pub fn pretrain_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            optimizer: self.adafactor(
                self.pretrain_learning_rate,
                self.pretrain_warmup_steps,
                self.pretrain_weight_decay,
            ),
            seed: self.seed,
            position_offset_fraction: self.position_offset_fraction,
            decoupled_position_offsets: self.decoupled_position_offsets,
        }
    }
}

/// Sampling settings; defaults carry the bundled `table8` preset.
/// `num_beams`, `do_sample`, `repetition_penalty`, `use_cache`, and
/// `early_stopping` are accepted for compatibility: decoding is always
/// ancestral sampling with no beams, penalty 1, no cache, stop at the
/// end marker.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub num_beams: usize,
    pub do_sample: bool,
    pub no_repeat_ngram_size: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub use_cache: bool,
    pub early_stopping: bool,
    pub max_new_tokens: usize,
    pub prefix_len: usize,
    /// Samples per label; 0 means one per input review.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            num_beams: 10,
            do_sample: true,
            no_repeat_ngram_size: 1,
            temperature: 1.0,
            top_k: 0,
            top_p: 0.8,
            repetition_penalty: 1.0,
            use_cache: false,
            early_stopping: true,
            max_new_tokens: 30,
            prefix_len: 4,
            n_samples: 0,
            seed: DEFAULT_SEED,
        }
    }
}

impl GenerationSection {
    pub fn validate(&self) -> Result<()> {
        if !self.do_sample {
            return Err(Error::config(
                "do_sample must stay true: only ancestral sampling is implemented".to_string(),
            ));
        }
        if self.repetition_penalty != 1.0 {
            return Err(Error::config(
                "repetition_penalty values other than 1.0 are not implemented".to_string(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
            top_k: self.top_k,
            no_repeat_ngram_size: self.no_repeat_ngram_size,
            seed: self.seed,
        }
    }
}

/// Steering settings; defaults carry the bundled `table9-pos` preset.
/// `sample` must stay true; `k` must stay 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringSection {
    pub sample: bool,
    pub filter_p: f64,
    pub k: usize,
    pub p: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SteeringSection {
    fn default() -> Self {
        SteeringSection {
            sample: true,
            filter_p: 1.0,
            k: 0,
            p: 0.9,
            temperature: 1.1,
            alpha: 1.2,
            seed: DEFAULT_SEED,
        }
    }
}

impl SteeringSection {
    pub fn validate(&self) -> Result<()> {
        if !self.sample {
            return Err(Error::config("sample must stay true".to_string()));
        }
        if self.k != 0 {
            return Err(Error::config(
                "steered top-k filtering is not implemented; k must stay 0".to_string(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> SteeringParams {
        SteeringParams {
            alpha: self.alpha,
            temperature: self.temperature,
            filter_p: self.filter_p,
            p: self.p,
            seed: self.seed,
        }
    }
}

/// Classifier settings. The learning rate defaults to the from-scratch toy
/// value; the bundled `table6` preset restores the published fine-tuning
/// hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            epochs: 5,
            seed: DEFAULT_SEED,
            embed_dim: 32,
            layers: 1,
            heads: 2,
            ffn_dim: 64,
            max_seq_len: 64,
        }
    }
}

impl ClassifierSection {
    pub fn train_options(&self) -> ClassifierTrainOptions {
        ClassifierTrainOptions {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ClassifierConfig {
        ClassifierConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub distinct_ns: Vec<usize>,
    pub overlap_ns: Vec<usize>,
    pub lime_samples: usize,
    pub lime_kernel_width: f64,
    pub lime_ridge: f64,
    /// How many test inputs receive attribution listings.
    pub lime_examples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            distinct_ns: vec![1, 2, 3],
            overlap_ns: vec![2, 3, 4, 5],
            lime_samples: 5000,
            lime_kernel_width: 0.25,
            lime_ridge: 1.0,
            lime_examples: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: Option<String>,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub generation: GenerationSection,
    pub steering: SteeringSection,
    pub classifier: ClassifierSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.generation.validate()?;
        self.steering.validate()?;
        Ok(())
    }

    /// Serialize the fully resolved configuration (the reproducibility
    /// snapshot written alongside run outputs).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Overwrite one section with a bundled preset. Known names: `table6`,
    /// `table7`, `table8`, `table9-pos`, `table9-neg`.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "table6" => {
                self.classifier.learning_rate = 1e-5;
                self.classifier.batch_size = 32;
                self.classifier.epochs = 5;
                self.classifier.seed = DEFAULT_SEED;
            }
            "table7" => {
                let prev = self.training.clone();
                self.training = TrainingSection {
                    pretrain_epochs: prev.pretrain_epochs,
                    pretrain_learning_rate: prev.pretrain_learning_rate,
                    pretrain_warmup_steps: prev.pretrain_warmup_steps,
                    pretrain_weight_decay: prev.pretrain_weight_decay,
                    position_offset_fraction: prev.position_offset_fraction,
                    decoupled_position_offsets: prev.decoupled_position_offsets,
                    ..TrainingSection::default()
                };
            }
            "table8" => {
                let prev = self.generation.clone();
                self.generation = GenerationSection {
                    max_new_tokens: prev.max_new_tokens,
                    prefix_len: prev.prefix_len,
                    n_samples: prev.n_samples,
                    seed: prev.seed,
                    ..GenerationSection::default()
                };
            }
            "table9-pos" => {
                self.steering = SteeringSection {
                    seed: self.steering.seed,
                    ..SteeringSection::default()
                };
            }
            "table9-neg" => {
                self.steering = SteeringSection {
                    filter_p: 0.9,
                    temperature: 1.8,
                    seed: self.steering.seed,
                    ..SteeringSection::default()
                };
            }
            other => {
                return Err(Error::config(format!(
                    "unknown preset {other:?}; known: table6, table7, table8, table9-pos, table9-neg"
                )))
            }
        }
        Ok(())
    }
}
