//! Command-line orchestration: preprocessing, backbone pretraining, prompt
//! tuning, generation (plain and steered), classifier training, evaluation,
//! and attribution listings. Every run writes a resolved-config snapshot
//! next to its outputs and is reproducible from (config, seed).

mod commands;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::Label;
use promptgen_core::Error;

#[derive(Parser)]
#[command(
    name = "promptgen",
    about = "Soft-prompt tuned text generators with steered decoding and a full evaluation battery"
)]
struct Cli {
    /// Experiment configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the global seed and every per-section seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts (default "runs", or config out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, label, dedup, downsample, and split a raw corpus into the
    /// three datasets plus a vocabulary file.
    Preprocess {
        /// Raw corpus in line-delimited JSON (text + rating). Mutually
        /// exclusive with --synth.
        #[arg(long)]
        input: Option<PathBuf>,

        /// Generate the bundled synthetic raw pool instead of reading a file.
        #[arg(long)]
        synth: bool,
    },

    /// Pretrain a backbone language model on dataset-2, then freeze it.
    PretrainBackbone {
        /// Where to write the checkpoint (default <out-dir>/backbone.plm).
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Tune soft prompts on the frozen backbone, one generator per label.
    TrainGenerator {
        /// Pretrained backbone checkpoint. Omitting it trains prompts on a
        /// freshly initialized frozen backbone (poor quality, but legal).
        #[arg(long)]
        backbone: Option<PathBuf>,

        /// Prompt sites, comma separated: input | encoder | decoder.
        #[arg(long, value_delimiter = ',')]
        prompt_sites: Option<Vec<String>>,

        /// Suffix for output names, e.g. generator-<tag>-positive.plm.
        #[arg(long, default_value = "")]
        tag: String,
    },

    /// Generate labelled reviews from trained generators.
    Generate {
        /// plain: one model per label; steer: expert/anti-expert combination.
        #[arg(long, default_value = "plain")]
        mode: String,

        /// Which label(s) to generate: positive | negative | both.
        #[arg(long, default_value = "both")]
        label: String,

        /// Generator checkpoint tag used by train-generator.
        #[arg(long, default_value = "")]
        tag: String,

        /// Input corpus supplying generation prefixes
        /// (default <out-dir>/dataset-3/<split>.jsonl).
        #[arg(long)]
        inputs: Option<PathBuf>,

        /// Which dataset-3 split feeds the prefixes.
        #[arg(long, default_value = "train")]
        split: String,

        /// Samples per label (overrides the config).
        #[arg(long = "n_samples")]
        n_samples: Option<usize>,

        #[arg(long = "max_new_tokens")]
        max_new_tokens: Option<usize>,

        #[arg(long)]
        temperature: Option<f64>,

        #[arg(long = "top_p")]
        top_p: Option<f64>,

        #[arg(long = "top_k")]
        top_k: Option<usize>,

        #[arg(long = "no_repeat_ngram_size")]
        no_repeat_ngram_size: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long = "filter_p")]
        filter_p: Option<f64>,

        /// Post-combination nucleus threshold for steered mode.
        #[arg(long)]
        p: Option<f64>,

        /// Steering preset: positive (table9-pos), negative (table9-neg),
        /// or auto (pick by generated label).
        #[arg(long, default_value = "auto")]
        steer_preset: String,
    },

    /// Train the sentiment classifier on a labelled corpus.
    TrainClassifier {
        /// Training corpus (default <out-dir>/dataset-1/train.jsonl).
        #[arg(long)]
        train: Option<PathBuf>,

        /// Validation corpus (default <out-dir>/dataset-1/validation.jsonl).
        #[arg(long)]
        val: Option<PathBuf>,

        /// Where to write the checkpoint (default <out-dir>/classifier.plm).
        #[arg(long)]
        output: Option<PathBuf>,

        /// Apply the bundled `table6` hyperparameter preset.
        #[arg(long)]
        table6: bool,
    },

    /// Run the metric battery over generated corpora.
    Evaluate {
        /// intrinsic: judge + similarity + quality + overlap over
        /// generations; extrinsic: train a fresh classifier on generated
        /// data and test it on the real test split.
        #[arg(long, default_value = "intrinsic")]
        mode: String,

        /// Generated corpus (intrinsic) or generated training corpus
        /// (extrinsic); repeat the flag to concatenate files.
        #[arg(long)]
        generated: Vec<PathBuf>,

        /// Generated validation corpus (extrinsic only); repeatable.
        #[arg(long = "generated_val")]
        generated_val: Vec<PathBuf>,

        /// Judge classifier checkpoint (intrinsic only).
        #[arg(long)]
        judge: Option<PathBuf>,

        /// Generator checkpoint for perplexity and the similarity embedder.
        #[arg(long)]
        generator: Option<PathBuf>,

        /// Inputs that seeded generation (similarity references).
        #[arg(long)]
        inputs: Option<PathBuf>,

        /// Reference corpus for memorisation overlap
        /// (default <out-dir>/dataset-2/train.jsonl).
        #[arg(long)]
        train_ref: Option<PathBuf>,

        /// Real test split (default <out-dir>/dataset-1/test.jsonl).
        #[arg(long)]
        test: Option<PathBuf>,

        /// Report file stem (default eval-<mode>).
        #[arg(long)]
        tag: Option<String>,
    },

    /// Emit per-token attribution listings for classifier decisions.
    Explain {
        /// Classifier checkpoint (default <out-dir>/classifier.plm).
        #[arg(long)]
        classifier: Option<PathBuf>,

        /// Corpus to explain (default <out-dir>/dataset-1/test.jsonl).
        #[arg(long)]
        input: Option<PathBuf>,

        /// How many records to explain.
        #[arg(long)]
        count: Option<usize>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Shape(_) | Error::Contract(_) | Error::Numeric(_) => 4,
    }
}

fn load_config(cli: &Cli) -> promptgen_core::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.training.seed = seed;
        config.generation.seed = seed;
        config.steering.seed = seed;
        config.classifier.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = Some(dir.display().to_string());
    }
    if config.out_dir.is_none() {
        config.out_dir = Some("runs".to_string());
    }
    Ok(config)
}

fn run(cli: Cli) -> promptgen_core::Result<()> {
    let config = load_config(&cli)?;
    let out_dir = PathBuf::from(config.out_dir.clone().expect("defaulted above"));
    std::fs::create_dir_all(&out_dir)?;
    let _lock = lock::OutputLock::acquire(&out_dir)?;

    match cli.command {
        Command::Preprocess { input, synth } => {
            commands::preprocess::run(&config, &out_dir, input.as_deref(), synth)
        }
        Command::PretrainBackbone { output } => {
            commands::pretrain::run(&config, &out_dir, output.as_deref())
        }
        Command::TrainGenerator {
            backbone,
            prompt_sites,
            tag,
        } => commands::train_generator::run(
            &config,
            &out_dir,
            backbone.as_deref(),
            prompt_sites.as_deref(),
            &tag,
        ),
        Command::Generate {
            mode,
            label,
            tag,
            inputs,
            split,
            n_samples,
            max_new_tokens,
            temperature,
            top_p,
            top_k,
            no_repeat_ngram_size,
            alpha,
            filter_p,
            p,
            steer_preset,
        } => {
            let mut config = config;
            // flag overrides win over config-file values
            if let Some(v) = max_new_tokens {
                config.generation.max_new_tokens = v;
            }
            if let Some(v) = temperature {
                config.generation.temperature = v;
                config.steering.temperature = v;
            }
            if let Some(v) = top_p {
                config.generation.top_p = v;
            }
            if let Some(v) = top_k {
                config.generation.top_k = v;
            }
            if let Some(v) = no_repeat_ngram_size {
                config.generation.no_repeat_ngram_size = v;
            }
            if let Some(v) = alpha {
                config.steering.alpha = v;
            }
            if let Some(v) = filter_p {
                config.steering.filter_p = v;
            }
            if let Some(v) = p {
                config.steering.p = v;
            }
            if let Some(v) = n_samples {
                config.generation.n_samples = v;
            }
            let labels = parse_labels(&label)?;
            commands::generate::run(
                &config,
                &out_dir,
                &mode,
                &labels,
                &tag,
                inputs.as_deref(),
                &split,
                &steer_preset,
            )
        }
        Command::TrainClassifier {
            train,
            val,
            output,
            table6,
        } => {
            let mut config = config;
            if table6 {
                config.apply_preset("table6")?;
            }
            commands::train_classifier::run(
                &config,
                &out_dir,
                train.as_deref(),
                val.as_deref(),
                output.as_deref(),
            )
        }
        Command::Evaluate {
            mode,
            generated,
            generated_val,
            judge,
            generator,
            inputs,
            train_ref,
            test,
            tag,
        } => commands::evaluate::run(
            &config,
            &out_dir,
            &mode,
            commands::evaluate::Paths {
                generated: &generated,
                generated_val: &generated_val,
                judge: judge.as_deref(),
                generator: generator.as_deref(),
                inputs: inputs.as_deref(),
                train_ref: train_ref.as_deref(),
                test: test.as_deref(),
            },
            tag.as_deref(),
        ),
        Command::Explain {
            classifier,
            input,
            count,
        } => commands::explain::run(
            &config,
            &out_dir,
            classifier.as_deref(),
            input.as_deref(),
            count,
        ),
    }
}

fn parse_labels(spec: &str) -> promptgen_core::Result<Vec<Label>> {
    match spec {
        "positive" => Ok(vec![Label::Positive]),
        "negative" => Ok(vec![Label::Negative]),
        "both" => Ok(vec![Label::Positive, Label::Negative]),
        other => Err(Error::Config(format!(
            "unknown label selector {other:?}; use positive, negative, or both"
        ))),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
