pub mod evaluate;
pub mod explain;
pub mod generate;
pub mod preprocess;
pub mod pretrain;
pub mod train_classifier;
pub mod train_generator;

use std::path::{Path, PathBuf};

use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::{Corpus, Vocabulary};
use promptgen_core::{Error, Result};

/// Resolve a flag-or-default artifact path.
pub fn resolve(flag: Option<&Path>, out_dir: &Path, default_name: &str) -> PathBuf {
    flag.map(|p| p.to_path_buf())
        .unwrap_or_else(|| out_dir.join(default_name))
}

/// Error listing the absent file, keyed to the flag that would supply it.
pub fn require_file(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::config(format!(
            "missing {hint}: {} (run the producing command first or pass the flag)",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_vocab(out_dir: &Path) -> Result<Vocabulary> {
    let path = out_dir.join("vocab.txt");
    require_file(&path, "vocabulary file")?;
    Vocabulary::load(&path)
}

pub fn load_tokenized(path: &Path, vocab: &Vocabulary, hint: &str) -> Result<Corpus> {
    require_file(path, hint)?;
    let mut corpus = Corpus::read_jsonl(path)?;
    corpus.tokenize(vocab);
    Ok(corpus)
}

/// Write the resolved configuration snapshot for a command run.
pub fn write_snapshot(config: &ExperimentConfig, out_dir: &Path, command: &str) -> Result<()> {
    config.write_snapshot(&out_dir.join(format!("{command}-config.toml")))
}
