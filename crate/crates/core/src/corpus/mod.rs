//! Labelled review corpora: record types, line-delimited JSON persistence,
//! the preprocessing pipeline (cleaning, rating-based labelling, exact
//! dedup, length-preserving downsampling, splitting), tokenization, and a
//! synthetic labelled-corpus generator for desk-scale experiments.

pub mod clean;
pub mod sample;
pub mod synth;
pub mod vocab;

pub use clean::clean_text;
pub use sample::{dedup_exact, length_preserving_downsample, split_ratio};
pub use synth::{synth_corpus, SynthConfig};
pub use vocab::Vocabulary;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// Class index used by the classifier head (negative = 0).
    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Corpus split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One review record. `token_ids` is an in-memory cache and never persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Review {
    pub text: String,
    #[serde(default)]
    pub rating: Option<u8>,
    #[serde(default)]
    pub label: Option<Label>,
    /// Tag identifying which generator produced this record, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
    #[serde(skip)]
    pub token_ids: Option<Vec<u32>>,
}

impl Review {
    pub fn new(text: impl Into<String>) -> Review {
        Review {
            text: text.into(),
            rating: None,
            label: None,
            source_model: None,
            token_ids: None,
        }
    }

    pub fn with_rating(mut self, rating: u8) -> Review {
        self.rating = Some(rating);
        self
    }

    pub fn with_label(mut self, label: Label) -> Review {
        self.label = Some(label);
        self
    }

    /// Whitespace token count of the text.
    pub fn token_len(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// An ordered collection of reviews with optional split tag and a
/// free-text provenance note.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub split: Option<Split>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(reviews: Vec<Review>, provenance: impl Into<String>) -> Corpus {
        Corpus {
            reviews,
            split: None,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Corpus {
        self.split = Some(split);
        self
    }

    /// Count reviews carrying the given label.
    pub fn count_label(&self, label: Label) -> usize {
        self.reviews.iter().filter(|r| r.label == Some(label)).count()
    }

    /// Subset with the given label, order preserved.
    pub fn filter_label(&self, label: Label) -> Corpus {
        Corpus {
            reviews: self
                .reviews
                .iter()
                .filter(|r| r.label == Some(label))
                .cloned()
                .collect(),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    /// Populate `token_ids` on every review using `vocab`.
    pub fn tokenize(&mut self, vocab: &Vocabulary) {
        for r in &mut self.reviews {
            r.token_ids = Some(vocab.tokenize(&r.text));
        }
    }

    /// Check label/rating consistency on every record.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.reviews.iter().enumerate() {
            if let (Some(rating), Some(label)) = (r.rating, r.label) {
                let expect = match rating {
                    0 | 6.. => {
                        return Err(Error::data(format!(
                            "record {i}: rating {rating} outside 1-5"
                        )))
                    }
                    4 | 5 => Some(Label::Positive),
                    1 | 2 => Some(Label::Negative),
                    3 => None,
                };
                if let Some(e) = expect {
                    if e != label {
                        return Err(Error::data(format!(
                            "record {i}: label {label} inconsistent with rating {rating}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Read a line-delimited JSON corpus file. Parse failures report the
    /// offending 1-based line number.
    pub fn read_jsonl(path: &Path) -> Result<Corpus> {
        let file = File::open(path).map_err(|e| {
            Error::data(format!("cannot open {}: {e}", path.display()))
        })?;
        let reader = BufReader::new(file);
        let mut reviews = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| {
                Error::data(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let review: Review = serde_json::from_str(&line).map_err(|e| {
                Error::data(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            reviews.push(review);
        }
        Ok(Corpus::new(reviews, path.display().to_string()))
    }

    /// Write as line-delimited JSON, one record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        for r in &self.reviews {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::data(format!("serialize record: {e}")))?;
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train/validation/test triple.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

impl DataSplits {
    pub fn total_len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Corpus)> {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
        .into_iter()
    }
}

/// Outcome of the rating-based labelling rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelDecision {
    Keep(Label),
    Discard,
}

/// Star-rating labelling: above 3 is positive, below 3 negative; exactly 3
/// or missing ratings are discarded. Ratings outside 1-5 are invalid.
pub fn label_by_rating(rating: Option<u8>) -> Result<LabelDecision> {
    match rating {
        None => Ok(LabelDecision::Discard),
        Some(3) => Ok(LabelDecision::Discard),
        Some(r @ 4..=5) => {
            let _ = r;
            Ok(LabelDecision::Keep(Label::Positive))
        }
        Some(r @ 1..=2) => {
            let _ = r;
            Ok(LabelDecision::Keep(Label::Negative))
        }
        Some(bad) => Err(Error::data(format!("rating {bad} outside 1-5"))),
    }
}
