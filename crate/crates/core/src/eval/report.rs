//! Structured results bundle covering the metric battery, rendered as a
//! sectioned text document and serializable to JSON.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierReport;
use crate::corpus::Label;
use crate::eval::lime::Explanation;
use crate::eval::SimilarityScore;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct QualitySection {
    pub perplexity: Option<f64>,
    /// Dist-1..Dist-3.
    pub distinct: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub title: String,
    /// Judge-classifier metrics over the evaluated corpus.
    pub classifier: Option<ClassifierReport>,
    /// Greedy-matching similarity against the generation inputs.
    pub similarity: Option<SimilarityScore>,
    /// Text quality and diversity of the corpus itself.
    pub quality: QualitySection,
    /// Unique n-gram overlap against a reference corpus, by n.
    pub overlap: Vec<(usize, f64)>,
    /// Per-token attribution listings.
    pub explanations: Vec<Explanation>,
}

impl MetricsReport {
    pub fn new(title: impl Into<String>) -> MetricsReport {
        MetricsReport {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> crate::Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| crate::Error::Data(format!("serialize report: {e}")))
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "=== {} ===", self.title)?;
        if let Some(c) = &self.classifier {
            writeln!(f, "\n[classifier metrics]")?;
            for label in [Label::Negative, Label::Positive] {
                writeln!(
                    f,
                    "  {:<9} precision {:.4}  recall {:.4}  f1 {:.4}",
                    label.as_str(),
                    c.precision(label),
                    c.recall(label),
                    c.f1(label),
                )?;
            }
            writeln!(f, "  accuracy  {:.4}", c.accuracy)?;
        }
        if let Some(s) = &self.similarity {
            writeln!(f, "\n[similarity]")?;
            writeln!(
                f,
                "  precision {:.4}  recall {:.4}  f1 {:.4}",
                s.precision, s.recall, s.f1
            )?;
        }
        if self.quality.perplexity.is_some() || !self.quality.distinct.is_empty() {
            writeln!(f, "\n[quality/diversity]")?;
            if let Some(ppl) = self.quality.perplexity {
                writeln!(f, "  ppl    {ppl:.4}")?;
            }
            for (n, v) in &self.quality.distinct {
                writeln!(f, "  dist-{n} {v:.4}")?;
            }
        }
        if !self.overlap.is_empty() {
            writeln!(f, "\n[memorisation overlap]")?;
            for (n, pct) in &self.overlap {
                writeln!(f, "  {n}-gram overlap {pct:.2}%")?;
            }
        }
        for (i, e) in self.explanations.iter().enumerate() {
            writeln!(f, "\n[explanation {i}] (r2 {:.4})", e.r2)?;
            for (tok, w) in e.tokens.iter().zip(&e.weights) {
                writeln!(f, "  {tok:<16} {w:+.5}")?;
            }
        }
        Ok(())
    }
}
