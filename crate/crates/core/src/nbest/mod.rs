//! N-best lists: data model, file format, candidate sorting and the synthetic
//! task generator.

mod channel;
mod io;
mod source;

use serde::{Deserialize, Serialize};

pub use channel::{
    confusable, corrupt, corrupt_with_edits, edit_log_prob, generate_nbest, ChannelConfig,
    PositionEdit, TokenEdit, CONFUSABLE_OFFSETS, RETRY_FACTOR,
};
pub use io::{read_corpus, read_nbest, read_nbest_from, write_corpus, write_nbest, write_nbest_to};
pub use source::{
    generate_source_corpus, oracle_source_ppl, stationary_distribution, unigram_ppl, LengthModel,
    SourceModel,
};

use crate::error::{Error, Result};
use crate::losses::EncodedGroup;
use crate::metrics;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Log-score assigned by the upstream decoder.
    pub task_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestGroup {
    pub id: String,
    pub reference: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestGroup {
    pub fn encode(&self, vocab: &Vocabulary) -> EncodedGroup {
        EncodedGroup {
            id: self.id.clone(),
            reference: vocab.encode(&self.reference),
            hypotheses: self
                .hypotheses
                .iter()
                .map(|h| vocab.encode(&h.tokens))
                .collect(),
            quality: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Wer,
    Bleu,
}

impl Metric {
    /// Raw metric value of `hypothesis` against `reference`.
    pub fn value(self, reference: &[String], hypothesis: &[String]) -> Result<f64> {
        match self {
            Metric::Wer => metrics::wer(reference, hypothesis),
            Metric::Bleu => metrics::sentence_bleu(&[reference], hypothesis),
        }
    }

    /// Larger is better: `-WER` or BLEU.
    pub fn quality(self, value: f64) -> f64 {
        match self {
            Metric::Wer => -value,
            Metric::Bleu => value,
        }
    }

    /// Per-hypothesis accuracy used for correlation studies: `1 - WER` or BLEU.
    pub fn accuracy(self, value: f64) -> f64 {
        match self {
            Metric::Wer => 1.0 - value,
            Metric::Bleu => value,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Wer => "wer",
            Metric::Bleu => "bleu",
        }
    }
}

/// Candidates ordered best-first by a task metric, reference at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedGroup {
    pub id: String,
    pub metric: Metric,
    pub candidates: Vec<Vec<String>>,
    /// Raw metric value of each candidate against the reference.
    pub values: Vec<f64>,
}

impl SortedGroup {
    pub fn encode(&self, vocab: &Vocabulary) -> EncodedGroup {
        EncodedGroup {
            id: self.id.clone(),
            reference: vocab.encode(&self.candidates[0]),
            hypotheses: self.candidates[1..]
                .iter()
                .map(|c| vocab.encode(c))
                .collect(),
            quality: Some(
                self.values
                    .iter()
                    .map(|&v| self.metric.quality(v))
                    .collect(),
            ),
        }
    }
}

/// Stable sort of the hypotheses by ascending WER or descending BLEU, with the
/// reference prepended and exact copies of it removed.
pub fn sort_candidates(group: &NBestGroup, metric: Metric) -> Result<SortedGroup> {
    if group.reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    let mut scored: Vec<(f64, &Vec<String>)> = group
        .hypotheses
        .iter()
        .filter(|h| h.tokens != group.reference)
        .map(|h| Ok((metric.value(&group.reference, &h.tokens)?, &h.tokens)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| metric.quality(b.0).total_cmp(&metric.quality(a.0)));

    let reference_value = metric.value(&group.reference, &group.reference)?;
    let mut candidates = vec![group.reference.clone()];
    let mut values = vec![reference_value];
    for (v, tokens) in scored {
        candidates.push(tokens.clone());
        values.push(v);
    }
    Ok(SortedGroup {
        id: group.id.clone(),
        metric,
        candidates,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn group() -> NBestGroup {
        let hyp = |t: &str, score| Hypothesis {
            tokens: s(t),
            task_score: score,
        };
        NBestGroup {
            id: "g".into(),
            reference: s("a b c d"),
            hypotheses: vec![
                hyp("x y c d", -1.0),
                hyp("a b c d", -2.0),
                hyp("a b c", -3.0),
                hyp("a x c d", -4.0),
                hyp("z z z z", -5.0),
            ],
        }
    }

    #[test]
    fn sort_by_wer() {
        let sorted = sort_candidates(&group(), Metric::Wer).unwrap();
        assert_eq!(sorted.candidates[0], s("a b c d"));
        assert_eq!(sorted.values[0], 0.0);
        // reference duplicate removed, ties keep input order
        assert_eq!(sorted.candidates.len(), 5);
        assert_eq!(sorted.candidates[1], s("a b c"));
        assert_eq!(sorted.candidates[2], s("a x c d"));
        assert_eq!(sorted.candidates[3], s("x y c d"));
        assert!(sorted.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sort_by_bleu() {
        let sorted = sort_candidates(&group(), Metric::Bleu).unwrap();
        assert_eq!(sorted.values[0], 1.0);
        assert!(sorted.values.windows(2).all(|w| w[0] >= w[1]));
        let enc = sorted.encode(&crate::vocab::build_vocab(&[s("a b c d x y z")], 20).unwrap());
        assert_eq!(
            enc.quality.as_ref().unwrap().len(),
            enc.hypotheses.len() + 1
        );
    }
}
