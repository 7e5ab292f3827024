//! Order-1 Markov source used to synthesize training and evaluation text.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const DIRICHLET_CONCENTRATION: f64 = 0.5;
pub const MEAN_LENGTH: f64 = 12.0;
pub const MIN_LENGTH: usize = 3;
pub const MAX_LENGTH: usize = 30;

/// Sentence length `clamp(G, min, max)` with `G` geometric on `{1, 2, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthModel {
    pub stop_prob: f64,
    pub min: usize,
    pub max: usize,
}

impl Default for LengthModel {
    fn default() -> Self {
        Self {
            stop_prob: 1.0 / MEAN_LENGTH,
            min: MIN_LENGTH,
            max: MAX_LENGTH,
        }
    }
}

impl LengthModel {
    pub fn log_prob(&self, len: usize) -> f64 {
        let q = self.stop_prob;
        let cont = (1.0 - q).ln();
        if len < self.min || len > self.max {
            f64::NEG_INFINITY
        } else if len == self.min {
            // P(G <= min)
            (-(self.min as f64 * cont).exp_m1()).ln()
        } else if len == self.max {
            // P(G >= max)
            (self.max - 1) as f64 * cont
        } else {
            q.ln() + (len - 1) as f64 * cont
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let failures = Geometric::new(self.stop_prob)
            .expect("stop probability in (0, 1]")
            .sample(rng);
        (failures as usize)
            .saturating_add(1)
            .clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Content tokens; position is the content id.
    pub tokens: Vec<String>,
    /// First-token distribution: the stationary distribution of the chain.
    pub initial: Vec<f64>,
    /// Row-stochastic transition matrix.
    pub transitions: Vec<Vec<f64>>,
    pub length: LengthModel,
}

impl SourceModel {
    /// Samples transition rows from a symmetric Dirichlet and starts the chain
    /// in its stationary distribution.
    pub fn sample(vocab_size: usize, rng: &mut Rng) -> Result<Self> {
        if vocab_size < 8 {
            return Err(Error::invalid(format!(
                "source vocabulary needs at least 8 tokens, got {vocab_size}"
            )));
        }
        let gamma = Gamma::new(DIRICHLET_CONCENTRATION, 1.0).expect("valid gamma parameters");
        let transitions: Vec<Vec<f64>> = (0..vocab_size)
            .map(|_| {
                let mut row: Vec<f64> = (0..vocab_size).map(|_| gamma.sample(rng)).collect();
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|x| *x /= sum);
                } else {
                    row.fill(1.0 / vocab_size as f64);
                }
                row
            })
            .collect();
        let initial = stationary_distribution(&transitions);
        Ok(Self {
            tokens: (0..vocab_size).map(|i| format!("w{i}")).collect(),
            initial,
            transitions,
            length: LengthModel::default(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_index(&self) -> HashMap<&str, u32> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect()
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Result<Vec<u32>> {
        let index = self.token_index();
        sentence
            .iter()
            .map(|t| {
                index.get(t.as_ref()).copied().ok_or_else(|| {
                    Error::invalid(format!(
                        "token `{}` is not in the source vocabulary",
                        t.as_ref()
                    ))
                })
            })
            .collect()
    }

    pub fn sample_sentence(&self, rng: &mut Rng) -> Vec<u32> {
        let len = self.length.sample(rng);
        let mut out = Vec::with_capacity(len);
        let mut dist = &self.initial;
        for _ in 0..len {
            let next = sample_categorical(dist, rng);
            out.push(next);
            dist = &self.transitions[next as usize];
        }
        out
    }

    /// `(content log-probability, length log-probability)` of a sentence.
    pub fn log_prob_parts(&self, sentence: &[u32]) -> (f64, f64) {
        let mut content = 0.0;
        let mut prev: Option<u32> = None;
        for &w in sentence {
            let p = match prev {
                None => self.initial[w as usize],
                Some(a) => self.transitions[a as usize][w as usize],
            };
            content += p.ln();
            prev = Some(w);
        }
        (content, self.length.log_prob(sentence.len()))
    }

    pub fn log_prob(&self, sentence: &[u32]) -> f64 {
        let (c, l) = self.log_prob_parts(sentence);
        c + l
    }
}

fn sample_categorical(dist: &[f64], rng: &mut Rng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // rounding left u above the accumulated mass; take the last positive entry
    dist.iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(dist.len() - 1) as u32
}

/// Power iteration from the uniform distribution.
pub fn stationary_distribution(transitions: &[Vec<f64>]) -> Vec<f64> {
    let n = transitions.len();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        next.fill(0.0);
        for (a, row) in transitions.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                next[b] += pi[a] * p;
            }
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let diff: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// Draws a source model and `n_sentences` sentences from it.
pub fn generate_source_corpus(
    vocab_size: usize,
    n_sentences: usize,
    seed: u64,
) -> Result<(Vec<Vec<String>>, SourceModel)> {
    let source = SourceModel::sample(vocab_size, &mut rng::seeded(seed, rng::stream::SOURCE))?;
    let mut rng = rng::seeded(seed, rng::stream::CORPUS);
    let corpus = (0..n_sentences)
        .map(|_| {
            source
                .sample_sentence(&mut rng)
                .into_iter()
                .map(|id| source.tokens[id as usize].clone())
                .collect()
        })
        .collect();
    Ok((corpus, source))
}

/// Exact token-level perplexity of `corpus` under the generating chain,
/// counting one end-of-sentence event per sentence.
pub fn oracle_source_ppl<S: AsRef<str>>(source: &SourceModel, corpus: &[Vec<S>]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut total = 0.0;
    let mut events = 0usize;
    for sentence in corpus {
        let ids = source.encode(sentence)?;
        total += source.log_prob(&ids);
        events += ids.len() + 1;
    }
    Ok((-total / events as f64).exp())
}

/// Add-one smoothed unigram model (content tokens plus end-of-sentence) fit on
/// `train` and evaluated on `eval`.
pub fn unigram_ppl<S: AsRef<str>>(train: &[Vec<S>], eval: &[Vec<S>]) -> Result<f64> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    for s in train {
        for t in s {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
        total += s.len();
    }
    let eos = train.len();
    // one extra outcome for end-of-sentence and one for unseen tokens
    let outcomes = counts.len() + 2;
    let denom = (total + eos + outcomes) as f64;
    let mut logp = 0.0;
    let mut events = 0usize;
    for s in eval {
        for t in s {
            let c = counts.get(t.as_ref()).copied().unwrap_or(0);
            logp += ((c + 1) as f64 / denom).ln();
        }
        logp += ((eos + 1) as f64 / denom).ln();
        events += s.len() + 1;
    }
    Ok((-logp / events as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_model_normalizes() {
        let lm = LengthModel::default();
        let total: f64 = (0..=40).map(|l| lm.log_prob(l).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        assert_eq!(lm.log_prob(2), f64::NEG_INFINITY);
    }

    #[test]
    fn same_seed_same_corpus() {
        let (a, sa) = generate_source_corpus(16, 50, 9).unwrap();
        let (b, sb) = generate_source_corpus(16, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (c, _) = generate_source_corpus(16, 50, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lengths_clipped() {
        let (corpus, _) = generate_source_corpus(16, 2000, 1).unwrap();
        assert!(corpus.iter().all(|s| (3..=30).contains(&s.len())));
        assert!(corpus.iter().any(|s| s.len() == 3));
        assert!(corpus.iter().any(|s| s.len() == 30));
    }

    #[test]
    fn rows_are_distributions() {
        let s = SourceModel::sample(10, &mut rng::seeded(3, 0)).unwrap();
        for row in &s.transitions {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((s.initial.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(SourceModel::sample(7, &mut rng::seeded(3, 0)).is_err());
    }

    #[test]
    fn deterministic_chain_has_no_content_cost() {
        let n = 8;
        let transitions: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| if b == (a + 1) % n { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let s = SourceModel {
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            initial,
            transitions,
            length: LengthModel::default(),
        };
        let mut rng = rng::seeded(1, 1);
        for _ in 0..20 {
            let sent = s.sample_sentence(&mut rng);
            let (content, length) = s.log_prob_parts(&sent);
            assert_eq!(content, 0.0);
            assert!(length.is_finite());
        }
    }

    #[test]
    fn oracle_ppl_matches_raw_sum() {
        let (corpus, source) = generate_source_corpus(12, 200, 4).unwrap();
        let ppl = oracle_source_ppl(&source, &corpus).unwrap();
        let mut total = 0.0;
        let mut n = 0usize;
        for s in &corpus {
            let ids: Vec<usize> = s.iter().map(|t| t[1..].parse().unwrap()).collect();
            total += source.initial[ids[0]].ln();
            for w in ids.windows(2) {
                total += source.transitions[w[0]][w[1]].ln();
            }
            total += source.length.log_prob(ids.len());
            n += ids.len() + 1;
        }
        assert!(((-total / n as f64).exp() - ppl).abs() < 1e-9 * ppl);
        assert!(oracle_source_ppl(&source, &[vec!["zzz"]]).is_err());
    }
}
