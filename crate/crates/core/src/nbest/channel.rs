//! Noisy channel standing in for a recognizer's beam: corrupts references by
//! deletion, confusable substitution and random insertion, and reports the
//! exact log-probability of the edits it made.

use std::collections::HashSet;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::source::SourceModel;
use super::{Hypothesis, NBestGroup};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Substitutes are drawn uniformly from ids at these offsets (mod vocab size).
pub const CONFUSABLE_OFFSETS: [i64; 4] = [-2, -1, 1, 2];

/// Draw budget per group, as a multiple of `k`.
pub const RETRY_FACTOR: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub k: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            p_sub: 0.15,
            p_del: 0.05,
            p_ins: 0.05,
            k: 16,
            noise_sigma: 1.0,
            seed: 7,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_probabilities()?;
        if self.p_sub + self.p_del >= 1.0 {
            return Err(Error::invalid("channel needs p_sub + p_del < 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid("channel needs k >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be a nonnegative real"));
        }
        Ok(())
    }

    fn validate_probabilities(&self) -> Result<()> {
        for (name, p) in [
            ("p_sub", self.p_sub),
            ("p_del", self.p_del),
            ("p_ins", self.p_ins),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenEdit {
    Keep,
    Delete,
    Substitute(u32),
}

/// What happened at one reference position: an edit of the token, then an
/// optional inserted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionEdit {
    pub edit: TokenEdit,
    pub insert: Option<u32>,
}

pub fn confusable(token: u32, offset_index: usize, vocab_size: usize) -> u32 {
    let n = vocab_size as i64;
    (token as i64 + CONFUSABLE_OFFSETS[offset_index]).rem_euclid(n) as u32
}

/// Log-probability of one specific edit script under the channel.
pub fn edit_log_prob(edits: &[PositionEdit], channel: &ChannelConfig, vocab_size: usize) -> f64 {
    let n_conf = CONFUSABLE_OFFSETS.len() as f64;
    edits
        .iter()
        .map(|e| {
            let token = match e.edit {
                TokenEdit::Delete => channel.p_del.ln(),
                TokenEdit::Substitute(_) => {
                    (1.0 - channel.p_del).ln() + (channel.p_sub / n_conf).ln()
                }
                TokenEdit::Keep => (1.0 - channel.p_del).ln() + (1.0 - channel.p_sub).ln(),
            };
            let insert = match e.insert {
                Some(_) => (channel.p_ins / vocab_size as f64).ln(),
                None => (1.0 - channel.p_ins).ln(),
            };
            token + insert
        })
        .sum()
}

/// Samples an edit script for `reference` and applies it.
pub fn corrupt_with_edits(
    reference: &[u32],
    vocab_size: usize,
    channel: &ChannelConfig,
    rng: &mut Rng,
) -> (Vec<u32>, Vec<PositionEdit>) {
    let mut out = Vec::with_capacity(reference.len() + 2);
    let mut edits = Vec::with_capacity(reference.len());
    for &w in reference {
        let edit = if rng.random::<f64>() < channel.p_del {
            TokenEdit::Delete
        } else if rng.random::<f64>() < channel.p_sub {
            let j = rng.random_range(0..CONFUSABLE_OFFSETS.len());
            TokenEdit::Substitute(confusable(w, j, vocab_size))
        } else {
            TokenEdit::Keep
        };
        match edit {
            TokenEdit::Keep => out.push(w),
            TokenEdit::Substitute(s) => out.push(s),
            TokenEdit::Delete => {}
        }
        let insert = if rng.random::<f64>() < channel.p_ins {
            let t = rng.random_range(0..vocab_size as u32);
            out.push(t);
            Some(t)
        } else {
            None
        };
        edits.push(PositionEdit { edit, insert });
    }
    (out, edits)
}

/// Corrupts `reference` (content ids in `0..vocab_size`) and returns the
/// hypothesis with the log-probability of the realized edit script.
pub fn corrupt(
    reference: &[u32],
    vocab_size: usize,
    channel: &ChannelConfig,
    rng: &mut Rng,
) -> (Vec<u32>, f64) {
    let (hyp, edits) = corrupt_with_edits(reference, vocab_size, channel, rng);
    (hyp, edit_log_prob(&edits, channel, vocab_size))
}

/// Builds one n-best group per corpus sentence.
///
/// Hypotheses equal to the reference, empty ones and repeats are redrawn, up
/// to `RETRY_FACTOR * k` draws per group; groups may end up with fewer than
/// `k` hypotheses, and a group with none is dropped with a warning. The task
/// score is the channel log-probability plus Gaussian noise of scale
/// `noise_sigma`.
pub fn generate_nbest<S: AsRef<str>>(
    corpus: &[Vec<S>],
    source: &SourceModel,
    channel: &ChannelConfig,
    id_prefix: &str,
) -> Result<Vec<NBestGroup>> {
    channel.validate()?;
    let vocab_size = source.vocab_size();
    let mut rng = rng::seeded(channel.seed, rng::stream::CHANNEL);
    let mut groups = Vec::with_capacity(corpus.len());
    for (i, sentence) in corpus.iter().enumerate() {
        let id = format!("{id_prefix}-{i:06}");
        if sentence.is_empty() {
            log::warn!("skipping empty reference `{id}`");
            continue;
        }
        let reference = source.encode(sentence)?;
        let mut seen: HashSet<Vec<u32>> = HashSet::new();
        let mut hypotheses = Vec::with_capacity(channel.k);
        for _ in 0..RETRY_FACTOR * channel.k {
            if hypotheses.len() == channel.k {
                break;
            }
            let (hyp, logprob) = corrupt(&reference, vocab_size, channel, &mut rng);
            let noise: f64 = rng.sample(StandardNormal);
            if hyp.is_empty() || hyp == reference || !seen.insert(hyp.clone()) {
                continue;
            }
            hypotheses.push(Hypothesis {
                tokens: hyp
                    .iter()
                    .map(|&t| source.tokens[t as usize].clone())
                    .collect(),
                task_score: logprob + channel.noise_sigma * noise,
            });
        }
        if hypotheses.is_empty() {
            log::warn!("group `{id}` produced no distinct hypothesis; dropped");
            continue;
        }
        groups.push(NBestGroup {
            id,
            reference: sentence.iter().map(|t| t.as_ref().to_string()).collect(),
            hypotheses,
        });
    }
    Ok(groups)
}
