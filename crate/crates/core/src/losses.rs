//! Training objectives over sentence log-likelihoods.
//!
//! Every loss here is linear in the per-sentence LM-scores `s(x)` once the
//! active hinge set is fixed, so each one reports its gradient as a list of
//! coefficients `c_x` with `d loss / d theta = sum_x c_x * d(-s(x))/d theta`.
//! The trainer turns those into one weighted backward pass per sentence.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ForwardTrace, Gradients, ModelParams};

pub const DEFAULT_TAU: f64 = 1.0;

/// One reference with its hypotheses, already mapped to vocabulary ids.
///
/// `quality`, when present, holds one task-quality value per candidate with
/// the reference first (higher is better); it is required by the ranking loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGroup {
    pub id: String,
    pub reference: Vec<u32>,
    pub hypotheses: Vec<Vec<u32>>,
    pub quality: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    pub id: String,
    pub reference: usize,
    pub hypotheses: Vec<usize>,
    pub quality: Option<Vec<f64>>,
}

/// Unique sentences of a mini-batch and the groups that refer to them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub sentences: Vec<Vec<u32>>,
    pub groups: Vec<GroupIndex>,
}

impl Batch {
    /// Plain sentence batch for MLE; duplicates are kept as separate items.
    pub fn from_sentences(sentences: Vec<Vec<u32>>) -> Self {
        Self {
            sentences,
            groups: Vec::new(),
        }
    }

    /// Interns identical id sequences so each unique sentence is scored once.
    pub fn from_groups<'a>(groups: impl IntoIterator<Item = &'a EncodedGroup>) -> Self {
        let mut batch = Batch::default();
        let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut intern = |s: &Vec<u32>, batch: &mut Batch| -> usize {
            *seen.entry(s.clone()).or_insert_with(|| {
                batch.sentences.push(s.clone());
                batch.sentences.len() - 1
            })
        };
        for g in groups {
            let reference = intern(&g.reference, &mut batch);
            let hypotheses = g.hypotheses.iter().map(|h| intern(h, &mut batch)).collect();
            batch.groups.push(GroupIndex {
                id: g.id.clone(),
                reference,
                hypotheses,
                quality: g.quality.clone(),
            });
        }
        batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// `(sentence index in the batch, coefficient)`, ascending by index.
    pub coeffs: Vec<(usize, f64)>,
    /// Hinge terms with positive loss (0 for MLE and the naive loss).
    pub active_pairs: usize,
    /// Hinge pairs considered after deduplication and tie skipping.
    pub pairs: usize,
    /// Unnormalized sum of hinge terms.
    pub term_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mle,
    Naive,
    Margin,
    Rank,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mle => "mle",
            LossKind::Naive => "naive",
            LossKind::Margin => "margin",
            LossKind::Rank => "rank",
        }
    }

    pub fn is_hinge(self) -> bool {
        matches!(self, LossKind::Margin | LossKind::Rank)
    }
}

/// A loss with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Mle,
    Naive,
    Margin { tau: f64 },
    Rank { tau: f64 },
}

impl Objective {
    pub fn new(kind: LossKind, tau: f64) -> Result<Self> {
        let obj = match kind {
            LossKind::Mle => Objective::Mle,
            LossKind::Naive => Objective::Naive,
            LossKind::Margin => Objective::Margin { tau },
            LossKind::Rank => Objective::Rank { tau },
        };
        if kind.is_hinge() {
            check_tau(tau)?;
        }
        Ok(obj)
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Objective::Mle => LossKind::Mle,
            Objective::Naive => LossKind::Naive,
            Objective::Margin { .. } => LossKind::Margin,
            Objective::Rank { .. } => LossKind::Rank,
        }
    }

    /// Evaluates the loss from precomputed LM-scores of `batch.sentences`.
    pub fn evaluate(&self, batch: &Batch, scores: &[f64]) -> Result<LossReport> {
        if scores.len() != batch.sentences.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} sentences",
                scores.len(),
                batch.sentences.len()
            )));
        }
        match *self {
            Objective::Mle => mle_from_scores(batch, scores),
            Objective::Naive => naive_from_scores(batch, scores),
            Objective::Margin { tau } => margin_from_scores(batch, scores, tau),
            Objective::Rank { tau } => rank_from_scores(batch, scores, tau),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!(
            "margin tau must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn collect_coeffs(dense: Vec<f64>) -> Vec<(usize, f64)> {
    dense
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c != 0.0)
        .collect()
}

fn mle_from_scores(batch: &Batch, scores: &[f64]) -> Result<LossReport> {
    let n = batch.sentences.len();
    if n == 0 {
        return Err(Error::Empty("MLE batch"));
    }
    let mut value = 0.0;
    let mut coeffs = Vec::with_capacity(n);
    for (i, (s, &score)) in batch.sentences.iter().zip(scores).enumerate() {
        let steps = (s.len() + 1) as f64;
        value += -score / steps;
        coeffs.push((i, 1.0 / (n as f64 * steps)));
    }
    Ok(LossReport {
        value: value / n as f64,
        coeffs,
        active_pairs: 0,
        pairs: 0,
        term_sum: 0.0,
    })
}

fn naive_from_scores(batch: &Batch, scores: &[f64]) -> Result<LossReport> {
    let n = batch.groups.len();
    if n == 0 {
        return Err(Error::Empty("group batch"));
    }
    let nf = n as f64;
    let mut dense = vec![0.0; batch.sentences.len()];
    let mut value = 0.0;
    for g in &batch.groups {
        if g.hypotheses.is_empty() {
            return Err(Error::invalid(format!(
                "group `{}` has no hypotheses",
                g.id
            )));
        }
        let k = g.hypotheses.len() as f64;
        // summing differences keeps copies of the reference at exactly zero
        let r = scores[g.reference];
        value += g.hypotheses.iter().map(|&h| scores[h] - r).sum::<f64>() / k;
        dense[g.reference] += 1.0 / nf;
        for &h in &g.hypotheses {
            dense[h] -= 1.0 / (nf * k);
        }
    }
    Ok(LossReport {
        value: value / nf,
        coeffs: collect_coeffs(dense),
        active_pairs: 0,
        pairs: 0,
        term_sum: 0.0,
    })
}

/// Accumulates hinge terms `max(0, tau - (s_better - s_worse))` and divides by
/// the pair count. A pair sitting exactly at the kink is inactive.
struct HingeSum {
    tau: f64,
    dense: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    active: Vec<bool>,
    term_sum: f64,
}

impl HingeSum {
    fn new(tau: f64, sentences: usize) -> Self {
        Self {
            tau,
            dense: vec![0.0; sentences],
            pairs: Vec::new(),
            active: Vec::new(),
            term_sum: 0.0,
        }
    }

    fn push(&mut self, better: usize, worse: usize, scores: &[f64]) {
        let term = self.tau - (scores[better] - scores[worse]);
        let active = term > 0.0;
        if active {
            self.term_sum += term;
        }
        self.pairs.push((better, worse));
        self.active.push(active);
    }

    fn finish(mut self) -> LossReport {
        let count = self.pairs.len();
        let active_pairs = self.active.iter().filter(|&&a| a).count();
        if count == 0 {
            return LossReport {
                value: 0.0,
                coeffs: Vec::new(),
                active_pairs: 0,
                pairs: 0,
                term_sum: 0.0,
            };
        }
        let w = 1.0 / count as f64;
        for (&(better, worse), &active) in self.pairs.iter().zip(&self.active) {
            if active {
                self.dense[better] += w;
                self.dense[worse] -= w;
            }
        }
        LossReport {
            value: self.term_sum / count as f64,
            coeffs: collect_coeffs(self.dense),
            active_pairs,
            pairs: count,
            term_sum: self.term_sum,
        }
    }
}

fn margin_from_scores(batch: &Batch, scores: &[f64], tau: f64) -> Result<LossReport> {
    check_tau(tau)?;
    if batch.groups.is_empty() {
        return Err(Error::Empty("group batch"));
    }
    let mut hinge = HingeSum::new(tau, batch.sentences.len());
    for g in &batch.groups {
        for &h in g.hypotheses.iter().filter(|&&h| h != g.reference) {
            hinge.push(g.reference, h, scores);
        }
    }
    Ok(hinge.finish())
}

/// Checks that a group carries one quality value per candidate in best-first
/// order, as the ranking loss requires.
pub fn check_ranked_group(group: &EncodedGroup) -> Result<()> {
    check_ranked(&group.id, group.quality.as_deref(), group.hypotheses.len()).map(|_| ())
}

fn check_ranked<'q>(id: &str, quality: Option<&'q [f64]>, hypotheses: usize) -> Result<&'q [f64]> {
    let quality = quality
        .ok_or_else(|| Error::invalid(format!("group `{id}` has no quality values for ranking")))?;
    if quality.len() != hypotheses + 1 {
        return Err(Error::ShapeMismatch(format!(
            "group `{id}`: {} quality values for {} candidates",
            quality.len(),
            hypotheses + 1
        )));
    }
    if let Some(pos) = quality
        .windows(2)
        .position(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_lt()))
    {
        return Err(Error::Unsorted {
            group: id.to_string(),
            position: pos + 1,
        });
    }
    Ok(quality)
}

fn rank_from_scores(batch: &Batch, scores: &[f64], tau: f64) -> Result<LossReport> {
    check_tau(tau)?;
    if batch.groups.is_empty() {
        return Err(Error::Empty("group batch"));
    }
    let mut hinge = HingeSum::new(tau, batch.sentences.len());
    for g in &batch.groups {
        let quality = check_ranked(&g.id, g.quality.as_deref(), g.hypotheses.len())?;
        let candidates: Vec<(usize, f64)> = std::iter::once((g.reference, quality[0]))
            .chain(
                g.hypotheses
                    .iter()
                    .zip(&quality[1..])
                    .filter(|&(&h, _)| h != g.reference)
                    .map(|(&h, &q)| (h, q)),
            )
            .collect();
        for (j, &(better, qj)) in candidates.iter().enumerate() {
            for &(worse, qk) in &candidates[j + 1..] {
                if qj == qk {
                    continue;
                }
                hinge.push(better, worse, scores);
            }
        }
    }
    Ok(hinge.finish())
}

pub fn corpus_perplexity(model: &ModelParams, corpus: &[Vec<u32>]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let scores = nn::lm_scores(model, corpus)?;
    let tokens: usize = corpus.iter().map(|s| s.len() + 1).sum();
    let total: f64 = scores.iter().sum();
    Ok((-total / tokens as f64).exp())
}

fn model_loss(model: &ModelParams, batch: &Batch, objective: Objective) -> Result<LossReport> {
    let scores = nn::lm_scores(model, &batch.sentences)?;
    objective.evaluate(batch, &scores)
}

/// Mean per-token negative log-likelihood over the batch.
pub fn loss_mle(model: &ModelParams, batch: &Batch) -> Result<LossReport> {
    model_loss(model, batch, Objective::Mle)
}

/// `(1/N) sum_i ( -s(x_i) + (1/K_i) sum_j s(x_ij) )`; unbounded below.
pub fn loss_naive(model: &ModelParams, batch: &Batch) -> Result<LossReport> {
    model_loss(model, batch, Objective::Naive)
}

/// Mean hinge `max(0, tau - (s(ref) - s(hyp)))` over reference/hypothesis
/// pairs; hypotheses identical to their reference are skipped.
pub fn loss_margin(model: &ModelParams, batch: &Batch, tau: f64) -> Result<LossReport> {
    model_loss(model, batch, Objective::Margin { tau })
}

/// Mean hinge over all ordered candidate pairs of best-first sorted groups.
/// Pairs of equal quality are skipped.
pub fn loss_rank(model: &ModelParams, batch: &Batch, tau: f64) -> Result<LossReport> {
    model_loss(model, batch, Objective::Rank { tau })
}

/// Builds the parameter gradient from a report's coefficients.
pub fn gradient_from_coeffs(
    model: &ModelParams,
    traces: &[ForwardTrace],
    coeffs: &[(usize, f64)],
) -> Result<Gradients> {
    let items: Vec<(&ForwardTrace, f64)> = coeffs
        .iter()
        .map(|&(i, c)| {
            traces.get(i).map(|t| (t, c)).ok_or_else(|| {
                Error::ShapeMismatch(format!("coefficient for missing sentence {i}"))
            })
        })
        .collect::<Result<_>>()?;
    nn::accumulate(model, &items)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSample {
    pub ref_score: f64,
    pub hyp_score: f64,
    pub margin: f64,
}

impl MarginSample {
    pub fn new(ref_score: f64, hyp_score: f64) -> Self {
        Self {
            ref_score,
            hyp_score,
            margin: ref_score - hyp_score,
        }
    }
}

/// One sample per (reference, hypothesis) pair, identical pairs included.
pub fn margin_samples(model: &ModelParams, groups: &[EncodedGroup]) -> Result<Vec<MarginSample>> {
    if groups.is_empty() {
        return Err(Error::Empty("groups"));
    }
    let batch = Batch::from_groups(groups);
    let scores = nn::lm_scores(model, &batch.sentences)?;
    let mut samples = Vec::new();
    for g in &batch.groups {
        let r = scores[g.reference];
        samples.extend(
            g.hypotheses
                .iter()
                .map(|&h| MarginSample::new(r, scores[h])),
        );
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group_batch(spec: &[(usize, &[usize])], n: usize) -> Batch {
        Batch {
            sentences: (0..n).map(|i| vec![i as u32 + 3]).collect(),
            groups: spec
                .iter()
                .enumerate()
                .map(|(i, &(r, hs))| GroupIndex {
                    id: format!("g{i}"),
                    reference: r,
                    hypotheses: hs.to_vec(),
                    quality: None,
                })
                .collect(),
        }
    }

    #[test]
    fn naive_direct_evaluation() {
        let b = group_batch(&[(0, &[1])], 2);
        let r = Objective::Naive.evaluate(&b, &[-10.0, -8.0]).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.coeffs, vec![(0, 1.0), (1, -1.0)]);
    }

    #[test]
    fn naive_identical_hypothesis_cancels() {
        let b = group_batch(&[(0, &[0])], 1);
        let r = Objective::Naive.evaluate(&b, &[-7.25]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.coeffs.is_empty());
    }

    #[test]
    fn naive_requires_hypotheses() {
        let b = group_batch(&[(0, &[])], 1);
        assert!(Objective::Naive.evaluate(&b, &[-1.0]).is_err());
    }

    #[test]
    fn margin_hinge_cases() {
        let b = group_batch(&[(0, &[1])], 2);
        let obj = Objective::Margin { tau: 1.0 };
        let inactive = obj.evaluate(&b, &[-5.0, -7.0]).unwrap();
        assert_eq!(inactive.value, 0.0);
        assert_eq!(inactive.active_pairs, 0);
        assert!(inactive.coeffs.is_empty());
        let active = obj.evaluate(&b, &[-5.0, -4.5]).unwrap();
        assert_eq!(active.value, 1.5);
        assert_eq!(active.active_pairs, 1);
        assert_eq!(active.coeffs, vec![(0, 1.0), (1, -1.0)]);
        // exactly at the kink: inactive
        let kink = obj.evaluate(&b, &[-5.0, -6.0]).unwrap();
        assert_eq!(kink.active_pairs, 0);
    }

    #[test]
    fn margin_skips_reference_duplicates() {
        let b = group_batch(&[(0, &[0, 1])], 2);
        let r = Objective::Margin { tau: 1.0 }
            .evaluate(&b, &[-5.0, -4.0])
            .unwrap();
        assert_eq!(r.pairs, 1);
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn tau_must_be_positive() {
        let b = group_batch(&[(0, &[1])], 2);
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(Objective::Margin { tau }
                .evaluate(&b, &[-1.0, -2.0])
                .is_err());
            assert!(Objective::new(LossKind::Rank, tau).is_err());
        }
    }

    fn ranked(scores_q: &[f64]) -> Batch {
        let n = scores_q.len();
        let mut b = group_batch(&[(0, &(1..n).collect::<Vec<_>>())], n);
        b.groups[0].quality = Some(scores_q.to_vec());
        b
    }

    /// Independent pair enumeration for the three-candidate example.
    fn enumerate_rank(scores: &[f64], tau: f64) -> f64 {
        let mut terms = Vec::new();
        for j in 0..scores.len() {
            for k in j + 1..scores.len() {
                terms.push((tau - (scores[j] - scores[k])).max(0.0));
            }
        }
        terms.iter().sum::<f64>() / terms.len() as f64
    }

    #[test]
    fn rank_three_candidates() {
        let b = ranked(&[0.0, -0.1, -0.2]);
        let obj = Objective::Rank { tau: 1.0 };
        assert_eq!(obj.evaluate(&b, &[-5.0, -6.0, -9.0]).unwrap().value, 0.0);
        let r = obj.evaluate(&b, &[-5.0, -5.5, -5.8]).unwrap();
        let oracle = enumerate_rank(&[-5.0, -5.5, -5.8], 1.0);
        // terms 0.5, 0.2, 0.7
        assert!((oracle - 1.4 / 3.0).abs() < 1e-12);
        assert!((r.value - oracle).abs() < 1e-12);
        assert_eq!(r.active_pairs, 3);
    }

    #[test]
    fn rank_skips_ties_and_rejects_unsorted() {
        let b = ranked(&[0.0, -0.5, -0.5]);
        let r = Objective::Rank { tau: 1.0 }
            .evaluate(&b, &[-5.0, -5.0, -5.0])
            .unwrap();
        assert_eq!(r.pairs, 2);
        let bad = ranked(&[0.0, -0.5, -0.25]);
        assert!(matches!(
            Objective::Rank { tau: 1.0 }.evaluate(&bad, &[-5.0, -5.0, -5.0]),
            Err(Error::Unsorted { position: 2, .. })
        ));
    }

    #[test]
    fn rank_single_hypothesis_equals_margin() {
        let mut b = ranked(&[0.0, -0.3]);
        let scores = [-4.0, -3.7];
        let rank = Objective::Rank { tau: 1.0 }.evaluate(&b, &scores).unwrap();
        b.groups[0].quality = None;
        let margin = Objective::Margin { tau: 1.0 }
            .evaluate(&b, &scores)
            .unwrap();
        assert_eq!(rank, margin);
    }

    #[test]
    fn mle_coefficients() {
        let b = Batch::from_sentences(vec![vec![3, 4], vec![5]]);
        let r = Objective::Mle.evaluate(&b, &[-3.0, -1.0]).unwrap();
        assert!((r.value - (1.0 + 0.5) / 2.0).abs() < 1e-15);
        assert_eq!(r.coeffs, vec![(0, 1.0 / 6.0), (1, 1.0 / 4.0)]);
    }

    #[test]
    fn from_groups_interns() {
        let g = EncodedGroup {
            id: "a".into(),
            reference: vec![3, 4],
            hypotheses: vec![vec![3], vec![3, 4], vec![3]],
            quality: None,
        };
        let b = Batch::from_groups([&g]);
        assert_eq!(b.sentences.len(), 2);
        assert_eq!(b.groups[0].hypotheses, vec![1, 0, 1]);
    }
}
