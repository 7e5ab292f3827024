//! Task metrics and the statistics used by the diagnostics.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditAlignment {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub matches: usize,
}

/// Unit-cost word-level Levenshtein alignment of `hypothesis` against
/// `reference`, with operation counts recovered by backtracking.
pub fn edit_alignment<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditAlignment {
    let (m, n) = (reference.len(), hypothesis.len());
    let width = n + 1;
    let mut d = vec![0usize; (m + 1) * width];
    for (j, cell) in d[..width].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=m {
        d[i * width] = i;
        for j in 1..=n {
            let sub =
                d[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * width + j] + 1;
            let ins = d[i * width + j - 1] + 1;
            d[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut a = EditAlignment {
        distance: d[m * width + n],
        ..Default::default()
    };
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * width + j - 1] + usize::from(!same) {
                if same {
                    a.matches += 1;
                } else {
                    a.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * width + j] + 1 {
            a.deletions += 1;
            i -= 1;
        } else {
            a.insertions += 1;
            j -= 1;
        }
    }
    a
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    edit_alignment(a, b).distance
}

/// Word error rate as a fraction of the reference length (may exceed 1).
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("WER reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

pub const BLEU_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram total for one order.
fn clipped_matches<T: Eq + Hash, R: AsRef<[T]>>(
    references: &[R],
    hypothesis: &[T],
    n: usize,
) -> (usize, usize) {
    let hyp = ngram_counts(hypothesis, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r.as_ref(), n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = hyp
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hypothesis.len().saturating_sub(n - 1))
}

/// Reference length closest to `hyp_len`; ties go to the shorter one.
fn closest_ref_len<R: AsRef<[T]>, T>(references: &[R], hyp_len: usize) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

/// Sentence-level BLEU-4 with add-one smoothing of orders 2..4.
///
/// Unigram precision is unsmoothed, so a hypothesis sharing no word with any
/// reference scores exactly 0. An empty hypothesis scores 0.
pub fn sentence_bleu<T: Eq + Hash, R: AsRef<[T]>>(
    references: &[R],
    hypothesis: &[T],
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Empty("BLEU references"));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let (matched, total) = clipped_matches(references, hypothesis, n);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let bp = brevity_penalty(
        hypothesis.len(),
        closest_ref_len(references, hypothesis.len()),
    );
    Ok((bp * (log_sum / BLEU_ORDER as f64).exp()).min(1.0))
}

/// Corpus BLEU-4: clipped counts and lengths pooled over segments, unsmoothed.
pub fn corpus_bleu<T: Eq + Hash, R: AsRef<[T]>, H: AsRef<[T]>>(
    pairs: &[(Vec<R>, H)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    let mut matched = [0usize; BLEU_ORDER];
    let mut totals = [0usize; BLEU_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (refs, hyp) in pairs {
        if refs.is_empty() {
            return Err(Error::Empty("BLEU references"));
        }
        let hyp = hyp.as_ref();
        for n in 1..=BLEU_ORDER {
            let (m, t) = clipped_matches(refs, hyp, n);
            matched[n - 1] += m;
            totals[n - 1] += t;
        }
        hyp_len += hyp.len();
        ref_len += closest_ref_len(refs, hyp.len());
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_ORDER {
        if matched[n] == 0 || totals[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / totals[n] as f64).ln();
    }
    Ok((brevity_penalty(hyp_len, ref_len) * (log_sum / BLEU_ORDER as f64).exp()).min(1.0))
}

/// Pearson correlation; `None` when either variable has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "pearson inputs of length {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson needs at least two points"));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Ok(None);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub median: f64,
    pub mean: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Quantile by linear interpolation at position `p * (n - 1)` of the sorted
/// values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Empty("boxplot values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(BoxplotStats {
        median: quantile_sorted(&sorted, 0.5),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        q05: quantile_sorted(&sorted, 0.05),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        q95: quantile_sorted(&sorted, 0.95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Fixed-width histogram over `[lo, hi]`. Bins are half-open except the last;
/// out-of-range values are clamped into the edge bins.
pub fn histogram(values: &[f64], bin_width: f64, lo: f64, hi: f64) -> Result<Vec<Bin>> {
    if !(bin_width.is_finite() && bin_width > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!(
            "histogram needs bin_width > 0 and lo < hi (got {bin_width}, [{lo}, {hi}])"
        )));
    }
    let nbins = ((hi - lo) / bin_width).ceil().max(1.0) as usize;
    let edge = |i: usize| (lo + i as f64 * bin_width).min(hi);
    let mut bins: Vec<Bin> = (0..nbins)
        .map(|i| Bin {
            left: edge(i),
            right: edge(i + 1),
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = if v.is_nan() || v < lo {
            0
        } else if v >= hi {
            nbins - 1
        } else {
            let mut i = (((v - lo) / bin_width).floor() as usize).min(nbins - 1);
            while i + 1 < nbins && v >= bins[i + 1].left {
                i += 1;
            }
            while i > 0 && v < bins[i].left {
                i -= 1;
            }
            i
        };
        bins[idx].count += 1;
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap(), 0.0);
        assert!((wer(&toks("the cat sat"), &toks("the cat")).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer(&toks("a"), &toks("b c")).unwrap(), 2.0);
        assert!(wer::<&str>(&[], &toks("a")).is_err());
    }

    #[test]
    fn alignment_counts() {
        let a = edit_alignment(&toks("a b c d"), &toks("a x c d e"));
        assert_eq!(a.distance, 2);
        assert_eq!(a.substitutions, 1);
        assert_eq!(a.insertions, 1);
        assert_eq!(a.deletions, 0);
        assert_eq!(a.matches, 3);
        let b = edit_alignment(&toks("a"), &toks("b c"));
        assert_eq!(b.substitutions + b.insertions, 2);
        assert_eq!(b.substitutions + b.deletions + b.matches, 1);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let r = toks("the quick brown fox jumps");
        assert_eq!(sentence_bleu(&[&r], &r).unwrap(), 1.0);
        assert_eq!(sentence_bleu(&[&r], &toks("a b c")).unwrap(), 0.0);
        assert_eq!(sentence_bleu::<&str, _>(&[&r], &[]).unwrap(), 0.0);
    }

    /// 5-token hypothesis, 4 matching unigrams, 3 matching bigrams.
    #[test]
    fn bleu_formula_example() {
        let r = toks("a b c d e");
        let h = toks("a b c d x");
        // p1 = 4/5, p2 = (3+1)/(4+1), p3 = (2+1)/(3+1), p4 = (1+1)/(2+1), BP = 1
        let expect = ((0.8f64).ln() + (0.8f64).ln() + (0.75f64).ln() + (2.0f64 / 3.0).ln()) / 4.0;
        let got = sentence_bleu(&[&r], &h).unwrap();
        assert!((got - expect.exp()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn bleu_brevity_penalty_closest_ref() {
        let short = toks("a b c");
        let refs = [toks("a b c d e f"), toks("a b c d")];
        let got = sentence_bleu(&refs, &short).unwrap();
        // closest reference length is 4; every precision is 1 (order 4 has
        // no hypothesis n-grams, so smoothing gives 1/1)
        let expect = (1.0 - 4.0 / 3.0f64).exp();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn corpus_bleu_identity() {
        let pairs = vec![
            (vec![toks("a b c d e")], toks("a b c d e")),
            (vec![toks("x y z w")], toks("x y z w")),
        ];
        assert_eq!(corpus_bleu(&pairs).unwrap(), 1.0);
    }

    #[test]
    fn pearson_cases() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &ys).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&xs, &[5.0; 4]).unwrap(), None);
        assert!(pearson(&xs, &[1.0]).is_err());
    }

    #[test]
    fn boxplot_examples() {
        let s = boxplot_stats(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.median, s.q25, s.q75), (3.0, 2.0, 4.0));
        assert_eq!(s.mean, 3.0);
        let one = boxplot_stats(&[7.5]).unwrap();
        assert_eq!(
            [one.median, one.mean, one.q05, one.q25, one.q75, one.q95],
            [7.5; 6]
        );
    }

    #[test]
    fn histogram_rules() {
        let h = histogram(&[0.1, 0.2, 0.3], 1.0, 0.0, 4.0).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h[0].count, 3);
        let boundary = histogram(&[2.0], 1.0, 0.0, 4.0).unwrap();
        assert_eq!(boundary[2].count, 1);
        let clamp = histogram(&[-100.0, 4.0, 100.0], 1.0, 0.0, 4.0).unwrap();
        assert_eq!(clamp[0].count, 1);
        assert_eq!(clamp[3].count, 2);
        assert!(histogram(&[1.0], 0.0, 0.0, 1.0).is_err());
        assert!(histogram(&[1.0], 1.0, 1.0, 1.0).is_err());
    }
}
