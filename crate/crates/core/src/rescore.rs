//! N-best rescoring: task score plus a weighted LM score, weight tuning on
//! dev data, top-1 evaluation and per-group LM/quality correlation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, BoxplotStats};
use crate::nbest::{Metric, NBestGroup};
use crate::nn::{self, ModelParams};
use crate::vocab::Vocabulary;

/// Inclusive weight grid `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 2.0,
            step: 0.05,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        let finite = self.min.is_finite() && self.max.is_finite() && self.step.is_finite();
        if !finite || self.step <= 0.0 || self.min > self.max || self.min < 0.0 {
            return Err(Error::invalid(format!(
                "weight grid needs 0 <= min <= max and step > 0, got {self}"
            )));
        }
        Ok(())
    }

    /// Grid points computed as `min + i * step` so they do not drift.
    pub fn points(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.step)
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// Parses `min:max:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad grid `{s}`, expected min:max:step")))
        };
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "bad grid `{s}`, expected min:max:step"
            )));
        }
        let grid = Grid {
            min: parse(parts[0])?,
            max: parse(parts[1])?,
            step: parse(parts[2])?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescoreConfig {
    pub weight: f64,
    pub length_norm: bool,
    pub grid: Grid,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            weight: 0.0,
            length_norm: false,
            grid: Grid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneObjective {
    MinWer,
    MaxBleu,
}

impl TuneObjective {
    pub fn metric(self) -> Metric {
        match self {
            TuneObjective::MinWer => Metric::Wer,
            TuneObjective::MaxBleu => Metric::Bleu,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            TuneObjective::MinWer => a < b,
            TuneObjective::MaxBleu => a > b,
        }
    }
}

/// LM contribution of one hypothesis: `lm_score`, or `lm_score / (L + 1)`
/// with length normalization.
pub fn lm_part(
    model: &ModelParams,
    vocab: &Vocabulary,
    tokens: &[String],
    length_norm: bool,
) -> Result<f64> {
    let score = nn::lm_score(model, &vocab.encode(tokens))?;
    Ok(normalize(score, tokens.len(), length_norm))
}

fn normalize(score: f64, len: usize, length_norm: bool) -> f64 {
    if length_norm {
        score / (len + 1) as f64
    } else {
        score
    }
}

pub fn combine(task_score: f64, lm: f64, weight: f64) -> f64 {
    task_score + weight * lm
}

pub fn combined_score(
    hyp: &crate::nbest::Hypothesis,
    model: &ModelParams,
    vocab: &Vocabulary,
    cfg: &RescoreConfig,
) -> Result<f64> {
    Ok(combine(
        hyp.task_score,
        lm_part(model, vocab, &hyp.tokens, cfg.length_norm)?,
        cfg.weight,
    ))
}

/// LM parts for every hypothesis of every group, scored in parallel.
pub fn score_groups(
    groups: &[NBestGroup],
    model: &ModelParams,
    vocab: &Vocabulary,
    length_norm: bool,
) -> Result<Vec<Vec<f64>>> {
    let sentences: Vec<Vec<u32>> = groups
        .iter()
        .flat_map(|g| g.hypotheses.iter().map(|h| vocab.encode(&h.tokens)))
        .collect();
    let flat = nn::lm_scores(model, &sentences)?;
    let mut it = flat.into_iter().zip(sentences.iter().map(Vec::len));
    Ok(groups
        .iter()
        .map(|g| {
            g.hypotheses
                .iter()
                .map(|_| {
                    let (s, len) = it.next().expect("one score per hypothesis");
                    normalize(s, len, length_norm)
                })
                .collect()
        })
        .collect())
}

/// Indices of the hypotheses by descending combined score, ties by index.
pub fn rank_order(task_scores: &[f64], lm: &[f64], weight: f64) -> Vec<usize> {
    let combined: Vec<f64> = task_scores
        .iter()
        .zip(lm)
        .map(|(&t, &l)| combine(t, l, weight))
        .collect();
    let mut order: Vec<usize> = (0..combined.len()).collect();
    order.sort_by(|&a, &b| combined[b].total_cmp(&combined[a]));
    order
}

fn top1_index(task_scores: &[f64], lm: &[f64], weight: f64) -> usize {
    let mut best = 0;
    for i in 1..task_scores.len() {
        if combine(task_scores[i], lm[i], weight) > combine(task_scores[best], lm[best], weight) {
            best = i;
        }
    }
    best
}

fn rerank_with(group: &NBestGroup, lm: &[f64], weight: f64) -> NBestGroup {
    let task: Vec<f64> = group.hypotheses.iter().map(|h| h.task_score).collect();
    let hypotheses = rank_order(&task, lm, weight)
        .into_iter()
        .map(|i| {
            let mut h = group.hypotheses[i].clone();
            h.task_score = combine(task[i], lm[i], weight);
            h
        })
        .collect();
    NBestGroup {
        id: group.id.clone(),
        reference: group.reference.clone(),
        hypotheses,
    }
}

/// Reorders hypotheses by descending combined score (stable) and replaces each
/// task score with its combined score, so the result is itself a valid n-best
/// list whose top-1 is the first hypothesis.
pub fn rescore_group(
    group: &NBestGroup,
    model: &ModelParams,
    vocab: &Vocabulary,
    cfg: &RescoreConfig,
) -> Result<NBestGroup> {
    rescore_groups(std::slice::from_ref(group), model, vocab, cfg).map(|mut v| v.remove(0))
}

pub fn rescore_groups(
    groups: &[NBestGroup],
    model: &ModelParams,
    vocab: &Vocabulary,
    cfg: &RescoreConfig,
) -> Result<Vec<NBestGroup>> {
    check_groups(groups)?;
    let lm = score_groups(groups, model, vocab, cfg.length_norm)?;
    Ok(groups
        .iter()
        .zip(&lm)
        .map(|(g, l)| rerank_with(g, l, cfg.weight))
        .collect())
}

fn check_groups(groups: &[NBestGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Empty("n-best groups"));
    }
    if let Some(g) = groups.iter().find(|g| g.hypotheses.is_empty()) {
        return Err(Error::invalid(format!(
            "group `{}` has no hypotheses",
            g.id
        )));
    }
    Ok(())
}

/// The system output of a group: its highest-scoring hypothesis, earliest on ties.
pub fn top1(group: &NBestGroup) -> &[String] {
    let mut best = 0;
    for (i, h) in group.hypotheses.iter().enumerate().skip(1) {
        if h.task_score > group.hypotheses[best].task_score {
            best = i;
        }
    }
    &group.hypotheses[best].tokens
}

fn corpus_objective(groups: &[NBestGroup], picks: &[&[String]], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Wer => {
            let mut total = 0.0;
            for (g, hyp) in groups.iter().zip(picks) {
                total += metrics::wer(&g.reference, hyp)?;
            }
            Ok(total / groups.len() as f64)
        }
        Metric::Bleu => {
            let pairs: Vec<(Vec<&[String]>, &[String])> = groups
                .iter()
                .zip(picks)
                .map(|(g, &h)| (vec![&g.reference[..]], h))
                .collect();
            metrics::corpus_bleu(&pairs)
        }
    }
}

/// Mean top-1 WER (fraction) or corpus BLEU of the top-1 hypotheses.
pub fn evaluate_top1(groups: &[NBestGroup], metric: Metric) -> Result<f64> {
    check_groups(groups)?;
    let picks: Vec<&[String]> = groups.iter().map(top1).collect();
    corpus_objective(groups, &picks, metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub weight: f64,
    pub objective: f64,
    /// `(weight, objective)` for every grid point, ascending by weight.
    pub table: Vec<(f64, f64)>,
}

/// Grid search for the interpolation weight; ties go to the smallest weight.
pub fn tune_weight(
    dev_groups: &[NBestGroup],
    model: &ModelParams,
    vocab: &Vocabulary,
    cfg: &RescoreConfig,
    objective: TuneObjective,
) -> Result<TuneResult> {
    check_groups(dev_groups)?;
    let points = cfg.grid.points()?;
    let lm = score_groups(dev_groups, model, vocab, cfg.length_norm)?;
    let task: Vec<Vec<f64>> = dev_groups
        .iter()
        .map(|g| g.hypotheses.iter().map(|h| h.task_score).collect())
        .collect();
    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(f64, f64)> = None;
    for w in points {
        let picks: Vec<&[String]> = dev_groups
            .iter()
            .zip(task.iter().zip(&lm))
            .map(|(g, (t, l))| &g.hypotheses[top1_index(t, l, w)].tokens[..])
            .collect();
        let value = corpus_objective(dev_groups, &picks, objective.metric())?;
        table.push((w, value));
        if best.is_none_or(|(_, b)| objective.better(value, b)) {
            best = Some((w, value));
        }
    }
    let (weight, objective) = best.expect("grid has at least one point");
    Ok(TuneResult {
        weight,
        objective,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// Pearson r per group; `None` where it is undefined.
    pub per_group: Vec<Option<f64>>,
    pub excluded: usize,
    /// Box statistics over the defined coefficients; `None` if there are none.
    pub stats: Option<BoxplotStats>,
}

impl CorrelationReport {
    pub fn defined(&self) -> Vec<f64> {
        self.per_group.iter().flatten().copied().collect()
    }
}

/// Per group, Pearson r between hypothesis accuracy (`1 - WER` or sentence
/// BLEU) and raw LM score. Groups with fewer than two hypotheses or with zero
/// variance on either side are excluded and counted.
pub fn correlation_report(
    groups: &[NBestGroup],
    model: &ModelParams,
    vocab: &Vocabulary,
    metric: Metric,
) -> Result<CorrelationReport> {
    check_groups(groups)?;
    let lm = score_groups(groups, model, vocab, false)?;
    let mut per_group = Vec::with_capacity(groups.len());
    for (g, scores) in groups.iter().zip(&lm) {
        if g.hypotheses.len() < 2 {
            per_group.push(None);
            continue;
        }
        let accuracy: Vec<f64> = g
            .hypotheses
            .iter()
            .map(|h| Ok(metric.accuracy(metric.value(&g.reference, &h.tokens)?)))
            .collect::<Result<_>>()?;
        per_group.push(metrics::pearson(&accuracy, scores)?);
    }
    let defined: Vec<f64> = per_group.iter().flatten().copied().collect();
    let excluded = per_group.len() - defined.len();
    let stats = if defined.is_empty() {
        None
    } else {
        Some(metrics::boxplot_stats(&defined)?)
    };
    Ok(CorrelationReport {
        per_group,
        excluded,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::Hypothesis;
    use crate::nn::{init_params, Dims};
    use crate::vocab::build_vocab;

    fn s(t: &str) -> Vec<String> {
        t.split_whitespace().map(str::to_string).collect()
    }

    fn setup() -> (ModelParams, Vocabulary, Vec<NBestGroup>) {
        let vocab = build_vocab(&[s("a b c d e f")], 20).unwrap();
        let model = init_params(Dims::new(vocab.len(), 3, 4).unwrap(), 2, false);
        let hyp = |t: &str, score| Hypothesis {
            tokens: s(t),
            task_score: score,
        };
        let groups = vec![
            NBestGroup {
                id: "g0".into(),
                reference: s("a b c"),
                hypotheses: vec![hyp("a b d", -1.0), hyp("a b c d", -1.5), hyp("e f", -1.0)],
            },
            NBestGroup {
                id: "g1".into(),
                reference: s("d e f"),
                hypotheses: vec![hyp("d e", -0.2), hyp("d e f f", -0.3)],
            },
        ];
        (model, vocab, groups)
    }

    #[test]
    fn grid_parsing_and_points() {
        let g: Grid = "0:2:0.05".parse().unwrap();
        let p = g.points().unwrap();
        assert_eq!(p.len(), 41);
        assert_eq!(p[0], 0.0);
        assert!((p[40] - 2.0).abs() < 1e-12);
        assert_eq!(
            "1:1:0.5".parse::<Grid>().unwrap().points().unwrap(),
            vec![1.0]
        );
        assert!("2:1:0.1".parse::<Grid>().is_err());
        assert!("0:1".parse::<Grid>().is_err());
        assert!("0:1:0".parse::<Grid>().is_err());
    }

    #[test]
    fn weight_zero_keeps_task_ranking() {
        let (model, vocab, groups) = setup();
        let out = rescore_groups(&groups, &model, &vocab, &RescoreConfig::default()).unwrap();
        // stable: equal task scores keep input order
        assert_eq!(out[0].hypotheses[0].tokens, s("a b d"));
        assert_eq!(out[0].hypotheses[1].tokens, s("e f"));
        assert_eq!(out[0].hypotheses[2].tokens, s("a b c d"));
        assert_eq!(
            evaluate_top1(&out, Metric::Wer).unwrap(),
            evaluate_top1(&groups, Metric::Wer).unwrap()
        );
    }

    #[test]
    fn rerank_matches_direct_sort() {
        let (model, vocab, groups) = setup();
        let cfg = RescoreConfig {
            weight: 0.7,
            length_norm: true,
            ..Default::default()
        };
        let out = rescore_group(&groups[0], &model, &vocab, &cfg).unwrap();
        let mut expected: Vec<(f64, Vec<String>)> = groups[0]
            .hypotheses
            .iter()
            .map(|h| {
                (
                    combined_score(h, &model, &vocab, &cfg).unwrap(),
                    h.tokens.clone(),
                )
            })
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (h, (score, tokens)) in out.hypotheses.iter().zip(&expected) {
            assert_eq!(&h.tokens, tokens);
            assert_eq!(h.task_score, *score);
        }
    }

    #[test]
    fn tuning_table_matches_standalone_runs() {
        let (model, vocab, groups) = setup();
        let cfg = RescoreConfig {
            grid: "0:3:0.5".parse().unwrap(),
            ..Default::default()
        };
        let tuned = tune_weight(&groups, &model, &vocab, &cfg, TuneObjective::MinWer).unwrap();
        assert_eq!(tuned.table.len(), 7);
        for &(w, v) in &tuned.table {
            let c = RescoreConfig { weight: w, ..cfg };
            let out = rescore_groups(&groups, &model, &vocab, &c).unwrap();
            assert_eq!(evaluate_top1(&out, Metric::Wer).unwrap(), v);
        }
        assert!(tuned.objective <= tuned.table[0].1);
        let first_best = tuned
            .table
            .iter()
            .find(|(_, v)| *v == tuned.objective)
            .unwrap();
        assert_eq!(first_best.0, tuned.weight);
    }

    #[test]
    fn correlation_excludes_constant_groups() {
        let (model, vocab, mut groups) = setup();
        groups[1].hypotheses = vec![
            Hypothesis {
                tokens: s("d e x"),
                task_score: 0.0,
            },
            Hypothesis {
                tokens: s("d x f"),
                task_score: 0.0,
            },
        ];
        let report = correlation_report(&groups, &model, &vocab, Metric::Wer).unwrap();
        assert_eq!(report.excluded, 1);
        assert!(report.per_group[0].is_some());
        assert!(report.stats.is_some());
    }
}
