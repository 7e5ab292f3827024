//! CSV emitters for training curves, margin histograms, correlation boxplots
//! and model comparison tables. Output depends only on the inputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{margin_samples, EncodedGroup, MarginSample};
use crate::metrics::{self, Bin};
use crate::nbest::{Metric, NBestGroup};
use crate::nn::ModelParams;
use crate::rescore::{correlation_report, CorrelationReport};
use crate::trainer::LossCurve;
use crate::vocab::Vocabulary;

/// A model with the vocabulary it was trained with.
#[derive(Debug, Clone, Copy)]
pub struct NamedModel<'a> {
    pub name: &'a str,
    pub model: &'a ModelParams,
    pub vocab: &'a Vocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_width: 2.0,
            lo: -40.0,
            hi: 40.0,
        }
    }
}

/// Quotes a CSV field if it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(out, "{row}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `step,loss`, one row per SGD step.
pub fn emit_loss_curve(curve: &LossCurve, path: impl AsRef<Path>) -> Result<()> {
    write_lines(
        path.as_ref(),
        "step,loss",
        curve
            .points
            .iter()
            .map(|p| format!("{},{}", p.step, p.loss)),
    )
}

/// Per-epoch summary of a curve: `epoch,mean_loss,dev_ppl,dev_loss,dev_positive_margin`.
pub fn emit_epoch_summary(curve: &LossCurve, path: impl AsRef<Path>) -> Result<()> {
    write_lines(
        path.as_ref(),
        "epoch,mean_loss,dev_ppl,dev_loss,dev_positive_margin",
        curve.epochs.iter().map(|e| {
            format!(
                "{},{},{},{},{}",
                e.epoch,
                e.mean_loss,
                opt(e.dev_ppl),
                opt(e.dev_loss),
                opt(e.dev_positive_margin)
            )
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginSummary {
    pub pairs: usize,
    pub positive_a: usize,
    pub positive_b: usize,
    pub bins: Vec<(Bin, usize)>,
}

impl MarginSummary {
    pub fn fraction_a(&self) -> f64 {
        self.positive_a as f64 / self.pairs.max(1) as f64
    }

    pub fn fraction_b(&self) -> f64 {
        self.positive_b as f64 / self.pairs.max(1) as f64
    }
}

pub fn positive_count(samples: &[MarginSample]) -> usize {
    samples.iter().filter(|s| s.margin > 0.0).count()
}

/// Sibling file holding the positive-margin summary of a histogram CSV:
/// `margins.csv` gets `margins_summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_summary.csv"))
}

/// Histograms the reference-minus-hypothesis margins of two models over the
/// same groups: `bin_left,bin_right,count_a,count_b`, plus a summary file with
/// the share of positive margins per model.
pub fn emit_margin_histogram(
    a: NamedModel<'_>,
    b: NamedModel<'_>,
    groups: &[NBestGroup],
    cfg: &HistogramConfig,
    path: impl AsRef<Path>,
) -> Result<MarginSummary> {
    if a.vocab != b.vocab {
        return Err(Error::invalid(format!(
            "models `{}` and `{}` use different vocabularies",
            a.name, b.name
        )));
    }
    let encoded: Vec<EncodedGroup> = groups.iter().map(|g| g.encode(a.vocab)).collect();
    let sa = margin_samples(a.model, &encoded)?;
    let sb = margin_samples(b.model, &encoded)?;
    let ma: Vec<f64> = sa.iter().map(|s| s.margin).collect();
    let mb: Vec<f64> = sb.iter().map(|s| s.margin).collect();
    let ha = metrics::histogram(&ma, cfg.bin_width, cfg.lo, cfg.hi)?;
    let hb = metrics::histogram(&mb, cfg.bin_width, cfg.lo, cfg.hi)?;
    let summary = MarginSummary {
        pairs: sa.len(),
        positive_a: positive_count(&sa),
        positive_b: positive_count(&sb),
        bins: ha.iter().zip(&hb).map(|(x, y)| (*x, y.count)).collect(),
    };
    let path = path.as_ref();
    write_lines(
        path,
        "bin_left,bin_right,count_a,count_b",
        summary
            .bins
            .iter()
            .map(|(bin, count_b)| format!("{},{},{},{}", bin.left, bin.right, bin.count, count_b)),
    )?;
    write_lines(
        &summary_path(path),
        "model,pairs,positive,positive_fraction",
        [
            (a.name, summary.positive_a, summary.fraction_a()),
            (b.name, summary.positive_b, summary.fraction_b()),
        ]
        .into_iter()
        .map(|(name, pos, frac)| format!("{},{},{},{}", csv_field(name), summary.pairs, pos, frac)),
    )?;
    Ok(summary)
}

/// One row per model: `model,mean,median,q05,q25,q75,q95,excluded_count`.
pub fn emit_correlation_boxplot(
    models: &[NamedModel<'_>],
    groups: &[NBestGroup],
    metric: Metric,
    path: impl AsRef<Path>,
) -> Result<Vec<CorrelationReport>> {
    let reports: Vec<CorrelationReport> = models
        .iter()
        .map(|m| correlation_report(groups, m.model, m.vocab, metric))
        .collect::<Result<_>>()?;
    write_lines(
        path.as_ref(),
        "model,mean,median,q05,q25,q75,q95,excluded_count",
        models.iter().zip(&reports).map(|(m, r)| {
            let name = csv_field(m.name);
            match &r.stats {
                Some(s) => format!(
                    "{name},{},{},{},{},{},{},{}",
                    s.mean, s.median, s.q05, s.q25, s.q75, s.q95, r.excluded
                ),
                None => format!("{name},NA,NA,NA,NA,NA,NA,{}", r.excluded),
            }
        }),
    )?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub dev_objective: f64,
    pub test_objective: f64,
    /// `None` for rows without a language model, such as the no-rescore baseline.
    pub dev_ppl: Option<f64>,
    pub test_ppl: Option<f64>,
}

/// `model,dev_objective,test_objective,dev_ppl,test_ppl`; missing PPLs are `NA`.
pub fn emit_comparison_table(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    write_lines(
        path.as_ref(),
        "model,dev_objective,test_objective,dev_ppl,test_ppl",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                csv_field(&r.model_name),
                r.dev_objective,
                r.test_objective,
                opt(r.dev_ppl),
                opt(r.test_ppl)
            )
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::Hypothesis;
    use crate::nn::{init_params, Dims};
    use crate::trainer::CurvePoint;
    use crate::vocab::build_vocab;

    #[test]
    fn loss_curve_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        emit_loss_curve(&LossCurve::default(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,loss\n");
        let curve = LossCurve {
            points: (1..=5)
                .map(|i| CurvePoint {
                    step: i,
                    loss: (i as f64).sqrt() - 1.7,
                })
                .collect(),
            epochs: Vec::new(),
        };
        emit_loss_curve(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        for (row, p) in rows.iter().zip(&curve.points) {
            let (s, l) = row.split_once(',').unwrap();
            assert_eq!(s.parse::<usize>().unwrap(), p.step);
            assert_eq!(l.parse::<f64>().unwrap(), p.loss);
        }
    }

    #[test]
    fn identical_models_give_identical_columns() {
        let dir = tempfile::tempdir().unwrap();
        let tok = |t: &str| t.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let vocab = build_vocab(&[tok("a b c d")], 10).unwrap();
        let model = init_params(Dims::new(vocab.len(), 2, 3).unwrap(), 5, false);
        let groups = vec![NBestGroup {
            id: "g".into(),
            reference: tok("a b c"),
            hypotheses: vec![
                Hypothesis {
                    tokens: tok("a b"),
                    task_score: 0.0,
                },
                Hypothesis {
                    tokens: tok("d b c"),
                    task_score: 0.0,
                },
            ],
        }];
        let m = NamedModel {
            name: "m",
            model: &model,
            vocab: &vocab,
        };
        let path = dir.path().join("margins.csv");
        let summary =
            emit_margin_histogram(m, m, &groups, &HistogramConfig::default(), &path).unwrap();
        assert_eq!(summary.pairs, 2);
        assert_eq!(summary.positive_a, summary.positive_b);
        assert!(summary.bins.iter().all(|(b, c)| b.count == *c));
        assert_eq!(summary.bins.iter().map(|(b, _)| b.count).sum::<usize>(), 2);
        assert!(dir.path().join("margins_summary.csv").exists());
    }

    #[test]
    fn comparison_table_marks_missing_ppl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![ComparisonRow {
            model_name: "baseline, no rescore".into(),
            dev_objective: 0.25,
            test_objective: 0.5,
            dev_ppl: None,
            test_ppl: None,
        }];
        emit_comparison_table(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "\"baseline, no rescore\",0.25,0.5,NA,NA"
        );
    }
}
