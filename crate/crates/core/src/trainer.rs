//! Mini-batch SGD for every objective: MLE pretraining, softmax-only
//! adaptation and discriminative fine-tuning on n-best groups.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, Batch, EncodedGroup, LossKind, LossReport, Objective};
use crate::nbest::Metric;
use crate::nn::{self, Gradients, ModelParams, ParamKind};
use crate::rng;

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_MLE_LR: f64 = 0.1;
pub const DEFAULT_DISCRIMINATIVE_LR: f64 = 0.01;

/// Arrays held fixed by softmax adaptation.
pub const ADAPT_FREEZE: [ParamKind; 3] = [ParamKind::Emb, ParamKind::U, ParamKind::VRec];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Metric the ranking groups were sorted by.
    pub sort_metric: Metric,
    pub freeze: Vec<ParamKind>,
    /// Global-norm clipping threshold.
    pub grad_clip: Option<f64>,
    pub length_norm: bool,
    /// Allows discriminative training from a model that was never trained.
    pub allow_cold_start: bool,
}

impl TrainingConfig {
    pub fn mle(epochs: usize, seed: u64) -> Self {
        Self {
            lr: DEFAULT_MLE_LR,
            batch_size: DEFAULT_BATCH,
            epochs,
            tau: losses::DEFAULT_TAU,
            seed,
            loss_kind: LossKind::Mle,
            sort_metric: Metric::Wer,
            freeze: Vec::new(),
            grad_clip: None,
            length_norm: false,
            allow_cold_start: false,
        }
    }

    pub fn adapt(epochs: usize, seed: u64) -> Self {
        Self {
            freeze: ADAPT_FREEZE.to_vec(),
            ..Self::mle(epochs, seed)
        }
    }

    pub fn discriminative(loss_kind: LossKind, epochs: usize, seed: u64) -> Self {
        Self {
            lr: DEFAULT_DISCRIMINATIVE_LR,
            loss_kind,
            ..Self::mle(epochs, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be a nonnegative real, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.loss_kind.is_hinge() && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!(
                    "gradient clip must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    fn objective(&self) -> Result<Objective> {
        Objective::new(self.loss_kind, self.tau)
    }

    fn trains(&self, kind: ParamKind) -> bool {
        !self.freeze.contains(&kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_ppl: Option<f64>,
    pub dev_loss: Option<f64>,
    /// Share of dev reference/hypothesis pairs the model scores in favour of
    /// the reference.
    pub dev_positive_margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// One point per SGD step; steps count from 1.
    pub points: Vec<CurvePoint>,
    pub epochs: Vec<EpochSummary>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_loss(&self) -> Option<f64> {
        self.points.iter().map(|p| p.loss).min_by(f64::total_cmp)
    }
}

/// Rescales `grads` so the global norm over the trained arrays is at most `clip`.
fn clip_gradients(grads: &mut Gradients, clip: f64, config: &TrainingConfig) {
    let sq: f64 = ParamKind::ALL
        .iter()
        .filter(|&&k| config.trains(k))
        .flat_map(|&k| grads.array(k).iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > clip {
        grads.scale(clip / norm);
    }
}

fn sgd_update(model: &mut ModelParams, grads: &Gradients, config: &TrainingConfig) {
    for kind in ParamKind::ALL {
        if !config.trains(kind) {
            continue;
        }
        for (p, g) in model.array_mut(kind).iter_mut().zip(grads.array(kind)) {
            *p -= config.lr * g;
        }
    }
}

/// Scores `batch`, evaluates `objective`, and applies one SGD step.
fn sgd_step(
    model: &mut ModelParams,
    batch: &Batch,
    objective: Objective,
    config: &TrainingConfig,
    step: usize,
) -> Result<LossReport> {
    let traces = nn::forward_many(model, &batch.sentences)?;
    let scores: Vec<f64> = traces.iter().map(|t| t.total).collect();
    let report = objective.evaluate(batch, &scores)?;
    if !report.value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            value: report.value,
        });
    }
    let mut grads = losses::gradient_from_coeffs(model, &traces, &report.coeffs)?;
    if let Some(clip) = config.grad_clip {
        clip_gradients(&mut grads, clip, config);
    }
    sgd_update(model, &grads, config);
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            value: f64::NAN,
        });
    }
    Ok(report)
}

fn mean(xs: &[CurvePoint]) -> f64 {
    xs.iter().map(|p| p.loss).sum::<f64>() / xs.len().max(1) as f64
}

fn train_sentences(
    model: &mut ModelParams,
    corpus: &[Vec<u32>],
    dev: &[Vec<u32>],
    config: &TrainingConfig,
) -> Result<LossCurve> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = rng::seeded(config.seed, rng::stream::SHUFFLE);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = LossCurve::default();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let start = curve.points.len();
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch = Batch::from_sentences(chunk.iter().map(|&i| corpus[i].clone()).collect());
            let report = sgd_step(model, &batch, Objective::Mle, config, step)?;
            curve.points.push(CurvePoint {
                step,
                loss: report.value,
            });
        }
        let dev_ppl = if dev.is_empty() {
            None
        } else {
            Some(losses::corpus_perplexity(model, dev)?)
        };
        let summary = EpochSummary {
            epoch,
            mean_loss: mean(&curve.points[start..]),
            dev_ppl,
            dev_loss: None,
            dev_positive_margin: None,
        };
        log::info!(
            "epoch {epoch}: mean loss {:.6}, dev ppl {}",
            summary.mean_loss,
            dev_ppl.map_or("-".to_string(), |p| format!("{p:.4}"))
        );
        curve.epochs.push(summary);
    }
    model.warm = true;
    Ok(curve)
}

/// Maximum-likelihood training on a sentence corpus; `dev` may be empty.
pub fn train_mle(
    model: &mut ModelParams,
    corpus: &[Vec<u32>],
    dev: &[Vec<u32>],
    config: &TrainingConfig,
) -> Result<LossCurve> {
    if config.loss_kind != LossKind::Mle {
        return Err(Error::invalid(format!(
            "train_mle needs the mle loss, got {}",
            config.loss_kind.name()
        )));
    }
    train_sentences(model, corpus, dev, config)
}

/// MLE on in-domain text updating only the softmax projection and bias.
pub fn adapt_softmax(
    model: &mut ModelParams,
    corpus: &[Vec<u32>],
    dev: &[Vec<u32>],
    config: &TrainingConfig,
) -> Result<LossCurve> {
    let mut freeze = config.freeze.clone();
    freeze.sort();
    freeze.dedup();
    if freeze != ADAPT_FREEZE {
        return Err(Error::invalid(
            "softmax adaptation must freeze exactly Emb, U and V_rec",
        ));
    }
    train_mle(model, corpus, dev, config)
}

/// Discriminative fine-tuning on n-best groups with the naive, margin or
/// ranking loss. Ranking groups must carry best-first quality values.
pub fn train_discriminative(
    model: &mut ModelParams,
    groups: &[EncodedGroup],
    dev_groups: &[EncodedGroup],
    config: &TrainingConfig,
) -> Result<LossCurve> {
    config.validate()?;
    if config.loss_kind == LossKind::Mle {
        return Err(Error::invalid(
            "discriminative training needs naive, margin or rank loss",
        ));
    }
    if !model.warm && !config.allow_cold_start {
        return Err(Error::ColdStart);
    }
    if groups.is_empty() {
        return Err(Error::Empty("training groups"));
    }
    if config.loss_kind == LossKind::Rank {
        for g in groups.iter().chain(dev_groups) {
            losses::check_ranked_group(g)?;
        }
    }
    let objective = config.objective()?;
    let mut rng = rng::seeded(config.seed, rng::stream::SHUFFLE);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut curve = LossCurve::default();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let start = curve.points.len();
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch = Batch::from_groups(chunk.iter().map(|&i| &groups[i]));
            let report = sgd_step(model, &batch, objective, config, step)?;
            curve.points.push(CurvePoint {
                step,
                loss: report.value,
            });
        }
        let (dev_loss, dev_positive_margin) = if dev_groups.is_empty() {
            (None, None)
        } else {
            let batch = Batch::from_groups(dev_groups);
            let scores = nn::lm_scores(model, &batch.sentences)?;
            let loss = objective.evaluate(&batch, &scores)?.value;
            let samples = losses::margin_samples(model, dev_groups)?;
            let positive = samples.iter().filter(|s| s.margin > 0.0).count() as f64
                / samples.len().max(1) as f64;
            (Some(loss), Some(positive))
        };
        let summary = EpochSummary {
            epoch,
            mean_loss: mean(&curve.points[start..]),
            dev_ppl: None,
            dev_loss,
            dev_positive_margin,
        };
        log::info!(
            "epoch {epoch}: mean {} loss {:.6}, dev loss {}, dev positive margins {}",
            config.loss_kind.name(),
            summary.mean_loss,
            dev_loss.map_or("-".to_string(), |x| format!("{x:.6}")),
            dev_positive_margin.map_or("-".to_string(), |x| format!("{x:.4}"))
        );
        curve.epochs.push(summary);
    }
    model.warm = true;
    Ok(curve)
}
