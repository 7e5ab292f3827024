use rayon::prelude::*;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::vocab::{BOS, EOS};

/// Everything a forward pass keeps for backpropagation through time.
///
/// A sentence of `L` words is fed as `[BOS, w_1..w_L]` and predicts
/// `[w_1..w_L, EOS]`, so every trace has `L + 1` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    hidden_size: usize,
    vocab_size: usize,
    /// steps x H
    hidden: Vec<f64>,
    /// steps x V, full softmax distributions
    probs: Vec<f64>,
    pub logprobs: Vec<f64>,
    pub total: f64,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.targets.len()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.hidden[t * self.hidden_size..(t + 1) * self.hidden_size]
    }

    pub fn distribution(&self, t: usize) -> &[f64] {
        &self.probs[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Writes softmax probabilities of `logits` into `probs` and returns the
/// log-normalizer `max + ln(sum exp(z - max))`.
pub(crate) fn softmax_into(logits: &[f64], probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    let inv = 1.0 / sum;
    for p in probs.iter_mut() {
        *p *= inv;
    }
    max + sum.ln()
}

fn check_ids(model: &ModelParams, sentence: &[u32]) -> Result<()> {
    if sentence.is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let v = model.dims.vocab;
    if let Some(&id) = sentence.iter().find(|&&id| id as usize >= v) {
        return Err(Error::TokenOutOfRange { id, vocab: v });
    }
    Ok(())
}

pub fn forward_sequence(model: &ModelParams, sentence: &[u32]) -> Result<ForwardTrace> {
    check_ids(model, sentence)?;
    let d = model.dims;
    let steps = sentence.len() + 1;

    let mut inputs = Vec::with_capacity(steps);
    inputs.push(BOS);
    inputs.extend_from_slice(sentence);
    let mut targets = sentence.to_vec();
    targets.push(EOS);

    let mut hidden = vec![0.0; steps * d.hidden];
    let mut probs = vec![0.0; steps * d.vocab];
    let mut logprobs = Vec::with_capacity(steps);
    let mut logits = vec![0.0; d.vocab];
    let mut pre = vec![0.0; d.hidden];

    for t in 0..steps {
        model.u.matvec(model.emb.row(inputs[t] as usize), &mut pre);
        if t > 0 {
            let prev = &hidden[(t - 1) * d.hidden..t * d.hidden];
            model.v_rec.matvec_add(prev, &mut pre);
        }
        let h = &mut hidden[t * d.hidden..(t + 1) * d.hidden];
        for (hi, &a) in h.iter_mut().zip(&pre) {
            *hi = sigmoid(a);
        }

        model.w.matvec(h, &mut logits);
        for (z, &bias) in logits.iter_mut().zip(&model.b) {
            *z += bias;
        }
        let p = &mut probs[t * d.vocab..(t + 1) * d.vocab];
        let log_norm = softmax_into(&logits, p);
        logprobs.push(logits[targets[t] as usize] - log_norm);
    }

    let total = logprobs.iter().sum();
    Ok(ForwardTrace {
        inputs,
        targets,
        hidden_size: d.hidden,
        vocab_size: d.vocab,
        hidden,
        probs,
        logprobs,
        total,
    })
}

/// Total log-probability of the sentence including the end-of-sentence step.
pub fn lm_score(model: &ModelParams, sentence: &[u32]) -> Result<f64> {
    Ok(forward_sequence(model, sentence)?.total)
}

/// Forward traces for many sentences; output order matches input order.
pub fn forward_many(model: &ModelParams, sentences: &[Vec<u32>]) -> Result<Vec<ForwardTrace>> {
    sentences
        .par_iter()
        .map(|s| forward_sequence(model, s))
        .collect()
}

pub fn lm_scores(model: &ModelParams, sentences: &[Vec<u32>]) -> Result<Vec<f64>> {
    sentences.par_iter().map(|s| lm_score(model, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_params, Dims, Matrix};

    #[test]
    fn uniform_model_score() {
        let d = Dims::new(10, 3, 4).unwrap();
        let m = init_params(d, 5, true);
        let s = lm_score(&m, &[3, 4, 5]).unwrap();
        assert!((s - 4.0 * (0.1f64).ln()).abs() < 1e-12);
        assert!((s - (-9.2103)).abs() < 1e-4);
        let trace = forward_sequence(&m, &[3, 4, 5]).unwrap();
        for t in 0..trace.steps() {
            for &p in trace.distribution(t) {
                assert_eq!(p, 0.1);
            }
        }
    }

    #[test]
    fn trace_shapes_and_ranges() {
        let d = Dims::new(12, 4, 6).unwrap();
        let m = init_params(d, 9, false);
        let sent = [3, 7, 7, 11, 2];
        let tr = forward_sequence(&m, &sent).unwrap();
        assert_eq!(tr.steps(), sent.len() + 1);
        assert_eq!(tr.inputs[0], BOS);
        assert_eq!(*tr.targets.last().unwrap(), EOS);
        let sum: f64 = tr.logprobs.iter().sum();
        assert_eq!(sum, tr.total);
        for t in 0..tr.steps() {
            assert!(tr.hidden(t).iter().all(|&h| h > 0.0 && h < 1.0));
            let z: f64 = tr.distribution(t).iter().sum();
            assert!((z - 1.0).abs() < 1e-9);
            let lp = tr.distribution(t)[tr.targets[t] as usize].ln();
            assert!((lp - tr.logprobs[t]).abs() < 1e-9);
        }
        assert!(tr.total <= 0.0);
    }

    #[test]
    fn rejects_bad_ids() {
        let d = Dims::new(5, 2, 2).unwrap();
        let m = init_params(d, 1, false);
        assert!(matches!(
            forward_sequence(&m, &[1, 5]),
            Err(Error::TokenOutOfRange { id: 5, vocab: 5 })
        ));
        assert!(forward_sequence(&m, &[]).is_err());
    }

    /// Hand-set V=4, E=2, H=2 model recomputed with scalar arithmetic.
    #[test]
    fn scalar_oracle() {
        let d = Dims::new(4, 2, 2).unwrap();
        let mut m = crate::nn::params::ModelParams::zeros(d);
        m.emb = Matrix {
            rows: 4,
            cols: 2,
            data: vec![0.5, -0.25, 1.0, 0.0, -0.5, 0.75, 0.2, 0.3],
        };
        m.u = Matrix {
            rows: 2,
            cols: 2,
            data: vec![0.3, -0.6, 0.9, 0.1],
        };
        m.v_rec = Matrix {
            rows: 2,
            cols: 2,
            data: vec![-0.4, 0.2, 0.5, 0.7],
        };
        m.w = Matrix {
            rows: 4,
            cols: 2,
            data: vec![1.0, -1.0, 0.5, 0.5, -0.3, 0.8, 0.0, 0.2],
        };
        m.b = vec![0.1, -0.2, 0.0, 0.3];

        let sentence = [3u32, 2];
        let ins = [0usize, 3, 2];
        let outs = [3usize, 2, 1];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h0, mut h1) = (0.0f64, 0.0f64);
        let mut total = 0.0;
        for t in 0..3 {
            let x0 = m.emb.data[ins[t] * 2];
            let x1 = m.emb.data[ins[t] * 2 + 1];
            let a0 = 0.3 * x0 - 0.6 * x1 + (-0.4 * h0 + 0.2 * h1);
            let a1 = 0.9 * x0 + 0.1 * x1 + (0.5 * h0 + 0.7 * h1);
            h0 = sig(a0);
            h1 = sig(a1);
            let z = [
                1.0 * h0 - 1.0 * h1 + 0.1,
                0.5 * h0 + 0.5 * h1 - 0.2,
                -0.3 * h0 + 0.8 * h1,
                0.2 * h1 + 0.3,
            ];
            let norm: f64 = z.iter().map(|v| v.exp()).sum();
            total += z[outs[t]] - norm.ln();
        }
        let got = lm_score(&m, &sentence).unwrap();
        assert!((got - total).abs() < 1e-12, "{got} vs {total}");
    }

    #[test]
    fn forward_many_preserves_order() {
        let d = Dims::new(8, 3, 3).unwrap();
        let m = init_params(d, 2, false);
        let sents = vec![vec![3, 4], vec![5], vec![6, 7, 3]];
        let scores = lm_scores(&m, &sents).unwrap();
        for (s, sc) in sents.iter().zip(scores) {
            assert_eq!(lm_score(&m, s).unwrap().to_bits(), sc.to_bits());
        }
    }
}
