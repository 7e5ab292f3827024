use rayon::prelude::*;

use super::forward::ForwardTrace;
use super::params::{axpy, Dims, Matrix, ModelParams, ParamKind};
use crate::error::{Error, Result};

/// Accumulated derivatives, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dims: Dims,
    pub emb: Matrix,
    pub u: Matrix,
    pub v_rec: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            emb: Matrix::zeros(dims.vocab, dims.embed),
            u: Matrix::zeros(dims.hidden, dims.embed),
            v_rec: Matrix::zeros(dims.hidden, dims.hidden),
            w: Matrix::zeros(dims.vocab, dims.hidden),
            b: vec![0.0; dims.vocab],
        }
    }

    pub fn array(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::Emb => &self.emb.data,
            ParamKind::U => &self.u.data,
            ParamKind::VRec => &self.v_rec.data,
            ParamKind::W => &self.w.data,
            ParamKind::B => &self.b,
        }
    }

    pub fn array_mut(&mut self, kind: ParamKind) -> &mut [f64] {
        match kind {
            ParamKind::Emb => &mut self.emb.data,
            ParamKind::U => &mut self.u.data,
            ParamKind::VRec => &mut self.v_rec.data,
            ParamKind::W => &mut self.w.data,
            ParamKind::B => &mut self.b,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for kind in ParamKind::ALL {
            for (a, b) in self.array_mut(kind).iter_mut().zip(other.array(kind)) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for kind in ParamKind::ALL {
            for a in self.array_mut(kind) {
                *a *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        ParamKind::ALL
            .iter()
            .flat_map(|&k| self.array(k).iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        ParamKind::ALL
            .iter()
            .all(|&k| self.array(k).iter().all(|x| x.is_finite()))
    }
}

/// Accumulates `weight * d(-trace.total)/d(theta)` into `grads` by full
/// backpropagation through time.
///
/// The pass runs into a private buffer that is added to `grads` once at the
/// end, so `weight = 2` on fresh gradients equals two `weight = 1` calls
/// bit for bit.
pub fn backward_sequence(
    model: &ModelParams,
    trace: &ForwardTrace,
    weight: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let d = model.dims;
    if grads.dims != d {
        return Err(Error::ShapeMismatch(format!(
            "gradients {:?} vs model {:?}",
            grads.dims, d
        )));
    }
    if trace.hidden_size() != d.hidden || trace.vocab_size() != d.vocab {
        return Err(Error::ShapeMismatch(format!(
            "trace (V={}, H={}) does not match model {:?}",
            trace.vocab_size(),
            trace.hidden_size(),
            d
        )));
    }
    if weight == 0.0 {
        return Ok(());
    }

    let mut local = Gradients::zeros(d);
    let mut dz = vec![0.0; d.vocab];
    let mut dh = vec![0.0; d.hidden];
    let mut da = vec![0.0; d.hidden];
    // gradient reaching h_t through the recurrence from step t+1
    let mut carry = vec![0.0; d.hidden];

    for t in (0..trace.steps()).rev() {
        let h = trace.hidden(t);
        let target = trace.targets[t] as usize;
        for (v, (g, &p)) in dz.iter_mut().zip(trace.distribution(t)).enumerate() {
            let delta = if v == target { p - 1.0 } else { p };
            *g = weight * delta;
        }

        local.w.add_outer(&dz, h);
        axpy(1.0, &dz, &mut local.b);

        dh.copy_from_slice(&carry);
        model.w.matvec_t_add(&dz, &mut dh);

        for ((a, &g), &hv) in da.iter_mut().zip(&dh).zip(h) {
            *a = g * hv * (1.0 - hv);
        }

        let input = trace.inputs[t] as usize;
        local.u.add_outer(&da, model.emb.row(input));
        model.u.matvec_t_add(&da, local.emb.row_mut(input));

        carry.iter_mut().for_each(|c| *c = 0.0);
        if t > 0 {
            local.v_rec.add_outer(&da, trace.hidden(t - 1));
            model.v_rec.matvec_t_add(&da, &mut carry);
        }
    }

    grads.add_assign(&local);
    Ok(())
}

/// Traces per parallel work unit. Fixed so the reduction order, and hence the
/// bits of the result, never depend on the thread count.
const CHUNK: usize = 8;

/// Sums `weight * d(-total)/d(theta)` over `(trace, weight)` items.
///
/// Chunks are processed in parallel and reduced in chunk order.
pub fn accumulate(model: &ModelParams, items: &[(&ForwardTrace, f64)]) -> Result<Gradients> {
    let partials: Vec<Gradients> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros(model.dims);
            for &(trace, weight) in chunk {
                backward_sequence(model, trace, weight, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros(model.dims);
    for g in &partials {
        total.add_assign(g);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::forward_sequence;
    use crate::nn::params::init_params;

    fn setup() -> (ModelParams, ForwardTrace) {
        let d = Dims::new(12, 4, 4).unwrap();
        let m = init_params(d, 3, false);
        let tr = forward_sequence(&m, &[4, 9, 3, 11, 5]).unwrap();
        (m, tr)
    }

    #[test]
    fn zero_weight_is_noop() {
        let (m, tr) = setup();
        let mut g = Gradients::zeros(m.dims);
        g.b[0] = 1.5;
        let before = g.clone();
        backward_sequence(&m, &tr, 0.0, &mut g).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn weight_two_equals_two_ones_bitwise() {
        let (m, tr) = setup();
        let mut twice = Gradients::zeros(m.dims);
        backward_sequence(&m, &tr, 1.0, &mut twice).unwrap();
        backward_sequence(&m, &tr, 1.0, &mut twice).unwrap();
        let mut double = Gradients::zeros(m.dims);
        backward_sequence(&m, &tr, 2.0, &mut double).unwrap();
        for k in ParamKind::ALL {
            for (a, b) in twice.array(k).iter().zip(double.array(k)) {
                assert_eq!(a.to_bits(), b.to_bits(), "{}", k.name());
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let (m, tr) = setup();
        let mut g = Gradients::zeros(Dims::new(12, 4, 5).unwrap());
        assert!(matches!(
            backward_sequence(&m, &tr, 1.0, &mut g),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bias_gradient_is_prob_minus_onehot_sum() {
        let (m, tr) = setup();
        let mut g = Gradients::zeros(m.dims);
        backward_sequence(&m, &tr, 1.0, &mut g).unwrap();
        for v in 0..m.dims.vocab {
            let expect: f64 = (0..tr.steps())
                .map(|t| {
                    tr.distribution(t)[v]
                        - if tr.targets[t] as usize == v {
                            1.0
                        } else {
                            0.0
                        }
                })
                .sum();
            assert!((g.b[v] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulate_matches_sequential() {
        let (m, _) = setup();
        let sents: Vec<Vec<u32>> = (0..20).map(|i| vec![3 + (i % 9), 4, 5 + (i % 3)]).collect();
        let traces: Vec<_> = sents
            .iter()
            .map(|s| forward_sequence(&m, s).unwrap())
            .collect();
        let items: Vec<_> = traces
            .iter()
            .enumerate()
            .map(|(i, t)| (t, 0.1 * i as f64))
            .collect();
        let par = accumulate(&m, &items).unwrap();
        let again = accumulate(&m, &items).unwrap();
        assert_eq!(par, again);
        let mut seq = Gradients::zeros(m.dims);
        for (t, w) in &items {
            backward_sequence(&m, t, *w, &mut seq).unwrap();
        }
        for k in ParamKind::ALL {
            for (a, b) in par.array(k).iter().zip(seq.array(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
