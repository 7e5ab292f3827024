use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Model dimensions: vocabulary size, embedding width, hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Dims {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Result<Self> {
        if vocab < 4 || embed == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "model dims need V>=4, E>=1, H>=1; got V={vocab}, E={embed}, H={hidden}"
            )));
        }
        Ok(Self {
            vocab,
            embed,
            hidden,
        })
    }

    pub fn shape(&self, kind: ParamKind) -> (usize, usize) {
        match kind {
            ParamKind::Emb => (self.vocab, self.embed),
            ParamKind::U => (self.hidden, self.embed),
            ParamKind::VRec => (self.hidden, self.hidden),
            ParamKind::W => (self.vocab, self.hidden),
            ParamKind::B => (self.vocab, 1),
        }
    }

    pub fn num_params(&self) -> usize {
        ParamKind::ALL
            .iter()
            .map(|&k| {
                let (r, c) = self.shape(k);
                r * c
            })
            .sum()
    }
}

/// The five parameter arrays, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamKind {
    Emb,
    U,
    #[serde(rename = "V_rec")]
    VRec,
    W,
    #[serde(rename = "b")]
    B,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::Emb,
        ParamKind::U,
        ParamKind::VRec,
        ParamKind::W,
        ParamKind::B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Emb => "Emb",
            ParamKind::U => "U",
            ParamKind::VRec => "V_rec",
            ParamKind::W => "W",
            ParamKind::B => "b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ParamKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = self * x
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// out += self * x
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// out += self^T * y
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr != 0.0 {
                axpy(yr, row, out);
            }
        }
    }

    /// self += u v^T
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        for (&ur, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ur != 0.0 {
                axpy(ur, v, row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// RNN language model parameters: embeddings, input and recurrent weights of
/// the sigmoid cell, and the softmax projection with its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub emb: Matrix,
    pub u: Matrix,
    pub v_rec: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
    /// Set once the parameters have been trained or loaded from a checkpoint.
    /// Not serialized.
    pub warm: bool,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            emb: Matrix::zeros(dims.vocab, dims.embed),
            u: Matrix::zeros(dims.hidden, dims.embed),
            v_rec: Matrix::zeros(dims.hidden, dims.hidden),
            w: Matrix::zeros(dims.vocab, dims.hidden),
            b: vec![0.0; dims.vocab],
            warm: false,
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

    pub fn is_finite(&self) -> bool {
        ParamKind::ALL
            .iter()
            .all(|&k| self.array(k).iter().all(|x| x.is_finite()))
    }

    /// Bitwise equality of all five arrays (ignores the `warm` flag).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && ParamKind::ALL.iter().all(|&k| {
                self.array(k)
                    .iter()
                    .zip(other.array(k))
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }
}

/// Draws Emb, U and V_rec (and W unless `zero_output`) from uniform(-0.1, 0.1)
/// in that order from the `INIT` stream of `seed`. The bias starts at zero.
pub fn init_params(dims: Dims, seed: u64, zero_output: bool) -> ModelParams {
    let mut rng = rng::seeded(seed, rng::stream::INIT);
    let mut params = ModelParams::zeros(dims);
    let kinds: &[ParamKind] = if zero_output {
        &[ParamKind::Emb, ParamKind::U, ParamKind::VRec]
    } else {
        &[ParamKind::Emb, ParamKind::U, ParamKind::VRec, ParamKind::W]
    };
    for &kind in kinds {
        for x in params.array_mut(kind) {
            *x = rng.random_range(-0.1..0.1);
        }
    }
    params
}
