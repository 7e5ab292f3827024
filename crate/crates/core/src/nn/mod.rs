//! Single-layer sigmoid recurrent language model.
//!
//! `h_t = sigmoid(U x_t + V_rec h_{t-1})`, `p_t = softmax(W h_t + b)`, with
//! `x_t` the embedding row of the input token and `h_{-1} = 0`.

mod backward;
mod forward;
mod params;

pub use backward::{accumulate, backward_sequence, Gradients};
pub use forward::{forward_many, forward_sequence, lm_score, lm_scores, ForwardTrace};
pub use params::{init_params, Dims, Matrix, ModelParams, ParamKind};
