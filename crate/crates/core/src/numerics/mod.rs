//! Dense tensors with reverse-mode gradients for the fixed set of operations
//! the detector and the sequence augmenter are built from.

pub mod gradcheck;
pub mod gru;
pub mod gumbel;
pub mod optim;
pub mod params;
pub mod similarity;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_fn};
pub use gru::{gru_cell, init_gru, GruVars};
pub use gumbel::{gumbel_softmax, sample_gumbel};
pub use optim::Adam;
pub use params::ParamStore;
pub use similarity::cosine_similarity;
pub use tape::{sigmoid, Gradients, Selection, Tape, Var};
pub use tensor::Tensor;
