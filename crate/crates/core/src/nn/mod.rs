//! Minimal differentiable core: a parameter store, an eager computation tape
//! with reverse-mode gradients, the layer helpers the parser needs (affine,
//! GRU cell, embedding rows, softmax, negative log likelihood) and AdaDelta.
//!
//! Everything is `f64` and scalar code: the models here are tiny (tens of
//! thousands of weights), so clarity and bit-reproducibility win over SIMD.

mod gradcheck;
mod layers;
mod optim;
mod store;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{
    concat_features, dense, gru_step, mlp_scalar, DenseIds, GruIds, MlpScalarIds,
};
pub use optim::AdaDelta;
pub use store::{ParamId, ParameterStore, Shape};
pub use tape::{NodeId, Tape};
