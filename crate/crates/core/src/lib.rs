//! ContextNet: a convolutional speech encoder with squeeze-and-excitation
//! context, an RNN-transducer head, a static cost model and a desk-scale
//! training loop.
//!
//! Everything runs on the CPU on plain row-major [`Tensor`]s. Batches are
//! processed one utterance per [`GradTape`]; with the `parallel` feature
//! (on by default) utterances are spread across a rayon pool.

pub mod analysis;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod kernels;
pub mod par;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod transducer;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::{DType, Float, Tensor};
