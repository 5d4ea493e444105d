//! Knowledge-enhanced text matching: dictionary-definition retrieval, an
//! iterated attention matching network, gated knowledge fusion, and the
//! tensor/autodiff kernel they run on.

pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod knowledge;
pub mod matching;
pub mod model;
pub mod param;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Activation, Reduce, Tape, Var};
pub use tensor::{DType, Real, Tensor};
