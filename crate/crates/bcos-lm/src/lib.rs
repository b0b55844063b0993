//! B-cos language models at desk scale.
//!
//! A self-contained implementation of explainable-by-design transformers:
//! B-cos layers whose forward pass is an exact dynamic linear map, conversion
//! of conventional models into B-cos form, attribution extraction that sums
//! to the explained logit, and a faithfulness evaluation harness driven by
//! synthetic tasks with known ground-truth evidence.
//!
//! Start with the runnable programs under `examples/` or the `bclm` binary.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
