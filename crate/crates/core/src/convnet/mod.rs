//! Exact convolutional realizations of the multilevel operators, the solver
//! sweep, the error estimator and the marking and refinement masks.

pub mod bank;
pub mod count;
pub mod estimate;
pub mod kernel;
pub mod llmg;
pub mod ops;
pub mod verify;

pub use bank::{BankSegment, StencilBank};
pub use count::{parameter_count, ParameterCount};
pub use estimate::{conv_estimate, conv_finest_indicators, conv_indicator_levels, conv_mark_refine, ConvRefinement};
pub use kernel::{conv_apply, ConvKernel, ConvMode};
pub use llmg::{conv_llmg_sweep, ConvLlmgState};
pub use ops::{
    conv_apply_a, conv_apply_a_transpose, conv_flatten, conv_prolongate, conv_restrict, conv_translate, conv_upsilon,
    owner_mask,
};
pub use verify::{run_suite, VerifyConfig, VerifyRow};
