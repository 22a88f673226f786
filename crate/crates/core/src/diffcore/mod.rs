//! Reverse-mode differentiation over dense f64 arrays, the layers built on it,
//! parameter storage, checkpoints and finite-difference checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, CkptEntry, CKPT_VERSION_LINE};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use nn::{
    attention, conv1d, dsconv1d, ffn_block, gelu, glu, layer_norm, linear, max_pool_rows2, simple_gate,
    stab_softmax, Dropout, FfnParams, Mode, LAYER_NORM_EPS,
};
pub use params::{Bound, ParamEntry, ParameterStore};
pub use tape::{Tape, Var, ZERO_INDEX};
