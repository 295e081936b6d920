//! Parameterised layers, the FSM/FAM blocks and the pyramid model.

pub mod blocks;
pub mod params;
pub mod pyramid;

pub use blocks::{align, fam_forward, fsm_forward, Alignment, FamParams, FamTrace, FsmParams, FsmTrace, OFFSET_CHANNELS};
pub use params::{Bound, ConvLayer, DeconvLayer, Init, Param, ParamId, ParamStore};
pub use pyramid::{argmax, Arch, Backbone, LevelState, Merge, Model, ModelOutput, Neck, PyramidState};
