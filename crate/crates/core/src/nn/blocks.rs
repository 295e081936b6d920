//! Feature selection (FSM) and feature alignment (FAM) blocks.

use crate::error::{Error, Result};
use crate::nn::params::{Bound, ConvLayer, Init, ParamStore};
use crate::ops::taps;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Offset-field channels for a 3x3 aligner: two per tap.
pub const OFFSET_CHANNELS: usize = 18;
pub const ALIGN_KERNEL: usize = 3;

/// Channel-attention lateral.
///
/// `u = sigmoid(f_m(avgpool(C)))`, then `f_s(C + u * C)` with the skip term,
/// or `f_s(u * C)` for the squeeze-and-excitation variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FsmParams {
    /// Importance layer, 1x1 D -> D.
    pub f_m: ConvLayer,
    /// Selection layer, 1x1 D -> D'.
    pub f_s: ConvLayer,
    pub skip: bool,
}

impl FsmParams {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, skip: bool, rng: &mut Rng) -> Result<Self> {
        Ok(FsmParams {
            f_m: ConvLayer::new(store, &format!("{name}.f_m"), in_ch, in_ch, 1, 1, Init::FanIn, rng)?,
            f_s: ConvLayer::new(store, &format!("{name}.f_s"), in_ch, out_ch, 1, 1, Init::FanIn, rng)?,
            skip,
        })
    }
}

/// Intermediate values of one FSM evaluation.
#[derive(Clone, Copy, Debug)]
pub struct FsmTrace {
    pub importance: Var,
    pub output: Var,
}

pub fn fsm_forward(tape: &mut Tape, p: &Bound, store: &ParamStore, c: Var, fsm: &FsmParams) -> Result<FsmTrace> {
    let d = fsm.f_m.in_channels(store);
    if tape.dims(c).c != d {
        return Err(Error::shape(
            "fsm",
            format!("input has {} channels, module expects {d}", tape.dims(c).c),
        ));
    }
    let z = tape.global_avg_pool(c);
    let logits = fsm.f_m.forward(tape, p, z)?;
    let u = tape.sigmoid(logits);
    let scaled = tape.mul(c, u)?;
    let rescaled = if fsm.skip { tape.add(c, scaled)? } else { scaled };
    let output = fsm.f_s.forward(tape, p, rescaled)?;
    Ok(FsmTrace {
        importance: u,
        output,
    })
}

/// How the aligner resamples. `Rigid` swaps the deformable convolution for a
/// standard one with the same weights, ignoring predicted offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Alignment {
    #[default]
    Deformable,
    Rigid,
}

/// Offset predictor `f_o` (standard 3x3, zero-initialized) and deformable
/// aligner `f_a` (3x3, D' -> D', followed by ReLU).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FamParams {
    pub f_o: ConvLayer,
    pub f_a: ConvLayer,
}

impl FamParams {
    /// `reference_ch` is the channel count `f_o` reads: `2 D'` for the
    /// concatenated pair, `D'` when offsets come from fused features.
    pub fn new(store: &mut ParamStore, name: &str, width: usize, reference_ch: usize, rng: &mut Rng) -> Result<Self> {
        let k = ALIGN_KERNEL;
        let f_o = ConvLayer::new(store, &format!("{name}.f_o"), reference_ch, 2 * k * k, k, 1, Init::Zeros, rng)?;
        let f_a = ConvLayer::new(store, &format!("{name}.f_a"), width, width, k, 1, Init::FanIn, rng)?;
        Ok(FamParams { f_o, f_a })
    }

    pub fn tap_count(&self, store: &ParamStore) -> usize {
        let d = store.get(self.f_a.weight).dims();
        taps(d.h).len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FamTrace {
    pub offsets: Var,
    pub aligned: Var,
}

/// Resamples `source` with offsets predicted from `reference`:
/// `relu(f_a(source, f_o(reference)))`.
pub fn align(tape: &mut Tape, p: &Bound, source: Var, reference: Var, fam: &FamParams, mode: Alignment) -> Result<FamTrace> {
    let offsets = fam.f_o.forward(tape, p, reference)?;
    let y = match mode {
        Alignment::Deformable => tape.deform_conv2d(source, p.var(fam.f_a.weight), p.var(fam.f_a.bias), offsets)?,
        Alignment::Rigid => fam.f_a.forward(tape, p, source)?,
    };
    Ok(FamTrace {
        offsets,
        aligned: tape.relu(y),
    })
}

/// Aligns the upsampled coarse map to the lateral reference:
/// `offsets = f_o([c_hat, p_up])`, output `relu(f_a(p_up, offsets))`.
pub fn fam_forward(tape: &mut Tape, p: &Bound, p_up: Var, c_hat: Var, fam: &FamParams, mode: Alignment) -> Result<FamTrace> {
    let (du, dc) = (tape.dims(p_up), tape.dims(c_hat));
    if du != dc {
        return Err(Error::ShapeMismatch {
            op: "fam (upsample before aligning)",
            left: du,
            right: dc,
        });
    }
    let reference = tape.concat_channels(c_hat, p_up)?;
    align(tape, p, p_up, reference, fam, mode)
}
