//! Backbone, top-down pyramid variants and the segmentation model.
//!
//! Level `i` has stride `2^i` relative to the input. The backbone is a
//! stride-2 stem followed by three stride-2 stages (16/32/64/128 channels),
//! giving levels 1..=4. Main variants build the pyramid over all four and
//! predict on the finest; the real-time variant uses the coarsest three.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::nn::blocks::{align, fam_forward, fsm_forward, Alignment, FamParams, FsmParams, OFFSET_CHANNELS};
use crate::nn::params::{Bound, ConvLayer, DeconvLayer, Init, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BACKBONE_CHANNELS: [usize; 4] = [16, 32, 64, 128];
/// Level index of the stem output.
pub const FIRST_LEVEL: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Fpn,
    Fapn,
    FpnFam,
    FpnFamSe,
    FpnDeconvFsm,
    FamAfterFusion,
    FapnRealtime,
}

impl Arch {
    pub const ALL: [Arch; 7] = [
        Arch::Fpn,
        Arch::Fapn,
        Arch::FpnFam,
        Arch::FpnFamSe,
        Arch::FpnDeconvFsm,
        Arch::FamAfterFusion,
        Arch::FapnRealtime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Fpn => "fpn",
            Arch::Fapn => "fapn",
            Arch::FpnFam => "fpn_fam",
            Arch::FpnFamSe => "fpn_fam_se",
            Arch::FpnDeconvFsm => "fpn_deconv_fsm",
            Arch::FamAfterFusion => "fam_after_fusion",
            Arch::FapnRealtime => "fapn_realtime",
        }
    }

    /// Pyramid width D' when the config does not set one.
    pub fn default_width(self) -> usize {
        match self {
            Arch::FapnRealtime => 128,
            _ => 256,
        }
    }

    pub fn level_count(self) -> usize {
        match self {
            Arch::FapnRealtime => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Arch::ALL.iter().map(|a| a.name()).collect();
                Error::config("arch", format!("unknown arch `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lateral {
    Conv(ConvLayer),
    Select(FsmParams),
}

/// How level `i + 1` is merged into level `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    /// `up(P) + C_hat`.
    Add,
    /// `FAM(up(P), C_hat) + C_hat`.
    AlignAdd(FamParams),
    /// `deconv(P) + C_hat`.
    DeconvAdd(DeconvLayer),
    /// `F = up(P) + C_hat`, then `relu(f_a(F, f_o(F)))`.
    AddAlign(FamParams),
    /// `reduce([FAM(up(P), C_hat), C_hat])`.
    AlignConcat { fam: FamParams, reduce: ConvLayer },
}

impl Merge {
    pub fn fam(&self) -> Option<&FamParams> {
        match self {
            Merge::AlignAdd(f) | Merge::AddAlign(f) | Merge::AlignConcat { fam: f, .. } => Some(f),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub stages: Vec<ConvLayer>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, in_ch: usize, rng: &mut Rng) -> Result<Self> {
        let mut stages = Vec::new();
        let mut prev = in_ch;
        for (i, &ch) in BACKBONE_CHANNELS.iter().enumerate() {
            let name = if i == 0 { "backbone.stem".to_string() } else { format!("backbone.stage{i}") };
            stages.push(ConvLayer::new(store, &name, prev, ch, 3, 2, Init::FanIn, rng)?);
            prev = ch;
        }
        Ok(Backbone { stages })
    }

    /// Features finest first: strides 2, 4, 8, 16.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut x = image;
        for stage in &self.stages {
            let y = stage.forward(tape, p, x)?;
            x = tape.relu(y);
            feats.push(x);
        }
        Ok(feats)
    }
}

/// Per-level record of one pyramid evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LevelState {
    pub level: usize,
    pub stride: usize,
    pub c: Var,
    pub c_hat: Var,
    pub p: Var,
    /// Upsampled coarser output fed to this level, if any.
    pub p_up: Option<Var>,
    /// Offset field of this level's aligner, if any.
    pub offsets: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct PyramidState {
    pub arch: Arch,
    /// Finest level first.
    pub levels: Vec<LevelState>,
}

impl PyramidState {
    pub fn finest(&self) -> &LevelState {
        &self.levels[0]
    }

    pub fn offset_fields(&self) -> Vec<Var> {
        self.levels.iter().filter_map(|l| l.offsets).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neck {
    pub arch: Arch,
    pub width: usize,
    /// Finest level first.
    pub laterals: Vec<Lateral>,
    /// `merges[j]` folds level `j + 1` into level `j`.
    pub merges: Vec<Merge>,
}

impl Neck {
    /// `in_channels` lists backbone widths finest first.
    pub fn new(store: &mut ParamStore, arch: Arch, in_channels: &[usize], width: usize, rng: &mut Rng) -> Result<Self> {
        if in_channels.len() < 2 {
            return Err(Error::config("arch", format!("pyramid needs >= 2 levels, got {}", in_channels.len())));
        }
        if arch == Arch::FapnRealtime && in_channels.len() != 3 {
            return Err(Error::config(
                "arch",
                format!("real-time head needs exactly 3 levels, got {}", in_channels.len()),
            ));
        }
        let mut laterals = Vec::new();
        for (j, &ch) in in_channels.iter().enumerate() {
            let name = format!("neck.lateral{j}");
            laterals.push(match arch {
                Arch::Fpn | Arch::FpnFam => Lateral::Conv(ConvLayer::new(store, &name, ch, width, 1, 1, Init::FanIn, rng)?),
                Arch::FpnFamSe => Lateral::Select(FsmParams::new(store, &name, ch, width, false, rng)?),
                _ => Lateral::Select(FsmParams::new(store, &name, ch, width, true, rng)?),
            });
        }
        let mut merges = Vec::new();
        for j in 0..in_channels.len() - 1 {
            let name = format!("neck.merge{j}");
            merges.push(match arch {
                Arch::Fpn => Merge::Add,
                Arch::Fapn | Arch::FpnFam | Arch::FpnFamSe => {
                    Merge::AlignAdd(FamParams::new(store, &format!("{name}.fam"), width, 2 * width, rng)?)
                }
                Arch::FpnDeconvFsm => Merge::DeconvAdd(DeconvLayer::new(store, &format!("{name}.deconv"), width, width, rng)?),
                Arch::FamAfterFusion => Merge::AddAlign(FamParams::new(store, &format!("{name}.fam"), width, width, rng)?),
                Arch::FapnRealtime => Merge::AlignConcat {
                    fam: FamParams::new(store, &format!("{name}.fam"), width, 2 * width, rng)?,
                    reduce: ConvLayer::new(store, &format!("{name}.reduce"), 2 * width, width, 1, 1, Init::FanIn, rng)?,
                },
            });
        }
        Ok(Neck {
            arch,
            width,
            laterals,
            merges,
        })
    }

    fn lateral(&self, tape: &mut Tape, p: &Bound, store: &ParamStore, j: usize, c: Var) -> Result<Var> {
        match &self.laterals[j] {
            Lateral::Conv(l) => l.forward(tape, p, c),
            Lateral::Select(f) => Ok(fsm_forward(tape, p, store, c, f)?.output),
        }
    }

    /// Top-down pass over `feats` (finest first, level indices starting at
    /// `first_level`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        store: &ParamStore,
        feats: &[Var],
        first_level: usize,
        mode: Alignment,
    ) -> Result<PyramidState> {
        if feats.len() != self.laterals.len() {
            return Err(Error::config(
                "arch",
                format!("neck built for {} levels, got {}", self.laterals.len(), feats.len()),
            ));
        }
        let top = feats.len() - 1;
        let c_hat_top = self.lateral(tape, p, store, top, feats[top])?;
        let mut levels = vec![LevelState {
            level: first_level + top,
            stride: 1 << (first_level + top),
            c: feats[top],
            c_hat: c_hat_top,
            p: c_hat_top,
            p_up: None,
            offsets: None,
        }];
        let mut coarser = c_hat_top;
        for j in (0..top).rev() {
            let c_hat = self.lateral(tape, p, store, j, feats[j])?;
            let (p_up, merged, offsets) = match &self.merges[j] {
                Merge::Add => {
                    let up = tape.upsample_nearest2x(coarser);
                    (up, tape.add(up, c_hat)?, None)
                }
                Merge::AlignAdd(fam) => {
                    let up = tape.upsample_nearest2x(coarser);
                    let t = fam_forward(tape, p, up, c_hat, fam, mode)?;
                    (up, tape.add(t.aligned, c_hat)?, Some(t.offsets))
                }
                Merge::DeconvAdd(dc) => {
                    let up = dc.forward(tape, p, coarser)?;
                    (up, tape.add(up, c_hat)?, None)
                }
                Merge::AddAlign(fam) => {
                    let up = tape.upsample_nearest2x(coarser);
                    let fused = tape.add(up, c_hat)?;
                    let t = align(tape, p, fused, fused, fam, mode)?;
                    (up, t.aligned, Some(t.offsets))
                }
                Merge::AlignConcat { fam, reduce } => {
                    let up = tape.upsample_nearest2x(coarser);
                    let t = fam_forward(tape, p, up, c_hat, fam, mode)?;
                    let cat = tape.concat_channels(t.aligned, c_hat)?;
                    (up, reduce.forward(tape, p, cat)?, Some(t.offsets))
                }
            };
            if let Some(o) = offsets {
                debug_assert_eq!(tape.dims(o).c, OFFSET_CHANNELS);
            }
            levels.push(LevelState {
                level: first_level + j,
                stride: 1 << (first_level + j),
                c: feats[j],
                c_hat,
                p: merged,
                p_up: Some(p_up),
                offsets,
            });
            coarser = merged;
        }
        levels.reverse();
        Ok(PyramidState {
            arch: self.arch,
            levels,
        })
    }
}

/// Backbone + pyramid + 1x1 prediction layer on the finest pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Arch,
    pub classes: usize,
    pub width: usize,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub neck: Neck,
    pub head: ConvLayer,
}

pub struct ModelOutput {
    /// Logits at pyramid resolution.
    pub coarse_logits: Var,
    /// Logits replicated to input resolution.
    pub logits: Var,
    pub pyramid: PyramidState,
}

impl Model {
    pub fn new(arch: Arch, classes: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if width == 0 {
            return Err(Error::config("pyramid_width", "must be >= 1"));
        }
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, 3, rng)?;
        let used = &BACKBONE_CHANNELS[BACKBONE_CHANNELS.len() - arch.level_count()..];
        let neck = Neck::new(&mut store, arch, used, width, rng)?;
        let head = ConvLayer::new(&mut store, "head", width, classes, 1, 1, Init::FanIn, rng)?;
        Ok(Model {
            arch,
            classes,
            width,
            store,
            backbone,
            neck,
            head,
        })
    }

    pub fn first_level(&self) -> usize {
        FIRST_LEVEL + BACKBONE_CHANNELS.len() - self.arch.level_count()
    }

    /// Output stride of the prediction layer.
    pub fn output_stride(&self) -> usize {
        1 << self.first_level()
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: Var, mode: Alignment) -> Result<ModelOutput> {
        let d = tape.dims(image);
        let s = 1 << (FIRST_LEVEL + BACKBONE_CHANNELS.len() - 1);
        if !d.h.is_multiple_of(s) || !d.w.is_multiple_of(s) {
            return Err(Error::shape(
                "model",
                format!("input {d} spatial dims must be divisible by {s}"),
            ));
        }
        let feats = self.backbone.forward(tape, p, image)?;
        let skip = feats.len() - self.arch.level_count();
        let pyramid = self.neck.forward(tape, p, &self.store, &feats[skip..], self.first_level(), mode)?;
        let coarse_logits = self.head.forward(tape, p, pyramid.finest().p)?;
        let logits = tape.upsample_nearest(coarse_logits, self.output_stride())?;
        Ok(ModelOutput {
            coarse_logits,
            logits,
            pyramid,
        })
    }

    /// Argmax class per input pixel (lowest class id wins ties).
    pub fn predict(&self, image: &Tensor) -> Result<LabelMap> {
        let logits = self.logits(image)?;
        Ok(argmax(&logits))
    }

    /// Input-resolution logits without recording gradients.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind_constants(&mut tape);
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, &bound, x, Alignment::Deformable)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Channel argmax of a (1, K, h, w) tensor.
pub fn argmax(logits: &Tensor) -> LabelMap {
    let d = logits.dims();
    LabelMap::from_fn(d.h, d.w, |y, x| {
        let mut best = 0;
        for c in 1..d.c {
            if logits.at(0, c, y, x) > logits.at(0, best, y, x) {
                best = c;
            }
        }
        best
    })
}
