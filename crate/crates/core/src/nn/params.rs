use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether weight decay applies.
    pub decay: bool,
}

/// Named, ordered parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn,
    Zeros,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.dims() != value.dims() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                left: slot.value.dims(),
                right: value.dims(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Like [`ParamStore::bind`] but as constants, for inference.
    pub fn bind_constants(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
        }
    }

    pub(crate) fn init_tensor(dims: Dims, fan_in: usize, init: Init, rng: &mut Rng) -> Tensor {
        match init {
            Init::Zeros => Tensor::zeros(dims),
            Init::FanIn => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(dims, |_, _, _, _| rng.uniform(-bound, bound))
            }
        }
    }
}

/// Tape handles for a [`ParamStore`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in store order, e.g. leaves created by a gradient checker.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `k x k` convolution layer with its own weight and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    /// Registers `name.weight` (out, in, k, k) and `name.bias`. Biases start
    /// at zero and are never decayed.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let wd = Dims::new(out_ch, in_ch, k, k)?;
        let w = ParamStore::init_tensor(wd, in_ch * k * k, init, rng);
        let weight = store.add(format!("{name}.weight"), w, init != Init::Zeros);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Dims::new(1, out_ch, 1, 1)?), false);
        Ok(ConvLayer {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.weight), p.var(self.bias), self.stride, self.pad)
    }

    pub fn in_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).dims().c
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).dims().n
    }
}

/// Stride-2 transposed convolution (kernel 4, pad 1) doubling spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DeconvLayer {
    pub const KERNEL: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        let k = Self::KERNEL;
        let w = ParamStore::init_tensor(Dims::new(in_ch, out_ch, k, k)?, in_ch * k * k, Init::FanIn, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Dims::new(1, out_ch, 1, 1)?), false);
        Ok(DeconvLayer { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv_transpose2d(x, p.var(self.weight), p.var(self.bias), 2, 1)
    }
}
