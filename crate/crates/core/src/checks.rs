//! Named finite-difference checks on seeded random instances.
//!
//! Each check projects the op output onto a random tensor so every output
//! element carries its own weight. Deformable instances keep every sample
//! point at least 0.25 px away from integer grid lines.

use crate::error::{Error, Result};
use crate::gradcheck::{check, check_with, CheckOptions, Probe, SlotReport};
use crate::nn::{fam_forward, fsm_forward, Alignment, Arch, Bound, FamParams, FsmParams, Model, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

pub const EPS: f64 = 1e-5;
/// Relative-error floor of the end-to-end check, whose scalar sums a whole
/// pyramid level and carries round-off near 1e-9 in its differences.
pub const PYRAMID_FLOOR: f64 = 1e-5;
/// One-sided difference disagreement marking a ReLU or bilinear kink.
pub const PYRAMID_KINK_TOL: f64 = 1e-4;
/// Fewest compared parameter elements the end-to-end check accepts.
pub const PYRAMID_MIN_CHECKED: usize = 20;

pub const OPS: [&str; 14] = [
    "add",
    "mul",
    "sigmoid",
    "relu",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "deform_conv2d",
    "upsample",
    "global_avg_pool",
    "cross_entropy",
    "fsm",
    "fam",
    "pyramid",
];

/// Pass threshold when the caller gives none.
pub fn default_tolerance(op: &str) -> f64 {
    match op {
        "deform_conv2d" | "fam" => 1e-5,
        "pyramid" => 1e-4,
        _ => 1e-6,
    }
}

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub op: String,
    pub seed: u64,
    pub slots: Vec<(String, SlotReport)>,
}

impl NamedCheck {
    pub fn worst(&self) -> f64 {
        self.slots.iter().fold(0.0, |m, (_, r)| m.max(r.max_rel_err))
    }

    pub fn checked(&self) -> usize {
        self.slots.iter().map(|(_, r)| r.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.slots.iter().map(|(_, r)| r.kinks).sum()
    }

    /// Worst error within `tol`, and enough elements compared.
    pub fn passed(&self, tol: f64) -> bool {
        let min = if self.op == "pyramid" { PYRAMID_MIN_CHECKED } else { 1 };
        self.worst() <= tol && self.checked() >= min
    }
}

fn random(rng: &mut Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let [n, c, h, w] = shape;
    Tensor::from_fn(Dims { n, c, h, w }, |_, _, _, _| rng.uniform(lo, hi))
}

fn off_grid(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    Tensor::from_fn(Dims { n, c, h, w }, |_, _, _, _| {
        rng.below(5) as f64 - 2.0 + rng.uniform(0.25, 0.75)
    })
}

/// Values at least 0.5 away from zero.
fn away_from_zero(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    Tensor::from_fn(Dims { n, c, h, w }, |_, _, _, _| {
        let m = rng.uniform(0.5, 2.0);
        if rng.below(2) == 0 {
            m
        } else {
            -m
        }
    })
}

fn project(t: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::derived(seed, "projection");
    let r = random(&mut rng, t.dims(out).as_array(), -1.0, 1.0);
    let r = t.constant(r);
    let m = t.mul(out, r)?;
    Ok(t.sum(m))
}

fn named(op: &str, seed: u64, names: &[&str], reports: Vec<SlotReport>) -> NamedCheck {
    NamedCheck {
        op: op.to_string(),
        seed,
        slots: reports
            .into_iter()
            .map(|r| (names.get(r.slot).map_or_else(|| format!("slot{}", r.slot), |s| s.to_string()), r))
            .collect(),
    }
}

fn store_check(
    op: &str,
    seed: u64,
    store: &ParamStore,
    extra: &[Tensor],
    opts: &CheckOptions,
    f: impl Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
) -> Result<NamedCheck> {
    let mut inputs: Vec<Tensor> = store.params().iter().map(|p| p.value.clone()).collect();
    let np = inputs.len();
    inputs.extend_from_slice(extra);
    let reports = check_with(&inputs, opts, |t, v| {
        let bound = Bound::from_vars(v[..np].to_vec());
        f(t, &bound, &v[np..])
    })?;
    let mut names: Vec<&str> = store.params().iter().map(|p| p.name.as_str()).collect();
    let extra_names: Vec<String> = (0..extra.len()).map(|i| format!("input{i}")).collect();
    names.extend(extra_names.iter().map(String::as_str));
    Ok(named(op, seed, &names, reports))
}

/// Runs the check registered as `op`; unknown names are config errors.
pub fn run(op: &str, seed: u64) -> Result<NamedCheck> {
    let mut rng = Rng::derived(seed, op);
    let all = Probe::All;
    let reports = match op {
        "add" | "mul" => {
            let a = random(&mut rng, [2, 3, 3, 2], -1.0, 1.0);
            let b = random(&mut rng, [2, 3, 3, 2], -1.0, 1.0);
            let c = random(&mut rng, [1, 3, 1, 1], -1.0, 1.0);
            let mul = op == "mul";
            let r = check(&[a, b, c], EPS, all, &[], |t, v| {
                let (x, y) = if mul { (t.mul(v[0], v[1])?, t.mul(v[0], v[2])?) } else { (t.add(v[0], v[1])?, t.sub(v[0], v[2])?) };
                let s = t.add(x, y)?;
                project(t, s, seed)
            })?;
            named(op, seed, &["a", "b", "broadcast"], r)
        }
        "sigmoid" => {
            let x = random(&mut rng, [1, 2, 4, 4], -4.0, 4.0);
            let r = check(&[x], EPS, all, &[], |t, v| {
                let s = t.sigmoid(v[0]);
                project(t, s, seed)
            })?;
            named(op, seed, &["x"], r)
        }
        "relu" => {
            let x = away_from_zero(&mut rng, [1, 2, 4, 4]);
            let r = check(&[x], EPS, all, &[], |t, v| {
                let s = t.relu(v[0]);
                project(t, s, seed)
            })?;
            named(op, seed, &["x"], r)
        }
        "concat" => {
            let a = random(&mut rng, [2, 2, 3, 3], -1.0, 1.0);
            let b = random(&mut rng, [2, 3, 3, 3], -1.0, 1.0);
            let r = check(&[a, b], EPS, all, &[], |t, v| {
                let s = t.concat_channels(v[0], v[1])?;
                project(t, s, seed)
            })?;
            named(op, seed, &["a", "b"], r)
        }
        "conv2d" => {
            let x = random(&mut rng, [2, 3, 6, 5], -1.0, 1.0);
            let w = random(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
            let b = random(&mut rng, [1, 4, 1, 1], -1.0, 1.0);
            let stride = 1 + (seed as usize % 2);
            let r = check(&[x, w, b], EPS, all, &[], |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, 1)?;
                project(t, y, seed)
            })?;
            named(op, seed, &["x", "weight", "bias"], r)
        }
        "conv_transpose2d" => {
            let x = random(&mut rng, [1, 3, 3, 4], -1.0, 1.0);
            let w = random(&mut rng, [3, 2, 4, 4], -1.0, 1.0);
            let b = random(&mut rng, [1, 2, 1, 1], -1.0, 1.0);
            let r = check(&[x, w, b], EPS, all, &[], |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], v[2], 2, 1)?;
                project(t, y, seed)
            })?;
            named(op, seed, &["x", "weight", "bias"], r)
        }
        "deform_conv2d" => {
            let x = random(&mut rng, [1, 3, 6, 6], -1.0, 1.0);
            let w = random(&mut rng, [2, 3, 3, 3], -1.0, 1.0);
            let b = random(&mut rng, [1, 2, 1, 1], -1.0, 1.0);
            let off = off_grid(&mut rng, [1, 18, 6, 6]);
            let r = check(&[x, w, b, off], EPS, all, &[], |t, v| {
                let y = t.deform_conv2d(v[0], v[1], v[2], v[3])?;
                project(t, y, seed)
            })?;
            named(op, seed, &["x", "weight", "bias", "offsets"], r)
        }
        "upsample" => {
            let x = random(&mut rng, [2, 2, 3, 4], -1.0, 1.0);
            let r = check(&[x], EPS, all, &[], |t, v| {
                let u = t.upsample_nearest2x(v[0]);
                let a = project(t, u, seed)?;
                let u3 = t.upsample_nearest(v[0], 3)?;
                let b = project(t, u3, seed ^ 1)?;
                t.add(a, b)
            })?;
            named(op, seed, &["x"], r)
        }
        "global_avg_pool" => {
            let x = random(&mut rng, [2, 3, 4, 3], -1.0, 1.0);
            let r = check(&[x], EPS, all, &[], |t, v| {
                let p = t.global_avg_pool(v[0]);
                project(t, p, seed)
            })?;
            named(op, seed, &["x"], r)
        }
        "cross_entropy" => {
            let logits = random(&mut rng, [1, 4, 3, 3], -2.0, 2.0);
            let labels: Vec<usize> = (0..9).map(|_| rng.below(4)).collect();
            let r = check(&[logits], EPS, all, &[], |t, v| t.cross_entropy(v[0], &labels))?;
            named(op, seed, &["logits"], r)
        }
        "fsm" => {
            let mut store = ParamStore::new();
            let fsm = FsmParams::new(&mut store, "fsm", 4, 3, true, &mut rng)?;
            randomize(&mut store, &mut rng);
            let c = random(&mut rng, [1, 4, 5, 5], -1.0, 1.0);
            store_check(op, seed, &store, &[c], &CheckOptions::new(EPS, all), |t, p, x| {
                let s = fsm_forward(t, p, &store, x[0], &fsm)?;
                project(t, s.output, seed)
            })?
        }
        "fam" => {
            let mut store = ParamStore::new();
            let fam = FamParams::new(&mut store, "fam", 2, 4, &mut rng)?;
            randomize(&mut store, &mut rng);
            let p_up = random(&mut rng, [1, 2, 5, 5], -1.0, 1.0);
            let c_hat = random(&mut rng, [1, 2, 5, 5], -1.0, 1.0);
            store_check(op, seed, &store, &[p_up, c_hat], &CheckOptions::new(EPS, all), |t, p, x| {
                let tr = fam_forward(t, p, x[0], x[1], &fam, Alignment::Deformable)?;
                project(t, tr.aligned, seed)
            })?
        }
        "pyramid" => {
            let mut model = Model::new(Arch::Fapn, 3, 4, &mut rng)?;
            randomize(&mut model.store, &mut rng);
            let image = random(&mut rng, [1, 3, 32, 32], 0.0, 1.0);
            let opts = CheckOptions {
                floor: PYRAMID_FLOOR,
                kink_tol: Some(PYRAMID_KINK_TOL),
                ..CheckOptions::new(EPS, Probe::Sample(1, seed))
            };
            let model = model;
            store_check(op, seed, &model.store, &[], &opts, |t, p, _| {
                let x = t.constant(image.clone());
                let out = model.forward(t, p, x, Alignment::Deformable)?;
                Ok(t.sum(out.pyramid.finest().p))
            })?
        }
        other => {
            return Err(Error::config(
                "op",
                format!("unknown op `{other}` (expected one of {})", OPS.join(", ")),
            ))
        }
    };
    Ok(reports)
}

/// Gives every parameter, including zero-initialized ones, a random value
/// so offsets land off the integer grid and no path is trivially zero.
fn randomize(store: &mut ParamStore, rng: &mut Rng) {
    for p in store.params_mut() {
        let d = p.value.dims();
        let scale = 1.0 / ((d.c * d.h * d.w) as f64).sqrt();
        p.value = Tensor::from_fn(d, |_, _, _, _| rng.uniform(-scale, scale));
    }
}
