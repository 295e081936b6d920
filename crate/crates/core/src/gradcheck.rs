//! Central finite-difference checks for tape gradients.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotReport {
    pub slot: usize,
    /// Elements compared (kinks excluded).
    pub checked: usize,
    /// Elements skipped as kinks.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Which elements of each input slot to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// A seeded random subset of at most this many elements per slot.
    Sample(usize, u64),
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    pub probe: Probe,
    /// Inputs recorded as leaves but not probed.
    pub skip: Vec<usize>,
    /// Denominator floor of the relative error. A larger floor judges
    /// gradients below it by absolute error.
    pub floor: f64,
    /// When set, an element whose forward and backward one-sided
    /// differences disagree by more than this relative amount sits on a
    /// kink of a piecewise-linear op and is skipped.
    pub kink_tol: Option<f64>,
}

impl CheckOptions {
    pub fn new(eps: f64, probe: Probe) -> Self {
        CheckOptions {
            eps,
            probe,
            skip: Vec::new(),
            floor: DEFAULT_FLOOR,
            kink_tol: None,
        }
    }
}

/// Compares tape gradients of the scalar built by `f` against
/// `(L(x + eps) - L(x - eps)) / (2 eps)` for each probed element of each
/// input. Inputs listed in `skip` are recorded as leaves but not probed.
pub fn check<F>(inputs: &[Tensor], eps: f64, probe: Probe, skip: &[usize], f: F) -> Result<Vec<SlotReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut opts = CheckOptions::new(eps, probe);
    opts.skip = skip.to_vec();
    check_with(inputs, &opts, f)
}

pub fn check_with<F>(inputs: &[Tensor], opts: &CheckOptions, f: F) -> Result<Vec<SlotReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eps = opts.eps;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item()?;
    let grads = tape.backward(out)?;

    let mut reports = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (slot, input) in inputs.iter().enumerate() {
        if opts.skip.contains(&slot) {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[slot], input.dims());
        let indices: Vec<usize> = match opts.probe {
            Probe::All => (0..input.len()).collect(),
            Probe::Sample(k, seed) => {
                let mut idx: Vec<usize> = (0..input.len()).collect();
                Rng::new(seed ^ slot as u64).shuffle(&mut idx);
                idx.truncate(k);
                idx
            }
        };
        let mut report = SlotReport {
            slot,
            checked: 0,
            kinks: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for i in indices {
            let orig = input.data()[i];
            work[slot].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[slot].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[slot].data_mut()[i] = orig;
            if let Some(kt) = opts.kink_tol {
                let (fwd, bwd) = ((plus - base) / eps, (base - minus) / eps);
                if relative_error_floor(fwd, bwd, opts.floor) > kt {
                    report.kinks += 1;
                    continue;
                }
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(relative_error_floor(a, numeric, opts.floor));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Largest relative error across all slots.
pub fn worst(reports: &[SlotReport]) -> f64 {
    reports.iter().fold(0.0, |m, r| m.max(r.max_rel_err))
}
