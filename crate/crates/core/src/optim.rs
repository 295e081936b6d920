//! SGD with heavy-ball momentum and the poly learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MOMENTUM: f64 = 0.9;
pub const POLY_POWER: f64 = 0.9;

/// `base * (1 - iter / max_iters)^0.9`.
pub fn poly_lr(iter: usize, max_iters: usize, base: f64) -> Result<f64> {
    if max_iters == 0 || iter > max_iters {
        return Err(Error::Contract(format!("poly_lr: iter {iter} outside 0..={max_iters}")));
    }
    Ok(base * (1.0 - iter as f64 / max_iters as f64).powf(POLY_POWER))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Poly,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub velocity: Vec<Tensor>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iter: usize,
    pub max_iters: usize,
    pub schedule: Schedule,
}

impl OptimState {
    pub fn new(store: &ParamStore, base_lr: f64, weight_decay: f64, max_iters: usize) -> Self {
        OptimState {
            velocity: store.params().iter().map(|p| Tensor::zeros(p.value.dims())).collect(),
            base_lr,
            momentum: MOMENTUM,
            weight_decay,
            iter: 0,
            max_iters,
            schedule: Schedule::Poly,
        }
    }

    pub fn lr(&self) -> Result<f64> {
        match self.schedule {
            Schedule::Poly => poly_lr(self.iter, self.max_iters, self.base_lr),
            Schedule::Constant => Ok(self.base_lr),
        }
    }
}

/// `v <- m v + (g + wd p)`, `p <- p - lr v`, then advances the iteration.
/// Parameters flagged without decay ignore `weight_decay`. Returns the
/// learning rate used.
pub fn sgd_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimState) -> Result<f64> {
    let params = store.params_mut();
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} params, {} grads, {} velocities",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    let lr = state.lr()?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if g.dims() != p.value.dims() || v.dims() != p.value.dims() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.value.dims(),
                right: g.dims(),
            });
        }
        let wd = if p.decay { state.weight_decay } else { 0.0 };
        let pv = p.value.data_mut();
        for ((pi, &gi), vi) in pv.iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = state.momentum * *vi + (gi + wd * *pi);
            *pi -= lr * *vi;
        }
    }
    state.iter += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v), decay);
        s
    }

    fn constant(store: &ParamStore, lr: f64, wd: f64) -> OptimState {
        let mut st = OptimState::new(store, lr, wd, 100);
        st.schedule = Schedule::Constant;
        st
    }

    #[test]
    fn poly_values() {
        assert_eq!(poly_lr(0, 100, 0.01).unwrap(), 0.01);
        assert_eq!(poly_lr(100, 100, 0.01).unwrap(), 0.0);
        assert_eq!(poly_lr(50, 100, 0.01).unwrap(), 0.01 * 0.5f64.powf(0.9));
        assert!(matches!(poly_lr(101, 100, 0.01), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut s = scalar_store(1.5, true);
        let mut st = constant(&s, 0.1, 0.0);
        sgd_step(&mut s, &[Tensor::scalar(0.0)], &mut st).unwrap();
        assert_eq!(s.params()[0].value.data(), &[1.5]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut s = scalar_store(0.0, true);
        let mut st = constant(&s, 0.1, 0.0);
        sgd_step(&mut s, &[Tensor::scalar(1.0)], &mut st).unwrap();
        assert!((s.params()[0].value.data()[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut s, &[Tensor::scalar(1.0)], &mut st).unwrap();
        assert!((s.params()[0].value.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn ten_step_trajectory_matches_oracle() {
        let (lr, wd) = (0.05, 0.01);
        let mut s = scalar_store(2.0, true);
        let mut st = OptimState::new(&s, lr, wd, 10);
        let (mut p, mut v) = (2.0f64, 0.0f64);
        for i in 0..10 {
            let g = 3.0 * p - 1.0;
            sgd_step(&mut s, &[Tensor::scalar(g)], &mut st).unwrap();
            let r = lr * (1.0 - i as f64 / 10.0).powf(0.9);
            v = 0.9 * v + (g + wd * p);
            p -= r * v;
            assert_eq!(s.params()[0].value.data()[0], p);
        }
    }

    #[test]
    fn quadratic_bowl_heavy_ball() {
        // L = 0.5 a p^2 so g = a p; closed-form two-term recurrence
        // p_{t+1} = (1 + m - lr a) p_t - m p_{t-1}.
        let (a, lr, m) = (2.0, 0.1, 0.9);
        let mut s = scalar_store(1.0, false);
        let mut st = constant(&s, lr, 0.0);
        let mut hist = vec![1.0f64];
        for _ in 0..20 {
            let p = s.params()[0].value.data()[0];
            sgd_step(&mut s, &[Tensor::scalar(a * p)], &mut st).unwrap();
            hist.push(s.params()[0].value.data()[0]);
        }
        let mut prev = 1.0;
        let mut cur = 1.0 - lr * a;
        assert!((hist[1] - cur).abs() < 1e-15);
        for &h in &hist[2..] {
            let next = (1.0 + m - lr * a) * cur - m * prev;
            assert!((h - next).abs() < 1e-12, "{h} vs {next}");
            prev = cur;
            cur = next;
        }
    }

    #[test]
    fn no_decay_flag_skips_weight_decay() {
        let mut s = scalar_store(1.0, false);
        let mut st = constant(&s, 0.1, 0.5);
        sgd_step(&mut s, &[Tensor::scalar(0.0)], &mut st).unwrap();
        assert_eq!(s.params()[0].value.data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = scalar_store(1.0, true);
        let mut st = constant(&s, 0.1, 0.0);
        let bad = Tensor::zeros(crate::Dims::new(1, 2, 1, 1).unwrap());
        assert!(matches!(sgd_step(&mut s, &[bad], &mut st), Err(Error::ShapeMismatch { .. })));
    }
}
