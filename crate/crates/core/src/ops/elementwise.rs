use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// How the right operand of a binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is (1, c, 1, 1) or (n, c, 1, 1) against `a` of (n, c, h, w).
    Channel { per_sample: bool },
}

pub(crate) fn broadcast_kind(op: &'static str, a: Dims, b: Dims) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.c == a.c && b.h == 1 && b.w == 1 && (b.n == 1 || b.n == a.n) {
        return Ok(Broadcast::Channel {
            per_sample: b.n == a.n && a.n > 1,
        });
    }
    Err(Error::ShapeMismatch {
        op,
        left: a,
        right: b,
    })
}

/// Flat index into `b` for each flat index into `a`.
#[inline]
pub(crate) fn channel_index(a: Dims, i: usize, per_sample: bool) -> usize {
    let plane = a.plane();
    let c = (i / plane) % a.c;
    if per_sample {
        let n = i / a.sample_len();
        n * a.c + c
    } else {
        c
    }
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let kind = broadcast_kind(op, a.dims(), b.dims())?;
    let (da, db) = (a.data(), b.data());
    let data = match kind {
        Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Channel { per_sample } => da
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, db[channel_index(a.dims(), i, per_sample)]))
            .collect(),
    };
    Ok(Tensor::from_parts(a.dims(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, k: f64) -> Tensor {
    a.map(|v| v * k)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (da, db) = (a.dims(), b.dims());
    if da.n != db.n || da.h != db.h || da.w != db.w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: da,
            right: db,
        });
    }
    let dims = Dims {
        c: da.c + db.c,
        ..da
    };
    let mut data = Vec::with_capacity(dims.len());
    for n in 0..da.n {
        data.extend_from_slice(&a.data()[n * da.sample_len()..(n + 1) * da.sample_len()]);
        data.extend_from_slice(&b.data()[n * db.sample_len()..(n + 1) * db.sample_len()]);
    }
    Ok(Tensor::from_parts(dims, data))
}

/// Inverse of [`concat_channels`]: splits after `c_first` channels.
pub(crate) fn split_channels(x: &Tensor, c_first: usize) -> (Tensor, Tensor) {
    let d = x.dims();
    let da = Dims { c: c_first, ..d };
    let db = Dims {
        c: d.c - c_first,
        ..d
    };
    let mut a = Vec::with_capacity(da.len());
    let mut b = Vec::with_capacity(db.len());
    for n in 0..d.n {
        let s = &x.data()[n * d.sample_len()..(n + 1) * d.sample_len()];
        let (sa, sb) = s.split_at(da.sample_len());
        a.extend_from_slice(sa);
        b.extend_from_slice(sb);
    }
    (Tensor::from_parts(da, a), Tensor::from_parts(db, b))
}

/// Sums a gradient of `a`'s shape down to the broadcast operand's shape.
pub(crate) fn reduce_to(grad: &Tensor, target: Dims, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => grad.clone(),
        Broadcast::Channel { per_sample } => {
            let mut out = vec![0.0; target.len()];
            let d = grad.dims();
            for (i, g) in grad.data().iter().enumerate() {
                out[channel_index(d, i, per_sample)] += g;
            }
            Tensor::from_parts(target, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor {
        Tensor::from_shape(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn add_doubles() {
        let a = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(add(&a, &a).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
        let z = Tensor::zeros(a.dims());
        assert_eq!(add(&a, &z).unwrap(), a);
    }

    #[test]
    fn channel_broadcast_mul() {
        let b = t([1, 2, 1, 1], &[10.0, 20.0]);
        let a = t([1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        // scalar loop oracle
        let mut expected = Vec::new();
        for c in 0..2 {
            for i in 0..4 {
                expected.push(a.data()[c * 4 + i] * b.data()[c]);
            }
        }
        let got = mul(&a, &b).unwrap();
        assert_eq!(got.data(), expected.as_slice());
    }

    #[test]
    fn channel_broadcast_literal_example() {
        // (1,2,1,1)[10,20] against (1,2,2,2)[1..8]; the first channel is
        // scaled by 10 and the second by 20.
        let b = t([1, 2, 1, 1], &[10.0, 20.0]);
        let a = t([1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let got = mul(&a, &b).unwrap();
        assert_eq!(got.data()[..4], [10.0, 20.0, 30.0, 40.0]);
        assert_eq!(got.data()[4..], [100.0, 120.0, 140.0, 160.0]);
    }

    #[test]
    fn mismatch_names_both_dims() {
        let a = t([1, 1, 2, 2], &[0.0; 4]);
        let b = t([1, 1, 1, 2], &[0.0; 2]);
        let msg = add(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("(1, 1, 2, 2)") && msg.contains("(1, 1, 1, 2)"), "{msg}");
    }

    #[test]
    fn concat_preserves_positions() {
        let a = t([2, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let b = t([2, 1, 1, 2], &[-1.0, -2.0, -3.0, -4.0]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), Dims::new(2, 3, 1, 2).unwrap());
        // index-map oracle
        for n in 0..2 {
            for ch in 0..3 {
                for w in 0..2 {
                    let expected = if ch < 2 { a.at(n, ch, 0, w) } else { b.at(n, ch - 2, 0, w) };
                    assert_eq!(c.at(n, ch, 0, w), expected);
                }
            }
        }
        let (ra, rb) = split_channels(&c, 2);
        assert_eq!((ra, rb), (a, b));
    }

    #[test]
    fn concat_channel_counts_add() {
        let a = Tensor::zeros(Dims::new(1, 2, 1, 1).unwrap());
        let b = Tensor::zeros(Dims::new(1, 3, 1, 1).unwrap());
        assert_eq!(concat_channels(&a, &b).unwrap().dims().c, 5);
        let bad = Tensor::zeros(Dims::new(1, 3, 2, 1).unwrap());
        assert!(concat_channels(&a, &bad).is_err());
    }

    #[test]
    fn activations() {
        let x = t([1, 1, 1, 3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
    }
}
