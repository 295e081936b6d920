use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Nearest-neighbor upsampling by an integer factor: each source pixel fills
/// a `factor x factor` block.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Contract("upsample factor must be >= 1".into()));
    }
    let d = x.dims();
    let od = Dims::new(d.n, d.c, d.h * factor, d.w * factor)?;
    let mut out = Vec::with_capacity(od.len());
    for plane in x.data().chunks(d.plane()) {
        for y in 0..od.h {
            let row = &plane[(y / factor) * d.w..(y / factor + 1) * d.w];
            for &v in row {
                for _ in 0..factor {
                    out.push(v);
                }
            }
        }
    }
    Ok(Tensor::from_parts(od, out))
}

pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    upsample_nearest(x, 2).expect("factor 2 is valid")
}

/// Sums each `factor x factor` block of `grad` onto the source pixel.
pub(crate) fn upsample_nearest_backward(grad: &Tensor, src: Dims, factor: usize) -> Tensor {
    let gd = grad.dims();
    let mut out = vec![0.0; src.len()];
    for (pi, plane) in grad.data().chunks(gd.plane()).enumerate() {
        let dst = &mut out[pi * src.plane()..(pi + 1) * src.plane()];
        for y in 0..gd.h {
            let drow = &mut dst[(y / factor) * src.w..(y / factor + 1) * src.w];
            for (x, g) in plane[y * gd.w..(y + 1) * gd.w].iter().enumerate() {
                drow[x / factor] += g;
            }
        }
    }
    Tensor::from_parts(src, out)
}

/// Mean over each channel plane, giving (n, c, 1, 1). Sums run row by row.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let d = x.dims();
    let inv = 1.0 / d.plane() as f64;
    let data = x
        .data()
        .chunks(d.plane())
        .map(|plane| plane.iter().sum::<f64>() * inv)
        .collect();
    Tensor::from_parts(Dims { h: 1, w: 1, ..d }, data)
}

pub(crate) fn global_avg_pool_backward(grad: &Tensor, src: Dims) -> Tensor {
    let inv = 1.0 / src.plane() as f64;
    let mut out = Vec::with_capacity(src.len());
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g * inv, src.plane()));
    }
    Tensor::from_parts(src, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn single_pixel_fills_block() {
        let x = Tensor::from_shape([1, 1, 1, 1], vec![5.0]).unwrap();
        let y = upsample_nearest2x(&x);
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 2).unwrap());
        assert_eq!(y.data(), &[5.0; 4]);
    }

    #[test]
    fn checkerboard_at_block_scale() {
        let x = Tensor::from_fn(Dims::new(1, 1, 3, 3).unwrap(), |_, _, h, w| ((h + w) % 2) as f64);
        let y = upsample_nearest2x(&x);
        for h in 0..6 {
            for w in 0..6 {
                assert_eq!(y.at(0, 0, h, w), ((h / 2 + w / 2) % 2) as f64);
            }
        }
    }

    #[test]
    fn backward_sums_block() {
        let src = Dims::new(1, 2, 2, 3).unwrap();
        let g = Tensor::full(Dims::new(1, 2, 4, 6).unwrap(), 1.0);
        assert_eq!(upsample_nearest_backward(&g, src, 2).data(), &[4.0; 12]);
    }

    #[test]
    fn pooling_means() {
        let c = Tensor::full(Dims::new(1, 1, 3, 4).unwrap(), 7.0);
        assert_eq!(global_avg_pool(&c).data(), &[7.0]);
        let m = Tensor::from_shape([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(global_avg_pool(&m).data(), &[0.5]);

        let mut rng = Rng::new(8);
        let x = Tensor::from_fn(Dims::new(2, 3, 5, 4).unwrap(), |_, _, _, _| rng.normal());
        let p = global_avg_pool(&x);
        for n in 0..2 {
            for ch in 0..3 {
                let mut acc = 0.0;
                for h in 0..5 {
                    for w in 0..4 {
                        acc += x.at(n, ch, h, w);
                    }
                }
                assert_eq!(p.at(n, ch, 0, 0), acc * (1.0 / 20.0));
            }
        }
    }
}
