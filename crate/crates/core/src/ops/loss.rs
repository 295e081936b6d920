use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over pixels of `-log softmax(logits)[label]`, with softmax taken
/// across channels. `labels` is laid out (n, h, w). Returns the loss and the
/// per-pixel class probabilities in logits layout.
pub(crate) fn cross_entropy_raw(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let d = logits.dims();
    if labels.len() != d.n * d.plane() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for logits {d}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= d.c) {
        return Err(Error::Data(format!("label {bad} >= class count {}", d.c)));
    }
    let plane = d.plane();
    let mut probs = vec![0.0; d.len()];
    let mut total = 0.0;
    for n in 0..d.n {
        let base = n * d.sample_len();
        for i in 0..plane {
            let at = |c: usize| base + c * plane + i;
            let mut mx = f64::NEG_INFINITY;
            for c in 0..d.c {
                mx = mx.max(logits.data()[at(c)]);
            }
            let mut z = 0.0;
            for c in 0..d.c {
                let e = (logits.data()[at(c)] - mx).exp();
                probs[at(c)] = e;
                z += e;
            }
            for c in 0..d.c {
                probs[at(c)] /= z;
            }
            let label = labels[n * plane + i];
            total += mx + z.ln() - logits.data()[at(label)];
        }
    }
    Ok((total / (d.n * plane) as f64, probs))
}

/// Scalar cross-entropy without recording a gradient.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    cross_entropy_raw(logits, labels).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Dims;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::full(Dims::new(1, 4, 3, 3).unwrap(), 0.7);
        let loss = cross_entropy_loss(&logits, &[0, 1, 2, 3, 0, 1, 2, 3, 0]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 200.0] {
            let logits = Tensor::from_fn(Dims::new(1, 3, 2, 2).unwrap(), |_, c, _, _| if c == 1 { margin } else { 0.0 });
            let loss = cross_entropy_loss(&logits, &[1; 4]).unwrap();
            assert!(loss < prev && loss.is_finite());
            prev = loss;
        }
        assert!(prev < 1e-80);
    }

    #[test]
    fn matches_per_pixel_oracle() {
        let mut rng = Rng::new(17);
        let d = Dims::new(2, 5, 3, 4).unwrap();
        let logits = Tensor::from_fn(d, |_, _, _, _| rng.uniform(-4.0, 4.0));
        let labels: Vec<usize> = (0..24).map(|_| rng.below(5)).collect();
        let mut acc = 0.0;
        for n in 0..2 {
            for h in 0..3 {
                for w in 0..4 {
                    let z: f64 = (0..5).map(|c| logits.at(n, c, h, w).exp()).sum();
                    let l = labels[(n * 3 + h) * 4 + w];
                    acc += -(logits.at(n, l, h, w).exp() / z).ln();
                }
            }
        }
        let got = cross_entropy_loss(&logits, &labels).unwrap();
        assert!((got - acc / 24.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let logits = Tensor::zeros(Dims::new(1, 2, 1, 2).unwrap());
        assert!(matches!(cross_entropy_loss(&logits, &[0, 2]), Err(Error::Data(_))));
    }
}
