use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

fn check_labels(n: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean cross-entropy of softmax over each sample's flattened logits.
///
/// Softmax is evaluated in f64 after subtracting the per-sample maximum.
pub fn softmax_xent_forward<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(f64, Tensor4<T>)> {
    let d = logits.dims();
    let classes = d.sample_len();
    check_labels(d.n, classes, labels)?;
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (row, &label) in probs.data_mut().chunks_mut(classes).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label].as_f64() - max);
        for (p, e) in row.iter_mut().zip(&exps) {
            *p = T::from_f64(e / z);
        }
    }
    Ok((total / d.n as f64, probs))
}

/// Gradient of the mean loss w.r.t. the logits: `(probs - onehot) / n`.
pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor4<T>, labels: &[usize]) -> Result<Tensor4<T>> {
    let d = probs.dims();
    let classes = d.sample_len();
    check_labels(d.n, classes, labels)?;
    let scale = T::from_f64(1.0 / d.n as f64);
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_mut(classes).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(g)
}
