use crate::error::{OsrError, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax − onehot) / batch`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(OsrError::Input(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (batch, classes) = (logits.rows(), logits.row_len());
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(OsrError::Input(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(n);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        total += log_norm - row[label];
        let g = grad.row_mut(n);
        for (k, gk) in g.iter_mut().enumerate() {
            let p = (row[k] - log_norm).exp();
            *gk = (p - if k == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((total / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::filled(&[3, 6], 0.7);
        let (loss, grad) = cross_entropy_loss(&logits, &[0, 3, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.7918).abs() < 1e-4);
        // each row of the gradient sums to zero
        for n in 0..3 {
            assert!(grad.row(n).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_true_class_gives_zero_loss_without_overflow() {
        let logits = Tensor::from_vec(&[1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
    }

    #[test]
    fn hand_softmax_fixture() {
        // softmax(1,2,3)[2] = e^3 / (e + e^2 + e^3); −ln of it = ln(1 + e^-1 + e^-2)
        let expected = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
        let logits = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[2]).unwrap();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn label_out_of_range_is_an_input_error() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[3]),
            Err(OsrError::Input(_))
        ));
    }
}
