use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over every element and its gradient with respect to
/// `pred`, `2 (pred - target) / n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        let p = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let t = Tensor::new(vec![2, 3], vec![0.0, 2.0, 5.0, 1.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        // (1 + 0 + 4 + 1) / 6
        assert!((loss - 1.0).abs() < 1e-15);
        let want = [1.0 / 3.0, 0.0, -2.0 / 3.0, -1.0 / 3.0, 0.0, 0.0];
        for (g, w) in grad.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_values() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.5]).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
        let shifted = Tensor::new(vec![2, 3], t.data().iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((mse_loss(&shifted, &t).unwrap().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let p = Tensor::zeros(&[2, 3]);
        let t = Tensor::zeros(&[3, 2]);
        assert!(mse_loss(&p, &t).is_err());
    }
}
