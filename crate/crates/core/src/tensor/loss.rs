use super::Real;
use crate::error::{Error, Result};

/// Half sum of squared errors against a target vector.
///
/// Returns `(0.5 * sum (p - t)^2, p - t)`.
pub fn mse_loss<T: Real>(predicted: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if predicted.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction has {} entries, target {}",
            predicted.len(),
            target.len()
        )));
    }
    let grad: Vec<T> = predicted.iter().zip(target).map(|(&p, &t)| p - t).collect();
    let half = T::from_f64(0.5);
    let loss = grad.iter().map(|&e| e * e).sum::<T>() * half;
    Ok((loss, grad))
}

/// One-hot vector of length `classes`.
pub(crate) fn one_hot<T: Real>(label: usize, classes: usize) -> Vec<T> {
    let mut v = vec![T::zero(); classes];
    v[label] = T::one();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_prediction() {
        let t = one_hot::<f64>(3, 10);
        let (loss, grad) = mse_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_prediction_against_e1() {
        let (loss, _) = mse_loss(&[0.0f64; 10], &one_hot(0, 10)).unwrap();
        assert_eq!(loss, 0.5);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = [0.2f64, 0.9, 0.4, 0.1];
        let t = one_hot(1, 4);
        let (_, grad) = mse_loss(&p, &t).unwrap();
        let h = 1e-3;
        for i in 0..4 {
            let mut pp = p;
            pp[i] += h;
            let mut pm = p;
            pm[i] -= h;
            let fd = (mse_loss(&pp, &t).unwrap().0 - mse_loss(&pm, &t).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(mse_loss(&[0.0f32; 3], &[0.0; 4]).is_err());
    }
}
