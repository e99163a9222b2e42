use super::{Real, Tensor};
use crate::error::{Error, Result};

fn pool_dims(shape: &[usize], factor: usize) -> Result<(usize, usize, usize)> {
    let &[m, h, w] = shape else {
        return Err(Error::shape(format!(
            "mean pooling expects [maps, h, w], got {shape:?}"
        )));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "{h}x{w} map is not divisible by pooling factor {factor}"
        )));
    }
    Ok((m, h, w))
}

/// Mean of each `factor x factor` block.
pub fn meanpool_forward<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (m, h, w) = pool_dims(input.shape(), factor)?;
    let (oh, ow) = (h / factor, w / factor);
    let scale = T::one() / T::from_f64((factor * factor) as f64);
    let mut out = Tensor::zeros(&[m, oh, ow]);
    let src = input.data();
    let dst = out.data_mut();
    for map in 0..m {
        for y in 0..h {
            let row = &src[(map * h + y) * w..(map * h + y + 1) * w];
            let orow = &mut dst[(map * oh + y / factor) * ow..(map * oh + y / factor + 1) * ow];
            for (x, &v) in row.iter().enumerate() {
                orow[x / factor] += v * scale;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`meanpool_forward`]: spreads each output gradient over its
/// block, divided by `factor^2`.
pub fn meanpool_backward<T: Real>(output_grad: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let &[m, oh, ow] = output_grad.shape() else {
        return Err(Error::shape(format!(
            "mean pooling gradient expects [maps, h, w], got {:?}",
            output_grad.shape()
        )));
    };
    if factor == 0 {
        return Err(Error::shape("pooling factor must be positive"));
    }
    let (h, w) = (oh * factor, ow * factor);
    let scale = T::one() / T::from_f64((factor * factor) as f64);
    let g = output_grad.data();
    Ok(Tensor::from_fn(&[m, h, w], |idx| {
        let map = idx / (h * w);
        let y = idx / w % h;
        let x = idx % w;
        g[(map * oh + y / factor) * ow + x / factor] * scale
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_lenet_maps() {
        let t = Tensor::<f32>::zeros(&[6, 24, 24]);
        assert_eq!(meanpool_forward(&t, 2).unwrap().shape(), &[6, 12, 12]);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::<f64>::filled(&[2, 4, 6], 0.75);
        let out = meanpool_forward(&t, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn block_mean() {
        let t = Tensor::new(vec![1, 2, 2], vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(meanpool_forward(&t, 2).unwrap().data(), &[1.5]);
    }

    #[test]
    fn non_divisible_extent() {
        let t = Tensor::<f32>::zeros(&[1, 5, 4]);
        assert!(matches!(meanpool_forward(&t, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_spreads_quarter() {
        let g = Tensor::<f64>::filled(&[3, 2, 2], 1.0);
        let ig = meanpool_backward(&g, 2).unwrap();
        assert_eq!(ig.shape(), &[3, 4, 4]);
        assert!(ig.data().iter().all(|&v| v == 0.25));
        let z = meanpool_backward(&Tensor::<f64>::zeros(&[1, 2, 2]), 2).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_difference_jacobian() {
        let input = Tensor::from_fn(&[1, 4, 4], |i| (i as f64 * 0.37).cos());
        let og = Tensor::from_fn(&[1, 2, 2], |i| i as f64 - 1.5);
        let analytic = meanpool_backward(&og, 2).unwrap();
        let h = 1e-3;
        for p in 0..16 {
            let f = |delta: f64| {
                let mut x = input.clone();
                x.data_mut()[p] += delta;
                let y = meanpool_forward(&x, 2).unwrap();
                y.data().iter().zip(og.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - analytic.data()[p]).abs() < 1e-9);
        }
    }
}
