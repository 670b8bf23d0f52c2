//! Elementwise activations, their gradients, and row-wise softmax.
//!
//! Gradient helpers take the upstream gradient and return the gradient with
//! respect to the activation's input. `relu_grad` is keyed on the
//! pre-activation; `sigmoid_grad` and `tanh_grad` are keyed on the forward
//! output, which is what the recurrent components cache.

use super::matrix::Matrix;
use super::real::Real;
use crate::error::Result;

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_grad<T: Real>(x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    x.zip_map(upstream, "relu_grad", |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_grad<T: Real>(output: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    output.zip_map(upstream, "sigmoid_grad", |y, g| g * y * (T::one() - y))
}

pub fn tanh_act<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| v.tanh())
}

pub fn tanh_grad<T: Real>(output: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    output.zip_map(upstream, "tanh_grad", |y, g| g * (T::one() - y * y))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    softmax_rows_in_place(&mut out);
    out
}

pub fn softmax_rows_in_place<T: Real>(m: &mut Matrix<T>) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn relu_definition() {
        let x = Matrix::<f64>::from_rows(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let x = Matrix::<f64>::from_rows(&[&[-1.0, 3.0]]);
        let up = Matrix::from_rows(&[&[5.0, 5.0]]);
        assert_eq!(relu_grad(&x, &up).unwrap().data(), &[0.0, 5.0]);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = Rng::new(17);
        let x = Matrix::<f64>::from_fn(6, 7, |_, _| rng.uniform(-3.0, 3.0));
        let ones = Matrix::filled(6, 7, 1.0);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);

        let g = relu_grad(&x, &ones).unwrap();
        for (k, &v) in x.data().iter().enumerate() {
            if v.abs() < 1e-3 {
                continue;
            }
            let n = central_diff(|z| z.max(0.0), v);
            if g.data()[k] == 0.0 {
                assert_eq!(n, 0.0);
            } else {
                assert!(rel(g.data()[k], n) < 1e-5);
            }
        }

        let g = sigmoid_grad(&sigmoid(&x), &ones).unwrap();
        for (k, &v) in x.data().iter().enumerate() {
            let n = central_diff(sigmoid_scalar, v);
            assert!(rel(g.data()[k], n) < 1e-4);
        }

        let g = tanh_grad(&tanh_act(&x), &ones).unwrap();
        for (k, &v) in x.data().iter().enumerate() {
            let n = central_diff(f64::tanh, v);
            assert!(rel(g.data()[k], n) < 1e-4);
        }
    }

    #[test]
    fn symmetric_points() {
        let z = Matrix::<f64>::zeros(1, 1);
        assert_eq!(sigmoid(&z).data(), &[0.5]);
        assert_eq!(tanh_act(&z).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let x = Matrix::<f32>::from_rows(&[&[1000.0, -1000.0]]);
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 1.0f32);
        assert_eq!(y.data()[1], 0.0f32);
        assert!(y.is_finite());
        assert!(tanh_act(&x).is_finite());
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_rows(&Matrix::<f64>::filled(1, 10, 3.0));
        for &v in p.data() {
            assert!((v - 0.1).abs() < 1e-12);
        }
        let p = softmax_rows(&Matrix::<f64>::from_rows(&[&[0.0, 3f64.ln()]]));
        assert!((p.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-12);
        let p = softmax_rows(&Matrix::<f32>::from_rows(&[&[1e4, 0.0, -5.0]]));
        assert!(p.is_finite());
        assert!((p.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
