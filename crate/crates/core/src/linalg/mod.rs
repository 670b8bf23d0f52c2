//! Dense kernels, activations, initialization, and the seeded random source.

mod activation;
mod matrix;
mod real;
mod rng;

pub use activation::{
    relu, relu_grad, sigmoid, sigmoid_grad, sigmoid_scalar, softmax_rows, softmax_rows_in_place, tanh_act, tanh_grad,
};
pub use matrix::{gemm, matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix};
pub use real::{Precision, Real};
pub use rng::Rng;

/// Glorot/Xavier uniform initialization: entries in `[-b, b]`, `b = sqrt(6 / (rows + cols))`.
pub fn glorot_init<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.uniform(-bound, bound)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_within_bound() {
        let mut rng = Rng::new(1);
        let (r, c) = (37, 53);
        let m: Matrix<f64> = glorot_init(r, c, &mut rng);
        let bound = (6.0 / (r + c) as f64).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn glorot_mean_is_centered() {
        let mut rng = Rng::new(2);
        let m: Matrix<f64> = glorot_init(400, 400, &mut rng);
        let n = m.len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let bound = (6.0f64 / 800.0).sqrt();
        // uniform on [-b, b] has variance b^2 / 3
        let std_err = (bound * bound / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * std_err, "mean {mean} std_err {std_err}");
    }

    #[test]
    fn glorot_is_deterministic() {
        let a: Matrix<f32> = glorot_init(5, 9, &mut Rng::new(77));
        let b: Matrix<f32> = glorot_init(5, 9, &mut Rng::new(77));
        assert_eq!(a, b);
    }
}
