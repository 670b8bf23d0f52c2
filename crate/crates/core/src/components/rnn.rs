use super::{bias, bias_mut, weight, weight_mut, Param, ParamMut};
use crate::error::{Error, Result};
use crate::linalg::{glorot_init, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid_scalar, Matrix, Real, Rng};

/// Elman recurrence `H_t = sigmoid(E_t W_in + H_{t-1} V + b)`.
///
/// With `input == None` the embedding is added directly (`W_in = I`), which
/// requires `embedding_size == hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams<T> {
    pub input: Option<Matrix<T>>,
    pub recurrent: Matrix<T>,
    pub bias: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct RnnCache<T> {
    e: Matrix<T>,
    h_prev: Matrix<T>,
    h: Matrix<T>,
}

impl<T: Real> RnnParams<T> {
    pub fn new(embedding_size: usize, hidden: usize, identity_input: bool, rng: &mut Rng) -> Self {
        let input = if identity_input && embedding_size == hidden {
            None
        } else {
            Some(glorot_init(embedding_size, hidden, rng))
        };
        Self {
            input,
            recurrent: glorot_init(hidden, hidden, rng),
            bias: Matrix::zeros(1, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.as_ref().map(Matrix::zeros_like),
            recurrent: self.recurrent.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, e: &Matrix<T>, h_prev: &Matrix<T>) -> Result<(Matrix<T>, RnnCache<T>)> {
        let mut pre = match &self.input {
            Some(w) => {
                let mut p = Matrix::zeros(e.rows(), self.hidden());
                matmul_acc(e, w, &mut p)?;
                p
            }
            None => {
                if e.cols() != self.hidden() {
                    return Err(Error::Shape {
                        op: "rnn identity input",
                        left: e.shape(),
                        right: (self.hidden(), self.hidden()),
                    });
                }
                e.clone()
            }
        };
        matmul_acc(h_prev, &self.recurrent, &mut pre)?;
        pre.add_row_broadcast(&self.bias)?;
        let h = pre.map(sigmoid_scalar);
        Ok((
            h.clone(),
            RnnCache {
                e: e.clone(),
                h_prev: h_prev.clone(),
                h,
            },
        ))
    }

    /// Truncated BPTT over a window; returns the embedding gradient per step.
    pub fn backward_window(
        &self,
        caches: &[&RnnCache<T>],
        grad_h: &[Matrix<T>],
        grads: &mut RnnParams<T>,
    ) -> Result<Vec<Matrix<T>>> {
        if caches.len() != grad_h.len() {
            return Err(Error::Contract("RNN window length mismatch".into()));
        }
        let mut grad_e = vec![Matrix::zeros(0, 0); caches.len()];
        let mut carry: Option<Matrix<T>> = None;
        for t in (0..caches.len()).rev() {
            let cache = caches[t];
            let mut dh = grad_h[t].clone();
            if let Some(c) = &carry {
                dh.add_assign(c)?;
            }
            let dpre = cache.h.zip_map(&dh, "rnn backward", |y, g| g * y * (T::one() - y))?;
            dpre.sum_rows_into(&mut grads.bias)?;
            matmul_tn_acc(&cache.h_prev, &dpre, &mut grads.recurrent)?;
            grad_e[t] = match (&self.input, &mut grads.input) {
                (Some(w), Some(gw)) => {
                    matmul_tn_acc(&cache.e, &dpre, gw)?;
                    let mut ge = Matrix::zeros(dpre.rows(), w.rows());
                    matmul_nt_acc(&dpre, w, &mut ge)?;
                    ge
                }
                (None, None) => dpre.clone(),
                _ => {
                    return Err(Error::Contract(
                        "RNN gradient container has a different input map".into(),
                    ))
                }
            };
            if t > 0 {
                let mut c = Matrix::zeros(dpre.rows(), self.hidden());
                matmul_nt_acc(&dpre, &self.recurrent, &mut c)?;
                carry = Some(c);
            }
        }
        Ok(grad_e)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a, T>>) {
        if let Some(w) = &self.input {
            out.push(weight(prefix, "w_in", w));
        }
        out.push(weight(prefix, "v", &self.recurrent));
        out.push(bias(prefix, "b", &self.bias));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        if let Some(w) = &mut self.input {
            out.push(weight_mut(prefix, "w_in", w));
        }
        out.push(weight_mut(prefix, "v", &mut self.recurrent));
        out.push(bias_mut(prefix, "b", &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_give_half() {
        let p = RnnParams::<f64> {
            input: Some(Matrix::zeros(3, 2)),
            recurrent: Matrix::zeros(2, 2),
            bias: Matrix::zeros(1, 2),
        };
        let (h, _) = p
            .forward(&Matrix::filled(1, 3, 0.7), &Matrix::filled(1, 2, 0.3))
            .unwrap();
        assert_eq!(h.data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_recurrence_is_history_one_map() {
        let mut rng = Rng::new(2);
        let mut p = RnnParams::<f64>::new(3, 2, false, &mut rng);
        p.recurrent.fill(0.0);
        let e = Matrix::from_rows(&[&[0.1, -0.4, 0.9]]);
        let (h1, _) = p.forward(&e, &Matrix::filled(1, 2, 0.8)).unwrap();
        let (h2, _) = p.forward(&e, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(h1, h2);
        let w = p.input.as_ref().unwrap();
        for j in 0..2 {
            let pre: f64 = (0..3).map(|k| e.get(0, k) * w.get(k, j)).sum();
            assert!((h1.get(0, j) - sig(pre)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_step_unroll_matches_substitution() {
        let mut rng = Rng::new(5);
        let p = RnnParams::<f64>::new(2, 2, false, &mut rng);
        let w = p.input.clone().unwrap();
        let v = p.recurrent.clone();
        let e0 = Matrix::from_rows(&[&[0.3, -1.2]]);
        let e1 = Matrix::from_rows(&[&[-0.7, 0.4]]);
        let h_init = Matrix::from_rows(&[&[0.2, 0.6]]);
        let (h1, _) = p.forward(&e0, &h_init).unwrap();
        let (h2, _) = p.forward(&e1, &h1).unwrap();

        let affine = |e: &[f64], h: &[f64], j: usize| -> f64 {
            (0..2).map(|k| e[k] * w.get(k, j)).sum::<f64>() + (0..2).map(|k| h[k] * v.get(k, j)).sum::<f64>()
        };
        let inner: Vec<f64> = (0..2).map(|j| sig(affine(e0.row(0), h_init.row(0), j))).collect();
        let outer: Vec<f64> = (0..2).map(|j| sig(affine(e1.row(0), &inner, j))).collect();
        for (j, o) in outer.iter().enumerate() {
            assert!((h2.get(0, j) - o).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_input_requires_matching_width() {
        let mut rng = Rng::new(1);
        let p = RnnParams::<f64>::new(4, 4, true, &mut rng);
        assert!(p.input.is_none());
        assert!(p.forward(&Matrix::zeros(1, 4), &Matrix::zeros(1, 4)).is_ok());
        assert!(p.forward(&Matrix::zeros(1, 3), &Matrix::zeros(1, 4)).is_err());
        let q = RnnParams::<f64>::new(3, 4, true, &mut rng);
        assert!(q.input.is_some());
    }
}
