use super::{bias, bias_mut, weight, weight_mut, Param, ParamMut};
use crate::error::{Error, Result};
use crate::linalg::{glorot_init, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid_scalar, Matrix, Real, Rng};

/// LSTM without peepholes.
///
/// The four input maps `V_w^{i,f,o,c}` are stored side by side as column
/// blocks of `input` (`embedding x 4·hidden`), likewise the recurrent maps in
/// `recurrent` (`hidden x 4·hidden`). Block order is input gate, forget gate,
/// output gate, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub input: Matrix<T>,
    pub recurrent: Matrix<T>,
    pub bias: Matrix<T>,
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CANDIDATE: usize = 3;

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    e: Matrix<T>,
    h_prev: Matrix<T>,
    c_prev: Matrix<T>,
    /// Activated gates `[i | f | o | c~]`, `batch x 4·hidden`.
    gates: Matrix<T>,
    tanh_c: Matrix<T>,
}

impl<T: Real> LstmCache<T> {
    pub fn gate(&self, which: usize) -> Matrix<T> {
        let n = self.tanh_c.cols();
        Matrix::from_fn(self.gates.rows(), n, |b, j| self.gates.get(b, which * n + j))
    }
}

impl<T: Real> LstmParams<T> {
    pub fn new(embedding_size: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut input = Matrix::zeros(embedding_size, 4 * hidden);
        let mut recurrent = Matrix::zeros(hidden, 4 * hidden);
        for g in 0..4 {
            let wi: Matrix<T> = glorot_init(embedding_size, hidden, rng);
            let wh: Matrix<T> = glorot_init(hidden, hidden, rng);
            for r in 0..embedding_size {
                input.row_mut(r)[g * hidden..(g + 1) * hidden].copy_from_slice(wi.row(r));
            }
            for r in 0..hidden {
                recurrent.row_mut(r)[g * hidden..(g + 1) * hidden].copy_from_slice(wh.row(r));
            }
        }
        Self {
            input,
            recurrent,
            bias: Matrix::zeros(1, 4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.zeros_like(),
            recurrent: self.recurrent.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    /// One step; returns `(H_t, C_t, cache)`.
    pub fn forward(
        &self,
        e: &Matrix<T>,
        h_prev: &Matrix<T>,
        c_prev: &Matrix<T>,
    ) -> Result<(Matrix<T>, Matrix<T>, LstmCache<T>)> {
        let n = self.hidden();
        let batch = e.rows();
        if c_prev.shape() != (batch, n) {
            return Err(Error::Shape {
                op: "lstm cell state",
                left: c_prev.shape(),
                right: (batch, n),
            });
        }
        let mut z = Matrix::zeros(batch, 4 * n);
        matmul_acc(e, &self.input, &mut z)?;
        matmul_acc(h_prev, &self.recurrent, &mut z)?;
        z.add_row_broadcast(&self.bias)?;

        let mut c = Matrix::zeros(batch, n);
        let mut tanh_c = Matrix::zeros(batch, n);
        let mut h = Matrix::zeros(batch, n);
        for b in 0..batch {
            let zr = z.row_mut(b);
            for v in &mut zr[..3 * n] {
                *v = sigmoid_scalar(*v);
            }
            for v in &mut zr[3 * n..] {
                *v = v.tanh();
            }
            let zr = z.row(b);
            let cp = c_prev.row(b);
            for j in 0..n {
                let (i, f, o, g) = (zr[j], zr[n + j], zr[2 * n + j], zr[3 * n + j]);
                let cj = f * cp[j] + i * g;
                let tc = cj.tanh();
                c.set(b, j, cj);
                tanh_c.set(b, j, tc);
                h.set(b, j, o * tc);
            }
        }
        let cache = LstmCache {
            e: e.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            gates: z,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Truncated BPTT over a window; returns the embedding gradient per step.
    pub fn backward_window(
        &self,
        caches: &[&LstmCache<T>],
        grad_h: &[Matrix<T>],
        grads: &mut LstmParams<T>,
    ) -> Result<Vec<Matrix<T>>> {
        if caches.len() != grad_h.len() {
            return Err(Error::Contract("LSTM window length mismatch".into()));
        }
        let n = self.hidden();
        let mut grad_e = vec![Matrix::zeros(0, 0); caches.len()];
        let mut dh_carry: Option<Matrix<T>> = None;
        let mut dc_carry: Option<Matrix<T>> = None;
        for t in (0..caches.len()).rev() {
            let cache = caches[t];
            let batch = cache.e.rows();
            let mut dh = grad_h[t].clone();
            if let Some(c) = &dh_carry {
                dh.add_assign(c)?;
            }
            let mut dz = Matrix::zeros(batch, 4 * n);
            let mut dc_prev = Matrix::zeros(batch, n);
            for b in 0..batch {
                let g = cache.gates.row(b);
                let cp = cache.c_prev.row(b);
                let tc = cache.tanh_c.row(b);
                let dhr = dh.row(b);
                for j in 0..n {
                    let (i, f, o, cand) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
                    let mut dc = dhr[j] * o * (T::one() - tc[j] * tc[j]);
                    if let Some(carry) = &dc_carry {
                        dc += carry.get(b, j);
                    }
                    let d_o = dhr[j] * tc[j];
                    let d_i = dc * cand;
                    let d_f = dc * cp[j];
                    let d_cand = dc * i;
                    dc_prev.set(b, j, dc * f);
                    let row = dz.row_mut(b);
                    row[j] = d_i * i * (T::one() - i);
                    row[n + j] = d_f * f * (T::one() - f);
                    row[2 * n + j] = d_o * o * (T::one() - o);
                    row[3 * n + j] = d_cand * (T::one() - cand * cand);
                }
            }
            dz.sum_rows_into(&mut grads.bias)?;
            matmul_tn_acc(&cache.e, &dz, &mut grads.input)?;
            matmul_tn_acc(&cache.h_prev, &dz, &mut grads.recurrent)?;
            let mut ge = Matrix::zeros(batch, self.input.rows());
            matmul_nt_acc(&dz, &self.input, &mut ge)?;
            grad_e[t] = ge;
            if t > 0 {
                let mut dhp = Matrix::zeros(batch, n);
                matmul_nt_acc(&dz, &self.recurrent, &mut dhp)?;
                dh_carry = Some(dhp);
                dc_carry = Some(dc_prev);
            }
        }
        Ok(grad_e)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a, T>>) {
        out.push(weight(prefix, "wx", &self.input));
        out.push(weight(prefix, "wh", &self.recurrent));
        out.push(bias(prefix, "b", &self.bias));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(weight_mut(prefix, "wx", &mut self.input));
        out.push(weight_mut(prefix, "wh", &mut self.recurrent));
        out.push(bias_mut(prefix, "b", &mut self.bias));
    }
}
