use super::{bias, bias_mut, weight, weight_mut, Param, ParamMut};
use crate::error::{Error, Result};
use crate::linalg::{glorot_init, matmul_acc, matmul_nt_acc, matmul_tn_acc, relu, relu_grad, Matrix, Real, Rng};

/// Feedforward component: `H = relu(sum_i E_i V_i + b)`, optionally followed
/// by further `relu(H V + b)` layers.
///
/// Context position `i` (1-based) holds the embedding of the word `i` steps
/// back from the predicted one, so position 1 is the current input token.
#[derive(Debug, Clone, PartialEq)]
pub struct FnnParams<T> {
    pub context: Vec<Matrix<T>>,
    pub bias: Matrix<T>,
    pub deep: Vec<(Matrix<T>, Matrix<T>)>,
}

#[derive(Debug, Clone)]
pub struct FnnCache<T> {
    context: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
    out: Vec<Matrix<T>>,
}

impl<T: Real> FnnCache<T> {
    pub(crate) fn relu_margin(&self) -> T {
        self.pre
            .iter()
            .flat_map(|m| m.data().iter())
            .fold(T::infinity(), |m, &v| m.min(v.abs()))
    }
}

impl<T: Real> FnnParams<T> {
    pub fn new(embedding_size: usize, hidden: usize, history: usize, depth: usize, rng: &mut Rng) -> Self {
        let context = (1..history).map(|_| glorot_init(embedding_size, hidden, rng)).collect();
        let deep = (1..depth)
            .map(|_| (glorot_init(hidden, hidden, rng), Matrix::zeros(1, hidden)))
            .collect();
        Self {
            context,
            bias: Matrix::zeros(1, hidden),
            deep,
        }
    }

    pub fn history(&self) -> usize {
        self.context.len() + 1
    }

    pub fn hidden(&self) -> usize {
        self.bias.cols()
    }

    pub fn depth(&self) -> usize {
        self.deep.len() + 1
    }

    pub fn embedding_size(&self) -> usize {
        self.context[0].rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            context: self.context.iter().map(Matrix::zeros_like).collect(),
            bias: self.bias.zeros_like(),
            deep: self
                .deep
                .iter()
                .map(|(w, b)| (w.zeros_like(), b.zeros_like()))
                .collect(),
        }
    }

    pub fn forward(&self, context: &[Matrix<T>]) -> Result<(Matrix<T>, FnnCache<T>)> {
        if context.len() != self.context.len() {
            return Err(Error::Shape {
                op: "fnn_forward context count",
                left: (context.len(), 0),
                right: (self.context.len(), 0),
            });
        }
        let batch = context[0].rows();
        let mut pre = Matrix::zeros(batch, self.hidden());
        for (e, v) in context.iter().zip(&self.context) {
            matmul_acc(e, v, &mut pre)?;
        }
        pre.add_row_broadcast(&self.bias)?;
        let mut h = relu(&pre);
        let mut pres = vec![pre];
        let mut outs = Vec::with_capacity(self.depth());
        for (w, b) in &self.deep {
            let mut p = Matrix::zeros(batch, self.hidden());
            matmul_acc(&h, w, &mut p)?;
            p.add_row_broadcast(b)?;
            outs.push(h);
            h = relu(&p);
            pres.push(p);
        }
        outs.push(h.clone());
        Ok((
            h,
            FnnCache {
                context: context.to_vec(),
                pre: pres,
                out: outs,
            },
        ))
    }

    /// Returns the gradient for each context position.
    pub fn backward(
        &self,
        cache: &FnnCache<T>,
        grad_h: &Matrix<T>,
        grads: &mut FnnParams<T>,
    ) -> Result<Vec<Matrix<T>>> {
        if cache.pre.len() != self.depth() || cache.context.len() != self.context.len() {
            return Err(Error::Contract("FNN cache does not match parameters".into()));
        }
        let mut upstream = grad_h.clone();
        for layer in (1..self.depth()).rev() {
            let dpre = relu_grad(&cache.pre[layer], &upstream)?;
            let (w, _) = &self.deep[layer - 1];
            let (gw, gb) = &mut grads.deep[layer - 1];
            matmul_tn_acc(&cache.out[layer - 1], &dpre, gw)?;
            dpre.sum_rows_into(gb)?;
            let mut down = Matrix::zeros(dpre.rows(), self.hidden());
            matmul_nt_acc(&dpre, w, &mut down)?;
            upstream = down;
        }
        let dpre = relu_grad(&cache.pre[0], &upstream)?;
        dpre.sum_rows_into(&mut grads.bias)?;
        let mut grad_ctx = Vec::with_capacity(self.context.len());
        for ((e, v), gv) in cache.context.iter().zip(&self.context).zip(&mut grads.context) {
            matmul_tn_acc(e, &dpre, gv)?;
            let mut ge = Matrix::zeros(dpre.rows(), e.cols());
            matmul_nt_acc(&dpre, v, &mut ge)?;
            grad_ctx.push(ge);
        }
        Ok(grad_ctx)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a, T>>) {
        for (i, v) in self.context.iter().enumerate() {
            out.push(weight(prefix, &format!("ctx{}", i + 1), v));
        }
        out.push(bias(prefix, "b", &self.bias));
        for (l, (w, b)) in self.deep.iter().enumerate() {
            out.push(weight(prefix, &format!("deep{}.w", l + 1), w));
            out.push(bias(prefix, &format!("deep{}.b", l + 1), b));
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        for (i, v) in self.context.iter_mut().enumerate() {
            out.push(weight_mut(prefix, &format!("ctx{}", i + 1), v));
        }
        out.push(bias_mut(prefix, "b", &mut self.bias));
        for (l, (w, b)) in self.deep.iter_mut().enumerate() {
            out.push(weight_mut(prefix, &format!("deep{}.w", l + 1), w));
            out.push(bias_mut(prefix, &format!("deep{}.b", l + 1), b));
        }
    }
}
