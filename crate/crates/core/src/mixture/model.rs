//! The neural mixture model: shared embedding, feature layer, mixture layer,
//! softmax output.
//!
//! ```text
//! H_m   = component_m(U, state_m)                      for every component
//! H_mix = relu(sum_m coef_m * H_m S_m + b_mix)         (mixture layer)
//! O     = softmax(H_mix W + b_out)
//! ```
//!
//! `coef_m` is 1 except for non-recurrent components during training, where
//! it is 0 for dropped streams and `1 / (1 - p)` for kept ones. A model
//! without a mixture layer holds exactly one component whose features feed
//! the softmax directly; this is how standalone baselines are built.

use super::dropout::DropoutMask;
use super::spec::MixtureSpec;
use crate::components::{
    bias, bias_mut, weight, weight_mut, Component, ComponentLayout, ComponentState, Param, ParamKind, ParamMut,
    StepCache,
};
use crate::corpus::Block;
use crate::error::{Error, Result};
use crate::linalg::{
    glorot_init, matmul_acc, matmul_nt_acc, matmul_tn_acc, relu, relu_grad, softmax_rows_in_place, Matrix, Real, Rng,
};

/// Everything needed to lay out an [`Nmm`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmmConfig {
    pub spec: MixtureSpec,
    pub embedding_size: usize,
    /// Width of the mixture layer; `None` for a standalone single-component model.
    pub mixture_size: Option<usize>,
    pub vocab_size: usize,
    /// Hidden layers per FNN component.
    pub fnn_depth: usize,
}

impl NmmConfig {
    pub fn new(spec: MixtureSpec, embedding_size: usize, mixture_size: Option<usize>, vocab_size: usize) -> Self {
        Self {
            spec,
            embedding_size,
            mixture_size,
            vocab_size,
            fnn_depth: 1,
        }
    }

    pub fn with_fnn_depth(mut self, depth: usize) -> Self {
        self.fnn_depth = depth;
        self
    }

    pub fn is_standalone(&self) -> bool {
        self.mixture_size.is_none()
    }

    pub fn layout(&self) -> ComponentLayout {
        ComponentLayout {
            embedding_size: self.embedding_size,
            fnn_depth: self.fnn_depth,
            rnn_identity_input: self.is_standalone(),
        }
    }

    /// Width of the layer feeding the softmax.
    pub fn top_width(&self) -> usize {
        self.mixture_size.unwrap_or_else(|| self.spec.components[0].hidden())
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.spec.components {
            c.validate()?;
        }
        if self.spec.is_empty() {
            return Err(Error::invalid("model config", "no components"));
        }
        if self.embedding_size == 0 || self.vocab_size < 2 || self.fnn_depth == 0 {
            return Err(Error::invalid(
                "model config",
                "embedding size and FNN depth must be >= 1, vocabulary >= 2",
            ));
        }
        match self.mixture_size {
            Some(0) => Err(Error::invalid("model config", "mixture size must be >= 1")),
            None if self.spec.len() != 1 => Err(Error::invalid(
                "model config",
                "a model without mixture layer takes exactly one component",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLayer<T> {
    /// `S_m`, one `hidden_m x mixture_size` matrix per component.
    pub weights: Vec<Matrix<T>>,
    pub bias: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nmm<T> {
    config: NmmConfig,
    pad_id: usize,
    pub embedding: Matrix<T>,
    pub components: Vec<Component<T>>,
    pub mixture: Option<MixtureLayer<T>>,
    pub output: Matrix<T>,
    pub output_bias: Matrix<T>,
}

/// Recurrent carry for every component over a batch of streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub components: Vec<ComponentState<T>>,
}

impl<T: Real> ModelState<T> {
    pub fn reset(&mut self) {
        self.components.iter_mut().for_each(ComponentState::reset);
    }

    pub fn batch(&self) -> usize {
        self.components.first().map_or(0, ComponentState::batch)
    }
}

#[derive(Debug, Clone)]
struct StepRecord<T> {
    /// Coefficient-scaled features, the inputs of the mixture layer.
    features: Vec<Matrix<T>>,
    mix_pre: Option<Matrix<T>>,
    top: Matrix<T>,
    probs: Matrix<T>,
}

/// Forward activations of one unrolled block, consumed by [`Nmm::backward`].
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    steps: Vec<StepRecord<T>>,
    /// `caches[m][t]`
    caches: Vec<Vec<StepCache<T>>>,
    /// `coefs[m][row]`
    coefs: Vec<Vec<T>>,
}

impl<T: Real> BlockTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Output distribution at step `t` (`batch x vocab`).
    pub fn probs(&self, t: usize) -> &Matrix<T> {
        &self.steps[t].probs
    }

    /// Summed cross-entropy (natural log) of the block targets.
    pub fn loss(&self, block: &Block) -> f64 {
        let mut total = 0.0;
        for (t, step) in self.steps.iter().enumerate() {
            for b in 0..block.batch {
                let p = step.probs.get(b, block.target(b, t)).as_f64();
                total -= p.max(f64::MIN_POSITIVE).ln();
            }
        }
        total
    }

    /// Smallest |pre-activation| over every ReLU unit in the block.
    pub fn relu_margin(&self) -> f64 {
        let mix = self
            .steps
            .iter()
            .filter_map(|s| s.mix_pre.as_ref())
            .flat_map(|m| m.data().iter())
            .map(|v| v.as_f64().abs());
        let comp = self
            .caches
            .iter()
            .flatten()
            .filter_map(StepCache::relu_margin)
            .map(|v| v.as_f64());
        mix.chain(comp).fold(f64::INFINITY, f64::min)
    }
}

impl<T: Real> Nmm<T> {
    /// Glorot-initialized weights, zero biases.
    pub fn new(config: NmmConfig, pad_id: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if pad_id >= config.vocab_size {
            return Err(Error::invalid("model config", "padding id outside the vocabulary"));
        }
        let embedding = glorot_init(config.vocab_size, config.embedding_size, rng);
        let layout = config.layout();
        let components = config
            .spec
            .components
            .iter()
            .map(|&k| Component::new(k, layout, rng))
            .collect::<Result<Vec<_>>>()?;
        let mixture = config.mixture_size.map(|width| MixtureLayer {
            weights: components.iter().map(|c| glorot_init(c.hidden(), width, rng)).collect(),
            bias: Matrix::zeros(1, width),
        });
        let output = glorot_init(config.top_width(), config.vocab_size, rng);
        Ok(Self {
            output_bias: Matrix::zeros(1, config.vocab_size),
            config,
            pad_id,
            embedding,
            components,
            mixture,
            output,
        })
    }

    pub fn config(&self) -> &NmmConfig {
        &self.config
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.config.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    /// Same layout, all values zero; used as the gradient container.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            pad_id: self.pad_id,
            embedding: self.embedding.zeros_like(),
            components: self.components.iter().map(Component::zeros_like).collect(),
            mixture: self.mixture.as_ref().map(|m| MixtureLayer {
                weights: m.weights.iter().map(Matrix::zeros_like).collect(),
                bias: m.bias.zeros_like(),
            }),
            output: self.output.zeros_like(),
            output_bias: self.output_bias.zeros_like(),
        }
    }

    pub fn init_state(&self, batch: usize) -> ModelState<T> {
        ModelState {
            components: self
                .components
                .iter()
                .map(|c| c.init_state(batch, self.pad_id))
                .collect(),
        }
    }

    /// Whether component `m` is subject to model dropout.
    pub fn is_droppable(&self, m: usize) -> bool {
        self.mixture.is_some() && !self.components[m].kind().is_recurrent()
    }

    fn coefficients(&self, batch: usize, masks: Option<&[DropoutMask]>) -> Result<Vec<Vec<T>>> {
        if let Some(masks) = masks {
            if masks.len() != batch || masks.iter().any(|m| m.active.len() != self.components.len()) {
                return Err(Error::Contract("dropout masks do not match batch or spec".into()));
            }
        }
        Ok((0..self.components.len())
            .map(|m| {
                (0..batch)
                    .map(|b| match masks {
                        Some(masks) if self.is_droppable(m) => {
                            if masks[b].active[m] {
                                T::of(masks[b].keep_scale)
                            } else {
                                T::zero()
                            }
                        }
                        _ => T::one(),
                    })
                    .collect()
            })
            .collect())
    }

    /// Runs `inputs[t]` (one id per stream) for every `t`, advancing `state`.
    /// `masks` selects training mode (one mask per stream, held for the whole block).
    pub fn forward(
        &self,
        inputs: &[Vec<usize>],
        state: &mut ModelState<T>,
        masks: Option<&[DropoutMask]>,
    ) -> Result<BlockTrace<T>> {
        let batch = state.batch();
        if state.components.len() != self.components.len() {
            return Err(Error::Contract("model state does not match the spec".into()));
        }
        let coefs = self.coefficients(batch, masks)?;
        let mut caches: Vec<Vec<StepCache<T>>> = vec![Vec::with_capacity(inputs.len()); self.components.len()];
        let mut steps = Vec::with_capacity(inputs.len());
        for ids in inputs {
            if ids.len() != batch {
                return Err(Error::Contract(format!(
                    "step has {} ids for {batch} streams",
                    ids.len()
                )));
            }
            let mut features = Vec::with_capacity(self.components.len());
            for (m, (comp, st)) in self.components.iter().zip(&mut state.components).enumerate() {
                let (mut h, cache) = comp.step(&self.embedding, ids, st)?;
                if coefs[m].iter().any(|&c| c != T::one()) {
                    h.scale_rows(&coefs[m]);
                }
                features.push(h);
                caches[m].push(cache);
            }
            let (mix_pre, top) = match &self.mixture {
                Some(mix) => {
                    let mut pre = Matrix::zeros(batch, mix.bias.cols());
                    for (h, s) in features.iter().zip(&mix.weights) {
                        matmul_acc(h, s, &mut pre)?;
                    }
                    pre.add_row_broadcast(&mix.bias)?;
                    let top = relu(&pre);
                    (Some(pre), top)
                }
                None => (None, features[0].clone()),
            };
            let mut probs = Matrix::zeros(batch, self.config.vocab_size);
            matmul_acc(&top, &self.output, &mut probs)?;
            probs.add_row_broadcast(&self.output_bias)?;
            softmax_rows_in_place(&mut probs);
            steps.push(StepRecord {
                features,
                mix_pre,
                top,
                probs,
            });
        }
        Ok(BlockTrace { steps, caches, coefs })
    }

    pub fn forward_block(
        &self,
        block: &Block,
        state: &mut ModelState<T>,
        masks: Option<&[DropoutMask]>,
    ) -> Result<BlockTrace<T>> {
        let inputs: Vec<Vec<usize>> = (0..block.len).map(|t| block.input_column(t)).collect();
        self.forward(&inputs, state, masks)
    }

    /// Gradients of the summed block cross-entropy, truncated at the block start.
    pub fn backward(&self, trace: &BlockTrace<T>, block: &Block) -> Result<Nmm<T>> {
        let mut grads = self.zeros_like();
        self.backward_into(trace, block, &mut grads)?;
        Ok(grads)
    }

    pub fn backward_into(&self, trace: &BlockTrace<T>, block: &Block, grads: &mut Nmm<T>) -> Result<()> {
        if trace.len() != block.len || trace.caches.len() != self.components.len() {
            return Err(Error::Contract("trace does not belong to this block/model".into()));
        }
        let batch = block.batch;
        let mut grad_features: Vec<Vec<Matrix<T>>> = vec![Vec::with_capacity(block.len); self.components.len()];
        for (t, step) in trace.steps.iter().enumerate() {
            if step.probs.rows() != batch {
                return Err(Error::Contract("trace batch differs from block batch".into()));
            }
            let mut dlogits = step.probs.clone();
            for b in 0..batch {
                let y = block.target(b, t);
                let v = dlogits.get(b, y);
                dlogits.set(b, y, v - T::one());
            }
            matmul_tn_acc(&step.top, &dlogits, &mut grads.output)?;
            dlogits.sum_rows_into(&mut grads.output_bias)?;
            let mut dtop = Matrix::zeros(batch, step.top.cols());
            matmul_nt_acc(&dlogits, &self.output, &mut dtop)?;

            match (&self.mixture, &mut grads.mixture, &step.mix_pre) {
                (Some(mix), Some(gmix), Some(pre)) => {
                    let dpre = relu_grad(pre, &dtop)?;
                    dpre.sum_rows_into(&mut gmix.bias)?;
                    for (m, grad) in grad_features.iter_mut().enumerate() {
                        matmul_tn_acc(&step.features[m], &dpre, &mut gmix.weights[m])?;
                        let mut dh = Matrix::zeros(batch, self.components[m].hidden());
                        matmul_nt_acc(&dpre, &mix.weights[m], &mut dh)?;
                        if trace.coefs[m].iter().any(|&c| c != T::one()) {
                            dh.scale_rows(&trace.coefs[m]);
                        }
                        grad.push(dh);
                    }
                }
                (None, None, None) => grad_features[0].push(dtop),
                _ => return Err(Error::Contract("gradient container layout differs from model".into())),
            }
        }
        for (m, comp) in self.components.iter().enumerate() {
            comp.backward(
                &trace.caches[m],
                &grad_features[m],
                &mut grads.components[m],
                &mut grads.embedding,
            )?;
        }
        Ok(())
    }

    /// Parameter blocks in declaration order.
    pub fn params(&self) -> Vec<Param<'_, T>> {
        let mut out = vec![weight("embedding", "u", &self.embedding)];
        for (m, c) in self.components.iter().enumerate() {
            c.params(&format!("c{m}"), &mut out);
        }
        if let Some(mix) = &self.mixture {
            for (m, s) in mix.weights.iter().enumerate() {
                out.push(weight("mix", &format!("s{m}"), s));
            }
            out.push(bias("mix", "b", &mix.bias));
        }
        out.push(weight("out", "w", &self.output));
        out.push(bias("out", "b", &self.output_bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = vec![weight_mut("embedding", "u", &mut self.embedding)];
        for (m, c) in self.components.iter_mut().enumerate() {
            c.params_mut(&format!("c{m}"), &mut out);
        }
        if let Some(mix) = &mut self.mixture {
            for (m, s) in mix.weights.iter_mut().enumerate() {
                out.push(weight_mut("mix", &format!("s{m}"), s));
            }
            out.push(bias_mut("mix", "b", &mut mix.bias));
        }
        out.push(weight_mut("out", "w", &mut self.output));
        out.push(bias_mut("out", "b", &mut self.output_bias));
        out
    }

    /// Number of scalars held, optionally excluding biases.
    pub fn param_count(&self, include_biases: bool) -> u64 {
        self.params()
            .iter()
            .filter(|p| include_biases || p.kind == ParamKind::Weight)
            .map(|p| p.value.len() as u64)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }
}
