//! Component models of the feature layer.
//!
//! Each component reads rows of the shared embedding table and produces a
//! feature matrix (`batch x hidden`) per time step. Backward passes consume
//! feature gradients over an unrolled window and return parameter gradients
//! plus one embedding gradient per consumed input position; recurrent
//! gradients are truncated at the window start.

mod fnn;
mod lstm;
mod rnn;

pub use fnn::{FnnCache, FnnParams};
pub use lstm::{LstmCache, LstmParams, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};
pub use rnn::{RnnCache, RnnParams};

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    /// Feedforward model over the last `history - 1` words.
    Fnn {
        hidden: usize,
        history: usize,
    },
    Rnn {
        hidden: usize,
    },
    Lstm {
        hidden: usize,
    },
}

impl ComponentKind {
    pub fn hidden(self) -> usize {
        match self {
            ComponentKind::Fnn { hidden, .. } | ComponentKind::Rnn { hidden } | ComponentKind::Lstm { hidden } => {
                hidden
            }
        }
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, ComponentKind::Fnn { .. })
    }

    pub fn validate(self) -> Result<()> {
        if self.hidden() == 0 {
            return Err(Error::invalid("component", format!("{self}: hidden size must be >= 1")));
        }
        if let ComponentKind::Fnn { history, .. } = self {
            if history < 2 {
                return Err(Error::invalid(
                    "component",
                    format!("{self}: FNN history must be >= 2 (at least one context word)"),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ComponentKind::Fnn { hidden, history } => write!(f, "F{hidden}^{history}"),
            ComponentKind::Rnn { hidden } => write!(f, "R{hidden}"),
            ComponentKind::Lstm { hidden } => write!(f, "L{hidden}"),
        }
    }
}

/// Weight matrices are subject to weight decay, biases are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

pub struct Param<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a Matrix<T>,
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a mut Matrix<T>,
}

/// Shape options that depend on where the component sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentLayout {
    pub embedding_size: usize,
    /// Hidden layers per FNN (1 inside mixtures).
    pub fnn_depth: usize,
    /// An RNN whose hidden width equals the embedding width feeds the
    /// embedding straight into the recurrence instead of through `W_in`.
    pub rnn_identity_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component<T> {
    Fnn(FnnParams<T>),
    Rnn(RnnParams<T>),
    Lstm(LstmParams<T>),
}

/// Recurrent carry of a component for a batch of streams.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentState<T> {
    /// Previous input ids per stream, most recent first (`history - 2` per row).
    Fnn {
        previous: Vec<Vec<usize>>,
        pad: usize,
    },
    Rnn {
        h: Matrix<T>,
    },
    Lstm {
        h: Matrix<T>,
        c: Matrix<T>,
    },
}

impl<T: Real> ComponentState<T> {
    pub fn batch(&self) -> usize {
        match self {
            ComponentState::Fnn { previous, .. } => previous.len(),
            ComponentState::Rnn { h } | ComponentState::Lstm { h, .. } => h.rows(),
        }
    }

    pub fn reset(&mut self) {
        match self {
            ComponentState::Fnn { previous, pad } => {
                let pad = *pad;
                previous.iter_mut().for_each(|row| row.fill(pad));
            }
            ComponentState::Rnn { h } => h.fill(T::zero()),
            ComponentState::Lstm { h, c } => {
                h.fill(T::zero());
                c.fill(T::zero());
            }
        }
    }
}

/// Per-step record kept for the backward pass.
#[derive(Debug, Clone)]
pub enum StepCache<T> {
    /// `ids[i]` are the token ids at context position `i + 1`.
    Fnn {
        ids: Vec<Vec<usize>>,
        cache: FnnCache<T>,
    },
    Rnn {
        ids: Vec<usize>,
        cache: RnnCache<T>,
    },
    Lstm {
        ids: Vec<usize>,
        cache: LstmCache<T>,
    },
}

impl<T: Real> StepCache<T> {
    /// Smallest |pre-activation| over ReLU units, for kink-aware gradient checks.
    pub fn relu_margin(&self) -> Option<T> {
        match self {
            StepCache::Fnn { cache, .. } => Some(cache.relu_margin()),
            _ => None,
        }
    }
}

impl<T: Real> Component<T> {
    pub fn new(kind: ComponentKind, layout: ComponentLayout, rng: &mut Rng) -> Result<Self> {
        kind.validate()?;
        let emb = layout.embedding_size;
        Ok(match kind {
            ComponentKind::Fnn { hidden, history } => {
                Component::Fnn(FnnParams::new(emb, hidden, history, layout.fnn_depth.max(1), rng))
            }
            ComponentKind::Rnn { hidden } => {
                let identity = layout.rnn_identity_input && hidden == emb;
                Component::Rnn(RnnParams::new(emb, hidden, identity, rng))
            }
            ComponentKind::Lstm { hidden } => Component::Lstm(LstmParams::new(emb, hidden, rng)),
        })
    }

    pub fn kind(&self) -> ComponentKind {
        match self {
            Component::Fnn(p) => ComponentKind::Fnn {
                hidden: p.hidden(),
                history: p.history(),
            },
            Component::Rnn(p) => ComponentKind::Rnn { hidden: p.hidden() },
            Component::Lstm(p) => ComponentKind::Lstm { hidden: p.hidden() },
        }
    }

    pub fn hidden(&self) -> usize {
        self.kind().hidden()
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Component::Fnn(p) => Component::Fnn(p.zeros_like()),
            Component::Rnn(p) => Component::Rnn(p.zeros_like()),
            Component::Lstm(p) => Component::Lstm(p.zeros_like()),
        }
    }

    pub fn init_state(&self, batch: usize, pad: usize) -> ComponentState<T> {
        match self {
            Component::Fnn(p) => ComponentState::Fnn {
                previous: vec![vec![pad; p.history() - 2]; batch],
                pad,
            },
            Component::Rnn(p) => ComponentState::Rnn {
                h: Matrix::zeros(batch, p.hidden()),
            },
            Component::Lstm(p) => ComponentState::Lstm {
                h: Matrix::zeros(batch, p.hidden()),
                c: Matrix::zeros(batch, p.hidden()),
            },
        }
    }

    /// Advances one time step for every stream. `ids` are the current input tokens.
    pub fn step(
        &self,
        embedding: &Matrix<T>,
        ids: &[usize],
        state: &mut ComponentState<T>,
    ) -> Result<(Matrix<T>, StepCache<T>)> {
        if state.batch() != ids.len() {
            return Err(Error::Contract(format!(
                "state holds {} streams but step received {}",
                state.batch(),
                ids.len()
            )));
        }
        match (self, state) {
            (Component::Fnn(p), ComponentState::Fnn { previous, .. }) => {
                let mut ctx_ids = Vec::with_capacity(p.history() - 1);
                ctx_ids.push(ids.to_vec());
                for i in 0..p.history() - 2 {
                    ctx_ids.push(previous.iter().map(|row| row[i]).collect());
                }
                let context = ctx_ids
                    .iter()
                    .map(|col| embedding.gather_rows(col))
                    .collect::<Result<Vec<_>>>()?;
                let (h, cache) = p.forward(&context)?;
                for (row, &id) in previous.iter_mut().zip(ids) {
                    if !row.is_empty() {
                        row.rotate_right(1);
                        row[0] = id;
                    }
                }
                Ok((h, StepCache::Fnn { ids: ctx_ids, cache }))
            }
            (Component::Rnn(p), ComponentState::Rnn { h }) => {
                let e = embedding.gather_rows(ids)?;
                let (h_new, cache) = p.forward(&e, h)?;
                *h = h_new.clone();
                Ok((
                    h_new,
                    StepCache::Rnn {
                        ids: ids.to_vec(),
                        cache,
                    },
                ))
            }
            (Component::Lstm(p), ComponentState::Lstm { h, c }) => {
                let e = embedding.gather_rows(ids)?;
                let (h_new, c_new, cache) = p.forward(&e, h, c)?;
                *h = h_new.clone();
                *c = c_new;
                Ok((
                    h_new,
                    StepCache::Lstm {
                        ids: ids.to_vec(),
                        cache,
                    },
                ))
            }
            _ => Err(Error::Contract("component state does not match component kind".into())),
        }
    }

    /// Backward over one unrolled window. Parameter gradients accumulate into
    /// `grads`; embedding gradients are scattered into `grad_embedding`.
    pub fn backward(
        &self,
        caches: &[StepCache<T>],
        grad_h: &[Matrix<T>],
        grads: &mut Component<T>,
        grad_embedding: &mut Matrix<T>,
    ) -> Result<()> {
        if caches.len() != grad_h.len() {
            return Err(Error::Contract(format!(
                "backward got {} cached steps for {} feature gradients",
                caches.len(),
                grad_h.len()
            )));
        }
        let mismatch = || Error::Contract("cached activations do not belong to this component".into());
        match (self, grads) {
            (Component::Fnn(p), Component::Fnn(g)) => {
                for (cache, gh) in caches.iter().zip(grad_h) {
                    let StepCache::Fnn { ids, cache } = cache else {
                        return Err(mismatch());
                    };
                    let grad_ctx = p.backward(cache, gh, g)?;
                    for (col, ge) in ids.iter().zip(&grad_ctx) {
                        grad_embedding.scatter_add_rows(col, ge)?;
                    }
                }
            }
            (Component::Rnn(p), Component::Rnn(g)) => {
                let (ids, steps) = unzip_caches(caches, |c| match c {
                    StepCache::Rnn { ids, cache } => Some((ids, cache)),
                    _ => None,
                })
                .ok_or_else(mismatch)?;
                let grad_e = p.backward_window(&steps, grad_h, g)?;
                for (col, ge) in ids.iter().zip(&grad_e) {
                    grad_embedding.scatter_add_rows(col, ge)?;
                }
            }
            (Component::Lstm(p), Component::Lstm(g)) => {
                let (ids, steps) = unzip_caches(caches, |c| match c {
                    StepCache::Lstm { ids, cache } => Some((ids, cache)),
                    _ => None,
                })
                .ok_or_else(mismatch)?;
                let grad_e = p.backward_window(&steps, grad_h, g)?;
                for (col, ge) in ids.iter().zip(&grad_e) {
                    grad_embedding.scatter_add_rows(col, ge)?;
                }
            }
            _ => return Err(mismatch()),
        }
        Ok(())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a, T>>) {
        match self {
            Component::Fnn(p) => p.params(prefix, out),
            Component::Rnn(p) => p.params(prefix, out),
            Component::Lstm(p) => p.params(prefix, out),
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        match self {
            Component::Fnn(p) => p.params_mut(prefix, out),
            Component::Rnn(p) => p.params_mut(prefix, out),
            Component::Lstm(p) => p.params_mut(prefix, out),
        }
    }
}

fn unzip_caches<'a, T, C: 'a>(
    caches: &'a [StepCache<T>],
    pick: impl Fn(&'a StepCache<T>) -> Option<(&'a Vec<usize>, &'a C)>,
) -> Option<(Vec<&'a Vec<usize>>, Vec<&'a C>)> {
    let mut ids = Vec::with_capacity(caches.len());
    let mut steps = Vec::with_capacity(caches.len());
    for c in caches {
        let (i, s) = pick(c)?;
        ids.push(i);
        steps.push(s);
    }
    Some((ids, steps))
}

pub(crate) fn weight<'a, T>(prefix: &str, name: &str, value: &'a Matrix<T>) -> Param<'a, T> {
    Param {
        name: format!("{prefix}.{name}"),
        kind: ParamKind::Weight,
        value,
    }
}

pub(crate) fn bias<'a, T>(prefix: &str, name: &str, value: &'a Matrix<T>) -> Param<'a, T> {
    Param {
        name: format!("{prefix}.{name}"),
        kind: ParamKind::Bias,
        value,
    }
}

pub(crate) fn weight_mut<'a, T>(prefix: &str, name: &str, value: &'a mut Matrix<T>) -> ParamMut<'a, T> {
    ParamMut {
        name: format!("{prefix}.{name}"),
        kind: ParamKind::Weight,
        value,
    }
}

pub(crate) fn bias_mut<'a, T>(prefix: &str, name: &str, value: &'a mut Matrix<T>) -> ParamMut<'a, T> {
    ParamMut {
        name: format!("{prefix}.{name}"),
        kind: ParamKind::Bias,
        value,
    }
}
