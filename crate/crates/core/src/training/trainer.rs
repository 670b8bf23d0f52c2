use std::time::Instant;

use super::{lr_schedule, sgd_step, ScheduleDecision, TrainConfig, TrainState};
use crate::corpus::{batches, EncodedCorpus};
use crate::error::Result;
use crate::evaluation::{perplexity, EvalOptions};
use crate::linalg::Real;
use crate::mixture::{sample_batch, Nmm};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean cross-entropy per target token, natural log.
    pub train_ce: f64,
    pub tokens: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_ce: f64,
    pub valid_ppl: f64,
    pub seconds: f64,
    pub tokens_per_sec: f64,
    pub decision: ScheduleDecision,
    /// Validation likelihood is the best seen so far.
    pub is_best: bool,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_ce,valid_ppl,seconds,tokens_per_sec";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.1}",
            self.epoch, self.lr, self.train_ce, self.valid_ppl, self.seconds, self.tokens_per_sec
        )
    }
}

/// One pass over `corpus`: per block, sample masks, unroll, backpropagate with
/// truncation at the block start, and take one SGD step on the mean loss.
/// Recurrent state is reset at the start and carried between blocks.
pub fn run_epoch<T: Real>(
    model: &mut Nmm<T>,
    corpus: &EncodedCorpus,
    config: &TrainConfig,
    state: &mut TrainState<T>,
) -> Result<EpochStats> {
    config.validate()?;
    let start = Instant::now();
    let cursor = batches(corpus, config.batch_size, config.bptt_steps)?;
    let mut carry = model.init_state(config.batch_size);
    let mut grads = model.zeros_like();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for block in cursor {
        let masks = match model.mixture {
            Some(_) => Some(sample_batch(
                model.spec(),
                config.model_dropout,
                block.batch,
                &mut state.rng,
            )?),
            None => None,
        };
        let trace = model.forward_block(&block, &mut carry, masks.as_deref())?;
        total += trace.loss(&block);
        let n = block.batch * block.len;
        tokens += n;
        for g in grads.params_mut() {
            g.value.fill(T::zero());
        }
        model.backward_into(&trace, &block, &mut grads)?;
        let scale = T::of(1.0 / n as f64);
        let clip = config.clip.map(T::of);
        for g in grads.params_mut() {
            for v in g.value.data_mut() {
                *v *= scale;
                if let Some(c) = clip {
                    *v = v.max(-c).min(c);
                }
            }
        }
        sgd_step(model, &grads, state, config)?;
    }
    state.epoch += 1;
    let seconds = start.elapsed().as_secs_f64();
    Ok(EpochStats {
        train_ce: total / tokens as f64,
        tokens,
        seconds,
        tokens_per_sec: tokens as f64 / seconds.max(1e-9),
    })
}

/// Epoch loop with validation and learning-rate schedule. Continues from
/// `state` (fresh or restored from a checkpoint) until the schedule stops or
/// `max_epochs` epochs have completed. `on_epoch` sees every finished epoch.
pub fn train<T: Real>(
    model: &mut Nmm<T>,
    state: &mut TrainState<T>,
    train_corpus: &EncodedCorpus,
    valid_corpus: &EncodedCorpus,
    config: &TrainConfig,
    eval: &EvalOptions,
    mut on_epoch: impl FnMut(&EpochRecord, &Nmm<T>, &TrainState<T>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut log = Vec::new();
    while !state.stopped && state.epoch < config.max_epochs {
        let start = Instant::now();
        let lr = state.lr;
        let stats = run_epoch(model, train_corpus, config, state)?;
        let report = perplexity(&*model, valid_corpus, eval)?;
        let is_best = state.best_valid_ll.is_none_or(|b| report.total_ll > b);
        let decision = lr_schedule(state, report.total_ll, config);
        let record = EpochRecord {
            epoch: state.epoch,
            lr,
            train_ce: stats.train_ce,
            valid_ppl: report.perplexity,
            seconds: start.elapsed().as_secs_f64(),
            tokens_per_sec: stats.tokens_per_sec,
            decision,
            is_best,
        };
        on_epoch(&record, model, state)?;
        log.push(record);
    }
    Ok(log)
}
