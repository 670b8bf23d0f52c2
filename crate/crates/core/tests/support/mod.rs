//! Finite-difference gradient checking shared by the test targets.

#![allow(dead_code)]

use nmm::corpus::{batches, Block, EncodedCorpus};
use nmm::linalg::Rng;
use nmm::mixture::{sample_batch, DropoutMask, MixtureSpec, ModelState, Nmm, NmmConfig};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;
pub const MIN_MARGIN: f64 = 1e-3;

pub struct Case {
    model: Nmm<f64>,
    state: ModelState<f64>,
    block: Block,
    masks: Option<Vec<DropoutMask>>,
}

/// Random model and ids; a warm-up block leaves non-zero recurrent state.
pub fn build(config: NmmConfig, seed: u64, p_drop: Option<f64>) -> Case {
    let mut rng = Rng::new(seed);
    let model = Nmm::new(config.clone(), 1, &mut rng).unwrap();
    let ids = (0..18).map(|_| rng.below(config.vocab_size)).collect();
    let corpus = EncodedCorpus::from_ids(ids, 0);
    let mut blocks = batches(&corpus, 2, 4).unwrap();
    let warmup = blocks.next().unwrap();
    let block = blocks.next().unwrap();
    let mut state = model.init_state(2);
    model.forward_block(&warmup, &mut state, None).unwrap();
    let masks = p_drop.map(|p| sample_batch(&config.spec, p, 2, &mut rng).unwrap());
    Case {
        model,
        state,
        block,
        masks,
    }
}

fn loss(case: &Case, model: &Nmm<f64>) -> f64 {
    let mut state = case.state.clone();
    let trace = model
        .forward_block(&case.block, &mut state, case.masks.as_deref())
        .unwrap();
    trace.loss(&case.block)
}

pub struct Comparison {
    pub entries: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

/// Returns `None` when the point sits too close to a ReLU kink.
pub fn check(case: &Case) -> Option<Comparison> {
    let mut state = case.state.clone();
    let trace = case
        .model
        .forward_block(&case.block, &mut state, case.masks.as_deref())
        .unwrap();
    if trace.relu_margin() < MIN_MARGIN {
        return None;
    }
    let grads = case.model.backward(&trace, &case.block).unwrap();
    let mut out = Comparison {
        entries: 0,
        max_rel: 0.0,
        failures: Vec::new(),
    };
    for b in 0..case.model.params().len() {
        let analytic = grads.params()[b].value.clone();
        let name = grads.params()[b].name.clone();
        for i in 0..analytic.len() {
            let mut plus = case.model.clone();
            plus.params_mut()[b].value.data_mut()[i] += STEP;
            let mut minus = case.model.clone();
            minus.params_mut()[b].value.data_mut()[i] -= STEP;
            let numeric = (loss(case, &plus) - loss(case, &minus)) / (2.0 * STEP);
            let a = analytic.data()[i];
            let diff = (a - numeric).abs();
            out.entries += 1;
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            if scale > 1e-4 {
                out.max_rel = out.max_rel.max(rel);
            }
            if diff > ABS_TOL && rel > REL_TOL {
                out.failures
                    .push(format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Some(out)
}

pub struct Summary {
    pub seeds: usize,
    pub skipped: usize,
    pub entries: usize,
    pub max_rel: f64,
}

/// Checks `seeds` usable seeds, skipping points near a ReLU kink.
pub fn run(
    spec: &str,
    configure: impl Fn(MixtureSpec) -> NmmConfig,
    p_drop: Option<f64>,
    seeds: usize,
) -> Result<Summary, String> {
    let mut summary = Summary {
        seeds: 0,
        skipped: 0,
        entries: 0,
        max_rel: 0.0,
    };
    let mut seed = 0u64;
    while summary.seeds < seeds {
        if seed >= 10 * seeds as u64 {
            return Err(format!("{spec}: too many seeds near a ReLU kink"));
        }
        let case = build(configure(MixtureSpec::parse(spec).unwrap()), seed, p_drop);
        match check(&case) {
            None => summary.skipped += 1,
            Some(c) if !c.failures.is_empty() => {
                return Err(format!("{spec} seed {seed}: {}", c.failures.join("; ")));
            }
            Some(c) => {
                summary.seeds += 1;
                summary.entries += c.entries;
                summary.max_rel = summary.max_rel.max(c.max_rel);
            }
        }
        seed += 1;
    }
    Ok(summary)
}
