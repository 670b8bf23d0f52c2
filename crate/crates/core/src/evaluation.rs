//! Perplexity and linear interpolation of separately trained models.

use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::mixture::{param_growth, Nmm};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Anything that yields next-token distributions over a sequence.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Runs from a fresh state over `inputs` and calls `visit(t, row)` with the
    /// distribution over the token that follows `inputs[t]`.
    fn predict(&self, inputs: &[usize], visit: &mut dyn FnMut(usize, &[f64])) -> Result<()>;
}

impl<T: Real> LanguageModel for Nmm<T> {
    fn vocab_size(&self) -> usize {
        Nmm::vocab_size(self)
    }

    fn predict(&self, inputs: &[usize], visit: &mut dyn FnMut(usize, &[f64])) -> Result<()> {
        let mut state = self.init_state(1);
        let mut row = vec![0.0; self.vocab_size()];
        for (t, &id) in inputs.iter().enumerate() {
            let trace = self.forward(&[vec![id]], &mut state, None)?;
            for (r, &p) in row.iter_mut().zip(trace.probs(0).row(0)) {
                *r = p.as_f64();
            }
            visit(t, &row);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score sentence-boundary targets.
    pub include_eos: bool,
    pub eos_id: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            include_eos: true,
            eos_id: Vocabulary::EOS_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub token_count: usize,
    /// Summed natural-log likelihood of the scored tokens.
    pub total_ll: f64,
    pub perplexity: f64,
    /// Number of parameters, when known.
    pub nop: Option<u64>,
    /// Parameter growth over a baseline, in percent.
    pub pg: Option<f64>,
}

impl EvalReport {
    fn from_probs(probs: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut token_count = 0;
        let mut total_ll = 0.0;
        for p in probs {
            total_ll += p.max(PROB_FLOOR).ln();
            token_count += 1;
        }
        if token_count == 0 {
            return Err(Error::invalid("corpus", "no tokens to evaluate"));
        }
        Ok(Self {
            token_count,
            total_ll,
            perplexity: (-total_ll / token_count as f64).exp(),
            nop: None,
            pg: None,
        })
    }

    /// Attaches the parameter count and, with a baseline count, the growth.
    pub fn with_params(mut self, nop: u64, baseline: Option<u64>) -> Result<Self> {
        self.nop = Some(nop);
        self.pg = baseline.map(|b| param_growth(nop, b)).transpose()?;
        Ok(self)
    }

    pub const CSV_HEADER: &'static str = "model,ppl,nop,pg";

    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{:.4},{},{}",
            self.perplexity,
            self.nop.map(|n| n.to_string()).unwrap_or_default(),
            self.pg.map(|g| format!("{g:.2}")).unwrap_or_default()
        )
    }
}

/// Fixed-width table of named reports.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>10}  {:>9}  {:>8}\n", "model", "PPL", "NoP", "PG");
    for (name, r) in rows {
        let nop = r
            .nop
            .map(|n| format!("{:.2}M", n as f64 / 1e6))
            .unwrap_or_else(|| "-".into());
        let pg = r.pg.map(|g| format!("{g:.2}%")).unwrap_or_else(|| "-".into());
        out.push_str(&format!("{name:<width$}  {:>10.2}  {nop:>9}  {pg:>8}\n", r.perplexity));
    }
    out
}

/// Context ids: an implicit sentence boundary followed by all but the last token.
fn contexts(corpus: &EncodedCorpus, opts: &EvalOptions) -> Vec<usize> {
    let mut inputs = Vec::with_capacity(corpus.ids.len());
    inputs.push(opts.eos_id);
    inputs.extend_from_slice(&corpus.ids[..corpus.ids.len().saturating_sub(1)]);
    inputs
}

/// Probability of every scored target, in corpus order.
pub fn target_probs(model: &dyn LanguageModel, corpus: &EncodedCorpus, opts: &EvalOptions) -> Result<Vec<f64>> {
    if corpus.ids.is_empty() {
        return Err(Error::invalid("corpus", "no tokens to evaluate"));
    }
    let vocab = model.vocab_size();
    if let Some(&bad) = corpus.ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::invalid(
            "corpus",
            format!("token id {bad} outside vocabulary of {vocab}"),
        ));
    }
    let mut out = Vec::with_capacity(corpus.ids.len());
    model.predict(&contexts(corpus, opts), &mut |t, row| {
        let target = corpus.ids[t];
        if opts.include_eos || target != opts.eos_id {
            out.push(row[target]);
        }
    })?;
    Ok(out)
}

/// Sequential full-corpus perplexity from a fresh state.
pub fn perplexity(model: &dyn LanguageModel, corpus: &EncodedCorpus, opts: &EvalOptions) -> Result<EvalReport> {
    EvalReport::from_probs(target_probs(model, corpus, opts)?)
}

fn check_weights(count: usize, weights: &[f64]) -> Result<()> {
    if count < 2 {
        return Err(Error::invalid("interpolation", "at least two models are required"));
    }
    if weights.len() != count {
        return Err(Error::invalid(
            "interpolation",
            format!("{} weights for {count} models", weights.len()),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("interpolation", "weights must be non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("interpolation", format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn check_vocab(models: &[&dyn LanguageModel]) -> Result<()> {
    let v = models[0].vocab_size();
    if models.iter().any(|m| m.vocab_size() != v) {
        return Err(Error::invalid("interpolation", "models use different vocabularies"));
    }
    Ok(())
}

/// `sum_k weights[k] * rows[k]`, element by element.
pub fn interpolate_rows(rows: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for (row, &w) in rows.iter().zip(weights) {
        for (o, &p) in out.iter_mut().zip(row.iter()) {
            *o += w * p;
        }
    }
    out
}

fn mixed<'a>(probs: &'a [Vec<f64>], weights: &[f64]) -> impl Iterator<Item = f64> + 'a {
    let weights = weights.to_vec();
    (0..probs[0].len()).map(move |t| {
        let mut p = 0.0;
        for (k, w) in weights.iter().enumerate() {
            p += w * probs[k][t];
        }
        p
    })
}

/// Perplexity of the linear mixture `sum_k weights[k] * p_k`.
pub fn interpolate_ppl(
    models: &[&dyn LanguageModel],
    weights: &[f64],
    corpus: &EncodedCorpus,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_weights(models.len(), weights)?;
    check_vocab(models)?;
    let probs = models
        .iter()
        .map(|m| target_probs(*m, corpus, opts))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_probs(mixed(&probs, weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub weights: Vec<f64>,
    pub report: EvalReport,
    pub candidates: usize,
}

/// Every weight vector on the simplex with entries that are multiples of `1/steps`,
/// in ascending lexicographic order.
pub fn simplex_grid(models: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k - 1, left - c, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if models > 0 {
        rec(models, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

/// Exhaustive simplex search for the weights minimizing perplexity on
/// `corpus`. Ties go to the lexicographically smallest weight vector.
pub fn grid_search_weights(
    models: &[&dyn LanguageModel],
    corpus: &EncodedCorpus,
    step: f64,
    opts: &EvalOptions,
) -> Result<GridResult> {
    let steps = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (steps * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("grid step", format!("{step} does not divide 1")));
    }
    if models.len() < 2 {
        return Err(Error::invalid("interpolation", "at least two models are required"));
    }
    check_vocab(models)?;
    let probs = models
        .iter()
        .map(|m| target_probs(*m, corpus, opts))
        .collect::<Result<Vec<_>>>()?;
    let grid = simplex_grid(models.len(), steps as usize);
    let candidates = grid.len();
    let mut best: Option<(Vec<f64>, EvalReport)> = None;
    for w in grid {
        let report = EvalReport::from_probs(mixed(&probs, &w))?;
        if best.as_ref().is_none_or(|(_, b)| report.perplexity < b.perplexity) {
            best = Some((w, report));
        }
    }
    let (weights, report) = best.expect("grid is never empty");
    Ok(GridResult {
        weights,
        report,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a fixed row per position.
    struct Scripted {
        rows: Vec<Vec<f64>>,
    }

    impl LanguageModel for Scripted {
        fn vocab_size(&self) -> usize {
            self.rows[0].len()
        }

        fn predict(&self, inputs: &[usize], visit: &mut dyn FnMut(usize, &[f64])) -> Result<()> {
            for t in 0..inputs.len() {
                visit(t, &self.rows[t % self.rows.len()]);
            }
            Ok(())
        }
    }

    fn corpus(ids: &[usize]) -> EncodedCorpus {
        EncodedCorpus::from_ids(ids.to_vec(), 0)
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let m = Scripted {
            rows: vec![vec![0.1; 10]],
        };
        let r = perplexity(&m, &corpus(&[2, 3, 9, 1, 4, 4, 7]), &EvalOptions::default()).unwrap();
        assert!((r.perplexity - 10.0).abs() < 1e-9, "{}", r.perplexity);
        assert_eq!(r.token_count, 7);
    }

    #[test]
    fn scripted_two_tokens() {
        let m = Scripted {
            rows: vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.125, 0.0, 0.875, 0.0]],
        };
        let r = perplexity(&m, &corpus(&[1, 0]), &EvalOptions::default()).unwrap();
        assert_eq!(r.perplexity, 4.0);
        assert_eq!(r.token_count, 2);
    }

    #[test]
    fn eos_targets_can_be_excluded() {
        let m = Scripted {
            rows: vec![vec![0.25; 4]],
        };
        let opts = EvalOptions {
            include_eos: false,
            ..EvalOptions::default()
        };
        let r = perplexity(&m, &corpus(&[2, 1, 3, 1]), &opts).unwrap();
        assert_eq!(r.token_count, 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let m = Scripted { rows: vec![vec![1.0]] };
        assert!(perplexity(&m, &corpus(&[]), &EvalOptions::default()).is_err());
    }

    #[test]
    fn zero_probability_hits_the_floor() {
        let m = Scripted {
            rows: vec![vec![1.0, 0.0]],
        };
        let r = perplexity(&m, &corpus(&[1]), &EvalOptions::default()).unwrap();
        assert!((r.perplexity - 1e12).abs() < 1.0);
    }

    #[test]
    fn hand_mixed_interpolation() {
        let a = Scripted {
            rows: vec![vec![0.5, 0.25, 0.25]],
        };
        let b = Scripted {
            rows: vec![vec![0.1, 0.1, 0.8]],
        };
        let c = corpus(&[0, 2]);
        let r = interpolate_ppl(&[&a, &b], &[0.5, 0.5], &c, &EvalOptions::default()).unwrap();
        let want = (-(0.3f64.ln() + 0.525f64.ln()) / 2.0).exp();
        assert!((r.perplexity - want).abs() < 1e-12);
        let row = interpolate_rows(&[&a.rows[0], &b.rows[0]], &[0.3, 0.7]);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_weights_reproduce_single_model() {
        let a = Scripted {
            rows: vec![vec![0.3, 0.2, 0.5], vec![0.7, 0.2, 0.1]],
        };
        let b = Scripted {
            rows: vec![vec![0.1, 0.1, 0.8]],
        };
        let c = corpus(&[0, 2, 1, 1, 0]);
        let opts = EvalOptions::default();
        let single = perplexity(&a, &c, &opts).unwrap();
        let mix = interpolate_ppl(&[&a, &b], &[1.0, 0.0], &c, &opts).unwrap();
        assert_eq!(single, mix);
        let same = interpolate_ppl(&[&a, &a], &[0.3, 0.7], &c, &opts).unwrap();
        assert!((same.perplexity - single.perplexity).abs() < 1e-12);
    }

    #[test]
    fn invalid_interpolation_inputs() {
        let a = Scripted {
            rows: vec![vec![0.5, 0.5]],
        };
        let b = Scripted {
            rows: vec![vec![0.2, 0.3, 0.5]],
        };
        let c = corpus(&[0]);
        let o = EvalOptions::default();
        assert!(interpolate_ppl(&[&a, &a], &[0.6, 0.6], &c, &o).is_err());
        assert!(interpolate_ppl(&[&a, &a], &[1.5, -0.5], &c, &o).is_err());
        assert!(interpolate_ppl(&[&a], &[1.0], &c, &o).is_err());
        assert!(interpolate_ppl(&[&a, &b], &[0.5, 0.5], &c, &o).is_err());
        assert!(grid_search_weights(&[&a, &a], &c, 0.3, &o).is_err());
    }

    #[test]
    fn grid_counts_and_order() {
        assert_eq!(simplex_grid(2, 10).len(), 11);
        assert_eq!(simplex_grid(3, 4).len(), 15);
        let g = simplex_grid(2, 2);
        assert_eq!(g, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn dominant_model_takes_all_weight() {
        let strong = Scripted {
            rows: vec![vec![0.6, 0.3, 0.1]],
        };
        let weak = Scripted {
            rows: vec![vec![0.4, 0.2, 0.4]],
        };
        let c = corpus(&[0, 1, 0, 1]);
        let o = EvalOptions::default();
        for step in [0.5, 0.1, 0.05] {
            let r = grid_search_weights(&[&weak, &strong], &c, step, &o).unwrap();
            assert_eq!(r.weights, vec![0.0, 1.0]);
        }
        let r = grid_search_weights(&[&weak, &strong], &c, 0.1, &o).unwrap();
        assert_eq!(r.candidates, 11);
    }

    #[test]
    fn selected_weights_beat_endpoints() {
        let a = Scripted {
            rows: vec![vec![0.7, 0.1, 0.2], vec![0.1, 0.8, 0.1]],
        };
        let b = Scripted {
            rows: vec![vec![0.2, 0.6, 0.2], vec![0.5, 0.1, 0.4]],
        };
        let c = corpus(&[0, 1, 1, 0, 2, 2]);
        let o = EvalOptions::default();
        let r = grid_search_weights(&[&a, &b], &c, 0.05, &o).unwrap();
        let pa = perplexity(&a, &c, &o).unwrap().perplexity;
        let pb = perplexity(&b, &c, &o).unwrap().perplexity;
        assert!(r.report.perplexity <= pa && r.report.perplexity <= pb);
    }

    #[test]
    fn tie_goes_to_smallest_weights() {
        let a = Scripted {
            rows: vec![vec![0.5, 0.5]],
        };
        let r = grid_search_weights(&[&a, &a], &corpus(&[0, 1]), 0.25, &EvalOptions::default()).unwrap();
        assert_eq!(r.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn report_rows() {
        let r = EvalReport::from_probs([0.5, 0.5])
            .unwrap()
            .with_params(5_180_000, Some(6_971_600))
            .unwrap();
        assert_eq!(r.perplexity, 2.0);
        let row = r.csv_row("L100+R100");
        assert!(row.starts_with("L100+R100,2.0000,5180000,-25.70"), "{row}");
        let t = format_table(&[("L100+R100".into(), r)]);
        assert!(t.contains("5.18M"));
    }
}
