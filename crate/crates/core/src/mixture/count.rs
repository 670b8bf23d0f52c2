//! Parameter accounting from shapes alone (no allocation).

use super::model::NmmConfig;
use crate::components::ComponentKind;
use crate::error::{Error, Result};

/// Exact scalar count of a model laid out by `config`.
pub fn count_params(config: &NmmConfig, include_biases: bool) -> u64 {
    let b = u64::from(include_biases);
    let emb = config.embedding_size as u64;
    let vocab = config.vocab_size as u64;
    let mut total = vocab * emb;
    for &kind in &config.spec.components {
        total += component_params(kind, config, include_biases);
    }
    if let Some(mix) = config.mixture_size {
        let mix = mix as u64;
        total += config
            .spec
            .components
            .iter()
            .map(|c| c.hidden() as u64 * mix)
            .sum::<u64>();
        total += b * mix;
    }
    let top = config.top_width() as u64;
    total + top * vocab + b * vocab
}

pub fn component_params(kind: ComponentKind, config: &NmmConfig, include_biases: bool) -> u64 {
    let b = u64::from(include_biases);
    let emb = config.embedding_size as u64;
    match kind {
        ComponentKind::Fnn { hidden, history } => {
            let s = hidden as u64;
            let deep = config.fnn_depth.max(1) as u64 - 1;
            (history as u64 - 1) * emb * s + b * s + deep * (s * s + b * s)
        }
        ComponentKind::Rnn { hidden } => {
            let s = hidden as u64;
            let identity = config.layout().rnn_identity_input && hidden == config.embedding_size;
            let input = if identity { 0 } else { emb * s };
            input + s * s + b * s
        }
        ComponentKind::Lstm { hidden } => {
            let s = hidden as u64;
            4 * emb * s + 4 * s * s + b * 4 * s
        }
    }
}

/// Relative parameter growth in percent: `100 * (nop - baseline) / baseline`.
pub fn param_growth(nop: u64, baseline: u64) -> Result<f64> {
    if baseline == 0 {
        return Err(Error::invalid("baseline", "parameter count must be positive"));
    }
    Ok(100.0 * (nop as f64 - baseline as f64) / baseline as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::mixture::{MixtureSpec, Nmm};

    fn cfg(spec: &str, emb: usize, mix: Option<usize>, vocab: usize) -> NmmConfig {
        NmmConfig::new(MixtureSpec::parse(spec).unwrap(), emb, mix, vocab)
    }

    #[test]
    fn hand_countable_model() {
        // U 2x1, RNN W_in 1x1 + V 1x1 + b 1, S 1x1 + b 1, W 1x2 + b 2
        let c = cfg("R1", 1, Some(1), 2);
        assert_eq!(count_params(&c, false), 2 + 2 + 1 + 2);
        assert_eq!(count_params(&c, true), 2 + 3 + 2 + 4);
    }

    #[test]
    fn arithmetic_matches_allocated_containers() {
        let specs = ["F3^2", "F3^2-4", "R4", "L2", "F3^2+R4", "L2+F5^3,2", "R3+L4+F2^2-3"];
        for (i, s) in specs.iter().enumerate() {
            for mix in [None, Some(5)] {
                let c = cfg(s, 3, mix, 11);
                if c.validate().is_err() {
                    continue;
                }
                for depth in [1, 2] {
                    let c = c.clone().with_fnn_depth(depth);
                    let m: Nmm<f64> = Nmm::new(c.clone(), 1, &mut Rng::new(i as u64)).unwrap();
                    for biases in [false, true] {
                        assert_eq!(count_params(&c, biases), m.param_count(biases), "{s} {mix:?} {depth}");
                    }
                }
            }
        }
    }

    #[test]
    fn shared_layers_are_counted_once() {
        let (emb, mix, vocab) = (4, 6, 13);
        let a = cfg("F3^2,3", emb, Some(mix), vocab);
        let b = cfg("R5+L2", emb, Some(mix), vocab);
        let ab = cfg("F3^2,3+R5+L2", emb, Some(mix), vocab);
        let shared = (vocab * emb + mix * vocab + mix + vocab) as u64;
        assert_eq!(
            count_params(&ab, true),
            count_params(&a, true) + count_params(&b, true) - shared
        );
    }

    #[test]
    fn growth_identities() {
        assert_eq!(param_growth(10, 10).unwrap(), 0.0);
        assert_eq!(param_growth(20, 10).unwrap(), 100.0);
        assert!(param_growth(1, 0).is_err());
        let pg = param_growth(5_180_000, 6_970_000).unwrap();
        assert!((pg - -25.68).abs() < 0.005, "{pg}");
    }
}
