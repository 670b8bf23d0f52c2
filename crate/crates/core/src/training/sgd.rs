use super::{TrainConfig, TrainState};
use crate::components::ParamKind;
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::mixture::Nmm;

/// Heavy-ball SGD with L2 weight decay on weight matrices:
///
/// ```text
/// v <- momentum * v - lr * (g + decay * p)
/// p <- p + v
/// ```
///
/// Refuses to touch any parameter when a gradient is non-finite.
pub fn sgd_step<T: Real>(
    model: &mut Nmm<T>,
    grads: &Nmm<T>,
    state: &mut TrainState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let grad_blocks = grads.params();
    for g in &grad_blocks {
        if !g.value.is_finite() {
            return Err(Error::NonFinite {
                block: g.name.clone(),
                step: state.step,
            });
        }
    }
    let lr = T::of(state.lr);
    let momentum = T::of(config.momentum);
    let decay = T::of(config.weight_decay);
    let params = model.params_mut();
    let velocity = state.velocity.params_mut();
    if params.len() != grad_blocks.len() || params.len() != velocity.len() {
        return Err(Error::Contract("gradient/momentum layout differs from model".into()));
    }
    for ((p, g), v) in params.into_iter().zip(&grad_blocks).zip(velocity) {
        if p.value.shape() != g.value.shape() || p.value.shape() != v.value.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                left: p.value.shape(),
                right: g.value.shape(),
            });
        }
        let decay = if p.kind == ParamKind::Weight { decay } else { T::zero() };
        for ((w, &dw), vel) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.value.data())
            .zip(v.value.data_mut())
        {
            *vel = momentum * *vel - lr * (dw + decay * *w);
            *w += *vel;
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Rng};
    use crate::mixture::{MixtureSpec, NmmConfig};

    fn tiny() -> Nmm<f64> {
        let cfg = NmmConfig::new(MixtureSpec::parse("R2").unwrap(), 2, Some(2), 3);
        Nmm::new(cfg, 1, &mut Rng::new(3)).unwrap()
    }

    fn fill_grads(m: &Nmm<f64>, v: f64) -> Nmm<f64> {
        let mut g = m.zeros_like();
        for p in g.params_mut() {
            p.value.fill(v);
        }
        g
    }

    #[test]
    fn reduces_to_vanilla_sgd() {
        let mut m = tiny();
        let before = m.clone();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            learning_rate: 0.1,
            ..TrainConfig::ptb()
        };
        let mut st = TrainState::new(&m, &cfg);
        let g = fill_grads(&m, 2.0);
        sgd_step(&mut m, &g, &mut st, &cfg).unwrap();
        for (a, b) in m.params().iter().zip(before.params()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert!((x - (y - 0.2)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gradient_without_decay_only_decays_buffers() {
        let mut m = tiny();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::ptb()
        };
        let mut st = TrainState::new(&m, &cfg);
        for p in st.velocity.params_mut() {
            p.value.fill(0.0);
        }
        let before = m.clone();
        let zero = m.zeros_like();
        sgd_step(&mut m, &zero, &mut st, &cfg).unwrap();
        assert_eq!(m, before);

        for p in st.velocity.params_mut() {
            p.value.fill(1.0);
        }
        sgd_step(&mut m, &zero, &mut st, &cfg).unwrap();
        for p in st.velocity.params() {
            assert!(p.value.data().iter().all(|&v| v == 0.9));
        }
    }

    #[test]
    fn two_scripted_scalar_steps() {
        let mut m = tiny();
        for p in m.params_mut() {
            p.value.fill(1.0);
        }
        let cfg = TrainConfig {
            learning_rate: 0.5,
            momentum: 0.9,
            weight_decay: 0.1,
            ..TrainConfig::ptb()
        };
        let mut st = TrainState::new(&m, &cfg);
        let g = fill_grads(&m, 0.2);
        sgd_step(&mut m, &g, &mut st, &cfg).unwrap();
        sgd_step(&mut m, &g, &mut st, &cfg).unwrap();
        // weights: v1 = -0.5*(0.2+0.1) = -0.15, p1 = 0.85
        //          v2 = 0.9*-0.15 - 0.5*(0.2+0.085) = -0.2775, p2 = 0.5725
        // biases:  v1 = -0.1, p1 = 0.9; v2 = -0.09 - 0.1 = -0.19, p2 = 0.71
        let w = m.output.get(0, 0);
        let b = m.output_bias.get(0, 0);
        assert!((w - 0.5725).abs() < 1e-12, "{w}");
        assert!((b - 0.71).abs() < 1e-12, "{b}");
        assert_eq!(st.step, 2);
    }

    #[test]
    fn decay_never_grows_magnitudes() {
        let mut m = tiny();
        let cfg = TrainConfig::ptb();
        let mut st = TrainState::new(&m, &cfg);
        let zero = m.zeros_like();
        for _ in 0..50 {
            let before = m.clone();
            sgd_step(&mut m, &zero, &mut st, &cfg).unwrap();
            for (a, b) in m.params().iter().zip(before.params()) {
                for (x, y) in a.value.data().iter().zip(b.value.data()) {
                    assert!(x.abs() <= y.abs());
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_block_name() {
        let mut m = tiny();
        let cfg = TrainConfig::ptb();
        let mut st = TrainState::new(&m, &cfg);
        let before = m.clone();
        let mut g = m.zeros_like();
        g.output = Matrix::filled(2, 3, f64::NAN);
        match sgd_step(&mut m, &g, &mut st, &cfg) {
            Err(Error::NonFinite { block, step }) => {
                assert_eq!(block, "out.w");
                assert_eq!(step, 0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(m, before);
    }
}
