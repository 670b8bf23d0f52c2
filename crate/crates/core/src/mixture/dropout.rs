use super::spec::MixtureSpec;
use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Which components contribute to the mixture for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub active: Vec<bool>,
    /// Multiplier applied to surviving droppable components, `1 / (1 - p)`.
    pub keep_scale: f64,
}

impl DropoutMask {
    pub fn all_active(components: usize) -> Self {
        Self {
            active: vec![true; components],
            keep_scale: 1.0,
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

fn check_probability(p_drop: f64) -> Result<()> {
    // p = 1 is accepted: every droppable component is removed and the scale is never used.
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::invalid(
            "model dropout",
            format!("probability {p_drop} outside [0, 1]"),
        ));
    }
    Ok(())
}

/// Drops each non-recurrent component independently with probability `p_drop`.
/// Recurrent components are always kept and consume no random draws.
pub fn sample_dropout(spec: &MixtureSpec, p_drop: f64, rng: &mut Rng) -> Result<DropoutMask> {
    check_probability(p_drop)?;
    let active = spec
        .components
        .iter()
        .map(|c| c.is_recurrent() || p_drop == 0.0 || !rng.bernoulli(p_drop))
        .collect();
    let keep_scale = if p_drop < 1.0 { 1.0 / (1.0 - p_drop) } else { 1.0 };
    Ok(DropoutMask { active, keep_scale })
}

/// One mask per stream of a batch.
pub fn sample_batch(spec: &MixtureSpec, p_drop: f64, batch: usize, rng: &mut Rng) -> Result<Vec<DropoutMask>> {
    (0..batch).map(|_| sample_dropout(spec, p_drop, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_keeps_everything() {
        let spec = MixtureSpec::parse("F8^2-4+R4").unwrap();
        let mut rng = Rng::new(0);
        for _ in 0..1000 {
            let m = sample_dropout(&spec, 0.0, &mut rng).unwrap();
            assert_eq!(m.active_count(), 4);
            assert_eq!(m.keep_scale, 1.0);
        }
    }

    #[test]
    fn recurrent_only_spec_never_drops() {
        let spec = MixtureSpec::parse("R4+L4").unwrap();
        let mut rng = Rng::new(1);
        for p in [0.0, 0.4, 0.9, 1.0] {
            for _ in 0..200 {
                assert_eq!(sample_dropout(&spec, p, &mut rng).unwrap().active, vec![true, true]);
            }
        }
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let spec = MixtureSpec::parse("F8^2").unwrap();
        let mut rng = Rng::new(1);
        assert!(sample_dropout(&spec, -0.1, &mut rng).is_err());
        assert!(sample_dropout(&spec, 1.5, &mut rng).is_err());
        assert!(sample_dropout(&spec, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn drop_frequency_matches_probability() {
        let spec = MixtureSpec::parse("F8^2,3+R4").unwrap();
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let mut dropped = [0usize; 3];
        for _ in 0..n {
            let m = sample_dropout(&spec, 0.4, &mut rng).unwrap();
            for (d, &a) in dropped.iter_mut().zip(&m.active) {
                *d += usize::from(!a);
            }
        }
        for &d in &dropped[..2] {
            let freq = d as f64 / n as f64;
            assert!((freq - 0.4).abs() < 0.01, "{freq}");
        }
        assert_eq!(dropped[2], 0);
    }
}
