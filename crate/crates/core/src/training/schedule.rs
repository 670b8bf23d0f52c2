use super::{TrainConfig, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleDecision {
    Continue,
    Halved,
    Stop,
}

/// Learning-rate control after an epoch with validation log-likelihood
/// `valid_ll` (natural log, summed; higher is better).
///
/// While the relative gain over the best epoch so far stays at or above
/// `min_improvement` the rate is kept. The first insufficient epoch switches
/// to halving mode, where the rate is halved after every epoch; the next
/// insufficient epoch in halving mode stops training.
pub fn lr_schedule<T>(state: &mut TrainState<T>, valid_ll: f64, config: &TrainConfig) -> ScheduleDecision {
    let improved = match state.best_valid_ll {
        None => true,
        Some(best) => relative_gain(valid_ll, best) >= config.min_improvement,
    };
    if state.best_valid_ll.is_none_or(|best| valid_ll > best) {
        state.best_valid_ll = Some(valid_ll);
    }
    let decision = if state.halving {
        if improved {
            ScheduleDecision::Halved
        } else {
            ScheduleDecision::Stop
        }
    } else if improved {
        ScheduleDecision::Continue
    } else {
        state.halving = true;
        ScheduleDecision::Halved
    };
    match decision {
        ScheduleDecision::Halved => state.lr *= 0.5,
        ScheduleDecision::Stop => state.stopped = true,
        ScheduleDecision::Continue => {}
    }
    decision
}

fn relative_gain(ll: f64, best: f64) -> f64 {
    if best == 0.0 {
        ll - best
    } else {
        (ll - best) / best.abs()
    }
}
