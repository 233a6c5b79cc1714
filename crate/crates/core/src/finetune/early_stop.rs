use crate::metrics::Direction;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue { improved: bool },
    Stop,
}

/// Patience counter over validation results. Only strict improvements
/// reset it; ties and NaN count as failures.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    direction: Direction,
    best: Option<(usize, f64)>,
    bad_validations: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, direction: Direction) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        EarlyStopping { patience, direction, best: None, bad_validations: 0 }
    }

    /// `(step, metric)` of the best validation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn counter(&self) -> usize {
        self.bad_validations
    }

    pub fn update(&mut self, step: usize, metric: f64) -> StopDecision {
        early_stop_update(self, step, metric)
    }
}

pub fn early_stop_update(state: &mut EarlyStopping, step: usize, metric: f64) -> StopDecision {
    let improved = !metric.is_nan()
        && match state.best {
            None => true,
            Some((_, best)) => state.direction.improves(metric, best),
        };
    if improved {
        state.best = Some((step, metric));
        state.bad_validations = 0;
        return StopDecision::Continue { improved: true };
    }
    state.bad_validations += 1;
    if state.bad_validations >= state.patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue { improved: false }
    }
}
