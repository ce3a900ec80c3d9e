//! Epoch budgets per trial and the median stopping rule.

use crate::space::HyperConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialStatus {
    Running,
    StoppedEarly,
    Completed,
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Running => "running",
            TrialStatus::StoppedEarly => "stopped_early",
            TrialStatus::Completed => "completed",
            TrialStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "running" => TrialStatus::Running,
            "stopped_early" => TrialStatus::StoppedEarly,
            "completed" => TrialStatus::Completed,
            "failed" => TrialStatus::Failed,
            _ => return None,
        })
    }
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub config: HyperConfig,
    pub seed: u64,
    pub status: TrialStatus,
    /// Validation localisation error (metres) after each executed epoch.
    pub epoch_errors: Vec<f64>,
    /// Epoch cap the trial was started with.
    pub epoch_budget: usize,
    /// Epochs actually executed (the fidelity `r`).
    pub final_epochs: usize,
    pub wall_time_s: f64,
    /// Elapsed tuning time when the trial was recorded.
    pub finished_at_s: f64,
    /// Best validation error over executed epochs, or the failure penalty.
    pub objective: f64,
}

impl TrialRecord {
    pub fn best_error(&self) -> Option<f64> {
        self.epoch_errors.iter().copied().reduce(f64::min)
    }

    /// Epoch count used as the surrogate's fidelity input. Failures are a
    /// property of the configuration, so they sit at the budget they were
    /// started with rather than at the (near zero) epochs they executed.
    pub fn surrogate_epochs(&self) -> usize {
        if self.status == TrialStatus::Failed {
            self.epoch_budget.max(1)
        } else {
            self.final_epochs.max(1)
        }
    }

    pub fn is_observed(&self) -> bool {
        matches!(self.status, TrialStatus::Completed | TrialStatus::StoppedEarly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Per-epoch hook polled by trainers: `(epoch, validation_error) -> decision`,
/// with 1-based epochs.
pub type Monitor<'a> = dyn FnMut(usize, f64) -> StopDecision + 'a;

/// Median stopping rule: a trial is stopped at `epoch` when its best error so
/// far is strictly worse than the median, over completed trials that reached
/// `epoch`, of their running-average error up to `epoch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedianStopping {
    pub grace_epochs: usize,
}

impl Default for MedianStopping {
    fn default() -> Self {
        MedianStopping { grace_epochs: 5 }
    }
}

impl MedianStopping {
    /// `epoch` is 1-based; `current` holds at least `epoch` errors.
    pub fn decide(&self, current: &[f64], completed: &[&[f64]], epoch: usize) -> StopDecision {
        if epoch == 0 || epoch < self.grace_epochs || current.len() < epoch {
            return StopDecision::Continue;
        }
        let mut averages: Vec<f64> = completed
            .iter()
            .filter(|c| c.len() >= epoch)
            .map(|c| c[..epoch].iter().sum::<f64>() / epoch as f64)
            .collect();
        let Some(median) = median(&mut averages) else {
            return StopDecision::Continue;
        };
        let best = current[..epoch].iter().copied().fold(f64::INFINITY, f64::min);
        if best > median {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Applies the median rule to full records; only `Completed` trials count.
pub fn median_stop_decision(
    rule: &MedianStopping,
    current: &TrialRecord,
    completed: &[TrialRecord],
    epoch: usize,
) -> StopDecision {
    let curves: Vec<&[f64]> = completed
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .map(|t| t.epoch_errors.as_slice())
        .collect();
    rule.decide(&current.epoch_errors, &curves, epoch)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Epoch caps: the first `warmup_trials` trials run `min_epochs`, later ones
/// up to `max_epochs` subject to the median rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelitySchedule {
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub warmup_trials: usize,
}

impl Default for FidelitySchedule {
    fn default() -> Self {
        FidelitySchedule {
            min_epochs: 10,
            max_epochs: 50,
            warmup_trials: 4,
        }
    }
}

impl FidelitySchedule {
    /// Epoch cap for trial number `trial_index` (0-based, in dispatch order).
    pub fn fidelity_for_trial(&self, trial_index: usize) -> usize {
        if trial_index < self.warmup_trials {
            self.min_epochs.min(self.max_epochs)
        } else {
            self.max_epochs
        }
    }

    /// Surrogate coordinate for `epochs` executed, in `(0, 1]`.
    pub fn coordinate(&self, epochs: usize) -> f64 {
        (epochs as f64 / self.max_epochs as f64).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(errors: &[f64], status: TrialStatus) -> TrialRecord {
        TrialRecord {
            index: 0,
            config: HyperConfig::new(),
            seed: 0,
            status,
            epoch_errors: errors.to_vec(),
            epoch_budget: errors.len(),
            final_epochs: errors.len(),
            wall_time_s: 0.0,
            finished_at_s: 0.0,
            objective: errors.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn three_completed() -> Vec<TrialRecord> {
        // running averages at epoch 5: 0.5, 0.6, 0.7
        vec![
            record(&[0.9, 0.6, 0.4, 0.3, 0.3, 0.2], TrialStatus::Completed),
            record(&[1.0, 0.7, 0.5, 0.4, 0.4, 0.3], TrialStatus::Completed),
            record(&[1.1, 0.8, 0.6, 0.5, 0.5, 0.4], TrialStatus::Completed),
        ]
    }

    #[test]
    fn no_completed_trials_continue() {
        let rule = MedianStopping::default();
        let cur = record(&[5.0; 8], TrialStatus::Running);
        assert_eq!(median_stop_decision(&rule, &cur, &[], 8), StopDecision::Continue);
    }

    #[test]
    fn better_than_median_continues() {
        let rule = MedianStopping::default();
        let cur = record(&[0.8, 0.5, 0.3, 0.2, 0.25], TrialStatus::Running);
        assert_eq!(median_stop_decision(&rule, &cur, &three_completed(), 5), StopDecision::Continue);
    }

    #[test]
    fn worse_than_median_stops() {
        let rule = MedianStopping::default();
        let cur = record(&[1.2, 1.0, 0.95, 0.9, 0.9], TrialStatus::Running);
        assert_eq!(median_stop_decision(&rule, &cur, &three_completed(), 5), StopDecision::Stop);
        // inside the grace period nothing is stopped
        assert_eq!(median_stop_decision(&rule, &cur, &three_completed(), 4), StopDecision::Continue);
    }

    #[test]
    fn only_completed_trials_that_reached_the_epoch_count() {
        let rule = MedianStopping { grace_epochs: 2 };
        let short = record(&[0.1, 0.1], TrialStatus::Completed);
        let stopped = record(&[0.1, 0.1, 0.1], TrialStatus::StoppedEarly);
        let cur = record(&[1.0, 1.0, 1.0], TrialStatus::Running);
        assert_eq!(median_stop_decision(&rule, &cur, &[short, stopped], 3), StopDecision::Continue);
    }

    #[test]
    fn even_count_median() {
        let rule = MedianStopping { grace_epochs: 1 };
        let a = [0.4];
        let b = [0.6];
        assert_eq!(rule.decide(&[0.5], &[&a, &b], 1), StopDecision::Continue);
        assert_eq!(rule.decide(&[0.51], &[&a, &b], 1), StopDecision::Stop);
    }

    #[test]
    fn dominated_everywhere_never_stopped() {
        let rule = MedianStopping { grace_epochs: 1 };
        let completed = three_completed();
        let curves: Vec<&[f64]> = completed.iter().map(|t| t.epoch_errors.as_slice()).collect();
        let pointwise_min: Vec<f64> = (0..6)
            .map(|e| curves.iter().map(|c| c[e]).fold(f64::INFINITY, f64::min))
            .collect();
        for e in 1..=6 {
            assert_eq!(rule.decide(&pointwise_min, &curves, e), StopDecision::Continue);
        }
    }

    #[test]
    fn schedule_defaults() {
        let s = FidelitySchedule::default();
        assert_eq!(s.fidelity_for_trial(0), 10);
        assert_eq!(s.fidelity_for_trial(3), 10);
        assert_eq!(s.fidelity_for_trial(6), 50);
        assert_eq!(s.coordinate(50), 1.0);
        assert_eq!(s.coordinate(10), 0.2);
    }

    #[test]
    fn status_strings() {
        for s in [
            TrialStatus::Running,
            TrialStatus::StoppedEarly,
            TrialStatus::Completed,
            TrialStatus::Failed,
        ] {
            assert_eq!(TrialStatus::parse(s.as_str()), Some(s));
        }
    }
}
