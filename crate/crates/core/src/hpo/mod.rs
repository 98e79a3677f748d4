//! Exhaustive grid search over the fine-tuning hyperparameters.

use std::cmp::Ordering;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};

/// Candidate values per axis. Grid points are enumerated with the learning
/// rate varying slowest, then epochs, weight decay and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl GridSpace {
    /// The reference space: 2 x 3 x 3 x 3 = 54 points.
    pub fn reference() -> Self {
        GridSpace {
            learning_rates: vec![2e-5, 5e-5],
            epochs: vec![10, 20, 30],
            weight_decays: vec![0.01, 0.001, 0.0001],
            batch_sizes: vec![4, 8, 16],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.epochs.is_empty()
            || self.weight_decays.is_empty()
            || self.batch_sizes.is_empty()
        {
            return Err(Error::config("every grid axis needs at least one value"));
        }
        let reals = self.learning_rates.iter().chain(&self.weight_decays);
        if reals.into_iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::config("grid learning rates and weight decays must be positive"));
        }
        if self.epochs.contains(&0) || self.batch_sizes.contains(&0) {
            return Err(Error::config("grid epochs and batch sizes must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.epochs.len() * self.weight_decays.len() * self.batch_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point as a copy of `base` with the four axes overridden.
    pub fn points(&self, base: &TrainingConfig) -> Result<Vec<TrainingConfig>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rates {
            for &epochs in &self.epochs {
                for &weight_decay in &self.weight_decays {
                    for &batch_size in &self.batch_sizes {
                        out.push(TrainingConfig {
                            learning_rate,
                            epochs,
                            weight_decay,
                            batch_size,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// What a trial reports back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub validation_f1: f64,
    pub evaluation_loss: f64,
}

/// One line of the trial log. Failed trials carry `error` and no scores.
/// Wall time is kept out of serialization so logs of identical runs are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: TrialResult,
    /// In grid order.
    pub trials: Vec<TrialResult>,
}

/// Higher F1 first, then lower loss, then earlier grid index.
fn rank(a: &TrialResult, b: &TrialResult) -> Ordering {
    let f1 = |t: &TrialResult| t.validation_f1.unwrap_or(f64::NEG_INFINITY);
    let loss = |t: &TrialResult| t.evaluation_loss.unwrap_or(f64::INFINITY);
    f1(b)
        .total_cmp(&f1(a))
        .then(loss(a).total_cmp(&loss(b)))
        .then(a.index.cmp(&b.index))
}

/// Best successful trial, independent of the order of `trials`.
pub fn select_best(trials: &[TrialResult]) -> Option<&TrialResult> {
    trials.iter().filter(|t| t.succeeded()).min_by(|a, b| rank(a, b))
}

/// Runs `train_and_eval` on each configuration in order. A trial that
/// errors, or reports an F1 outside [0, 1] or a non-finite loss, is logged
/// as failed and excluded from selection.
pub fn run_trials<F>(configs: Vec<TrainingConfig>, mut train_and_eval: F) -> Result<GridOutcome>
where
    F: FnMut(&TrainingConfig) -> Result<TrialScore>,
{
    let total = configs.len();
    let mut trials = Vec::with_capacity(total);
    for (index, config) in configs.into_iter().enumerate() {
        let t0 = Instant::now();
        let outcome = train_and_eval(&config).and_then(|s| {
            if !(0.0..=1.0).contains(&s.validation_f1) || !s.evaluation_loss.is_finite() {
                Err(Error::Numeric(format!(
                    "trial reported F1 {} and loss {}",
                    s.validation_f1, s.evaluation_loss
                )))
            } else {
                Ok(s)
            }
        });
        let wall_time_secs = t0.elapsed().as_secs_f64();
        let result = match outcome {
            Ok(s) => {
                info!(
                    "trial {}/{total}: F1 {:.6}, loss {:.6}",
                    index + 1,
                    s.validation_f1,
                    s.evaluation_loss
                );
                TrialResult {
                    index,
                    config,
                    validation_f1: Some(s.validation_f1),
                    evaluation_loss: Some(s.evaluation_loss),
                    error: None,
                    wall_time_secs,
                }
            }
            Err(e) => {
                warn!("trial {}/{total} failed: {e}", index + 1);
                TrialResult {
                    index,
                    config,
                    validation_f1: None,
                    evaluation_loss: None,
                    error: Some(e.to_string()),
                    wall_time_secs,
                }
            }
        };
        trials.push(result);
    }
    let best = select_best(&trials)
        .cloned()
        .ok_or_else(|| Error::Search(format!("all {total} trials failed")))?;
    Ok(GridOutcome { best, trials })
}

/// [`run_trials`] over every point of `space`.
pub fn grid_search<F>(space: &GridSpace, base: &TrainingConfig, train_and_eval: F) -> Result<GridOutcome>
where
    F: FnMut(&TrainingConfig) -> Result<TrialScore>,
{
    run_trials(space.points(base)?, train_and_eval)
}
