//! Turns a split localisation dataset into a tunable objective: for each
//! configuration, fit the feature pipeline on the training split, train the
//! network and report validation error per epoch.

use crate::data::LocalisationDataset;
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, ScalingMethod};
use crate::fidelity::{Monitor, StopDecision};
use crate::mlp::{train, Split, TrainConfig, TrainData, TrainOutcome};
use crate::space::HyperConfig;
use crate::tuner::{Evaluation, Objective};

/// Reads the network settings out of a configuration.
pub fn train_config(config: &HyperConfig, epochs: usize, seed: u64) -> Result<TrainConfig> {
    let int = |name: &str| {
        config
            .int(name)
            .filter(|v| *v >= 1)
            .map(|v| v as usize)
            .ok_or_else(|| Error::invalid(format!("config needs a positive integer `{name}`")))
    };
    let real = |name: &str| {
        config
            .real(name)
            .ok_or_else(|| Error::invalid(format!("config needs a real `{name}`")))
    };
    Ok(TrainConfig {
        units1: int("units1")?,
        units2: int("units2")?,
        dropout1: real("dropout1")?,
        dropout2: real("dropout2")?,
        learning_rate: real("learning_rate")?,
        batch_size: int("batch_size")?,
        epochs,
        seed,
        restore_best: false,
    })
}

/// Scaling method and optional PCA count; a missing `scaling` means none and
/// a missing `pca_count` skips PCA.
pub fn pipeline_settings(config: &HyperConfig) -> Result<(ScalingMethod, Option<usize>)> {
    let method = match config.choice("scaling") {
        Some(s) => s.parse()?,
        None => ScalingMethod::None,
    };
    let pca = match config.int("pca_count") {
        Some(m) if m >= 1 => Some(m as usize),
        Some(m) => return Err(Error::invalid(format!("pca_count {m} must be positive"))),
        None => None,
    };
    Ok((method, pca))
}

/// Fits the pipeline on `raw.train`, transforms every split, then trains.
pub fn fit_and_train(
    raw: &TrainData,
    config: &HyperConfig,
    epochs: usize,
    seed: u64,
    restore_best: bool,
    monitor: &mut Monitor<'_>,
) -> Result<(FeaturePipeline, TrainOutcome)> {
    let (method, pca) = pipeline_settings(config)?;
    let pipeline = FeaturePipeline::fit(raw.train.features.view(), method, pca)?;
    let transform = |s: &Split| -> Result<Split> {
        Ok(Split {
            features: pipeline.apply(s.features.view())?,
            labels: s.labels.clone(),
        })
    };
    let data = TrainData {
        train: transform(&raw.train)?,
        val: transform(&raw.val)?,
        test: transform(&raw.test)?,
    };
    let cfg = TrainConfig {
        restore_best,
        ..train_config(config, epochs, seed)?
    };
    let outcome = train(&data, &cfg, monitor)?;
    Ok((pipeline, outcome))
}

/// Neural-network localisation objective over a fixed split.
pub struct LocalisationObjective {
    raw: TrainData,
}

impl LocalisationObjective {
    pub fn new(dataset: &LocalisationDataset) -> Result<Self> {
        Ok(LocalisationObjective {
            raw: dataset.partitions()?,
        })
    }

    pub fn from_partitions(raw: TrainData) -> Self {
        LocalisationObjective { raw }
    }

    pub fn partitions(&self) -> &TrainData {
        &self.raw
    }

    /// Final retraining of a chosen configuration for a fixed number of
    /// epochs, keeping the parameters of the best validation epoch.
    pub fn retrain(&self, config: &HyperConfig, epochs: usize, seed: u64) -> Result<(FeaturePipeline, TrainOutcome)> {
        fit_and_train(&self.raw, config, epochs, seed, true, &mut |_, _| StopDecision::Continue)
    }
}

impl Objective for LocalisationObjective {
    fn evaluate(&self, config: &HyperConfig, max_epochs: usize, seed: u64, monitor: &mut Monitor<'_>) -> Evaluation {
        let mut seen = Vec::with_capacity(max_epochs);
        let mut record = |epoch: usize, err: f64| {
            seen.push(err);
            monitor(epoch, err)
        };
        match fit_and_train(&self.raw, config, max_epochs, seed, false, &mut record) {
            Ok((_, outcome)) => Evaluation {
                epoch_errors: outcome.epoch_val_errors,
                failure: None,
            },
            Err(e) => Evaluation {
                epoch_errors: seen,
                failure: Some(e.to_string()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, FeatureLayout, ScenarioConfig};
    use crate::space::{ParamValue, SearchSpace};

    fn dataset() -> LocalisationDataset {
        generate_synthetic(&ScenarioConfig {
            n_samples: 300,
            layout: FeatureLayout::Wifi7,
            ..ScenarioConfig::default()
        })
        .unwrap()
        .split_default(0)
        .unwrap()
    }

    fn config(lr: f64) -> HyperConfig {
        HyperConfig::new()
            .with("units1", ParamValue::Int(32))
            .with("units2", ParamValue::Int(16))
            .with("dropout1", ParamValue::Real(0.1))
            .with("dropout2", ParamValue::Real(0.1))
            .with("learning_rate", ParamValue::Real(lr))
            .with("batch_size", ParamValue::Int(32))
            .with("pca_count", ParamValue::Int(5))
            .with("scaling", ParamValue::Choice("standardise".into()))
    }

    #[test]
    fn evaluates_random_configs() {
        let obj = LocalisationObjective::new(&dataset()).unwrap();
        let space = SearchSpace::preset("localisation-wifi").unwrap();
        let mut r = crate::rng::seeded(1);
        for _ in 0..3 {
            let c = space.sample_random(&mut r);
            let ev = obj.evaluate(&c, 3, 7, &mut |_, _| StopDecision::Continue);
            assert!(ev.failure.is_some() || ev.epoch_errors.len() == 3);
        }
    }

    #[test]
    fn monitor_sees_every_epoch_and_can_stop() {
        let obj = LocalisationObjective::new(&dataset()).unwrap();
        let mut calls = Vec::new();
        let ev = obj.evaluate(&config(0.01), 10, 3, &mut |e, v| {
            calls.push((e, v));
            if e == 4 {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        });
        assert_eq!(ev.epoch_errors.len(), 4);
        assert_eq!(calls.iter().map(|c| c.1).collect::<Vec<_>>(), ev.epoch_errors);
    }

    #[test]
    fn divergence_becomes_failure() {
        let obj = LocalisationObjective::new(&dataset()).unwrap();
        let ev = obj.evaluate(&config(1e12), 5, 3, &mut |_, _| StopDecision::Continue);
        assert!(ev.failure.is_some());
    }

    #[test]
    fn retrain_is_reproducible() {
        let obj = LocalisationObjective::new(&dataset()).unwrap();
        let a = obj.retrain(&config(0.01), 3, 9).unwrap().1;
        let b = obj.retrain(&config(0.01), 3, 9).unwrap().1;
        assert_eq!(a.epoch_val_errors, b.epoch_val_errors);
        assert_eq!(a.test_error_m, b.test_error_m);
        assert!(obj.retrain(&config(0.01), 0, 9).is_err());
    }

    #[test]
    fn missing_params_fail_cleanly() {
        let obj = LocalisationObjective::new(&dataset()).unwrap();
        let ev = obj.evaluate(&HyperConfig::new(), 3, 0, &mut |_, _| StopDecision::Continue);
        assert!(ev.failure.unwrap().contains("units1"));
    }
}
