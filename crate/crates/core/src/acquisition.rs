//! Expected improvement and proposal of the next configuration.
//!
//! Everything here works in the maximisation convention of the surrogate:
//! larger outputs are better and the incumbent is the largest observed
//! output.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::rng;
use crate::space::{HyperConfig, SearchSpace};

/// Best observation so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent {
    pub value: f64,
    pub config: HyperConfig,
    pub fidelity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EiQuery {
    pub mean: f64,
    pub sd: f64,
    pub incumbent: f64,
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `E[max(f - τ, 0)]` for `f ~ N(mean, sd²)`.
pub fn expected_improvement(q: &EiQuery) -> f64 {
    let delta = q.mean - q.incumbent;
    if q.sd <= 0.0 {
        return delta.max(0.0);
    }
    let z = delta / q.sd;
    (delta * norm_cdf(z) + q.sd * norm_pdf(z)).max(0.0)
}

/// Candidate-set search settings for [`propose_next`].
#[derive(Clone, Debug)]
pub struct ProposalSettings {
    pub n_candidates: usize,
    pub top_k: usize,
    pub local_steps: usize,
    pub local_sigma: f64,
}

impl Default for ProposalSettings {
    fn default() -> Self {
        ProposalSettings {
            n_candidates: 2000,
            top_k: 5,
            local_steps: 20,
            local_sigma: 0.05,
        }
    }
}

/// Largest output of the model's dataset.
pub fn incumbent_value(model: &GpModel) -> Option<f64> {
    model.dataset().outputs().iter().copied().reduce(f64::max)
}

fn ei_at(model: &GpModel, point: &[f64], tau: f64) -> f64 {
    let (mean, var) = model.predict_unchecked(point);
    expected_improvement(&EiQuery {
        mean,
        sd: var.sqrt(),
        incumbent: tau,
    })
}

/// Proposes the configuration with the highest expected improvement.
///
/// `fidelity` is the encoded fidelity coordinate appended to every candidate
/// when the model is defined over `(config, fidelity)` inputs; pass `None`
/// for models over the configuration alone. Pending points (full model
/// inputs) are imputed with the incumbent value on a private copy of the
/// model and are never proposed again. An empty model falls back to
/// `space.sample_random` with the same seed.
pub fn propose_next(
    model: &GpModel,
    space: &SearchSpace,
    pending: &[Vec<f64>],
    fidelity: Option<f64>,
    settings: &ProposalSettings,
    seed: u64,
) -> Result<HyperConfig> {
    if space.is_empty() {
        return Err(Error::invalid("cannot propose from an empty search space"));
    }
    let d_enc = space.encoded_dim();
    let expected_dim = d_enc + usize::from(fidelity.is_some());
    if model.dataset().dim() != expected_dim {
        return Err(Error::invalid(format!(
            "model has input dimension {}, expected {expected_dim}",
            model.dataset().dim()
        )));
    }
    if let Some(f) = fidelity {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!("fidelity coordinate {f} outside [0, 1]")));
        }
    }

    let mut rng = rng::seeded(seed);
    let Some(tau) = incumbent_value(model) else {
        return Ok(space.sample_random(&mut rng));
    };

    let mut liar = model.clone();
    for p in pending {
        liar = liar.augment(p.clone(), tau)?;
    }

    let full_point = |x: &[f64]| -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend(fidelity);
        v
    };
    let is_pending = |p: &[f64]| pending.iter().any(|q| q.as_slice() == p);
    let score = |x: &[f64]| -> f64 {
        let p = full_point(x);
        if is_pending(&p) {
            f64::NEG_INFINITY
        } else {
            ei_at(&liar, &p, tau)
        }
    };

    let mut scored: Vec<(Vec<f64>, f64)> = (0..settings.n_candidates.max(1))
        .map(|_| {
            let x = space.encode(&space.sample_random(&mut rng)).expect("sampled config is valid");
            let s = score(&x);
            (x, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(settings.top_k.max(1));

    let step = Normal::new(0.0, settings.local_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    for (x, s) in scored.iter_mut() {
        for _ in 0..settings.local_steps {
            let moved: Vec<f64> = x
                .iter()
                .map(|v| (v + step.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            let snapped = space.encode(&space.decode(&moved)?)?;
            let t = score(&snapped);
            if t > *s {
                *x = snapped;
                *s = t;
            }
        }
    }

    let (best, _) = scored
        .into_iter()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("non-empty candidate set");
    space.decode(&best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit_mle, GpDataset, KernelParams};
    use crate::space::{ParamSpec, Scale};
    use rand::Rng;

    fn unit_space() -> SearchSpace {
        SearchSpace::new("x", vec![ParamSpec::continuous("x", 0.0, 1.0, Scale::Linear, false)]).unwrap()
    }

    #[test]
    fn ei_degenerate_sd() {
        let ei = |mean, sd, incumbent| expected_improvement(&EiQuery { mean, sd, incumbent });
        assert_eq!(ei(-1.0, 0.0, 0.0), 0.0);
        assert_eq!(ei(2.0, 0.0, 1.0), 1.0);
        assert!((ei(0.0, 1.0, 0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((ei(0.0, 1.0, 0.0) - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn normal_functions() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-7);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_1).abs() < 1e-7);
        assert!((norm_pdf(1.0) - 0.241_970_724_519_143_4).abs() < 1e-12);
    }

    #[test]
    fn ei_monotone_in_sd_for_non_positive_delta() {
        for i in 0..=30 {
            let delta = -3.0 + 0.1 * i as f64;
            let mut prev = 0.0;
            for j in 1..=30 {
                let sd = 0.1 * j as f64;
                let v = expected_improvement(&EiQuery { mean: delta, sd, incumbent: 0.0 });
                assert!(v >= prev - 1e-15, "delta {delta} sd {sd}");
                prev = v;
            }
        }
    }

    #[test]
    fn ei_bounds_and_limit() {
        for i in 0..=40 {
            let delta = -2.0 + 0.1 * i as f64;
            for sd in [0.0, 1e-6, 1e-3, 0.1, 1.0, 3.0] {
                let v = expected_improvement(&EiQuery { mean: delta, sd, incumbent: 0.0 });
                assert!(v >= delta.max(0.0) - 1e-12);
            }
            // the limit is not uniform at delta = 0, where EI = sd * phi(0)
            if delta.abs() < 0.05 {
                continue;
            }
            for sd in [1e-3, 1e-6] {
                let v = expected_improvement(&EiQuery { mean: delta, sd, incumbent: 0.0 });
                assert!((v - delta.max(0.0)).abs() <= 1e-2 * delta.abs() + 1e-6);
            }
        }
    }

    #[test]
    fn empty_model_falls_back_to_random() {
        let space = SearchSpace::preset("localisation-wifi").unwrap();
        let model = GpModel::empty(space.encoded_dim() + 1, KernelParams::default_for(13)).unwrap();
        let got = propose_next(&model, &space, &[], Some(1.0), &ProposalSettings::default(), 42).unwrap();
        let expected = space.sample_random(&mut rng::seeded(42));
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_space_rejected() {
        let space = SearchSpace::new("none", vec![]).unwrap();
        let model = GpModel::empty(0, KernelParams::default_for(0)).unwrap();
        assert!(propose_next(&model, &space, &[], None, &ProposalSettings::default(), 0).is_err());
    }

    fn bowl_model(seed: u64) -> GpModel {
        let mut r = rng::seeded(seed);
        let xs: Vec<f64> = (0..20).map(|_| r.random()).collect();
        let ds = GpDataset::from_rows(
            1,
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter().map(|x| -(x - 0.7f64).powi(2)).collect(),
        )
        .unwrap();
        fit_mle(&ds, 3, seed).unwrap().model
    }

    #[test]
    fn bowl_proposals_land_near_optimum() {
        let space = unit_space();
        let mut hits = 0;
        for seed in 0..10 {
            let model = bowl_model(seed);
            let x = propose_next(&model, &space, &[], None, &ProposalSettings::default(), seed)
                .unwrap()
                .real("x")
                .unwrap();
            // dense grid reference for the EI maximiser
            let tau = incumbent_value(&model).unwrap();
            let (gx, gei) = (0..=1000)
                .map(|i| i as f64 / 1000.0)
                .map(|g| (g, ei_at(&model, &[g], tau)))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let got = ei_at(&model, &[x], tau);
            assert!(got >= gei * 0.95 - 1e-12, "seed {seed}: {got} < grid {gei} at {gx}");
            if (x - 0.7).abs() < 0.15 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn never_reproposes_pending() {
        let space = SearchSpace::new("b", vec![ParamSpec::integer("k", 0, 4)]).unwrap();
        for seed in 0..100u64 {
            let xs = [0.0, 0.25, 1.0];
            let ds = GpDataset::from_rows(
                2,
                xs.iter().map(|x| vec![*x, 1.0]).collect(),
                xs.iter().map(|x| -(x - 0.5f64).powi(2)).collect(),
            )
            .unwrap();
            let model = GpModel::new(ds, KernelParams::isotropic(2, 0.3, 0.1, 1e-6)).unwrap();
            let pending = vec![vec![0.5, 1.0]];
            let settings = ProposalSettings {
                n_candidates: 50,
                ..Default::default()
            };
            let c = propose_next(&model, &space, &pending, Some(1.0), &settings, seed).unwrap();
            assert_ne!(c.int("k"), Some(2), "seed {seed}");
        }
    }

    #[test]
    fn proposals_are_valid_configs() {
        let space = SearchSpace::preset("localisation-wifi").unwrap();
        let d = space.encoded_dim() + 1;
        let mut r = rng::seeded(3);
        let mut ds = GpDataset::new(d);
        for _ in 0..8 {
            let mut x = space.encode(&space.sample_random(&mut r)).unwrap();
            x.push(1.0);
            ds.push(x, r.random()).unwrap();
        }
        let model = GpModel::new(ds, KernelParams::default_for(d)).unwrap();
        let settings = ProposalSettings {
            n_candidates: 100,
            local_steps: 5,
            ..Default::default()
        };
        for seed in 0..50 {
            let c = propose_next(&model, &space, &[], Some(1.0), &settings, seed).unwrap();
            space.validate_config(&c).unwrap();
        }
    }

    #[test]
    fn proposal_invariant_to_output_shift() {
        let space = unit_space();
        let model = bowl_model(5);
        let shifted_ds = GpDataset::from_rows(
            1,
            model.dataset().inputs().to_vec(),
            model.dataset().outputs().iter().map(|y| y + 3.0).collect(),
        )
        .unwrap();
        let shifted = GpModel::new(shifted_ds, model.params().clone()).unwrap();
        let settings = ProposalSettings::default();
        let a = propose_next(&model, &space, &[], None, &settings, 8).unwrap();
        let b = propose_next(&shifted, &space, &[], None, &settings, 8).unwrap();
        assert!(a.approx_eq(&b, 1e-9), "{a:?} vs {b:?}");
    }
}
