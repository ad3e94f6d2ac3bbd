//! Mini-batch SGD over any loss variant.
//!
//! Training starts from a copy of the reference logits, so every margin is
//! zero at iteration 0. Each epoch reshuffles the training pairs with a
//! seeded RNG and walks them in consecutive batches of `batch_size`; the
//! last batch of an epoch may be smaller.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PreferencePair};
use crate::error::{Error, Result};
use crate::eval::win_rate;
use crate::losses::{loss_and_grad, LossConfig, LossReport, LossVariant};
use crate::noise::{NoiseConfig, NoiseKind};
use crate::policy::{Gradient, PolicyParams, ReferencePolicy};

const SHUFFLE_STREAM: u64 = 0;
const DELTA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Iterations between history entries. The final iteration is always logged.
    pub eval_every: usize,
    pub seed: u64,
    pub train_noise: NoiseConfig,
    pub eval_noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: LossVariant::Dpo,
            beta: 0.5,
            epsilon: 0.0,
            gamma: 0.0,
            learning_rate: 0.5,
            batch_size: 32,
            iterations: 1000,
            eval_every: 100,
            seed: 0,
            train_noise: NoiseConfig::none(),
            eval_noise: NoiseConfig::none(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig::new(self.variant, self.beta)
            .with_epsilon(self.epsilon)
            .with_gamma(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        self.train_noise.validate()?;
        self.eval_noise.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !self.variant.is_2d() {
            for (name, noise) in [("train", self.train_noise), ("eval", self.eval_noise)] {
                if noise.kind == NoiseKind::SegmentPerturb {
                    return bad(format!(
                        "{name} segment noise perturbs segment scores, which variant {} ignores",
                        self.variant
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    /// Mean mini-batch loss since the previous entry.
    pub loss: f64,
    pub train_win_rate: f64,
    pub eval_win_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub final_params: PolicyParams,
    pub history: Vec<LogEntry>,
}

/// One SGD update `θ ← θ − η · mean gradient` on `batch`.
pub fn minibatch_step<R: Rng + ?Sized>(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    config: &TrainConfig,
    rng: &mut R,
    iteration: usize,
) -> Result<(PolicyParams, LossReport)> {
    let report = loss_and_grad(&config.loss_config(), params, reference, batch, rng)?;
    if !report.value.is_finite() {
        return Err(Error::Diverged {
            iteration,
            reason: format!("loss is {}", report.value),
        });
    }
    if !report.gradient.is_finite() {
        return Err(Error::Diverged {
            iteration,
            reason: "gradient has non-finite entries".into(),
        });
    }
    let mut next = params.clone();
    next.descend(&report.gradient, config.learning_rate);
    if next.logits().iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            iteration,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok((next, report))
}

/// Applies noise and segment selection the way [`train`] does.
pub fn prepare(dataset: &Dataset, variant: LossVariant, noise: &NoiseConfig) -> Result<Dataset> {
    if variant.is_2d() {
        if let Some(i) = dataset.pairs().iter().position(|p| !p.is_scored()) {
            return Err(Error::InvalidConfig(format!(
                "variant {variant} needs segment scores, but pair {i} is unscored"
            )));
        }
    }
    let noisy = noise.apply(dataset)?;
    if variant.is_2d() {
        noisy.select_segments()
    } else {
        Ok(noisy)
    }
}

pub fn train(
    train_set: &Dataset,
    eval_set: &Dataset,
    reference: &ReferencePolicy,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::InvalidInput("training and evaluation sets must be non-empty".into()));
    }
    for d in [train_set, eval_set] {
        if d.vocab_size() != reference.vocab_size() {
            return Err(Error::InvalidInput(format!(
                "dataset vocabulary {} does not match reference vocabulary {}",
                d.vocab_size(),
                reference.vocab_size()
            )));
        }
    }
    let train_data = prepare(train_set, config.variant, &config.train_noise)?;
    let eval_data = prepare(eval_set, config.variant, &config.eval_noise)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut delta_rng = ChaCha8Rng::seed_from_u64(config.seed);
    delta_rng.set_stream(DELTA_STREAM);

    let mut params = reference.params().clone();
    let mut epoch: Vec<PreferencePair> = train_data.pairs().to_vec();
    let mut cursor = epoch.len();
    let mut history = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for iter in 1..=config.iterations {
        if cursor >= epoch.len() {
            epoch.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(epoch.len());
        let (next, report) = minibatch_step(&params, reference, &epoch[cursor..end], config, &mut delta_rng, iter)?;
        params = next;
        cursor = end;
        loss_sum += report.value;
        loss_count += 1;

        if iter % config.eval_every == 0 || iter == config.iterations {
            history.push(LogEntry {
                iter,
                loss: loss_sum / loss_count as f64,
                train_win_rate: win_rate(&params, reference, &train_data, config.variant, config.beta)?.win_rate,
                eval_win_rate: win_rate(&params, reference, &eval_data, config.variant, config.beta)?.win_rate,
            });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(TrainResult {
        final_params: params,
        history,
    })
}

/// Central differences `(L(θ + h e_i) − L(θ − h e_i)) / 2h` for every logit.
pub fn finite_diff_gradient<F>(mut loss_fn: F, params: &PolicyParams, h: f64) -> Gradient
where
    F: FnMut(&PolicyParams) -> f64,
{
    let mut probe = params.clone();
    let values = (0..params.logits().len())
        .map(|i| {
            let x = params.logits()[i];
            probe.set_logit(i, x + h);
            let up = loss_fn(&probe);
            probe.set_logit(i, x - h);
            let down = loss_fn(&probe);
            probe.set_logit(i, x);
            (up - down) / (2.0 * h)
        })
        .collect();
    Gradient::from_values(params.vocab_size(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorConfig};
    use crate::losses::dpo_loss;

    fn data(n: usize, seed: u64) -> (Dataset, Dataset) {
        let cfg = GeneratorConfig {
            vocab_size: 12,
            num_pairs: n,
            quality_gap: 2.0,
            seed,
            ..GeneratorConfig::default()
        };
        generate_synthetic(&cfg).unwrap().0.split(0.2).unwrap()
    }

    #[test]
    fn quadratic_finite_difference() {
        let mut p = PolicyParams::zeros(2);
        p.set_logit(0, 3.0);
        let g = finite_diff_gradient(|q| q.logits()[0].powi(2), &p, 1e-5);
        assert!((g.values()[0] - 6.0).abs() < 1e-6);
        assert_eq!(g.values()[1], 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (tr, ev) = data(40, 1);
        let r = ReferencePolicy::uniform(12);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            iterations: 3,
            eval_every: 1,
            ..TrainConfig::default()
        };
        let out = train(&tr, &ev, &r, &cfg).unwrap();
        assert_eq!(&out.final_params, r.params());
        assert_eq!(out.history.len(), 3);
        // Zero margins everywhere: strict win rate is zero.
        assert!(out.history.iter().all(|e| e.train_win_rate == 0.0 && (e.loss - 2f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn one_step_lowers_the_loss() {
        let (tr, _) = data(10, 2);
        let r = ReferencePolicy::uniform(12);
        let pair = &tr.pairs()[..1];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (next, report) = minibatch_step(r.params(), &r, pair, &cfg, &mut rand::rng(), 1).unwrap();
        let after = dpo_loss(&next, &r, &pair[0], cfg.beta).unwrap().value;
        assert!(after < report.value);
    }

    #[test]
    fn deterministic_under_seed() {
        let (tr, ev) = data(60, 3);
        let r = ReferencePolicy::uniform(12);
        let cfg = TrainConfig {
            variant: LossVariant::Robust2dSegment,
            iterations: 20,
            eval_every: 5,
            batch_size: 7,
            ..TrainConfig::default()
        };
        assert_eq!(train(&tr, &ev, &r, &cfg).unwrap(), train(&tr, &ev, &r, &cfg).unwrap());
        let other = TrainConfig { seed: 1, ..cfg.clone() };
        assert_ne!(train(&tr, &ev, &r, &cfg).unwrap(), train(&tr, &ev, &r, &other).unwrap());
    }

    #[test]
    fn every_variant_trains_through_the_same_path() {
        let (tr, ev) = data(60, 4);
        let r = ReferencePolicy::uniform(12);
        for variant in LossVariant::ALL {
            let cfg = TrainConfig {
                variant,
                epsilon: 0.1,
                gamma: 0.1,
                iterations: 10,
                eval_every: 10,
                ..TrainConfig::default()
            };
            let out = train(&tr, &ev, &r, &cfg).unwrap();
            assert_eq!(out.history.len(), 1);
            assert!(out.history[0].loss.is_finite());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let (tr, ev) = data(20, 5);
        let r = ReferencePolicy::uniform(12);
        let seg_on_1d = TrainConfig {
            eval_noise: NoiseConfig::segment(1),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tr, &ev, &r, &seg_on_1d), Err(Error::InvalidConfig(_))));
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tr, &ev, &r, &zero_batch), Err(Error::InvalidConfig(_))));
        let empty = tr.with_pairs(Vec::new());
        assert!(matches!(train(&empty, &ev, &r, &TrainConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (tr, ev) = data(20, 6);
        let r = ReferencePolicy::uniform(12);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            iterations: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tr, &ev, &r, &cfg), Err(Error::Diverged { .. })));
    }
}
