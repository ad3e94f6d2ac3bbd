//! Synthetic preference data with a planted ground truth.
//!
//! Every non-separator token `a` gets a latent quality `q[a]` (standardized
//! Gaussian). Two Markov table policies share random base logits `M`:
//!
//! ```text
//! good[s, a] = M[s, a] + τ · gap/2 · q[a]
//! bad[s, a]  = M[s, a] − τ · gap/2 · q[a]
//! ```
//!
//! and the separator logit of every row is set so that the separator has
//! probability exactly `separator_probability`. Winners are sampled from
//! `good`, losers from `bad`. A segment scores `4 σ(κ · mean q)` over its
//! non-separator tokens, so scores lie in `(0, 4)` and `gap = 0` makes the
//! two sides identically distributed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{segment_response, separator, Dataset, PreferencePair, SegmentedResponse, Token};
use crate::error::{Error, Result};
use crate::math::{logsumexp, sigmoid};
use crate::policy::{sample_response, PolicyParams};

const BASE_LOGIT_SCALE: f64 = 1.0;
const SCORE_SHARPNESS: f64 = 1.5;
/// Logit shift per unit of `quality_gap` and of token quality.
const QUALITY_TILT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    pub num_pairs: usize,
    #[serde(default = "default_prompt_length")]
    pub prompt_length: usize,
    /// Inclusive `[min, max]` response length in tokens.
    #[serde(default = "default_response_range")]
    pub response_length_range: (usize, usize),
    #[serde(default = "default_separator_probability")]
    pub separator_probability: f64,
    #[serde(default)]
    pub quality_gap: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_vocab() -> usize {
    32
}
fn default_prompt_length() -> usize {
    4
}
fn default_response_range() -> (usize, usize) {
    (8, 16)
}
fn default_separator_probability() -> f64 {
    0.2
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            vocab_size: default_vocab(),
            num_pairs: 1000,
            prompt_length: default_prompt_length(),
            response_length_range: default_response_range(),
            separator_probability: default_separator_probability(),
            quality_gap: 2.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 3 {
            return bad(format!("vocab_size must be at least 3, got {}", self.vocab_size));
        }
        if self.num_pairs == 0 {
            return bad("num_pairs must be at least 1".into());
        }
        if self.prompt_length == 0 {
            return bad("prompt_length must be at least 1".into());
        }
        let (lo, hi) = self.response_length_range;
        if lo == 0 || hi < lo {
            return bad(format!("response_length_range must satisfy 1 <= min <= max, got [{lo}, {hi}]"));
        }
        if !(self.separator_probability > 0.0 && self.separator_probability < 1.0) {
            return bad(format!(
                "separator_probability must be in (0, 1), got {}",
                self.separator_probability
            ));
        }
        if !(self.quality_gap >= 0.0 && self.quality_gap.is_finite()) {
            return bad(format!("quality_gap must be finite and >= 0, got {}", self.quality_gap));
        }
        Ok(())
    }
}

/// The hidden generative model behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct PlantedWorld {
    pub good: PolicyParams,
    pub bad: PolicyParams,
    /// Latent per-token quality; zero for the separator.
    pub quality: Vec<f64>,
    separator: Token,
}

impl PlantedWorld {
    fn new(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let v = config.vocab_size;
        let sep = separator(v);
        let mut quality: Vec<f64> = (0..v - 1).map(|_| rng.sample(StandardNormal)).collect();
        let mean = quality.iter().sum::<f64>() / quality.len() as f64;
        let sd = (quality.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / quality.len() as f64).sqrt();
        for q in &mut quality {
            *q = if sd > 0.0 { (*q - mean) / sd } else { 0.0 };
        }
        quality.push(0.0);

        let base = PolicyParams::random(v, BASE_LOGIT_SCALE, rng);
        let sep_offset = (config.separator_probability / (1.0 - config.separator_probability)).ln();
        let tilt = |sign: f64| {
            let mut logits = base.logits().to_vec();
            for row in logits.chunks_exact_mut(v) {
                for (a, x) in row.iter_mut().enumerate().take(v - 1) {
                    *x += sign * 0.5 * QUALITY_TILT * config.quality_gap * quality[a];
                }
                row[sep.index()] = sep_offset + logsumexp(&row[..v - 1]);
            }
            PolicyParams::from_logits(v, logits).expect("planted logits are finite")
        };
        PlantedWorld {
            good: tilt(1.0),
            bad: tilt(-1.0),
            quality,
            separator: sep,
        }
    }

    /// Planted score of a token span, in `(0, 4)`.
    pub fn score_span(&self, tokens: &[Token]) -> f64 {
        let content: Vec<f64> = tokens
            .iter()
            .filter(|&&t| t != self.separator)
            .map(|t| self.quality[t.index()])
            .collect();
        let mean = if content.is_empty() {
            0.0
        } else {
            content.iter().sum::<f64>() / content.len() as f64
        };
        4.0 * sigmoid(SCORE_SHARPNESS * mean)
    }

    fn score_response(&self, tokens: Vec<Token>) -> Result<SegmentedResponse> {
        let response = segment_response(&tokens, self.separator)?;
        let scores: Vec<f64> = response
            .segments()
            .iter()
            .map(|s| self.score_span(&tokens[s.range()]))
            .collect();
        response.with_scores(&scores)
    }

    /// Mean planted segment score of a response.
    pub fn response_score(&self, response: &SegmentedResponse) -> f64 {
        let scores: Vec<f64> = response
            .segments()
            .iter()
            .map(|s| self.score_span(&response.tokens()[s.range()]))
            .collect();
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    /// Whether the planted scorer strictly prefers the annotated winner.
    pub fn prefers_winner(&self, pair: &PreferencePair) -> bool {
        self.response_score(pair.winner()) > self.response_score(pair.loser())
    }
}

/// Generates a dataset and returns it together with its planted world.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<(Dataset, PlantedWorld)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let world = PlantedWorld::new(config, &mut rng);
    let content_ids = config.vocab_size as u32 - 1;
    let (lo, hi) = config.response_length_range;
    let mut pairs = Vec::with_capacity(config.num_pairs);
    for _ in 0..config.num_pairs {
        let prompt: Vec<Token> = (0..config.prompt_length)
            .map(|_| Token(rng.random_range(0..content_ids)))
            .collect();
        let w_len = rng.random_range(lo..=hi);
        let winner = sample_response(&world.good, &prompt, w_len, &mut rng);
        let l_len = rng.random_range(lo..=hi);
        let loser = sample_response(&world.bad, &prompt, l_len, &mut rng);
        pairs.push(PreferencePair::new(
            prompt,
            world.score_response(winner)?,
            world.score_response(loser)?,
        )?);
    }
    let provenance = format!(
        "synthetic: vocab_size={} num_pairs={} quality_gap={} seed={}",
        config.vocab_size, config.num_pairs, config.quality_gap, config.seed
    );
    Ok((Dataset::new(pairs, config.vocab_size, provenance)?, world))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(num_pairs: usize, gap: f64, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            num_pairs,
            quality_gap: gap,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn separator_probability_is_planted_exactly() {
        let (_, world) = generate_synthetic(&config(1, 1.0, 3)).unwrap();
        let sep = separator(32);
        for policy in [&world.good, &world.bad] {
            let table = policy.log_prob_table();
            for s in 0..32 {
                assert!((table.probs(Token(s))[sep.index()] - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gap_is_symmetric() {
        let (d, _) = generate_synthetic(&config(1000, 0.0, 5)).unwrap();
        let diffs: Vec<f64> = d
            .pairs()
            .iter()
            .map(|p| {
                let mean = |r: &SegmentedResponse| {
                    let s = r.scores().unwrap();
                    s.iter().sum::<f64>() / s.len() as f64
                };
                mean(p.winner()) - mean(p.loser())
            })
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean diff {mean}, se {se}");
    }

    #[test]
    fn same_seed_same_dataset() {
        let (a, _) = generate_synthetic(&config(50, 1.0, 9)).unwrap();
        let (b, _) = generate_synthetic(&config(50, 1.0, 9)).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_synthetic(&config(50, 1.0, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn planted_oracle_prefers_winners_at_large_gap() {
        let (d, world) = generate_synthetic(&config(1000, 4.0, 1)).unwrap();
        let wins = d.pairs().iter().filter(|p| world.prefers_winner(p)).count();
        assert!(wins as f64 / 1000.0 > 0.9, "oracle win rate {}", wins as f64 / 1000.0);
    }

    #[test]
    fn score_margin_grows_with_gap() {
        let margin = |gap| {
            let (d, _) = generate_synthetic(&config(400, gap, 2)).unwrap();
            let (w, l) = d.mean_scores().unwrap();
            w - l
        };
        let (m1, m2, m3) = (margin(0.5), margin(1.0), margin(2.0));
        assert!(0.0 < m1 && m1 < m2 && m2 < m3, "{m1} {m2} {m3}");
    }

    #[test]
    fn scores_in_range_and_config_validation() {
        let (d, _) = generate_synthetic(&config(100, 4.0, 2)).unwrap();
        for p in d.pairs() {
            for s in p.winner().scores().unwrap().into_iter().chain(p.loser().scores().unwrap()) {
                assert!((0.0..=4.0).contains(&s));
            }
        }
        assert!(generate_synthetic(&config(0, 1.0, 0)).is_err());
        let mut c = config(10, 1.0, 0);
        c.separator_probability = 1.0;
        assert!(generate_synthetic(&c).is_err());
        c.separator_probability = 0.2;
        c.response_length_range = (5, 3);
        assert!(generate_synthetic(&c).is_err());
    }
}
