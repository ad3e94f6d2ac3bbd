//! Corruption models for preference data.
//!
//! Two kinds of noise are supported:
//!
//! * **preference flips**: each pair independently swaps winner and loser
//!   with probability γ (segments and scores travel with their response);
//! * **segment perturbation**: one `δ ~ U[0, 1)` per pair is subtracted from
//!   every winner segment score and added to every loser segment score.
//!
//! Randomness is drawn from a ChaCha stream keyed by `(seed, pair index)`, so
//! the noise a pair receives does not depend on how many pairs precede it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PreferencePair};
use crate::error::{Error, Result};
use crate::losses::{check_delta, check_flip_rate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    #[serde(rename = "flip")]
    PreferenceFlip,
    #[serde(rename = "segment")]
    SegmentPerturb,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::PreferenceFlip => "flip",
            NoiseKind::SegmentPerturb => "segment",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "flip" => Ok(NoiseKind::PreferenceFlip),
            "segment" => Ok(NoiseKind::SegmentPerturb),
            other => Err(Error::InvalidConfig(format!(
                "unknown noise kind `{other}` (expected none, flip or segment)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Flip probability; only read for [`NoiseKind::PreferenceFlip`].
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig::default()
    }

    pub fn flip(gamma: f64, seed: u64) -> Self {
        NoiseConfig {
            kind: NoiseKind::PreferenceFlip,
            gamma,
            seed,
        }
    }

    pub fn segment(seed: u64) -> Self {
        NoiseConfig {
            kind: NoiseKind::SegmentPerturb,
            gamma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_flip_rate("gamma", self.gamma)
    }

    /// Applies the configured corruption to a copy of `dataset`.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        self.validate()?;
        match self.kind {
            NoiseKind::None => Ok(dataset.clone()),
            NoiseKind::PreferenceFlip => flip_preferences(dataset, self.gamma, self.seed),
            NoiseKind::SegmentPerturb => perturb_dataset(dataset, self.seed),
        }
    }
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Which of `n` pairs a flip model with rate `gamma` swaps.
pub fn flip_mask(n: usize, gamma: f64, seed: u64) -> Result<Vec<bool>> {
    check_flip_rate("gamma", gamma)?;
    Ok((0..n).map(|i| pair_rng(seed, i).random::<f64>() < gamma).collect())
}

/// Swaps winner and loser of every pair whose mask entry is set.
pub fn apply_flip_mask(dataset: &Dataset, mask: &[bool]) -> Result<Dataset> {
    if mask.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "flip mask has {} entries for {} pairs",
            mask.len(),
            dataset.len()
        )));
    }
    let pairs = dataset
        .pairs()
        .iter()
        .zip(mask)
        .map(|(p, &flip)| if flip { p.swapped() } else { p.clone() })
        .collect();
    Ok(dataset.with_pairs(pairs))
}

pub fn flip_preferences(dataset: &Dataset, gamma: f64, seed: u64) -> Result<Dataset> {
    apply_flip_mask(dataset, &flip_mask(dataset.len(), gamma, seed)?)
}

/// `r_w ← r_w − δ`, `r_l ← r_l + δ` on every segment. No clamping.
pub fn perturb_scores(pair: &PreferencePair, delta: f64) -> Result<PreferencePair> {
    check_delta(delta)?;
    Ok(pair.with_responses(pair.winner().shift_scores(-delta)?, pair.loser().shift_scores(delta)?))
}

/// One `δ ~ U[0, 1)` per pair.
pub fn draw_deltas(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| pair_rng(seed, i).random::<f64>()).collect()
}

pub fn perturb_dataset(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let deltas = draw_deltas(dataset.len(), seed);
    let pairs = dataset
        .pairs()
        .iter()
        .zip(deltas)
        .map(|(p, d)| perturb_scores(p, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.with_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokens, Segment, SegmentedResponse};

    fn scored_pair() -> PreferencePair {
        let w = SegmentedResponse::new(
            tokens(&[1, 2, 3]),
            vec![Segment::scored(0, 2, 4.0), Segment::scored(2, 1, 3.0)],
        )
        .unwrap();
        let l = SegmentedResponse::new(tokens(&[4, 5]), vec![Segment::scored(0, 2, 1.0)]).unwrap();
        PreferencePair::new(tokens(&[0]), w, l).unwrap()
    }

    fn dataset(n: usize) -> Dataset {
        Dataset::new(vec![scored_pair(); n], 8, String::new()).unwrap()
    }

    #[test]
    fn perturb_by_hand() {
        let p = perturb_scores(&scored_pair(), 0.5).unwrap();
        assert_eq!(p.winner().scores().unwrap(), vec![3.5, 2.5]);
        assert_eq!(p.loser().scores().unwrap(), vec![1.5]);
        assert_eq!(p.winner().tokens(), scored_pair().winner().tokens());
        assert_eq!(perturb_scores(&scored_pair(), 0.0).unwrap(), scored_pair());
        assert!(matches!(perturb_scores(&scored_pair(), 1.01), Err(Error::InvalidNoise(_))));
        assert!(matches!(perturb_scores(&scored_pair(), -0.1), Err(Error::InvalidNoise(_))));
    }

    #[test]
    fn perturb_needs_scores() {
        let w = SegmentedResponse::whole(tokens(&[1]), None).unwrap();
        let p = PreferencePair::new(tokens(&[0]), w.clone(), w).unwrap();
        assert!(matches!(perturb_scores(&p, 0.3), Err(Error::MissingScores(_))));
    }

    #[test]
    fn zero_gamma_is_identity() {
        let d = dataset(20);
        assert_eq!(flip_preferences(&d, 0.0, 4).unwrap(), d);
        assert!(matches!(flip_preferences(&d, 0.5, 4), Err(Error::InvalidNoise(_))));
    }

    #[test]
    fn flip_is_an_involution_under_the_same_mask() {
        let d = dataset(50);
        let mask = flip_mask(50, 0.3, 11).unwrap();
        let once = apply_flip_mask(&d, &mask).unwrap();
        assert_ne!(once, d);
        assert_eq!(apply_flip_mask(&once, &mask).unwrap(), d);
    }

    #[test]
    fn per_pair_streams_are_prefix_stable() {
        let short = flip_mask(10, 0.3, 2).unwrap();
        let long = flip_mask(100, 0.3, 2).unwrap();
        assert_eq!(short[..], long[..10]);
        assert_eq!(draw_deltas(5, 1)[..], draw_deltas(50, 1)[..5]);
        assert_ne!(draw_deltas(5, 1), draw_deltas(5, 2));
    }

    #[test]
    fn delta_moments() {
        let d = draw_deltas(10_000, 7);
        assert!(d.iter().all(|x| (0.0..1.0).contains(x)));
        let mean = d.iter().sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 3.0 / 12f64.sqrt() / 100.0, "mean {mean}");
    }

    #[test]
    fn score_sum_is_invariant_and_mean_shift_matches() {
        let d = dataset(200);
        let noisy = perturb_dataset(&d, 3).unwrap();
        let deltas = draw_deltas(200, 3);
        for ((a, b), delta) in d.pairs().iter().zip(noisy.pairs()).zip(&deltas) {
            let (wa, wb) = (a.winner().scores().unwrap(), b.winner().scores().unwrap());
            for (x, y) in wa.iter().zip(&wb) {
                assert!((x - y - delta).abs() < 1e-12);
            }
            let total = |p: &PreferencePair| {
                p.winner().scores().unwrap()[0] + p.loser().scores().unwrap()[0]
            };
            assert!((total(a) - total(b)).abs() < 1e-12);
        }
        let (wa, _) = d.mean_scores().unwrap();
        let (wb, _) = noisy.mean_scores().unwrap();
        let mean_delta = deltas.iter().sum::<f64>() / 200.0;
        assert!((wa - wb - mean_delta).abs() < 1e-12);
    }

    #[test]
    fn config_dispatch() {
        let d = dataset(30);
        assert_eq!(NoiseConfig::none().apply(&d).unwrap(), d);
        assert_eq!(NoiseConfig::segment(5).apply(&d).unwrap(), perturb_dataset(&d, 5).unwrap());
        assert_eq!(
            NoiseConfig::flip(0.2, 5).apply(&d).unwrap(),
            flip_preferences(&d, 0.2, 5).unwrap()
        );
        assert!(NoiseConfig::flip(0.6, 5).apply(&d).is_err());
        assert_eq!("segment".parse::<NoiseKind>().unwrap(), NoiseKind::SegmentPerturb);
        let json = serde_json::to_string(&NoiseConfig::flip(0.1, 2)).unwrap();
        assert_eq!(json, r#"{"kind":"flip","gamma":0.1,"seed":2}"#);
    }
}
