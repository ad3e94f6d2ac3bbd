//! Win rates and margin diagnostics.
//!
//! A pair is *won* when its implicit reward margin strictly favours the
//! annotated winner. 1D variants use the whole-response margin `β h_θ`; 2D
//! variants use `Σ_k X_k` with the pair's own (possibly perturbed) scores.
//! A zero margin counts as a loss, so an untrained policy scores 0.

mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use suite::{run_property_suite, PropertyCheck, PropertyReport, SuiteOptions};

use crate::corpus::{Dataset, PreferencePair};
use crate::error::{Error, Result};
use crate::losses::{LossVariant, Scorer};
use crate::math::log_sigmoid;
use crate::quadrature::GaussLegendre;
use crate::policy::{PolicyParams, ReferencePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: LossVariant,
    pub num_pairs: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub margins: Vec<f64>,
}

fn margin_with(scorer: &Scorer, pair: &PreferencePair, variant: LossVariant) -> Result<f64> {
    scorer.check_pair(pair)?;
    if !variant.is_2d() {
        return Ok(scorer.dpo_margin(pair));
    }
    if !pair.is_scored() {
        return Err(Error::InvalidConfig(format!(
            "variant {variant} needs segment scores, but the pair is unscored"
        )));
    }
    Ok(scorer.segment_terms(pair)?.iter().map(|(x, _)| x).sum())
}

pub fn pair_margin(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    variant: LossVariant,
    beta: f64,
) -> Result<f64> {
    margin_with(&Scorer::new(params, reference, beta)?, pair, variant)
}

pub fn win_rate(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    dataset: &Dataset,
    variant: LossVariant,
    beta: f64,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot compute a win rate on an empty dataset".into()));
    }
    let scorer = Scorer::new(params, reference, beta)?;
    let margins = dataset
        .pairs()
        .iter()
        .map(|p| margin_with(&scorer, p, variant))
        .collect::<Result<Vec<_>>>()?;
    let wins = margins.iter().filter(|&&m| m > 0.0).count();
    Ok(EvalReport {
        variant,
        num_pairs: margins.len(),
        wins,
        win_rate: wins as f64 / margins.len() as f64,
        margins,
    })
}

/// Monte Carlo and quadrature estimates of `E_{δ~U[0,1)}[−log σ(X − δY)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McQuadrature {
    pub mc_estimate: f64,
    pub quadrature_value: f64,
    /// Standard error of the Monte Carlo mean.
    pub std_err: f64,
}

pub const QUADRATURE_POINTS: usize = 64;

pub fn mc_vs_quadrature(x: f64, y: f64, n_samples: usize, seed: u64) -> Result<McQuadrature> {
    if n_samples < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 samples, got {n_samples}")));
    }
    let integrand = |delta: f64| -log_sigmoid(x - delta * y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let v = integrand(rng.random::<f64>());
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McQuadrature {
        mc_estimate: mean,
        quadrature_value: GaussLegendre::new(QUADRATURE_POINTS).integrate(0.0, 1.0, integrand),
        std_err: (var / n).sqrt(),
    })
}
