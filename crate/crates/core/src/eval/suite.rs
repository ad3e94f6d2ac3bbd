//! Self-check suite over the loss identities, gradients and noise models.
//!
//! Every check reports the measured quantity next to its tolerance so that a
//! failing entry says how far off it was.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mc_vs_quadrature;
use crate::corpus::PreferencePair;
use crate::fixtures::{random_pair, random_policies, random_unit_pair};
use crate::losses::{
    btl_preference_prob, conservative_dpo_loss, dpo_loss, dpo_margin, group_loss_2d, lemma_sigmoid_symmetry_check,
    loss_and_grad, noisy_group_loss_2d, robust_dpo_loss, robust_group_loss_flip, LossConfig, LossVariant,
};
use crate::math::{log_sigmoid, logit, sigmoid};
use crate::noise::{flip_mask, perturb_scores};
use crate::policy::{PolicyParams, ReferencePolicy};
use crate::trainer::finite_diff_gradient;

const VOCAB: usize = 8;
const FLIP_RATES: [f64; 4] = [0.05, 0.1, 0.25, 0.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random instances per gradient check.
    pub gradient_instances: usize,
    /// Random pairs per identity check.
    pub identity_pairs: usize,
    /// Deliberately breaks the robust DPO normalization, to prove the suite
    /// can fail.
    pub canary: bool,
}

impl SuiteOptions {
    pub fn new(seed: u64) -> Self {
        SuiteOptions {
            seed,
            gradient_instances: 50,
            identity_pairs: 100,
            canary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<32} measured={:.3e} tolerance={:.1e}  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.detail
            ));
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        out
    }
}

/// Passes when `measured < tolerance`.
fn below(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> PropertyCheck {
    PropertyCheck {
        name: name.into(),
        passed: measured < tolerance,
        measured,
        tolerance,
        detail: detail.into(),
    }
}

/// Passes when `measured > tolerance`.
fn above(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> PropertyCheck {
    PropertyCheck {
        name: name.into(),
        passed: measured > tolerance,
        measured,
        tolerance,
        detail: detail.into(),
    }
}

fn failed(name: &str, err: crate::Error) -> PropertyCheck {
    PropertyCheck {
        name: name.into(),
        passed: false,
        measured: f64::NAN,
        tolerance: f64::NAN,
        detail: format!("error: {err}"),
    }
}

fn check(name: &str, f: impl FnOnce() -> crate::Result<PropertyCheck>) -> PropertyCheck {
    f().unwrap_or_else(|e| failed(name, e))
}

struct Ctx {
    options: SuiteOptions,
    rng: ChaCha8Rng,
}

impl Ctx {
    fn instance(&mut self, segments: usize) -> (PolicyParams, ReferencePolicy, PreferencePair) {
        let (p, r) = random_policies(&mut self.rng, VOCAB);
        let pair = random_pair(&mut self.rng, VOCAB, segments);
        (p, r, pair)
    }

    fn beta(&mut self) -> f64 {
        self.rng.random_range(0.1..2.0)
    }
}

pub fn run_property_suite(options: &SuiteOptions) -> PropertyReport {
    let mut ctx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(options.seed),
        options: options.clone(),
    };
    let mut checks = vec![
        sigmoid_symmetry(),
        logit_identity(),
        check("btl_logit_roundtrip", || Ok(btl_logit(&mut ctx))),
        check("robust_dpo_unbiased", || robust_dpo_unbiased(&mut ctx)),
        check("robust_2d_flip_unbiased", || robust_flip_unbiased(&mut ctx)),
        check("conservative_dpo_biased", || conservative_biased(&mut ctx)),
        conservative_jensen(&mut ctx),
        check("reduction_2d_to_dpo", || reduction(&mut ctx)),
        check("noisy_loss_monotone_in_delta", || monotone_in_delta(&mut ctx)),
        check("mc_matches_quadrature", || mc_quadrature(&mut ctx)),
        check("flip_fraction", || flip_fraction(&mut ctx)),
        check("perturb_shrinks_margin", || perturb_margin(&mut ctx)),
    ];
    for variant in LossVariant::ALL {
        let name = format!("gradient_{variant}");
        checks.push(check(&name, || gradient_check(&mut ctx, variant, 1, &name)));
    }
    checks.push(check("gradient_batch_of_3", || {
        gradient_check(&mut ctx, LossVariant::Robust2dSegment, 3, "gradient_batch_of_3")
    }));
    PropertyReport {
        seed: options.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn sigmoid_symmetry() -> PropertyCheck {
    let mut violations = 0;
    for i in -1000..=1000 {
        let x = i as f64 / 100.0;
        if lemma_sigmoid_symmetry_check(x) != (i == 0) {
            violations += 1;
        }
    }
    PropertyCheck {
        name: "sigmoid_symmetry_only_at_zero".into(),
        passed: violations == 0,
        measured: violations as f64,
        tolerance: 0.0,
        detail: "log σ(x) = log σ(−x) on 2001 grid points in [−10, 10] exactly when x = 0".into(),
    }
}

fn logit_identity() -> PropertyCheck {
    let worst = (-1000..=1000)
        .map(|i| {
            let x = i as f64 / 100.0;
            (log_sigmoid(x) - log_sigmoid(-x) - x).abs()
        })
        .fold(0.0, f64::max);
    below("log_sigmoid_difference_is_x", worst, 1e-10, "max |log σ(x) − log σ(−x) − x| on [−10, 10]")
}

fn btl_logit(ctx: &mut Ctx) -> PropertyCheck {
    let worst = (0..1000)
        .map(|_| {
            let h = ctx.rng.random_range(-5.0..5.0);
            let beta = ctx.beta();
            (logit(btl_preference_prob(h, beta)) - beta * h).abs()
        })
        .fold(0.0, f64::max);
    below("btl_logit_roundtrip", worst, 1e-10, "max |logit(σ(βh)) − βh| over 1000 draws")
}

fn robust_dpo_unbiased(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let canary = ctx.options.canary;
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.options.identity_pairs {
        let (p, r, pair) = ctx.instance(1);
        let beta = ctx.beta();
        let clean = dpo_loss(&p, &r, &pair, beta)?.value;
        for eps in FLIP_RATES {
            let mut forward = robust_dpo_loss(&p, &r, &pair, beta, eps)?.value;
            let mut backward = robust_dpo_loss(&p, &r, &pair.swapped(), beta, eps)?.value;
            if canary {
                let d = (1.0 - 2.0 * eps).powi(2);
                forward *= d;
                backward *= d;
            }
            worst = worst.max(((1.0 - eps) * forward + eps * backward - clean).abs());
        }
    }
    Ok(below(
        "robust_dpo_unbiased",
        worst,
        1e-12,
        format!("max |E_flip[robust] − clean| over {} pairs × ε ∈ {FLIP_RATES:?}", ctx.options.identity_pairs),
    ))
}

fn robust_flip_unbiased(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    for i in 0..ctx.options.identity_pairs {
        let (p, r, pair) = ctx.instance(1 + i % 3);
        let beta = ctx.beta();
        let clean = group_loss_2d(&p, &r, &pair, beta)?.value;
        for gamma in FLIP_RATES {
            let forward = robust_group_loss_flip(&p, &r, &pair, beta, gamma)?.value;
            let backward = robust_group_loss_flip(&p, &r, &pair.swapped(), beta, gamma)?.value;
            worst = worst.max(((1.0 - gamma) * forward + gamma * backward - clean).abs());
        }
    }
    Ok(below(
        "robust_2d_flip_unbiased",
        worst,
        1e-12,
        format!("max |E_flip[robust 2D] − clean 2D| over {} pairs × γ ∈ {FLIP_RATES:?}", ctx.options.identity_pairs),
    ))
}

fn conservative_biased(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let eps = 0.3;
    loop {
        let (p, r, pair) = ctx.instance(1);
        let beta = 1.0;
        let margin = dpo_margin(&p, &r, &pair, beta)?;
        if margin.abs() <= 0.5 {
            continue;
        }
        let clean = dpo_loss(&p, &r, &pair, beta)?.value;
        let expected = (1.0 - eps) * conservative_dpo_loss(&p, &r, &pair, beta, eps)?.value
            + eps * conservative_dpo_loss(&p, &r, &pair.swapped(), beta, eps)?.value;
        return Ok(above(
            "conservative_dpo_biased",
            (expected - clean).abs(),
            1e-3,
            format!("|E_flip[conservative] − clean| at ε = 0.3, margin {margin:.3}"),
        ));
    }
}

fn conservative_jensen(ctx: &mut Ctx) -> PropertyCheck {
    // (1−ε)(−log a) + ε(−log b) ≥ −log((1−ε)a + εb) by concavity of log.
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let z = ctx.rng.random_range(-8.0..8.0);
        let eps = ctx.rng.random_range(0.0..0.5);
        let conservative = -(1.0 - eps) * log_sigmoid(z) - eps * log_sigmoid(-z);
        let bound = -((1.0 - eps) * sigmoid(z) + eps * sigmoid(-z)).ln();
        worst = worst.max(bound - conservative);
    }
    below(
        "conservative_above_mixture_nll",
        worst,
        1e-12,
        "max (−log[(1−ε)σ(z) + εσ(−z)] − conservative) over 1000 draws",
    )
}

fn reduction(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.options.identity_pairs {
        let (p, r) = random_policies(&mut ctx.rng, VOCAB);
        let pair = random_unit_pair(&mut ctx.rng, VOCAB);
        let beta = ctx.beta();
        let a = group_loss_2d(&p, &r, &pair, beta)?;
        let b = dpo_loss(&p, &r, &pair, beta)?;
        worst = worst.max((a.value - b.value).abs());
    }
    Ok(below(
        "reduction_2d_to_dpo",
        worst,
        1e-12,
        "single segment, unit scores: |2D-DPO − DPO|",
    ))
}

fn monotone_in_delta(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    // Search for an instance with every X_k > 0 and Y_k > 0.
    for _ in 0..10_000 {
        let (p, r, pair) = ctx.instance(2);
        let terms = crate::losses::segment_terms(&p, &r, &pair, 1.0)?;
        if !terms.iter().all(|&(x, y)| x > 0.0 && y > 0.0) {
            continue;
        }
        let values = (0..=10)
            .map(|i| noisy_group_loss_2d(&p, &r, &pair, 1.0, i as f64 / 10.0).map(|l| l.value))
            .collect::<crate::Result<Vec<_>>>()?;
        let worst_drop = values.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
        return Ok(below(
            "noisy_loss_monotone_in_delta",
            worst_drop,
            1e-15,
            "largest decrease of the noisy loss over δ ∈ {0, 0.1, …, 1}",
        ));
    }
    Err(crate::Error::InvalidInput("no instance with positive X and Y found".into()))
}

fn mc_quadrature(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = ctx.rng.random_range(-5.0..=5.0);
        let y = ctx.rng.random_range(-5.0..=5.0);
        let r = mc_vs_quadrature(x, y, 20_000, ctx.rng.random())?;
        worst = worst.max((r.mc_estimate - r.quadrature_value).abs() / r.std_err);
    }
    Ok(below(
        "mc_matches_quadrature",
        worst,
        4.0,
        "max |MC − quadrature| in standard errors, 5 draws of (X, Y)",
    ))
}

fn flip_fraction(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let (n, gamma) = (10_000, 0.3);
    let flipped = flip_mask(n, gamma, ctx.rng.random())?.iter().filter(|&&f| f).count();
    let se = (gamma * (1.0 - gamma) / n as f64).sqrt();
    Ok(below(
        "flip_fraction",
        (flipped as f64 / n as f64 - gamma).abs() / se,
        3.0,
        "|flip fraction − γ| in binomial standard errors, γ = 0.3, 10⁴ pairs",
    ))
}

fn perturb_margin(ctx: &mut Ctx) -> crate::Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pair = random_pair(&mut ctx.rng, VOCAB, 3);
        let delta = ctx.rng.random_range(0.0..=1.0);
        let noisy = perturb_scores(&pair, delta)?;
        let before = margins(&pair)?;
        let after = margins(&noisy)?;
        for (b, a) in before.iter().zip(&after) {
            worst = worst.max((b - a - 2.0 * delta).abs());
        }
    }
    Ok(below(
        "perturb_shrinks_margin",
        worst,
        1e-12,
        "max |(r_w − r_l) − (r̂_w − r̂_l) − 2δ| per segment",
    ))
}

fn margins(pair: &PreferencePair) -> crate::Result<Vec<f64>> {
    let w = pair.winner().scores()?;
    let l = pair.loser().scores()?;
    Ok(w.iter().zip(&l).map(|(a, b)| a - b).collect())
}

fn gradient_check(ctx: &mut Ctx, variant: LossVariant, batch: usize, name: &str) -> crate::Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.options.gradient_instances {
        let (p, r) = random_policies(&mut ctx.rng, VOCAB);
        let pairs: Vec<_> = (0..batch)
            .map(|_| {
                let segments = ctx.rng.random_range(1..=3);
                random_pair(&mut ctx.rng, VOCAB, segments)
            })
            .collect();
        let config = LossConfig::new(variant, ctx.beta())
            .with_epsilon(ctx.rng.random_range(0.0..0.45))
            .with_gamma(ctx.rng.random_range(0.0..0.45));
        let delta_seed: u64 = ctx.rng.random();
        let eval = |q: &PolicyParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(delta_seed);
            loss_and_grad(&config, q, &r, &pairs, &mut rng)
        };
        let analytic = eval(&p)?.gradient;
        let numeric = finite_diff_gradient(|q| eval(q).map(|l| l.value).unwrap_or(f64::NAN), &p, 1e-5);
        worst = worst.max(analytic.max_relative_error(&numeric));
    }
    Ok(below(
        name,
        worst,
        1e-5,
        format!(
            "max relative error vs central differences (h = 1e-5), {} instances, batch {batch}, V = {VOCAB}",
            ctx.options.gradient_instances
        ),
    ))
}

