//! Preference losses and their exact gradients.
//!
//! Every loss here is a sum over *comparison terms*. A term pairs a span of
//! the winner with a span of the loser, each carrying a score:
//!
//! ```text
//! l_w = β Σ_{t ∈ winner span} log π_θ(a_t|s_t) / π_ref(a_t|s_t)      (same for l_l)
//! X   = r_w · l_w − r_l · l_l
//! Y   = l_w + l_l
//! z   = X − δ · Y
//! ```
//!
//! 1D losses use one term spanning both full responses with `r = 1`, so that
//! `X = β h_θ(s, a_w, a_l)`. 2D losses use one term per selected segment.
//! Each variant then applies a scalar function `f(z)` per term:
//!
//! | variant | `f(z)` |
//! |---|---|
//! | DPO, 2D-DPO, segment-noise 2D-DPO | `−log σ(z)` |
//! | conservative DPO | `(1−ε)(−log σ(z)) + ε(−log σ(−z))` |
//! | robust DPO, flip-robust 2D-DPO | `[(1−ε)(−log σ(z)) − ε(−log σ(−z))] / (1−2ε)` |
//!
//! Swapping winner and loser negates `X` exactly (scores travel with their
//! response), which is what makes the robust forms unbiased under flips.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PreferencePair, SegmentedResponse, Token};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid, softplus};
use crate::policy::{GradAccumulator, Gradient, LogProbTable, PolicyParams, ReferencePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Dpo,
    ConservativeDpo,
    RobustDpo,
    #[serde(rename = "dpo_2d")]
    Dpo2d,
    #[serde(rename = "robust_2d_flip")]
    Robust2dFlip,
    #[serde(rename = "robust_2d_segment")]
    Robust2dSegment,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::Dpo,
        LossVariant::ConservativeDpo,
        LossVariant::RobustDpo,
        LossVariant::Dpo2d,
        LossVariant::Robust2dFlip,
        LossVariant::Robust2dSegment,
    ];

    /// Whether the variant consumes segment scores.
    pub fn is_2d(self) -> bool {
        matches!(
            self,
            LossVariant::Dpo2d | LossVariant::Robust2dFlip | LossVariant::Robust2dSegment
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Dpo => "dpo",
            LossVariant::ConservativeDpo => "conservative_dpo",
            LossVariant::RobustDpo => "robust_dpo",
            LossVariant::Dpo2d => "dpo_2d",
            LossVariant::Robust2dFlip => "robust_2d_flip",
            LossVariant::Robust2dSegment => "robust_2d_segment",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == normalized)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown loss variant `{s}` (expected one of: {})",
                    LossVariant::ALL.map(LossVariant::name).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub variant: LossVariant,
    /// Flip rate assumed by conservative and robust DPO.
    pub epsilon: f64,
    /// Flip rate assumed by flip-robust 2D-DPO.
    pub gamma: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, beta: f64) -> Self {
        LossConfig {
            beta,
            variant,
            epsilon: 0.0,
            gamma: 0.0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        check_flip_rate("epsilon", self.epsilon)?;
        check_flip_rate("gamma", self.gamma)
    }
}

/// Diagnostics for one comparison term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTerm {
    pub x: f64,
    pub y: f64,
    /// The argument `z = X − δY` the loss was evaluated at.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub per_segment: Vec<SegmentTerm>,
    pub gradient: Gradient,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta must be finite and > 0, got {beta}")))
    }
}

/// Flip rates live in `[0, 1/2)`; at 1/2 the robust denominator vanishes.
pub(crate) fn check_flip_rate(name: &str, value: f64) -> Result<()> {
    if (0.0..0.5).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidNoise(format!("{name} must be in [0, 0.5), got {value}")))
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::InvalidNoise(format!("delta must be in [0, 1], got {delta}")))
    }
}

/// Per-term objective: value and derivative with respect to `z`.
#[derive(Debug, Clone, Copy)]
enum Objective {
    /// `−log σ(z)`.
    LogSigmoid,
    /// `(1−ε)(−log σ(z)) + ε(−log σ(−z))`.
    Conservative(f64),
    /// `[(1−ε)(−log σ(z)) − ε(−log σ(−z))] / (1−2ε)`.
    Unbiased(f64),
}

impl Objective {
    fn eval(self, z: f64) -> (f64, f64) {
        // d/dz softplus(−z) = −σ(−z); d/dz softplus(z) = σ(z).
        let (pos, dpos) = (softplus(-z), -sigmoid(-z));
        match self {
            Objective::LogSigmoid => (pos, dpos),
            Objective::Conservative(eps) => {
                let (neg, dneg) = (softplus(z), sigmoid(z));
                ((1.0 - eps) * pos + eps * neg, (1.0 - eps) * dpos + eps * dneg)
            }
            Objective::Unbiased(eps) => {
                let (neg, dneg) = (softplus(z), sigmoid(z));
                let d = 1.0 - 2.0 * eps;
                (((1.0 - eps) * pos - eps * neg) / d, ((1.0 - eps) * dpos - eps * dneg) / d)
            }
        }
    }
}

/// A winner span compared against a loser span.
#[derive(Debug, Clone)]
struct Term {
    winner: Range<usize>,
    loser: Range<usize>,
    r_w: f64,
    r_l: f64,
}

fn whole_response_term(pair: &PreferencePair) -> Term {
    Term {
        winner: 0..pair.winner().len(),
        loser: 0..pair.loser().len(),
        r_w: 1.0,
        r_l: 1.0,
    }
}

fn segment_pairing(pair: &PreferencePair) -> Result<Vec<Term>> {
    let (w, l) = (pair.winner(), pair.loser());
    if w.segments().len() != l.segments().len() {
        return Err(Error::InvalidPair(format!(
            "winner has {} segments but loser has {}; apply segment selection first",
            w.segments().len(),
            l.segments().len()
        )));
    }
    let r_w = w.scores()?;
    let r_l = l.scores()?;
    Ok(w.segments()
        .iter()
        .zip(l.segments())
        .zip(r_w.into_iter().zip(r_l))
        .map(|((sw, sl), (r_w, r_l))| Term {
            winner: sw.range(),
            loser: sl.range(),
            r_w,
            r_l,
        })
        .collect())
}

/// Cached log-probability tables for one `(θ, π_ref, β)` evaluation.
pub(crate) struct Scorer {
    theta: LogProbTable,
    reference: LogProbTable,
    beta: f64,
}

impl Scorer {
    pub(crate) fn new(params: &PolicyParams, reference: &ReferencePolicy, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if params.vocab_size() != reference.vocab_size() {
            return Err(Error::InvalidInput(format!(
                "policy vocabulary {} does not match reference vocabulary {}",
                params.vocab_size(),
                reference.vocab_size()
            )));
        }
        Ok(Scorer {
            theta: params.log_prob_table(),
            reference: reference.params().log_prob_table(),
            beta,
        })
    }

    fn vocab_size(&self) -> usize {
        self.theta.vocab_size()
    }

    pub(crate) fn check_pair(&self, pair: &PreferencePair) -> Result<()> {
        let v = self.vocab_size();
        let bad = pair
            .prompt()
            .iter()
            .chain(pair.winner().tokens())
            .chain(pair.loser().tokens())
            .find(|t| t.index() >= v);
        match bad {
            Some(t) => Err(Error::TokenOutOfRange {
                token: t.0,
                vocab_size: v,
            }),
            None => Ok(()),
        }
    }

    /// `β Σ_{t ∈ span} [log π_θ − log π_ref]`.
    fn span_ratio(&self, context: Token, response: &SegmentedResponse, span: Range<usize>) -> f64 {
        let tokens = response.tokens();
        let mut total = 0.0;
        for t in span {
            let prev = if t == 0 { context } else { tokens[t - 1] };
            total += self.theta.log_prob(prev, tokens[t]) - self.reference.log_prob(prev, tokens[t]);
        }
        self.beta * total
    }

    /// Adds `coef · ∇_θ span_ratio` to the accumulator.
    fn span_grad(
        &self,
        acc: &mut GradAccumulator,
        context: Token,
        response: &SegmentedResponse,
        span: Range<usize>,
        coef: f64,
    ) {
        let tokens = response.tokens();
        let c = coef * self.beta;
        for t in span {
            let prev = if t == 0 { context } else { tokens[t - 1] };
            acc.add(prev, tokens[t], c);
        }
    }

    fn x_y(&self, pair: &PreferencePair, term: &Term) -> (f64, f64) {
        let ctx = pair.context();
        let l_w = self.span_ratio(ctx, pair.winner(), term.winner.clone());
        let l_l = self.span_ratio(ctx, pair.loser(), term.loser.clone());
        (term.r_w * l_w - term.r_l * l_l, l_w + l_l)
    }

    /// Sum of `f(X_k − δ Y_k)` over terms, accumulating `weight · ∇` into `acc`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        pair: &PreferencePair,
        terms: &[Term],
        delta: f64,
        objective: Objective,
        weight: f64,
        acc: &mut GradAccumulator,
        per_segment: &mut Vec<SegmentTerm>,
    ) -> f64 {
        let ctx = pair.context();
        let mut value = 0.0;
        for term in terms {
            let (x, y) = self.x_y(pair, term);
            let z = x - delta * y;
            let (v, dv) = objective.eval(z);
            value += v;
            per_segment.push(SegmentTerm { x, y, margin: z });
            // ∂z/∂l_w = r_w − δ ; ∂z/∂l_l = −(r_l + δ)
            self.span_grad(acc, ctx, pair.winner(), term.winner.clone(), weight * dv * (term.r_w - delta));
            self.span_grad(acc, ctx, pair.loser(), term.loser.clone(), -weight * dv * (term.r_l + delta));
        }
        value
    }

    fn single(&self, pair: &PreferencePair, terms: &[Term], delta: f64, objective: Objective) -> Result<LossReport> {
        self.check_pair(pair)?;
        let mut acc = GradAccumulator::new(self.vocab_size());
        let mut per_segment = Vec::with_capacity(terms.len());
        let value = self.accumulate(pair, terms, delta, objective, 1.0, &mut acc, &mut per_segment);
        Ok(LossReport {
            value,
            per_segment,
            gradient: acc.finish(&self.theta),
        })
    }

    pub(crate) fn dpo_margin(&self, pair: &PreferencePair) -> f64 {
        self.x_y(pair, &whole_response_term(pair)).0
    }

    pub(crate) fn segment_terms(&self, pair: &PreferencePair) -> Result<Vec<(f64, f64)>> {
        self.check_pair(pair)?;
        Ok(segment_pairing(pair)?.iter().map(|t| self.x_y(pair, t)).collect())
    }
}

/// Bradley–Terry preference probability `σ(β h)`.
pub fn btl_preference_prob(h: f64, beta: f64) -> f64 {
    sigmoid(beta * h)
}

/// `β h_θ = β [Σ log-ratio over winner tokens − Σ over loser tokens]`,
/// ignoring segmentation.
pub fn dpo_margin(params: &PolicyParams, reference: &ReferencePolicy, pair: &PreferencePair, beta: f64) -> Result<f64> {
    let scorer = Scorer::new(params, reference, beta)?;
    scorer.check_pair(pair)?;
    Ok(scorer.dpo_margin(pair))
}

/// `−log σ(β h_θ)`.
pub fn dpo_loss(params: &PolicyParams, reference: &ReferencePolicy, pair: &PreferencePair, beta: f64) -> Result<LossReport> {
    Scorer::new(params, reference, beta)?.single(pair, &[whole_response_term(pair)], 0.0, Objective::LogSigmoid)
}

/// `(1−ε) L(w, l) + ε L(l, w)`. Biased under flips; kept for comparison.
pub fn conservative_dpo_loss(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
    epsilon: f64,
) -> Result<LossReport> {
    check_flip_rate("epsilon", epsilon)?;
    Scorer::new(params, reference, beta)?.single(
        pair,
        &[whole_response_term(pair)],
        0.0,
        Objective::Conservative(epsilon),
    )
}

/// `[(1−ε) L(w, l) − ε L(l, w)] / (1 − 2ε)`, whose expectation under
/// flips with rate ε equals the clean loss. Can be negative.
pub fn robust_dpo_loss(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
    epsilon: f64,
) -> Result<LossReport> {
    check_flip_rate("epsilon", epsilon)?;
    Scorer::new(params, reference, beta)?.single(
        pair,
        &[whole_response_term(pair)],
        0.0,
        Objective::Unbiased(epsilon),
    )
}

/// `σ(βh)^{1−ε} / σ(−βh)^ε`, evaluated in log space.
///
/// Diagnostic only: it is not a probability (at `h = 0` it equals
/// `0.5^{1−2ε}`), and its logit is not `βh` for `ε > 0`.
pub fn corrected_preference_prob(h: f64, beta: f64, epsilon: f64) -> f64 {
    let z = beta * h;
    ((1.0 - epsilon) * log_sigmoid(z) - epsilon * log_sigmoid(-z)).exp()
}

/// `(X_k, Y_k)` for every selected segment pair.
pub fn segment_terms(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<Vec<(f64, f64)>> {
    Scorer::new(params, reference, beta)?.segment_terms(pair)
}

/// Per-pair 2D-DPO loss `−Σ_k log σ(X_k)`.
pub fn group_loss_2d(params: &PolicyParams, reference: &ReferencePolicy, pair: &PreferencePair, beta: f64) -> Result<LossReport> {
    let scorer = Scorer::new(params, reference, beta)?;
    scorer.single(pair, &segment_pairing(pair)?, 0.0, Objective::LogSigmoid)
}

/// `−Σ_k log σ(X_k − δ Y_k)` with one δ shared by all segments of the pair.
pub fn noisy_group_loss_2d(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
    delta: f64,
) -> Result<LossReport> {
    check_delta(delta)?;
    let scorer = Scorer::new(params, reference, beta)?;
    scorer.single(pair, &segment_pairing(pair)?, delta, Objective::LogSigmoid)
}

/// `[(1−γ) L_group(w, l) − γ L_group(l, w)] / (1 − 2γ)`.
pub fn robust_group_loss_flip(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
    gamma: f64,
) -> Result<LossReport> {
    check_flip_rate("gamma", gamma)?;
    let scorer = Scorer::new(params, reference, beta)?;
    scorer.single(pair, &segment_pairing(pair)?, 0.0, Objective::Unbiased(gamma))
}

/// Mean loss and mean gradient of the configured variant over `batch`.
///
/// For [`LossVariant::Robust2dSegment`] one `δ ~ U[0, 1)` is drawn from
/// `rng` per pair, in batch order. Other variants do not touch `rng`.
pub fn loss_and_grad<R: Rng + ?Sized>(
    config: &LossConfig,
    params: &PolicyParams,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    rng: &mut R,
) -> Result<LossReport> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("batch is empty".into()));
    }
    if config.variant.is_2d() {
        if let Some(i) = batch.iter().position(|p| !p.is_scored()) {
            return Err(Error::InvalidConfig(format!(
                "variant {} needs segment scores, but batch pair {i} is unscored",
                config.variant
            )));
        }
    }
    let scorer = Scorer::new(params, reference, config.beta)?;
    let weight = 1.0 / batch.len() as f64;
    let mut acc = GradAccumulator::new(scorer.vocab_size());
    let mut per_segment = Vec::new();
    let mut total = 0.0;
    for pair in batch {
        scorer.check_pair(pair)?;
        let (terms, delta, objective) = match config.variant {
            LossVariant::Dpo => (vec![whole_response_term(pair)], 0.0, Objective::LogSigmoid),
            LossVariant::ConservativeDpo => (
                vec![whole_response_term(pair)],
                0.0,
                Objective::Conservative(config.epsilon),
            ),
            LossVariant::RobustDpo => (
                vec![whole_response_term(pair)],
                0.0,
                Objective::Unbiased(config.epsilon),
            ),
            LossVariant::Dpo2d => (segment_pairing(pair)?, 0.0, Objective::LogSigmoid),
            LossVariant::Robust2dFlip => (segment_pairing(pair)?, 0.0, Objective::Unbiased(config.gamma)),
            LossVariant::Robust2dSegment => {
                let delta: f64 = rng.random();
                (segment_pairing(pair)?, delta, Objective::LogSigmoid)
            }
        };
        total += scorer.accumulate(pair, &terms, delta, objective, weight, &mut acc, &mut per_segment);
    }
    Ok(LossReport {
        value: total * weight,
        per_segment,
        gradient: acc.finish(&scorer.theta),
    })
}

/// Whether `log σ(x)` and `log σ(−x)` agree to within `1e-12`, which by the
/// sigmoid symmetry lemma happens only near `x = 0`.
pub fn lemma_sigmoid_symmetry_check(x: f64) -> bool {
    (log_sigmoid(x) - log_sigmoid(-x)).abs() < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokens, Segment};

    fn pair() -> PreferencePair {
        let w = SegmentedResponse::new(
            tokens(&[1, 2, 7, 3]),
            vec![Segment::scored(0, 3, 3.0), Segment::scored(3, 1, 1.5)],
        )
        .unwrap();
        let l = SegmentedResponse::new(
            tokens(&[4, 7, 5, 6]),
            vec![Segment::scored(0, 2, 0.5), Segment::scored(2, 2, 2.0)],
        )
        .unwrap();
        PreferencePair::new(tokens(&[0, 3]), w, l).unwrap()
    }

    fn policies() -> (PolicyParams, ReferencePolicy) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        (
            PolicyParams::random(8, 1.0, &mut rng),
            ReferencePolicy::new(PolicyParams::random(8, 0.5, &mut rng)),
        )
    }

    #[test]
    fn btl_examples() {
        assert_eq!(btl_preference_prob(0.0, 1.0), 0.5);
        assert!((btl_preference_prob(3f64.ln(), 1.0) - 0.75).abs() < 1e-15);
        for h in [-3.0, -0.2, 0.7, 5.0] {
            assert!((btl_preference_prob(h, 0.3) + btl_preference_prob(-h, 0.3) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_policies_give_ln2() {
        let (p, _) = policies();
        let same = ReferencePolicy::new(p.clone());
        let ln2 = 2f64.ln();
        assert_eq!(dpo_margin(&p, &same, &pair(), 0.1).unwrap(), 0.0);
        assert!((dpo_loss(&p, &same, &pair(), 0.1).unwrap().value - ln2).abs() < 1e-15);
        for eps in [0.0, 0.2, 0.45] {
            assert!((conservative_dpo_loss(&p, &same, &pair(), 0.1, eps).unwrap().value - ln2).abs() < 1e-14);
            assert!((robust_group_loss_flip(&p, &same, &pair(), 0.1, eps).unwrap().value - 2.0 * ln2).abs() < 1e-14);
        }
        for delta in [0.0, 0.5, 1.0] {
            assert!((noisy_group_loss_2d(&p, &same, &pair(), 0.1, delta).unwrap().value - 2.0 * ln2).abs() < 1e-14);
        }
        assert!(segment_terms(&p, &same, &pair(), 0.1)
            .unwrap()
            .iter()
            .all(|&(x, y)| x == 0.0 && y == 0.0));
    }

    #[test]
    fn margin_antisymmetric() {
        let (p, r) = policies();
        let m = dpo_margin(&p, &r, &pair(), 0.5).unwrap();
        let swapped = dpo_margin(&p, &r, &pair().swapped(), 0.5).unwrap();
        assert_eq!(m, -swapped);
        assert!(m != 0.0);
    }

    #[test]
    fn conservative_mixture_by_hand() {
        let (p, r) = policies();
        let a = dpo_loss(&p, &r, &pair(), 0.4).unwrap().value;
        let b = dpo_loss(&p, &r, &pair().swapped(), 0.4).unwrap().value;
        let c = conservative_dpo_loss(&p, &r, &pair(), 0.4, 0.25).unwrap().value;
        assert!((c - (0.75 * a + 0.25 * b)).abs() < 1e-14);
        assert_eq!(conservative_dpo_loss(&p, &r, &pair(), 0.4, 0.0).unwrap().value, a);
        assert_eq!(robust_dpo_loss(&p, &r, &pair(), 0.4, 0.0).unwrap().value, a);
    }

    #[test]
    fn flip_rate_validation() {
        let (p, r) = policies();
        assert!(matches!(robust_dpo_loss(&p, &r, &pair(), 0.1, 0.5), Err(Error::InvalidNoise(_))));
        assert!(matches!(conservative_dpo_loss(&p, &r, &pair(), 0.1, 0.7), Err(Error::InvalidNoise(_))));
        assert!(matches!(robust_group_loss_flip(&p, &r, &pair(), 0.1, -0.1), Err(Error::InvalidNoise(_))));
        assert!(matches!(noisy_group_loss_2d(&p, &r, &pair(), 0.1, 1.5), Err(Error::InvalidNoise(_))));
        assert!(dpo_loss(&p, &r, &pair(), 0.0).is_err());
    }

    #[test]
    fn robust_finite_near_boundary() {
        let (p, r) = policies();
        let v = robust_dpo_loss(&p, &r, &pair(), 5.0, 0.49).unwrap();
        assert!(v.value.is_finite() && v.gradient.is_finite());
    }

    #[test]
    fn corrected_prob_examples() {
        assert!((corrected_preference_prob(1.3, 0.7, 0.0) - sigmoid(0.91)).abs() < 1e-15);
        assert!((corrected_preference_prob(0.0, 1.0, 0.25) - 0.5f64.powf(0.5)).abs() < 1e-15);
        let mut prev = 0.0;
        for i in -100..=100 {
            let v = corrected_preference_prob(i as f64 * 0.1, 1.0, 0.3);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn unit_scores_make_x_a_length_difference_of_ratios() {
        let (p, r) = policies();
        let base = pair();
        let unit = base.with_responses(
            base.winner().clone().with_scores(&[1.0, 1.0]).unwrap(),
            base.loser().clone().with_scores(&[1.0, 1.0]).unwrap(),
        );
        let terms = segment_terms(&p, &r, &unit, 0.3).unwrap();
        let ctx = unit.context();
        for (k, (x, _)) in terms.iter().enumerate() {
            let lw = crate::policy::segment_log_ratio(&p, &r, ctx, unit.winner().tokens(), &unit.winner().segments()[k], 0.3).unwrap();
            let ll = crate::policy::segment_log_ratio(&p, &r, ctx, unit.loser().tokens(), &unit.loser().segments()[k], 0.3).unwrap();
            assert!((x - (lw - ll)).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_segment_counts() {
        let (p, r) = policies();
        let base = pair();
        let l = SegmentedResponse::whole(base.loser().tokens().to_vec(), Some(1.0)).unwrap();
        let bad = base.with_responses(base.winner().clone(), l);
        assert!(matches!(group_loss_2d(&p, &r, &bad, 0.1), Err(Error::InvalidPair(_))));
        assert!(matches!(segment_terms(&p, &r, &bad, 0.1), Err(Error::InvalidPair(_))));
    }

    #[test]
    fn loss_and_grad_rejects_unscored_2d() {
        let (p, r) = policies();
        let base = pair();
        let w = crate::corpus::segment_response(base.winner().tokens(), Token(7)).unwrap();
        let l = crate::corpus::segment_response(base.loser().tokens(), Token(7)).unwrap();
        let unscored = base.with_responses(w, l);
        let mut rng = rand::rng();
        let cfg = LossConfig::new(LossVariant::Dpo2d, 0.1);
        assert!(matches!(
            loss_and_grad(&cfg, &p, &r, std::slice::from_ref(&unscored), &mut rng),
            Err(Error::InvalidConfig(_))
        ));
        let dpo = LossConfig::new(LossVariant::Dpo, 0.1);
        assert!(loss_and_grad(&dpo, &p, &r, &[unscored], &mut rng).is_ok());
        assert!(matches!(loss_and_grad(&dpo, &p, &r, &[], &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lemma_check_examples() {
        assert!(lemma_sigmoid_symmetry_check(0.0));
        assert!(!lemma_sigmoid_symmetry_check(1e-3));
        assert!(!lemma_sigmoid_symmetry_check(-5.0));
        // The gap is exactly x.
        assert!(((log_sigmoid(1e-3) - log_sigmoid(-1e-3)) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("ROBUST-2D-SEGMENT".parse::<LossVariant>().is_ok());
        assert!("ipo".parse::<LossVariant>().is_err());
    }
}
