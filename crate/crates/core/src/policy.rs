//! First-order autoregressive table policy.
//!
//! `π(a | s) = softmax(logits[s, ·])[a]`, where `s` is the previous token.
//! The first response token conditions on the last prompt token. Gradients
//! are exact: `∂ log π(a|s) / ∂ logits[s, b] = 1{a = b} − π(b|s)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Segment, Token};
use crate::error::{Error, Result};
use crate::math::logsumexp;

/// Trainable logits: a `V × V` row-major table indexed `[prev, next]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(vocab_size: usize) -> Self {
        PolicyParams {
            vocab_size,
            logits: vec![0.0; vocab_size * vocab_size],
        }
    }

    pub fn from_logits(vocab_size: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || logits.len() != vocab_size * vocab_size {
            return Err(Error::InvalidInput(format!(
                "expected {0}×{0} logits, got {1} values",
                vocab_size,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        Ok(PolicyParams { vocab_size, logits })
    }

    /// Independent `N(0, scale²)` logits.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("scale must be finite and non-negative");
        let logits = (0..vocab_size * vocab_size).map(|_| normal.sample(rng)).collect();
        PolicyParams { vocab_size, logits }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logit(&self, prev: Token, next: Token) -> f64 {
        self.logits[prev.index() * self.vocab_size + next.index()]
    }

    pub fn row(&self, prev: Token) -> &[f64] {
        let v = self.vocab_size;
        &self.logits[prev.index() * v..(prev.index() + 1) * v]
    }

    /// Sets one entry. Used by finite-difference probes.
    pub fn set_logit(&mut self, flat_index: usize, value: f64) {
        self.logits[flat_index] = value;
    }

    /// `θ ← θ − η g`.
    pub fn descend(&mut self, gradient: &Gradient, learning_rate: f64) {
        assert_eq!(gradient.vocab_size, self.vocab_size, "gradient shape mismatch");
        for (p, g) in self.logits.iter_mut().zip(&gradient.values) {
            *p -= learning_rate * g;
        }
    }

    fn check(&self, t: Token) -> Result<()> {
        if t.index() < self.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token: t.0,
                vocab_size: self.vocab_size,
            })
        }
    }

    /// Per-context log-probabilities and probabilities for every entry.
    pub fn log_prob_table(&self) -> LogProbTable {
        let v = self.vocab_size;
        let mut log_probs = Vec::with_capacity(v * v);
        let mut probs = Vec::with_capacity(v * v);
        for row in self.logits.chunks_exact(v) {
            let lse = logsumexp(row);
            for &x in row {
                let lp = x - lse;
                log_probs.push(lp);
                probs.push(lp.exp());
            }
        }
        LogProbTable {
            vocab_size: v,
            log_probs,
            probs,
        }
    }
}

/// The frozen reference policy `π_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(PolicyParams);

impl ReferencePolicy {
    pub fn new(params: PolicyParams) -> Self {
        ReferencePolicy(params)
    }

    /// The uniform reference (all-zero logits).
    pub fn uniform(vocab_size: usize) -> Self {
        ReferencePolicy(PolicyParams::zeros(vocab_size))
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }

    pub fn vocab_size(&self) -> usize {
        self.0.vocab_size
    }
}

/// Cached `log π(·|·)` and `π(·|·)` for a fixed parameter snapshot.
#[derive(Debug, Clone)]
pub struct LogProbTable {
    vocab_size: usize,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl LogProbTable {
    #[inline]
    pub fn log_prob(&self, prev: Token, next: Token) -> f64 {
        self.log_probs[prev.index() * self.vocab_size + next.index()]
    }

    pub fn probs(&self, prev: Token) -> &[f64] {
        let v = self.vocab_size;
        &self.probs[prev.index() * v..(prev.index() + 1) * v]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// A gradient with the same shape as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    vocab_size: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(vocab_size: usize) -> Self {
        Gradient {
            vocab_size,
            values: vec![0.0; vocab_size * vocab_size],
        }
    }

    pub fn from_values(vocab_size: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), vocab_size * vocab_size, "gradient shape mismatch");
        Gradient { vocab_size, values }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, prev: Token, next: Token) -> f64 {
        self.values[prev.index() * self.vocab_size + next.index()]
    }

    pub fn row(&self, prev: Token) -> &[f64] {
        let v = self.vocab_size;
        &self.values[prev.index() * v..(prev.index() + 1) * v]
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        assert_eq!(self.vocab_size, other.vocab_size, "gradient shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// `max_i |a_i − b_i| / max(max_i |a_i|, max_i |b_i|)`, or the absolute
    /// difference when both are identically zero.
    pub fn max_relative_error(&self, other: &Gradient) -> f64 {
        let diff = self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = self.max_abs().max(other.max_abs());
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Accumulates `Σ c · ∇ log π(next | prev)` without touching a full row per
/// token: indicator mass goes to `[prev, next]`, and each row's total
/// coefficient is folded against `π(·|prev)` once in [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub(crate) struct GradAccumulator {
    vocab_size: usize,
    indicator: Vec<f64>,
    row_mass: Vec<f64>,
}

impl GradAccumulator {
    pub(crate) fn new(vocab_size: usize) -> Self {
        GradAccumulator {
            vocab_size,
            indicator: vec![0.0; vocab_size * vocab_size],
            row_mass: vec![0.0; vocab_size],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, prev: Token, next: Token, coef: f64) {
        self.indicator[prev.index() * self.vocab_size + next.index()] += coef;
        self.row_mass[prev.index()] += coef;
    }

    pub(crate) fn finish(self, table: &LogProbTable) -> Gradient {
        let v = self.vocab_size;
        let mut values = self.indicator;
        for (s, &mass) in self.row_mass.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let probs = &table.probs[s * v..(s + 1) * v];
            for (g, p) in values[s * v..(s + 1) * v].iter_mut().zip(probs) {
                *g -= mass * p;
            }
        }
        Gradient { vocab_size: v, values }
    }
}

/// `log π(next | prev) = logits[prev, next] − logsumexp(logits[prev, ·])`.
pub fn log_prob(params: &PolicyParams, prev: Token, next: Token) -> Result<f64> {
    params.check(prev)?;
    params.check(next)?;
    Ok(params.logit(prev, next) - logsumexp(params.row(prev)))
}

/// `∇_θ log π(next | prev)`: row `prev` holds `1{a = next} − π(a | prev)`.
pub fn log_prob_grad(params: &PolicyParams, prev: Token, next: Token) -> Result<Gradient> {
    params.check(prev)?;
    params.check(next)?;
    let v = params.vocab_size;
    let row = params.row(prev);
    let lse = logsumexp(row);
    let mut g = Gradient::zeros(v);
    let out = &mut g.values[prev.index() * v..(prev.index() + 1) * v];
    for (a, (o, &x)) in out.iter_mut().zip(row).enumerate() {
        *o = if a == next.index() { 1.0 } else { 0.0 } - (x - lse).exp();
    }
    Ok(g)
}

/// `β Σ_{t ∈ segment} [log π_θ(a_t | s_t) − log π_ref(a_t | s_t)]`.
///
/// `context` is the token preceding `tokens[0]` (the last prompt token).
pub fn segment_log_ratio(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    context: Token,
    tokens: &[Token],
    segment: &Segment,
    beta: f64,
) -> Result<f64> {
    if segment.end() > tokens.len() {
        return Err(Error::InvalidSegment(format!(
            "segment {}..{} exceeds response length {}",
            segment.start,
            segment.end(),
            tokens.len()
        )));
    }
    let mut total = 0.0;
    for t in segment.range() {
        let prev = if t == 0 { context } else { tokens[t - 1] };
        total += log_prob(params, prev, tokens[t])? - log_prob(reference.params(), prev, tokens[t])?;
    }
    Ok(beta * total)
}

/// Samples up to `max_len` tokens autoregressively, conditioning the first
/// draw on the last prompt token.
pub fn sample_response<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &[Token],
    max_len: usize,
    rng: &mut R,
) -> Vec<Token> {
    let table = params.log_prob_table();
    let mut prev = *prompt.last().expect("prompt must be non-empty");
    let mut out = Vec::with_capacity(max_len);
    for _ in 0..max_len {
        let next = sample_categorical(table.probs(prev), rng);
        out.push(next);
        prev = next;
    }
    out
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Token {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Token(i as u32);
        }
    }
    // Rounding left `acc` slightly below 1: fall back to the last non-zero entry.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
    Token(last as u32)
}

/// On-disk policy: `{"vocab_size": V, "seed": S, "logits": [[..V..], ..V rows..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub vocab_size: usize,
    pub seed: u64,
    pub logits: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, seed: u64) -> Self {
        Checkpoint {
            vocab_size: params.vocab_size,
            seed,
            logits: params.logits.chunks_exact(params.vocab_size).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn params(&self) -> Result<PolicyParams> {
        if self.logits.len() != self.vocab_size || self.logits.iter().any(|r| r.len() != self.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "checkpoint logits are not {0}×{0}",
                self.vocab_size
            )));
        }
        PolicyParams::from_logits(self.vocab_size, self.logits.concat())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::io(path, e.into()))?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
