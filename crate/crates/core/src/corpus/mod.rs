//! Segmented, score-annotated preference pairs.
//!
//! A [`PreferencePair`] holds a prompt and two [`SegmentedResponse`]s: the
//! annotated winner and loser. Each response is split into [`Segment`]s at
//! the separator token, and every segment carries a scalar score in `[0, 4]`
//! (either supplied directly or combined from five [`AspectScores`] with
//! [`AspectWeights`]).

mod io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, read_dataset, write_dataset, LoadOptions, LoadedDataset};
pub use synthetic::{generate_synthetic, GeneratorConfig, PlantedWorld};

/// Lowest admissible segment score at ingestion.
pub const MIN_SCORE: f64 = 0.0;
/// Highest admissible segment score at ingestion.
pub const MAX_SCORE: f64 = 4.0;
/// Number of annotation aspects.
pub const NUM_ASPECTS: usize = 5;

/// A vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for Token {
    fn from(id: u32) -> Self {
        Token(id)
    }
}

/// Converts raw ids into tokens.
pub fn tokens(ids: &[u32]) -> Vec<Token> {
    ids.iter().copied().map(Token).collect()
}

/// The separator id for a vocabulary: the last id is reserved.
pub fn separator(vocab_size: usize) -> Token {
    Token(vocab_size as u32 - 1)
}

/// Integer ratings in `0..=4` for the five annotation aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AspectScores {
    pub completeness: u8,
    pub clarity: u8,
    pub correctness: u8,
    pub safety: u8,
    pub helpfulness: u8,
}

impl AspectScores {
    pub fn new(values: [u32; NUM_ASPECTS]) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v > 4) {
            return Err(Error::InvalidAspectScore(bad));
        }
        let [completeness, clarity, correctness, safety, helpfulness] = values.map(|v| v as u8);
        Ok(AspectScores {
            completeness,
            clarity,
            correctness,
            safety,
            helpfulness,
        })
    }

    pub fn to_array(self) -> [u8; NUM_ASPECTS] {
        [
            self.completeness,
            self.clarity,
            self.correctness,
            self.safety,
            self.helpfulness,
        ]
    }
}

/// Convex weights over the five aspects: non-negative and summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectWeights([f64; NUM_ASPECTS]);

impl AspectWeights {
    /// Order: completeness, clarity, correctness, safety, helpfulness.
    pub fn new(weights: [f64; NUM_ASPECTS]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, got {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!(
                "weights must sum to 1 (within 1e-9), got sum {total}"
            )));
        }
        Ok(AspectWeights(weights))
    }

    pub fn uniform() -> Self {
        AspectWeights([0.2; NUM_ASPECTS])
    }

    pub fn as_array(&self) -> [f64; NUM_ASPECTS] {
        self.0
    }
}

impl Default for AspectWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Segment score `wᵀ r` as a convex combination of aspect ratings.
pub fn combine_aspect_scores(aspects: &AspectScores, weights: &AspectWeights) -> f64 {
    aspects
        .to_array()
        .iter()
        .zip(weights.0.iter())
        .map(|(&a, &w)| w * f64::from(a))
        .sum()
}

/// A contiguous token span `[start, start + len)` of a response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub score: Option<f64>,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Segment {
            start,
            len,
            score: None,
        }
    }

    pub fn scored(start: usize, len: usize, score: f64) -> Self {
        Segment {
            start,
            len,
            score: Some(score),
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Response tokens plus ordered, disjoint segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedResponse {
    tokens: Vec<Token>,
    segments: Vec<Segment>,
}

impl SegmentedResponse {
    pub fn new(tokens: Vec<Token>, segments: Vec<Segment>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("response has no tokens".into()));
        }
        if segments.is_empty() {
            return Err(Error::InvalidSegment("response has no segments".into()));
        }
        let mut min_start = 0;
        for (k, seg) in segments.iter().enumerate() {
            if seg.len == 0 {
                return Err(Error::InvalidSegment(format!("segment {k} is empty")));
            }
            if seg.start < min_start {
                return Err(Error::InvalidSegment(format!(
                    "segment {k} starts at {} but the previous segment ends at {min_start}",
                    seg.start
                )));
            }
            if seg.end() > tokens.len() {
                return Err(Error::InvalidSegment(format!(
                    "segment {k} ({}..{}) exceeds response length {}",
                    seg.start,
                    seg.end(),
                    tokens.len()
                )));
            }
            if let Some(s) = seg.score {
                if !s.is_finite() {
                    return Err(Error::InvalidSegment(format!("segment {k} has score {s}")));
                }
            }
            min_start = seg.end();
        }
        Ok(SegmentedResponse { tokens, segments })
    }

    /// Splits at the separator and attaches scores, one per segment.
    pub fn from_scored_tokens(tokens: Vec<Token>, separator: Token, scores: &[f64]) -> Result<Self> {
        segment_response(&tokens, separator)?.with_scores(scores)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        self.segments.iter().all(|s| s.score.is_some())
    }

    /// Segment scores in order, or an error if any is unset.
    pub fn scores(&self) -> Result<Vec<f64>> {
        self.segments
            .iter()
            .enumerate()
            .map(|(k, s)| {
                s.score
                    .ok_or_else(|| Error::MissingScores(format!("segment {k} has no score")))
            })
            .collect()
    }

    /// Replaces every segment score.
    pub fn with_scores(mut self, scores: &[f64]) -> Result<Self> {
        if scores.len() != self.segments.len() {
            return Err(Error::InvalidSegment(format!(
                "{} scores supplied for {} segments",
                scores.len(),
                self.segments.len()
            )));
        }
        for (seg, &s) in self.segments.iter_mut().zip(scores) {
            seg.score = Some(s);
        }
        Ok(self)
    }

    /// Adds `offset` to every score. Unscored segments are an error.
    pub fn shift_scores(&self, offset: f64) -> Result<Self> {
        let scores: Vec<f64> = self.scores()?.into_iter().map(|s| s + offset).collect();
        self.clone().with_scores(&scores)
    }

    /// A single segment spanning the whole response.
    pub fn whole(tokens: Vec<Token>, score: Option<f64>) -> Result<Self> {
        let len = tokens.len();
        SegmentedResponse::new(tokens, vec![Segment { start: 0, len, score }])
    }
}

/// Splits tokens into maximal runs ending at (and including) each separator.
/// A trailing run without a separator forms the final segment.
pub fn segment_response(tokens: &[Token], separator: Token) -> Result<SegmentedResponse> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("cannot segment an empty token sequence".into()));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if t == separator {
            segments.push(Segment::new(start, i + 1 - start));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        segments.push(Segment::new(start, tokens.len() - start));
    }
    SegmentedResponse::new(tokens.to_vec(), segments)
}

/// Keeps the `N = min(N_w, N_l)` highest-scored winner segments and the `N`
/// lowest-scored loser segments. Ties go to the smaller index; the kept
/// segments stay in positional order.
pub fn select_segments(
    winner: &SegmentedResponse,
    loser: &SegmentedResponse,
) -> Result<(SegmentedResponse, SegmentedResponse)> {
    let w_scores = winner.scores()?;
    let l_scores = loser.scores()?;
    let n = w_scores.len().min(l_scores.len());
    let keep_w = pick(&w_scores, n, |a, b| b.total_cmp(a));
    let keep_l = pick(&l_scores, n, |a, b| a.total_cmp(b));
    Ok((restrict(winner, &keep_w), restrict(loser, &keep_l)))
}

fn pick(scores: &[f64], n: usize, order: impl Fn(&f64, &f64) -> std::cmp::Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps the original order among ties.
    idx.sort_by(|&i, &j| order(&scores[i], &scores[j]));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

fn restrict(response: &SegmentedResponse, keep: &[usize]) -> SegmentedResponse {
    SegmentedResponse {
        tokens: response.tokens.clone(),
        segments: keep.iter().map(|&k| response.segments[k]).collect(),
    }
}

/// One prompt with its annotated winner and loser responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    prompt: Vec<Token>,
    winner: SegmentedResponse,
    loser: SegmentedResponse,
}

impl PreferencePair {
    pub fn new(prompt: Vec<Token>, winner: SegmentedResponse, loser: SegmentedResponse) -> Result<Self> {
        if prompt.is_empty() {
            return Err(Error::InvalidPair("prompt is empty".into()));
        }
        Ok(PreferencePair {
            prompt,
            winner,
            loser,
        })
    }

    pub fn prompt(&self) -> &[Token] {
        &self.prompt
    }

    pub fn winner(&self) -> &SegmentedResponse {
        &self.winner
    }

    pub fn loser(&self) -> &SegmentedResponse {
        &self.loser
    }

    /// Context of the first response token.
    pub fn context(&self) -> Token {
        *self.prompt.last().expect("prompt is non-empty")
    }

    /// Exchanges the winner and loser; segments and scores travel with
    /// their response.
    pub fn swapped(&self) -> Self {
        PreferencePair {
            prompt: self.prompt.clone(),
            winner: self.loser.clone(),
            loser: self.winner.clone(),
        }
    }

    /// Applies top-N / bottom-N segment selection.
    pub fn select_segments(&self) -> Result<Self> {
        let (winner, loser) = select_segments(&self.winner, &self.loser)?;
        Ok(PreferencePair {
            prompt: self.prompt.clone(),
            winner,
            loser,
        })
    }

    pub fn with_responses(&self, winner: SegmentedResponse, loser: SegmentedResponse) -> Self {
        PreferencePair {
            prompt: self.prompt.clone(),
            winner,
            loser,
        }
    }

    pub fn is_scored(&self) -> bool {
        self.winner.is_scored() && self.loser.is_scored()
    }

    fn all_tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.prompt
            .iter()
            .chain(self.winner.tokens())
            .chain(self.loser.tokens())
            .copied()
    }
}

/// A collection of preference pairs over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pairs: Vec<PreferencePair>,
    vocab_size: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(pairs: Vec<PreferencePair>, vocab_size: usize, provenance: impl Into<String>) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 2 ids (one is the separator), got {vocab_size}"
            )));
        }
        for pair in &pairs {
            if let Some(t) = pair.all_tokens().find(|t| t.index() >= vocab_size) {
                return Err(Error::TokenOutOfRange {
                    token: t.0,
                    vocab_size,
                });
            }
        }
        Ok(Dataset {
            pairs,
            vocab_size,
            provenance: provenance.into(),
        })
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn separator(&self) -> Token {
        separator(self.vocab_size)
    }

    /// Same vocabulary and provenance, new pairs. Token ranges are trusted
    /// because every caller derives `pairs` from this dataset.
    pub(crate) fn with_pairs(&self, pairs: Vec<PreferencePair>) -> Dataset {
        Dataset {
            pairs,
            vocab_size: self.vocab_size,
            provenance: self.provenance.clone(),
        }
    }

    /// Applies [`select_segments`] to every pair.
    pub fn select_segments(&self) -> Result<Dataset> {
        let pairs = self
            .pairs
            .iter()
            .map(PreferencePair::select_segments)
            .collect::<Result<Vec<_>>>()?;
        Ok(self.with_pairs(pairs))
    }

    /// Splits off the last `ceil(len * eval_fraction)` pairs as an evaluation set.
    pub fn split(&self, eval_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::InvalidConfig(format!(
                "eval_fraction must be in [0, 1), got {eval_fraction}"
            )));
        }
        let n_eval = (self.len() as f64 * eval_fraction).ceil() as usize;
        let cut = self.len() - n_eval.min(self.len());
        Ok((
            self.with_pairs(self.pairs[..cut].to_vec()),
            self.with_pairs(self.pairs[cut..].to_vec()),
        ))
    }

    /// Mean segment score over all winners and over all losers.
    pub fn mean_scores(&self) -> Result<(f64, f64)> {
        let mut w = (0.0, 0usize);
        let mut l = (0.0, 0usize);
        for pair in &self.pairs {
            for s in pair.winner.scores()? {
                w.0 += s;
                w.1 += 1;
            }
            for s in pair.loser.scores()? {
                l.0 += s;
                l.1 += 1;
            }
        }
        Ok((w.0 / w.1.max(1) as f64, l.0 / l.1.max(1) as f64))
    }
}
