//! Random problem instances for property checks and tests.

use rand::Rng;

use crate::corpus::{PreferencePair, Segment, SegmentedResponse, Token, MAX_SCORE};
use crate::policy::{PolicyParams, ReferencePolicy};

/// A random policy (logit scale 1) and a random reference (logit scale 0.5).
pub fn random_policies<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize) -> (PolicyParams, ReferencePolicy) {
    let params = PolicyParams::random(vocab_size, 1.0, rng);
    let reference = ReferencePolicy::new(PolicyParams::random(vocab_size, 0.5, rng));
    (params, reference)
}

fn random_tokens<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize, len: usize) -> Vec<Token> {
    (0..len).map(|_| Token(rng.random_range(0..vocab_size as u32))).collect()
}

/// A response with `segments` segments of 1 to 3 tokens, scores uniform on `[0, 4]`.
pub fn random_response<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize, segments: usize) -> SegmentedResponse {
    let mut spans = Vec::with_capacity(segments);
    let mut start = 0;
    for _ in 0..segments {
        let len = rng.random_range(1..=3);
        spans.push(Segment::scored(start, len, rng.random_range(0.0..=MAX_SCORE)));
        start += len;
    }
    let tokens = random_tokens(rng, vocab_size, start);
    SegmentedResponse::new(tokens, spans).expect("spans tile the response")
}

/// A scored pair whose two responses have `segments` segments each.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize, segments: usize) -> PreferencePair {
    let prompt_len = rng.random_range(1..=3);
    let prompt = random_tokens(rng, vocab_size, prompt_len);
    let winner = random_response(rng, vocab_size, segments);
    let loser = random_response(rng, vocab_size, segments);
    PreferencePair::new(prompt, winner, loser).expect("prompt is non-empty")
}

/// A pair of single-segment responses with unit scores, so that 2D-DPO
/// reduces to DPO.
pub fn random_unit_pair<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize) -> PreferencePair {
    let pair = random_pair(rng, vocab_size, 1);
    let unit = |r: &SegmentedResponse| SegmentedResponse::whole(r.tokens().to_vec(), Some(1.0)).unwrap();
    pair.with_responses(unit(pair.winner()), unit(pair.loser()))
}
