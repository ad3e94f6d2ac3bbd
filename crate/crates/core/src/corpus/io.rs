//! JSON Lines persistence.
//!
//! One pair per line:
//!
//! ```text
//! {"prompt":[..],"chosen":{"tokens":[..],"segments":[[start,len],..],"scores":[..]},"rejected":{..}}
//! ```
//!
//! Each response carries exactly one of `scores` (one real per segment) or
//! `aspect_scores` (five integers per segment, combined with the run's
//! aspect weights). When both are present the direct scores win and a
//! warning is recorded.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    combine_aspect_scores, AspectScores, AspectWeights, Dataset, PreferencePair, Segment,
    SegmentedResponse, Token, MAX_SCORE, MIN_SCORE, NUM_ASPECTS,
};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    prompt: Vec<u32>,
    chosen: ResponseRecord,
    rejected: ResponseRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResponseRecord {
    tokens: Vec<u32>,
    segments: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect_scores: Option<Vec<[u32; NUM_ASPECTS]>>,
}

/// Settings the file itself does not carry.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub vocab_size: usize,
    pub aspect_weights: AspectWeights,
}

impl LoadOptions {
    pub fn new(vocab_size: usize) -> Self {
        LoadOptions {
            vocab_size,
            aspect_weights: AspectWeights::uniform(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Reads a dataset file, discarding warnings.
pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_dataset(BufReader::new(file), path, options)?.dataset)
}

/// Reads JSON Lines from `reader`; `origin` only labels errors. Blank lines are skipped.
pub fn read_dataset<R: BufRead>(reader: R, origin: &Path, options: &LoadOptions) -> Result<LoadedDataset> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let pair = record_to_pair(record, options, &mut |w| {
            warnings.push(format!("{}:{line_no}: {w}", origin.display()))
        })
        .map_err(|e| match e {
            Error::TokenOutOfRange { .. } => e,
            other => parse_err(other.to_string()),
        })?;
        pairs.push(pair);
    }
    let dataset = Dataset::new(pairs, options.vocab_size, format!("loaded from {}", origin.display()))?;
    Ok(LoadedDataset { dataset, warnings })
}

/// Writes one line per pair. Every segment must be scored.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in dataset.pairs() {
        let record = PairRecord {
            prompt: pair.prompt().iter().map(|t| t.0).collect(),
            chosen: response_to_record(pair.winner())?,
            rejected: response_to_record(pair.loser())?,
        };
        let line = serde_json::to_string(&record).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn response_to_record(response: &SegmentedResponse) -> Result<ResponseRecord> {
    Ok(ResponseRecord {
        tokens: response.tokens().iter().map(|t| t.0).collect(),
        segments: response.segments().iter().map(|s| [s.start, s.len]).collect(),
        scores: Some(response.scores()?),
        aspect_scores: None,
    })
}

fn record_to_pair(
    record: PairRecord,
    options: &LoadOptions,
    warn: &mut dyn FnMut(String),
) -> Result<PreferencePair> {
    let vocab = options.vocab_size;
    let prompt = to_tokens(&record.prompt, vocab)?;
    let winner = record_to_response(record.chosen, "chosen", options, warn)?;
    let loser = record_to_response(record.rejected, "rejected", options, warn)?;
    PreferencePair::new(prompt, winner, loser)
}

fn to_tokens(ids: &[u32], vocab_size: usize) -> Result<Vec<Token>> {
    ids.iter()
        .map(|&id| {
            if (id as usize) < vocab_size {
                Ok(Token(id))
            } else {
                Err(Error::TokenOutOfRange {
                    token: id,
                    vocab_size,
                })
            }
        })
        .collect()
}

fn record_to_response(
    record: ResponseRecord,
    side: &str,
    options: &LoadOptions,
    warn: &mut dyn FnMut(String),
) -> Result<SegmentedResponse> {
    let tokens = to_tokens(&record.tokens, options.vocab_size)?;
    let n = record.segments.len();
    let scores = match (record.scores, record.aspect_scores) {
        (Some(scores), aspects) => {
            if aspects.is_some() {
                warn(format!(
                    "`{side}` has both `scores` and `aspect_scores`; using `scores`"
                ));
            }
            scores
        }
        (None, Some(aspects)) => {
            if aspects.len() != n {
                return Err(Error::InvalidSegment(format!(
                    "`{side}.aspect_scores` has {} entries for {n} segments",
                    aspects.len()
                )));
            }
            aspects
                .into_iter()
                .map(|a| AspectScores::new(a).map(|a| combine_aspect_scores(&a, &options.aspect_weights)))
                .collect::<Result<Vec<_>>>()?
        }
        (None, None) => {
            return Err(Error::MissingScores(format!(
                "`{side}` is missing field `scores` (or `aspect_scores`)"
            )))
        }
    };
    if scores.len() != n {
        return Err(Error::InvalidSegment(format!(
            "`{side}.scores` has {} entries for {n} segments",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(MIN_SCORE..=MAX_SCORE).contains(*s)) {
        return Err(Error::InvalidSegment(format!(
            "`{side}` score {bad} outside [{MIN_SCORE}, {MAX_SCORE}]"
        )));
    }
    let segments = record
        .segments
        .iter()
        .zip(&scores)
        .map(|(&[start, len], &s)| Segment::scored(start, len, s))
        .collect();
    SegmentedResponse::new(tokens, segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<LoadedDataset> {
        read_dataset(Cursor::new(text), Path::new("mem.jsonl"), &LoadOptions::new(8))
    }

    #[test]
    fn missing_scores_names_field_and_line() {
        let text = concat!(
            r#"{"prompt":[1],"chosen":{"tokens":[2],"segments":[[0,1]],"scores":[1.0]},"rejected":{"tokens":[3],"segments":[[0,1]],"scores":[0.0]}}"#,
            "\n",
            r#"{"prompt":[1],"chosen":{"tokens":[2],"segments":[[0,1]]},"rejected":{"tokens":[3],"segments":[[0,1]],"scores":[0.0]}}"#,
        );
        let err = read(text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{msg}");
        assert!(msg.contains("scores"), "{msg}");
    }

    #[test]
    fn aspect_scores_combined_at_load() {
        let text = r#"{"prompt":[1],"chosen":{"tokens":[2,7,3],"segments":[[0,2],[2,1]],"aspect_scores":[[4,4,4,4,0],[0,1,2,3,4]]},"rejected":{"tokens":[3],"segments":[[0,1]],"aspect_scores":[[1,0,0,0,0]]}}"#;
        let weights = AspectWeights::new([0.1, 0.2, 0.3, 0.2, 0.2]).unwrap();
        let opts = LoadOptions {
            vocab_size: 8,
            aspect_weights: weights,
        };
        let d = read_dataset(Cursor::new(text), Path::new("m"), &opts).unwrap().dataset;
        let w = d.pairs()[0].winner().scores().unwrap();
        // 0.1*4 + 0.2*4 + 0.3*4 + 0.2*4 + 0.2*0 = 3.2 ; 0.2*1 + 0.3*2 + 0.2*3 + 0.2*4 = 2.2
        assert!((w[0] - 3.2).abs() < 1e-12);
        assert!((w[1] - 2.2).abs() < 1e-12);
        let l = d.pairs()[0].loser().scores().unwrap();
        assert!((l[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn both_score_kinds_warns_and_prefers_direct() {
        let text = r#"{"prompt":[1],"chosen":{"tokens":[2],"segments":[[0,1]],"scores":[1.5],"aspect_scores":[[4,4,4,4,4]]},"rejected":{"tokens":[3],"segments":[[0,1]],"scores":[0.0]}}"#;
        let loaded = read(text).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.dataset.pairs()[0].winner().scores().unwrap(), vec![1.5]);
    }

    #[test]
    fn token_out_of_vocab_is_validation_error() {
        let text = r#"{"prompt":[1],"chosen":{"tokens":[12],"segments":[[0,1]],"scores":[1.0]},"rejected":{"tokens":[3],"segments":[[0,1]],"scores":[0.0]}}"#;
        assert!(matches!(read(text), Err(Error::TokenOutOfRange { token: 12, .. })));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = read("\n{not json").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_range_score_rejected() {
        let text = r#"{"prompt":[1],"chosen":{"tokens":[2],"segments":[[0,1]],"scores":[4.5]},"rejected":{"tokens":[3],"segments":[[0,1]],"scores":[0.0]}}"#;
        assert!(matches!(read(text), Err(Error::Parse { .. })));
    }
}
