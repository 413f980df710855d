//! Corpus files and dataset statistics.
//!
//! The interchange format is JSON lines, one sentence per line:
//!
//! ```text
//! {"tokens": ["food", "was", "so", "so"], "triplets": [{"target": [0, 0], "opinion": [2, 3], "sentiment": "NEU"}]}
//! ```
//!
//! Spans are 0-based and inclusive. The `sentence####[...]` text layout of
//! the public ASTE release can be imported with [`load_aste_txt`].

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagging::{Sentiment, Span, Triplet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: span [{start},{end}] is invalid for a sentence of {len} tokens")]
    SpanOutOfBounds { line: usize, start: usize, end: usize, len: usize },
    #[error("line {line}: token indices {indices:?} are not contiguous")]
    NonContiguousSpan { line: usize, indices: Vec<usize> },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One tokenized sentence with its (possibly empty) triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub tokens: Vec<String>,
    pub triplets: Vec<Triplet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTriplet {
    target: [usize; 2],
    opinion: [usize; 2],
    sentiment: Sentiment,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    tokens: Vec<String>,
    #[serde(default)]
    triplets: Vec<RawTriplet>,
}

fn checked_span(line: usize, [start, end]: [usize; 2], len: usize) -> Result<Span, IoError> {
    if start > end || end >= len {
        return Err(IoError::SpanOutOfBounds { line, start, end, len });
    }
    Ok(Span::new(start, end))
}

impl CorpusRecord {
    /// Parses one JSON line; `line` is only used for error messages.
    pub fn from_json(text: &str, line: usize) -> Result<Self, IoError> {
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| IoError::Parse {
            line,
            message: e.to_string(),
        })?;
        let len = raw.tokens.len();
        let triplets = raw
            .triplets
            .into_iter()
            .map(|t| {
                Ok(Triplet::new(
                    checked_span(line, t.target, len)?,
                    checked_span(line, t.opinion, len)?,
                    t.sentiment,
                ))
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(CorpusRecord {
            tokens: raw.tokens,
            triplets,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawRecord {
            tokens: self.tokens.clone(),
            triplets: self
                .triplets
                .iter()
                .map(|t| RawTriplet {
                    target: [t.target.start, t.target.end],
                    opinion: [t.opinion.start, t.opinion.end],
                    sentiment: t.sentiment,
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("records always serialize")
    }
}

/// Reads JSON lines. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CorpusRecord::from_json(&line, idx + 1)?);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusRecord>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    read_jsonl(BufReader::new(file))
}

pub fn write_jsonl_to<W: Write>(mut writer: W, records: &[CorpusRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(writer, "{}", r.to_json())?;
    }
    writer.flush()
}

pub fn write_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    write_jsonl_to(BufWriter::new(file), records).map_err(|e| IoError::io(path, e))
}

/// Collapses a sorted, gap-free index list into a span.
fn contiguous(line: usize, indices: &[usize], len: usize) -> Result<Span, IoError> {
    let (Some(&first), Some(&last)) = (indices.first(), indices.last()) else {
        return Err(IoError::Parse {
            line,
            message: "empty token index list".into(),
        });
    };
    if indices.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(IoError::NonContiguousSpan {
            line,
            indices: indices.to_vec(),
        });
    }
    checked_span(line, [first, last], len)
}

/// Parses one `sentence####[([t..], [o..], 'POS'), ...]` line.
pub fn parse_aste_line(text: &str, line: usize) -> Result<CorpusRecord, IoError> {
    let parse_err = |message: String| IoError::Parse { line, message };
    let (sentence, list) = text
        .split_once("####")
        .ok_or_else(|| parse_err("missing #### separator".into()))?;
    let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
    // the list is a literal of tuples, lists, ints and quoted strings
    let json: String = list
        .trim()
        .chars()
        .map(|c| match c {
            '(' => '[',
            ')' => ']',
            '\'' => '"',
            c => c,
        })
        .collect();
    let raw: Vec<(Vec<usize>, Vec<usize>, String)> =
        serde_json::from_str(&json).map_err(|e| parse_err(format!("bad triplet list: {e}")))?;
    let mut triplets = Vec::with_capacity(raw.len());
    for (target, opinion, label) in raw {
        let sentiment: Sentiment = label.parse().map_err(|_| parse_err(format!("unknown sentiment {label:?}")))?;
        triplets.push(Triplet::new(
            contiguous(line, &target, tokens.len())?,
            contiguous(line, &opinion, tokens.len())?,
            sentiment,
        ));
    }
    Ok(CorpusRecord { tokens, triplets })
}

pub fn read_aste_txt<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_aste_line(&line, idx + 1)?);
    }
    Ok(out)
}

pub fn load_aste_txt(path: &Path) -> Result<Vec<CorpusRecord>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    read_aste_txt(BufReader::new(file))
}

/// Loads either format, by extension: `.txt` is the ASTE layout, anything
/// else JSON lines.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt") => load_aste_txt(path),
        _ => load_jsonl(path),
    }
}

/// Warnings for triplets whose target and opinion overlap each other. The
/// codec accepts them; they are usually annotation slips.
pub fn self_overlap_warnings(records: &[CorpusRecord]) -> Vec<String> {
    records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.triplets
                .iter()
                .filter(|t| t.self_overlapping())
                .map(move |t| format!("sentence {}: target and opinion overlap in {t}", i + 1))
        })
        .collect()
}

/// Corpus counts in the layout of a dataset statistics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub triplets: usize,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
    pub targets_one_opinion: usize,
    pub targets_multi_opinion: usize,
    pub opinions_one_target: usize,
    pub opinions_multi_target: usize,
}

impl Add for DatasetStats {
    type Output = DatasetStats;

    fn add(self, o: DatasetStats) -> DatasetStats {
        DatasetStats {
            sentences: self.sentences + o.sentences,
            triplets: self.triplets + o.triplets,
            positive: self.positive + o.positive,
            neutral: self.neutral + o.neutral,
            negative: self.negative + o.negative,
            targets_one_opinion: self.targets_one_opinion + o.targets_one_opinion,
            targets_multi_opinion: self.targets_multi_opinion + o.targets_multi_opinion,
            opinions_one_target: self.opinions_one_target + o.opinions_one_target,
            opinions_multi_target: self.opinions_multi_target + o.opinions_multi_target,
        }
    }
}

impl AddAssign for DatasetStats {
    fn add_assign(&mut self, o: DatasetStats) {
        *self = *self + o;
    }
}

pub fn stats(records: &[CorpusRecord]) -> DatasetStats {
    let mut s = DatasetStats {
        sentences: records.len(),
        ..DatasetStats::default()
    };
    for r in records {
        let mut by_target: BTreeMap<Span, Vec<Span>> = BTreeMap::new();
        let mut by_opinion: BTreeMap<Span, Vec<Span>> = BTreeMap::new();
        for t in &r.triplets {
            s.triplets += 1;
            match t.sentiment {
                Sentiment::Positive => s.positive += 1,
                Sentiment::Neutral => s.neutral += 1,
                Sentiment::Negative => s.negative += 1,
            }
            by_target.entry(t.target).or_default().push(t.opinion);
            by_opinion.entry(t.opinion).or_default().push(t.target);
        }
        let tally = |groups: BTreeMap<Span, Vec<Span>>, one: &mut usize, many: &mut usize| {
            for (_, mut partners) in groups {
                partners.sort();
                partners.dedup();
                if partners.len() == 1 {
                    *one += 1;
                } else {
                    *many += 1;
                }
            }
        };
        tally(by_target, &mut s.targets_one_opinion, &mut s.targets_multi_opinion);
        tally(by_opinion, &mut s.opinions_one_target, &mut s.opinions_multi_target);
    }
    s
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>6} {:>6}", "#S", "#+", "#0", "#-", "#T");
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>6} {:>6} {:>6}",
            self.sentences, self.positive, self.neutral, self.negative, self.triplets
        );
        let rows = [
            ("targets with one opinion span", self.targets_one_opinion),
            ("targets with multiple opinion spans", self.targets_multi_opinion),
            ("opinion spans with one target", self.opinions_one_target),
            ("opinion spans with multiple targets", self.opinions_multi_target),
        ];
        for (i, (label, count)) in rows.iter().enumerate() {
            let end = if i + 1 < rows.len() { "\n" } else { "" };
            let _ = write!(out, "{label:<36}{count:>6}{end}");
        }
        f.write_str(&out)
    }
}
