//! Position-aware tagging.
//!
//! A sentence's triplets are carried by a BIOES skeleton over one span family
//! (targets under [`Scheme::TargetFirst`], opinion spans under
//! [`Scheme::OpinionFirst`]). The first tag of every skeleton block is
//! enriched with the sentiment and the offsets `(j, k)` of the partner span,
//! measured from the block's first token. The codec here is lossless as long as
//! the skeleton spans do not overlap and each has exactly one partner.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive token range `[start, end]`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    /// Panics if `start > end`.
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} is after end {end}");
        Span { start, end }
    }

    pub fn single(index: usize) -> Self {
        Span { start: index, end: index }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start.max(other.start) <= self.end.min(other.end)
    }

    pub fn fits(&self, sentence_len: usize) -> bool {
        self.start <= self.end && self.end < sentence_len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "POS")]
    Positive,
    #[serde(rename = "NEU")]
    Neutral,
    #[serde(rename = "NEG")]
    Negative,
}

impl Sentiment {
    /// Order used for the sentiment head outputs and the tag set: `+, 0, -`.
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    pub fn code(self) -> usize {
        match self {
            Sentiment::Positive => 0,
            Sentiment::Neutral => 1,
            Sentiment::Negative => 2,
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Sentiment::Positive => '+',
            Sentiment::Neutral => '0',
            Sentiment::Negative => '-',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '+' => Some(Sentiment::Positive),
            '0' => Some(Sentiment::Neutral),
            '-' => Some(Sentiment::Negative),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sentiment::Positive => "POS",
            Sentiment::Neutral => "NEU",
            Sentiment::Negative => "NEG",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "POS" => Ok(Sentiment::Positive),
            "NEU" => Ok(Sentiment::Neutral),
            "NEG" => Ok(Sentiment::Negative),
            other => Err(format!("unknown sentiment label {other:?}")),
        }
    }
}

/// A (target, opinion span, sentiment) unit. The derived ordering is the
/// canonical order used wherever triplets are scanned deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub target: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
}

impl Triplet {
    pub fn new(target: Span, opinion: Span, sentiment: Sentiment) -> Self {
        Triplet {
            target,
            opinion,
            sentiment,
        }
    }

    /// True when the opinion span shares a token with its own target. The
    /// codec accepts such triplets; loaders report them as warnings.
    pub fn self_overlapping(&self) -> bool {
        self.target.overlaps(&self.opinion)
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.target, self.opinion, self.sentiment)
    }
}

/// Which span family the BIOES skeleton encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Scheme {
    /// Skeleton over targets, offsets locate the opinion span.
    #[default]
    #[serde(rename = "t")]
    TargetFirst,
    /// Skeleton over opinion spans, offsets locate the target.
    #[serde(rename = "o")]
    OpinionFirst,
}

impl Scheme {
    pub fn primary(self, t: &Triplet) -> Span {
        match self {
            Scheme::TargetFirst => t.target,
            Scheme::OpinionFirst => t.opinion,
        }
    }

    pub fn secondary(self, t: &Triplet) -> Span {
        match self {
            Scheme::TargetFirst => t.opinion,
            Scheme::OpinionFirst => t.target,
        }
    }

    pub fn assemble(self, primary: Span, secondary: Span, sentiment: Sentiment) -> Triplet {
        match self {
            Scheme::TargetFirst => Triplet::new(primary, secondary, sentiment),
            Scheme::OpinionFirst => Triplet::new(secondary, primary, sentiment),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::TargetFirst => "t",
            Scheme::OpinionFirst => "o",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t" | "target" => Ok(Scheme::TargetFirst),
            "o" | "opinion" => Ok(Scheme::OpinionFirst),
            other => Err(format!("unknown scheme {other:?}, expected t or o")),
        }
    }
}

/// BIOES projection of a tag. The discriminants are the token-head output
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubTag {
    B = 0,
    I = 1,
    O = 2,
    E = 3,
    S = 4,
}

impl SubTag {
    pub const ALL: [SubTag; 5] = [SubTag::B, SubTag::I, SubTag::O, SubTag::E, SubTag::S];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether a skeleton block is open after this sub-tag.
    fn opens_block(self) -> bool {
        matches!(self, SubTag::B | SubTag::I)
    }
}

/// Legality of adjacent sub-tags under the BIOES automaton; `None` stands for
/// START on the left and STOP on the right.
pub fn can_follow(prev: Option<SubTag>, next: Option<SubTag>) -> bool {
    match (prev, next) {
        (None, None) => false,
        (None, Some(t)) => matches!(t, SubTag::B | SubTag::S | SubTag::O),
        (Some(p), n) if p.opens_block() => matches!(n, Some(SubTag::I) | Some(SubTag::E)),
        (Some(_), n) => matches!(n, None | Some(SubTag::B) | Some(SubTag::S) | Some(SubTag::O)),
    }
}

/// Sentiment and partner offsets attached to a `B` or `S` tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Anchor {
    pub sentiment: Sentiment,
    pub j: i32,
    pub k: i32,
}

impl Anchor {
    pub fn new(sentiment: Sentiment, j: i32, k: i32) -> Self {
        Anchor { sentiment, j, k }
    }

    pub fn max_abs(&self) -> usize {
        self.j.unsigned_abs().max(self.k.unsigned_abs()) as usize
    }

    /// Absolute partner window `[i + j, i + k]` for a tag at position `i`.
    pub fn window(&self, position: usize) -> (i64, i64) {
        let i = position as i64;
        (i + self.j as i64, i + self.k as i64)
    }

    /// Offset used by the offset-embedding lookup.
    pub fn min_offset(&self) -> i32 {
        self.j.min(self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Begin(Anchor),
    Single(Anchor),
    Inside,
    End,
    Outside,
}

impl Tag {
    pub fn sub_tag(&self) -> SubTag {
        match self {
            Tag::Begin(_) => SubTag::B,
            Tag::Single(_) => SubTag::S,
            Tag::Inside => SubTag::I,
            Tag::End => SubTag::E,
            Tag::Outside => SubTag::O,
        }
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        match self {
            Tag::Begin(a) | Tag::Single(a) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Begin(a) => write!(f, "B^{}_{{{},{}}}", a.sentiment.symbol(), a.j, a.k),
            Tag::Single(a) => write!(f, "S^{}_{{{},{}}}", a.sentiment.symbol(), a.j, a.k),
            Tag::Inside => f.write_str("I"),
            Tag::End => f.write_str("E"),
            Tag::Outside => f.write_str("O"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    /// Parses the notation produced by `Display`, e.g. `B^+_{-4,-4}` or `O`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" => return Ok(Tag::Inside),
            "E" => return Ok(Tag::End),
            "O" => return Ok(Tag::Outside),
            _ => {}
        }
        let bad = || format!("cannot parse tag {s:?}");
        let mut chars = s.chars();
        let head = chars.next().ok_or_else(bad)?;
        if chars.next() != Some('^') {
            return Err(bad());
        }
        let sentiment = chars.next().and_then(Sentiment::from_symbol).ok_or_else(bad)?;
        let rest = chars.as_str();
        let body = rest
            .strip_prefix("_{")
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(bad)?;
        let (j, k) = body.split_once(',').ok_or_else(bad)?;
        let j: i32 = j.trim().parse().map_err(|_| bad())?;
        let k: i32 = k.trim().parse().map_err(|_| bad())?;
        let anchor = Anchor::new(sentiment, j, k);
        match head {
            'B' => Ok(Tag::Begin(anchor)),
            'S' => Ok(Tag::Single(anchor)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("primary spans {0} and {1} overlap")]
    OverlappingPrimarySpans(Span, Span),
    #[error("primary span {0} has more than one partner span")]
    MultipleSecondarySpans(Span),
    #[error("offsets ({j}, {k}) exceed the maximum offset {max_offset}")]
    OffsetExceedsM { j: i64, k: i64, max_offset: usize },
    #[error("span {span} is out of bounds for a sentence of length {len}")]
    SpanOutOfBounds { span: Span, len: usize },
    #[error("malformed tag sequence at position {position}: {reason}")]
    MalformedSequence { position: usize, reason: String },
    #[error("tag at position {position} points to window [{start},{end}] outside the sentence")]
    WindowOutOfBounds { position: usize, start: i64, end: i64 },
}

/// One tag per token together with the scheme and offset bound it was built
/// under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub tags: Vec<Tag>,
    pub scheme: Scheme,
    pub max_offset: usize,
}

impl TagSequence {
    pub fn new(tags: Vec<Tag>, scheme: Scheme, max_offset: usize) -> Self {
        TagSequence {
            tags,
            scheme,
            max_offset,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Parses a whitespace-separated tag line.
    pub fn parse(line: &str, scheme: Scheme, max_offset: usize) -> Result<Self, String> {
        let tags = line
            .split_whitespace()
            .map(Tag::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TagSequence::new(tags, scheme, max_offset))
    }

    pub fn sub_tags(&self) -> impl Iterator<Item = SubTag> + '_ {
        self.tags.iter().map(Tag::sub_tag)
    }

    /// Checks BIOES well-formedness, offset bounds and partner windows.
    pub fn validate(&self) -> Result<(), CodecError> {
        let n = self.tags.len();
        let mut prev: Option<SubTag> = None;
        for (position, tag) in self.tags.iter().enumerate() {
            let sub = tag.sub_tag();
            if !can_follow(prev, Some(sub)) {
                return Err(CodecError::MalformedSequence {
                    position,
                    reason: format!("{} cannot follow {}", sub_name(Some(sub)), sub_name(prev)),
                });
            }
            if let Some(anchor) = tag.anchor() {
                if anchor.j > anchor.k {
                    return Err(CodecError::MalformedSequence {
                        position,
                        reason: format!("offset j={} exceeds k={}", anchor.j, anchor.k),
                    });
                }
                if anchor.max_abs() > self.max_offset {
                    return Err(CodecError::OffsetExceedsM {
                        j: anchor.j as i64,
                        k: anchor.k as i64,
                        max_offset: self.max_offset,
                    });
                }
                let (start, end) = anchor.window(position);
                if start < 0 || end >= n as i64 {
                    return Err(CodecError::WindowOutOfBounds {
                        position,
                        start,
                        end,
                    });
                }
            }
            prev = Some(sub);
        }
        if n > 0 && !can_follow(prev, None) {
            return Err(CodecError::MalformedSequence {
                position: n - 1,
                reason: format!("sequence ends inside a block ({})", sub_name(prev)),
            });
        }
        Ok(())
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tag) in self.tags.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{tag}")?;
        }
        Ok(())
    }
}

fn sub_name(sub: Option<SubTag>) -> String {
    match sub {
        None => "START".to_string(),
        Some(s) => format!("{s:?}"),
    }
}

/// Builds the unique tag sequence for a triplet set. Duplicate triplets are
/// collapsed.
pub fn encode(
    len: usize,
    triplets: &[Triplet],
    scheme: Scheme,
    max_offset: usize,
) -> Result<TagSequence, CodecError> {
    let mut by_primary: BTreeMap<Span, Triplet> = BTreeMap::new();
    for t in triplets {
        for span in [t.target, t.opinion] {
            if !span.fits(len) {
                return Err(CodecError::SpanOutOfBounds { span, len });
            }
        }
        let primary = scheme.primary(t);
        match by_primary.get(&primary) {
            Some(existing) if existing != t => {
                return Err(CodecError::MultipleSecondarySpans(primary));
            }
            _ => {
                by_primary.insert(primary, *t);
            }
        }
    }

    let mut tags = vec![Tag::Outside; len];
    let mut last: Option<Span> = None;
    for (primary, t) in &by_primary {
        if let Some(prev) = last {
            if prev.overlaps(primary) {
                return Err(CodecError::OverlappingPrimarySpans(prev, *primary));
            }
        }
        // sorted by (start, end): only the furthest-reaching earlier span can overlap
        if last.is_none_or(|p| primary.end > p.end) {
            last = Some(*primary);
        }

        let secondary = scheme.secondary(t);
        let j = secondary.start as i64 - primary.start as i64;
        let k = secondary.end as i64 - primary.start as i64;
        if j.unsigned_abs().max(k.unsigned_abs()) > max_offset as u64 {
            return Err(CodecError::OffsetExceedsM { j, k, max_offset });
        }
        let anchor = Anchor::new(t.sentiment, j as i32, k as i32);
        if primary.start == primary.end {
            tags[primary.start] = Tag::Single(anchor);
        } else {
            tags[primary.start] = Tag::Begin(anchor);
            for tag in &mut tags[primary.start + 1..primary.end] {
                *tag = Tag::Inside;
            }
            tags[primary.end] = Tag::End;
        }
    }
    Ok(TagSequence::new(tags, scheme, max_offset))
}

/// Recovers the triplet set, in canonical order.
pub fn decode(seq: &TagSequence) -> Result<Vec<Triplet>, CodecError> {
    seq.validate()?;
    let mut out = Vec::new();
    for (i, tag) in seq.tags.iter().enumerate() {
        let (anchor, end) = match tag {
            Tag::Single(a) => (a, i),
            Tag::Begin(a) => {
                // validate() guarantees an E closes the block
                let end = (i + 1..seq.tags.len())
                    .find(|&p| seq.tags[p] == Tag::End)
                    .expect("validated block has an end");
                (a, end)
            }
            _ => continue,
        };
        let (ws, we) = anchor.window(i);
        let secondary = Span::new(ws as usize, we as usize);
        out.push(seq.scheme.assemble(Span::new(i, end), secondary, anchor.sentiment));
    }
    out.sort();
    Ok(out)
}

/// The admissible tags at one position, in canonical order:
/// `I, E, O`, then all `B` tags, then all `S` tags; within each of those by
/// sentiment (`+, 0, -`) and then by `(j, k)` lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    pairs: Vec<(i32, i32)>,
}

impl TagSet {
    pub const PLAIN: [Tag; 3] = [Tag::Inside, Tag::End, Tag::Outside];

    pub fn new(len: usize, position: usize, max_offset: usize) -> Self {
        assert!(position < len, "position {position} outside sentence of length {len}");
        let m = max_offset.min(len) as i64;
        let lo = (-m).max(-(position as i64));
        let hi = m.min((len - 1 - position) as i64);
        let mut pairs = Vec::new();
        for j in lo..=hi {
            for k in j..=hi {
                pairs.push((j as i32, k as i32));
            }
        }
        TagSet { pairs }
    }

    /// In-bounds `(j, k)` pairs, lexicographic.
    pub fn pairs(&self) -> &[(i32, i32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        3 + 6 * self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Tag {
        if index < 3 {
            return Self::PLAIN[index];
        }
        let p = self.pairs.len();
        let rest = index - 3;
        let (family, rest) = (rest / (3 * p), rest % (3 * p));
        let (sentiment, pair) = (rest / p, rest % p);
        let (j, k) = self.pairs[pair];
        let anchor = Anchor::new(Sentiment::ALL[sentiment], j, k);
        match family {
            0 => Tag::Begin(anchor),
            1 => Tag::Single(anchor),
            _ => panic!("tag index {index} out of range"),
        }
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        let (family, anchor) = match tag {
            Tag::Inside => return Some(0),
            Tag::End => return Some(1),
            Tag::Outside => return Some(2),
            Tag::Begin(a) => (0, a),
            Tag::Single(a) => (1, a),
        };
        let pair = self.pairs.binary_search(&(anchor.j, anchor.k)).ok()?;
        let p = self.pairs.len();
        Some(3 + family * 3 * p + anchor.sentiment.code() * p + pair)
    }

    /// Sub-tag of the tag at `index` without materializing it.
    pub fn sub_tag_at(&self, index: usize) -> SubTag {
        match index {
            0 => SubTag::I,
            1 => SubTag::E,
            2 => SubTag::O,
            i if i - 3 < 3 * self.pairs.len() => SubTag::B,
            _ => SubTag::S,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Tag> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// All tags admissible at `position` in a sentence of length `len`.
pub fn enumerate_tagset(len: usize, position: usize, max_offset: usize) -> Vec<Tag> {
    TagSet::new(len, position, max_offset).iter().collect()
}
