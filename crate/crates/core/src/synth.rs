//! Random instances for tests, self-checks and smoke training: triplet sets,
//! well-formed tag sequences, small random models, and a toy corpus whose
//! sentiment is fully determined by a word next to each target.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{Model, ModelConfig, Vocabulary};
use crate::io::CorpusRecord;
use crate::tagging::{can_follow, enumerate_tagset, Scheme, Sentiment, Span, Tag, TagSequence, Triplet};

/// A triplet set that `encode` accepts for the given length, scheme and
/// offset bound. Returned in canonical order.
pub fn random_triplets<R: Rng + ?Sized>(rng: &mut R, len: usize, max_offset: usize, scheme: Scheme) -> Vec<Triplet> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < len {
        if rng.gen_bool(0.35) {
            let end = rng.gen_range(pos..len.min(pos + 3));
            let primary = Span::new(pos, end);
            let lo = pos.saturating_sub(max_offset);
            let hi = (pos + max_offset).min(len - 1);
            let a = rng.gen_range(lo..=hi);
            let b = rng.gen_range(a..=hi);
            let sentiment = Sentiment::ALL[rng.gen_range(0..3)];
            out.push(scheme.assemble(primary, Span::new(a, b), sentiment));
            pos = end + 1;
        } else {
            pos += 1;
        }
    }
    out.sort();
    out
}

/// A uniformly chosen legal continuation at every step: always well formed.
pub fn random_tag_sequence<R: Rng + ?Sized>(rng: &mut R, len: usize, max_offset: usize, scheme: Scheme) -> TagSequence {
    let mut tags = Vec::with_capacity(len);
    let mut prev = None;
    for i in 0..len {
        let options: Vec<Tag> = enumerate_tagset(len, i, max_offset)
            .into_iter()
            .filter(|t| can_follow(prev, Some(t.sub_tag())))
            .filter(|t| i + 1 < len || can_follow(Some(t.sub_tag()), None))
            .collect();
        let tag = *options.choose(rng).expect("a legal tag always exists");
        prev = Some(tag.sub_tag());
        tags.push(tag);
    }
    TagSequence::new(tags, scheme, max_offset)
}

/// Vocabulary `w0 .. w{size-1}` on top of the reserved rows.
pub fn numbered_vocab(size: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..size).map(|i| format!("w{i}")))
}

pub fn random_tokens<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocabulary, len: usize) -> Vec<String> {
    let tokens = vocab.tokens();
    (0..len).map(|_| tokens[rng.gen_range(0..tokens.len())].clone()).collect()
}

/// Compact architecture for exhaustive checks.
pub fn small_config(hidden_dim: usize, max_offset: usize, scheme: Scheme, structural_mask: bool) -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        hidden_dim,
        offset_dim: 4,
        max_offset,
        scheme,
        structural_mask,
        ..ModelConfig::default()
    }
}

/// Random parameters with random (not zero) transitions, so every score
/// component is exercised.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, config: ModelConfig, vocab_size: usize) -> Model {
    let mut model = Model::random(config, numbered_vocab(vocab_size), rng);
    for v in model.params_mut().transitions.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    model
}

const TARGETS: &[&[&str]] = &[
    &["pizza"],
    &["service"],
    &["staff"],
    &["pasta"],
    &["wine", "list"],
    &["dessert"],
    &["decor"],
    &["fish", "tacos"],
];
const CUES: &[(&str, Sentiment)] = &[
    ("great", Sentiment::Positive),
    ("lovely", Sentiment::Positive),
    ("awful", Sentiment::Negative),
    ("rude", Sentiment::Negative),
    ("average", Sentiment::Neutral),
    ("standard", Sentiment::Neutral),
];
const FILLERS: &[&str] = &["the", "we", "had", "and", "a", "really", "but", "there", "i", "think", "was", "so"];

/// Sentences of filler words with one or two "cue target" pairs. The cue
/// word sits directly before its target and alone fixes the sentiment.
pub fn cue_corpus<R: Rng + ?Sized>(rng: &mut R, sentences: usize) -> Vec<CorpusRecord> {
    (0..sentences)
        .map(|_| {
            let mut tokens: Vec<String> = Vec::new();
            let mut triplets = Vec::new();
            let pairs = rng.gen_range(1..=2);
            let mut used: Vec<usize> = Vec::new();
            for _ in 0..pairs {
                for _ in 0..rng.gen_range(1..=3) {
                    tokens.push(FILLERS.choose(rng).unwrap().to_string());
                }
                let (cue, sentiment) = *CUES.choose(rng).unwrap();
                let target = loop {
                    let t = rng.gen_range(0..TARGETS.len());
                    if !used.contains(&t) {
                        used.push(t);
                        break TARGETS[t];
                    }
                };
                let opinion = Span::single(tokens.len());
                tokens.push(cue.to_string());
                let start = tokens.len();
                tokens.extend(target.iter().map(|w| w.to_string()));
                triplets.push(Triplet::new(Span::new(start, tokens.len() - 1), opinion, sentiment));
            }
            for _ in 0..rng.gen_range(0..=2) {
                tokens.push(FILLERS.choose(rng).unwrap().to_string());
            }
            triplets.sort();
            CorpusRecord { tokens, triplets }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::encode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cue_corpus_is_encodable_with_small_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for record in cue_corpus(&mut rng, 50) {
            assert!(!record.triplets.is_empty());
            for scheme in [Scheme::TargetFirst, Scheme::OpinionFirst] {
                encode(record.tokens.len(), &record.triplets, scheme, 2).unwrap();
            }
        }
    }

    #[test]
    fn random_sequences_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let len = rng.gen_range(1..10);
            random_tag_sequence(&mut rng, len, 2, Scheme::OpinionFirst).validate().unwrap();
        }
    }
}
