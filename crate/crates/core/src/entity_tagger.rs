//! Entity mention tagging.
//!
//! Two sources of mentions exist: a gazetteer built from the knowledge base
//! (always available) and BIO tag files produced by an external sequence
//! tagger. Both yield [`EntityMention`]s that can be merged per line.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge_base::{EntityCategory, KnowledgeBase};
use crate::preprocessor::{tokenize, BlockKind, CriteriaLine, PreprocessedTrial, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub trial_id: String,
    pub block_kind: BlockKind,
    pub line_index: usize,
    /// First and last token, inclusive.
    pub token_span: (usize, usize),
    pub surface: String,
    pub category: EntityCategory,
    pub score: f64,
}

impl EntityMention {
    pub fn new(
        trial_id: &str,
        block_kind: BlockKind,
        line: &CriteriaLine,
        token_span: (usize, usize),
        category: EntityCategory,
        score: f64,
    ) -> Self {
        EntityMention {
            trial_id: trial_id.to_string(),
            block_kind,
            line_index: line.index,
            token_span,
            surface: span_text(&line.text, &line.tokens, token_span),
            category,
            score,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_span.1 - self.token_span.0 + 1
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.token_span.0 <= other.token_span.1 && other.token_span.0 <= self.token_span.1
    }
}

/// The raw text covered by an inclusive token span, original spacing kept.
pub fn span_text(text: &str, tokens: &[Token], (first, last): (usize, usize)) -> String {
    let start = tokens[first].start;
    let end = tokens[last].end;
    text.chars().skip(start).take(end - start).collect()
}

/// One BIO label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(EntityCategory),
    Inside(EntityCategory),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{c}"),
            Tag::Inside(c) => write!(f, "I-{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid tag `{0}`")]
pub struct ParseTagError(pub String);

impl FromStr for Tag {
    type Err = ParseTagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let err = || ParseTagError(s.to_string());
        let (prefix, category) = s.split_once('-').ok_or_else(err)?;
        let category = category.parse::<EntityCategory>().map_err(|_| err())?;
        match prefix {
            "B" => Ok(Tag::Begin(category)),
            "I" => Ok(Tag::Inside(category)),
            _ => Err(err()),
        }
    }
}

/// True when no `I-x` follows `O` or a tag of another category.
pub fn is_valid_bio(tags: &[Tag]) -> bool {
    let mut previous: Option<EntityCategory> = None;
    for tag in tags {
        match *tag {
            Tag::Outside => previous = None,
            Tag::Begin(c) => previous = Some(c),
            Tag::Inside(c) => {
                if previous != Some(c) {
                    return false;
                }
            }
        }
    }
    true
}

/// Decodes BIO labels into inclusive spans. A stray `I-x` opens a new span,
/// exactly as if it were `B-x`.
pub fn decode_bio(tags: &[Tag]) -> Vec<(usize, usize, EntityCategory)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityCategory)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match *tag {
            Tag::Outside => {
                if let Some((s, c)) = open.take() {
                    spans.push((s, i - 1, c));
                }
            }
            Tag::Begin(c) => {
                if let Some((s, oc)) = open.take() {
                    spans.push((s, i - 1, oc));
                }
                open = Some((i, c));
            }
            Tag::Inside(c) => match open {
                Some((_, oc)) if oc == c => {}
                _ => {
                    if let Some((s, oc)) = open.take() {
                        spans.push((s, i - 1, oc));
                    }
                    open = Some((i, c));
                }
            },
        }
    }
    if let Some((s, c)) = open {
        spans.push((s, tags.len() - 1, c));
    }
    spans
}

/// Encodes non-overlapping inclusive spans over `len` tokens.
pub fn encode_bio(spans: &[(usize, usize, EntityCategory)], len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for &(first, last, category) in spans {
        tags[first] = Tag::Begin(category);
        for tag in &mut tags[first + 1..=last] {
            *tag = Tag::Inside(category);
        }
    }
    tags
}

/// Exact-name tagger over the concepts of a knowledge base.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: HashMap<Vec<String>, EntityCategory>,
    max_len: usize,
}

impl Gazetteer {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let mut entries = HashMap::new();
        let mut max_len = 0;
        // concepts iterate in id order, so shared names keep the smallest id's category
        for concept in kb.concepts() {
            for name in concept.names() {
                let key: Vec<String> = tokenize(name).iter().map(Token::lower).collect();
                if key.is_empty() {
                    continue;
                }
                max_len = max_len.max(key.len());
                entries.entry(key).or_insert(concept.category);
            }
        }
        Gazetteer { entries, max_len }
    }

    /// Longest matches win; among equal lengths the leftmost wins.
    pub fn tag_line(&self, trial_id: &str, block: BlockKind, line: &CriteriaLine) -> Vec<EntityMention> {
        let lowered: Vec<String> = line.tokens.iter().map(Token::lower).collect();
        let mut candidates: Vec<(usize, usize, EntityCategory)> = Vec::new();
        for start in 0..lowered.len() {
            let longest = self.max_len.min(lowered.len() - start);
            for len in 1..=longest {
                if let Some(&category) = self.entries.get(&lowered[start..start + len]) {
                    candidates.push((start, len, category));
                }
            }
        }
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut taken = vec![false; lowered.len()];
        let mut accepted = Vec::new();
        for (start, len, category) in candidates {
            if taken[start..start + len].iter().any(|t| *t) {
                continue;
            }
            taken[start..start + len].iter_mut().for_each(|t| *t = true);
            accepted.push((start, len, category));
        }
        accepted.sort_by_key(|&(start, _, _)| start);
        accepted
            .into_iter()
            .map(|(start, len, category)| {
                EntityMention::new(trial_id, block, line, (start, start + len - 1), category, 1.0)
            })
            .collect()
    }
}

/// One-shot gazetteer tagging of a line.
pub fn tag_gazetteer(trial_id: &str, block: BlockKind, line: &CriteriaLine, kb: &KnowledgeBase) -> Vec<EntityMention> {
    Gazetteer::new(kb).tag_line(trial_id, block, line)
}

/// Union of two mention lists for the same line. Overlaps are resolved by
/// higher score, then longer span, then leftmost start.
pub fn merge_mentions(a: &[EntityMention], b: &[EntityMention]) -> Vec<EntityMention> {
    let mut candidates: Vec<&EntityMention> = a.iter().chain(b.iter()).collect();
    candidates.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(y.token_count().cmp(&x.token_count()))
            .then(x.token_span.0.cmp(&y.token_span.0))
    });
    let mut kept: Vec<EntityMention> = Vec::new();
    for mention in candidates {
        if kept.iter().all(|k| !k.overlaps(mention)) {
            kept.push(mention.clone());
        }
    }
    kept.sort_by_key(|m| m.token_span.0);
    kept
}

/// One line of the tag interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub nct_id: String,
    pub block: BlockKind,
    pub line_index: usize,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum TagIngestError {
    #[error("cannot read tag file: {0}")]
    Io(#[from] std::io::Error),
    #[error("tag file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("tag file line {line}: trial {nct_id} has no criteria line {line_index}")]
    UnknownLine { line: usize, nct_id: String, line_index: usize },
    #[error("trial {nct_id} line {line_index}: {found} tags for {expected} tokens")]
    TokenCountMismatch { nct_id: String, line_index: usize, expected: usize, found: usize },
}

/// Reads a tag JSONL file and converts its BIO sequences into mentions.
pub fn ingest_external_tags(
    tag_file: impl AsRef<Path>,
    corpus: &[PreprocessedTrial],
) -> Result<Vec<EntityMention>, TagIngestError> {
    let file = std::fs::File::open(tag_file)?;
    ingest_tag_reader(std::io::BufReader::new(file), corpus)
}

pub fn ingest_tag_reader(reader: impl BufRead, corpus: &[PreprocessedTrial]) -> Result<Vec<EntityMention>, TagIngestError> {
    let by_id: HashMap<&str, &PreprocessedTrial> = corpus.iter().map(|t| (t.nct_id.as_str(), t)).collect();
    let mut mentions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TagRecord = serde_json::from_str(&line)
            .map_err(|e| TagIngestError::Malformed { line: i + 1, message: e.to_string() })?;
        mentions.extend(record_mentions(i + 1, &record, &by_id)?);
    }
    Ok(mentions)
}

fn record_mentions(
    file_line: usize,
    record: &TagRecord,
    corpus: &HashMap<&str, &PreprocessedTrial>,
) -> Result<Vec<EntityMention>, TagIngestError> {
    let unknown = || TagIngestError::UnknownLine {
        line: file_line,
        nct_id: record.nct_id.clone(),
        line_index: record.line_index,
    };
    let trial = corpus.get(record.nct_id.as_str()).ok_or_else(unknown)?;
    let (block, criteria_line) = trial.line(record.line_index).ok_or_else(unknown)?;
    let mismatch = |found: usize| TagIngestError::TokenCountMismatch {
        nct_id: record.nct_id.clone(),
        line_index: record.line_index,
        expected: criteria_line.tokens.len(),
        found,
    };
    if record.tags.len() != criteria_line.tokens.len() {
        return Err(mismatch(record.tags.len()));
    }
    if record.tokens.len() != criteria_line.tokens.len() {
        return Err(mismatch(record.tokens.len()));
    }
    if block != record.block {
        return Err(TagIngestError::Malformed {
            line: file_line,
            message: format!("line {} is in the {block} block, record says {}", record.line_index, record.block),
        });
    }
    let tags = record
        .tags
        .iter()
        .map(|t| t.parse::<Tag>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TagIngestError::Malformed { line: file_line, message: e.to_string() })?;
    if let Some(scores) = &record.scores {
        if scores.len() != tags.len() {
            return Err(TagIngestError::Malformed {
                line: file_line,
                message: format!("{} scores for {} tags", scores.len(), tags.len()),
            });
        }
    }
    Ok(decode_bio(&tags)
        .into_iter()
        .map(|(first, last, category)| {
            let score = record.scores.as_ref().map_or(1.0, |s| {
                let span = &s[first..=last];
                (span.iter().sum::<f64>() / span.len() as f64).clamp(0.0, 1.0)
            });
            EntityMention::new(&trial.nct_id, block, criteria_line, (first, last), category, score)
        })
        .collect())
}
