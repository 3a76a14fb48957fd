//! Grounding of entity mentions to knowledge-base concepts.
//!
//! Mentions are projected into a word embedding space, grouped with DBSCAN
//! under cosine distance, and each group is matched against concept names
//! by character-bigram Dice similarity.

use std::collections::{HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::entity_tagger::EntityMention;
use crate::knowledge_base::{normalize_name, EntityCategory, KnowledgeBase};
use crate::preprocessor::tokenize;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Token vectors of a fixed dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
        }
    }

    /// Adds or replaces a vector. Panics on a wrong component count.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dimension, "vector dimension");
        self.vectors.insert(token.into(), vector);
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    let file = std::fs::File::open(path)?;
    read_embeddings(std::io::BufReader::new(file))
}

/// Reads the text vector format: a `count dimension` header, then one
/// `token v1 .. vd` row per token.
pub fn read_embeddings(reader: impl BufRead) -> Result<EmbeddingTable, EmbeddingError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(EmbeddingError::Malformed {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parsed: Option<(usize, usize)> = match fields.as_slice() {
        [count, dim] => count.parse().ok().zip(dim.parse().ok()),
        _ => None,
    };
    let Some((count, dimension)) = parsed else {
        return Err(EmbeddingError::Malformed {
            line: 1,
            message: format!("bad header `{header}`"),
        });
    };
    let mut table = EmbeddingTable::new(dimension);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| EmbeddingError::Malformed { line: line_no, message };
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field");
        let mut vector = Vec::with_capacity(dimension);
        for part in parts {
            let value: f64 = part
                .parse()
                .map_err(|_| malformed(format!("non-numeric component `{part}`")))?;
            if !value.is_finite() {
                return Err(malformed(format!("non-finite component `{part}`")));
            }
            vector.push(value);
        }
        if vector.len() != dimension {
            return Err(malformed(format!("{} components, expected {dimension}", vector.len())));
        }
        if table.vectors.insert(token.to_string(), vector).is_some() {
            warn!(token, line = line_no, "duplicate embedding row, keeping the last one");
        }
        rows += 1;
    }
    if rows != count {
        warn!(declared = count, found = rows, "embedding row count differs from header");
    }
    Ok(table)
}

/// A mention projected into the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionVector {
    pub mention: EntityMention,
    /// `None` when no mention token is in the vocabulary.
    pub vector: Option<Vec<f64>>,
    pub in_vocab_fraction: f64,
}

impl MentionVector {
    pub fn is_groundable(&self) -> bool {
        self.vector.is_some()
    }
}

/// Mean of the in-vocabulary delexicalized token vectors of the mention.
pub fn embed_mention(mention: &EntityMention, table: &EmbeddingTable) -> MentionVector {
    let tokens = tokenize(&mention.surface);
    let mut sum = vec![0.0; table.dimension];
    let mut found = 0usize;
    for token in &tokens {
        if let Some(v) = table.get(&token.delex) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            found += 1;
        }
    }
    let in_vocab_fraction = if tokens.is_empty() {
        0.0
    } else {
        found as f64 / tokens.len() as f64
    };
    let vector = (found > 0).then(|| sum.into_iter().map(|s| s / found as f64).collect());
    MentionVector {
        mention: mention.clone(),
        vector,
        in_vocab_fraction,
    }
}

/// 1 minus cosine similarity. Callers must not pass zero vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Plain DBSCAN over points in the given order. Returns one label per point,
/// `None` for noise. Missing and zero vectors are noise.
///
/// A point is core when at least `min_points` points (itself included) lie
/// within `eps`. Clusters are numbered in creation order and a border point
/// belongs to the first cluster that reaches it.
pub fn dbscan(points: &[Option<&[f64]>], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let usable: Vec<Option<&[f64]>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Some(v) if is_zero(v) => {
                warn!(point = i, "zero-norm vector treated as noise");
                None
            }
            other => *other,
        })
        .collect();
    let neighbors = |i: usize| -> Vec<usize> {
        let Some(p) = usable[i] else { return Vec::new() };
        (0..n)
            .filter(|&j| usable[j].is_some_and(|q| cosine_distance(p, q) <= eps))
            .collect()
    };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_label = 0;
    for i in 0..n {
        if visited[i] || usable[i].is_none() {
            continue;
        }
        visited[i] = true;
        let seeds = neighbors(i);
        if seeds.len() < min_points {
            continue;
        }
        let label = next_label;
        next_label += 1;
        labels[i] = Some(label);
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(label);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let reach = neighbors(j);
            if reach.len() >= min_points {
                queue.extend(reach.into_iter().filter(|&k| !visited[k] || labels[k].is_none()));
            }
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterLabel {
    Core(usize),
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Indices into the input vector list, ascending.
    pub member_indices: Vec<usize>,
    pub label: ClusterLabel,
}

fn mention_order(a: &EntityMention, b: &EntityMention) -> std::cmp::Ordering {
    (&a.trial_id, a.line_index, a.token_span, a.category, &a.surface).cmp(&(
        &b.trial_id,
        b.line_index,
        b.token_span,
        b.category,
        &b.surface,
    ))
}

/// Clusters mention vectors after sorting them by trial, line and span, so
/// the outcome does not depend on input order. Noise points, if any, come
/// back as a final cluster labelled [`ClusterLabel::Noise`].
pub fn cluster_mentions(vectors: &[MentionVector], eps: f64, min_points: usize) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| mention_order(&vectors[a].mention, &vectors[b].mention));
    let points: Vec<Option<&[f64]>> = order.iter().map(|&i| vectors[i].vector.as_deref()).collect();
    let labels = dbscan(&points, eps, min_points);

    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut clusters: Vec<Cluster> = (0..count)
        .map(|l| Cluster {
            member_indices: Vec::new(),
            label: ClusterLabel::Core(l),
        })
        .collect();
    let mut noise = Vec::new();
    for (position, label) in labels.into_iter().enumerate() {
        let original = order[position];
        match label {
            Some(l) => clusters[l].member_indices.push(original),
            None => noise.push(original),
        }
    }
    for cluster in &mut clusters {
        cluster.member_indices.sort_unstable();
    }
    if !noise.is_empty() {
        noise.sort_unstable();
        clusters.push(Cluster {
            member_indices: noise,
            label: ClusterLabel::Noise,
        });
    }
    clusters
}

fn bigrams(text: &str) -> HashMap<(char, char), usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = HashMap::new();
    for pair in chars.windows(2) {
        *counts.entry((pair[0], pair[1])).or_insert(0) += 1;
    }
    counts
}

fn dice_counts(a: &HashMap<(char, char), usize>, b: &HashMap<(char, char), usize>) -> f64 {
    let total: usize = a.values().sum::<usize>() + b.values().sum::<usize>();
    let shared: usize = a.iter().map(|(k, n)| (*n).min(b.get(k).copied().unwrap_or(0))).sum();
    2.0 * shared as f64 / total as f64
}

/// Sørensen-Dice coefficient over character-bigram multisets of the
/// normalized strings. Strings shorter than two characters compare by equality.
pub fn dice_similarity(a: &str, b: &str) -> f64 {
    let a = normalize_name(a);
    let b = normalize_name(b);
    if a.chars().count() < 2 || b.chars().count() < 2 {
        return if a == b { 1.0 } else { 0.0 };
    }
    dice_counts(&bigrams(&a), &bigrams(&b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    /// Index of the mention in the list given to the linker.
    pub mention_index: usize,
    pub concept_id: Option<String>,
    pub similarity: f64,
}

struct NameEntry {
    concept_id: String,
    normalized: String,
    bigrams: HashMap<(char, char), usize>,
}

/// Precomputed concept names per category for repeated Dice lookups.
pub struct ConceptMatcher {
    by_category: HashMap<EntityCategory, Vec<NameEntry>>,
}

impl ConceptMatcher {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let mut by_category: HashMap<EntityCategory, Vec<NameEntry>> = HashMap::new();
        for concept in kb.concepts() {
            for name in concept.names() {
                let normalized = normalize_name(name);
                by_category.entry(concept.category).or_default().push(NameEntry {
                    concept_id: concept.id.clone(),
                    bigrams: bigrams(&normalized),
                    normalized,
                });
            }
        }
        ConceptMatcher { by_category }
    }

    /// Best concept of `category` for `surface` with its similarity. Ties go
    /// to the smallest concept id.
    pub fn best_match(&self, surface: &str, category: EntityCategory) -> Option<(String, f64)> {
        let normalized = normalize_name(surface);
        let short = normalized.chars().count() < 2;
        let grams = bigrams(&normalized);
        let mut best: Option<(&str, f64)> = None;
        for entry in self.by_category.get(&category).into_iter().flatten() {
            let score = if short || entry.normalized.chars().count() < 2 {
                if normalized == entry.normalized {
                    1.0
                } else {
                    0.0
                }
            } else {
                dice_counts(&grams, &entry.bigrams)
            };
            let better = match best {
                None => true,
                Some((id, s)) => score > s || (score == s && entry.concept_id.as_str() < id),
            };
            if better {
                best = Some((&entry.concept_id, score));
            }
        }
        best.map(|(id, s)| (id.to_string(), s))
    }

    fn ground_one(&self, index: usize, mention: &EntityMention, theta: f64) -> Grounding {
        match self.best_match(&mention.surface, mention.category) {
            Some((id, s)) if s >= theta => Grounding {
                mention_index: index,
                concept_id: Some(id),
                similarity: s,
            },
            other => Grounding {
                mention_index: index,
                concept_id: None,
                similarity: other.map_or(0.0, |(_, s)| s),
            },
        }
    }

    /// Grounds the members of one cluster. The cluster-level candidate is
    /// searched among concepts of the members' majority category; members of
    /// other categories, and all members when the cluster match falls below
    /// `theta`, are grounded one by one.
    pub fn ground_cluster(&self, cluster: &Cluster, mentions: &[EntityMention], theta: f64) -> Vec<Grounding> {
        let members = &cluster.member_indices;
        if cluster.label == ClusterLabel::Noise || members.len() == 1 {
            return members.iter().map(|&i| self.ground_one(i, &mentions[i], theta)).collect();
        }
        let mut counts: HashMap<EntityCategory, usize> = HashMap::new();
        for &i in members {
            *counts.entry(mentions[i].category).or_insert(0) += 1;
        }
        let majority = EntityCategory::ALL
            .into_iter()
            .max_by_key(|c| (counts.get(c).copied().unwrap_or(0), std::cmp::Reverse(*c)))
            .expect("ten categories");
        let mut best: Option<(String, f64)> = None;
        for &i in members.iter().filter(|&&i| mentions[i].category == majority) {
            if let Some((id, s)) = self.best_match(&mentions[i].surface, majority) {
                let better = match &best {
                    None => true,
                    Some((bid, bs)) => s > *bs || (s == *bs && id < *bid),
                };
                if better {
                    best = Some((id, s));
                }
            }
        }
        members
            .iter()
            .map(|&i| match &best {
                Some((id, s)) if *s >= theta && mentions[i].category == majority => Grounding {
                    mention_index: i,
                    concept_id: Some(id.clone()),
                    similarity: *s,
                },
                _ => self.ground_one(i, &mentions[i], theta),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkerParams {
    pub eps: f64,
    pub min_points: usize,
    pub theta: f64,
}

impl Default for LinkerParams {
    fn default() -> Self {
        LinkerParams {
            eps: 0.15,
            min_points: 2,
            theta: 0.8,
        }
    }
}

/// Grounds every mention, returning one grounding per mention in input
/// order. Without an embedding table each mention is matched on its own.
pub fn link_mentions(
    mentions: &[EntityMention],
    table: Option<&EmbeddingTable>,
    matcher: &ConceptMatcher,
    params: &LinkerParams,
) -> Vec<Grounding> {
    let mut groundings: Vec<Grounding> = match table {
        None => mentions
            .iter()
            .enumerate()
            .map(|(i, m)| matcher.ground_one(i, m, params.theta))
            .collect(),
        Some(table) => {
            let vectors: Vec<MentionVector> = mentions.iter().map(|m| embed_mention(m, table)).collect();
            cluster_mentions(&vectors, params.eps, params.min_points)
                .iter()
                .flat_map(|c| matcher.ground_cluster(c, mentions, params.theta))
                .collect()
        }
    };
    groundings.sort_by_key(|g| g.mention_index);
    groundings
}
