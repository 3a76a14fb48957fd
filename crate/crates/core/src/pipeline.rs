//! Corpus ingestion, per-trial extraction and JSONL output.

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, error, warn};

use crate::aggregator::{
    aggregate, bundled_intent_rules, load_intent_rules, Constraint, CriterionFact, DropReason, DroppedFact,
    EligibilityProfile, IntentRule, IntentRuleError, Provenance,
};
use crate::attribute_cfg::{AttributeCriterion, AttributeExtractor, Bound, EvalError, Grammar, GrammarError};
use crate::config::{Config, TaggerMode};
use crate::entity_linker::{link_mentions, load_embeddings, ConceptMatcher, EmbeddingError, EmbeddingTable, LinkerParams};
use crate::entity_tagger::{ingest_external_tags, merge_mentions, EntityMention, Gazetteer, TagIngestError};
use crate::knowledge_base::{EntityCategory, KbError, KnowledgeBase};
use crate::preprocessor::{BlockKind, PreprocessedTrial};
use crate::relation_extractor::{bundled_rules, detect_negation, load_rules, NegationRule, Polarity, RuleError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub nct_id: String,
    pub title: String,
    pub eligibility_text: String,
}

/// `NCT` followed by exactly eight digits.
pub fn is_nct_id(id: &str) -> bool {
    id.len() == 11 && id.starts_with("NCT") && id[3..].bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus lacks the `nct_id|title|eligibility_criteria` header")]
    MissingHeader,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<TrialRecord>,
    /// Rows rejected during ingestion.
    pub skipped: usize,
}

const HEADER: &str = "nct_id|title|eligibility_criteria";

pub fn ingest(path: impl AsRef<Path>) -> Result<Corpus, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_str(&text)
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some('|') => out.push('|'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Parses the pipe-separated corpus format. Criteria text may contain `|`;
/// only the first two separators split fields.
pub fn ingest_str(text: &str) -> Result<Corpus, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().trim_start_matches('\u{feff}') == HEADER => {}
        _ => return Err(IngestError::MissingHeader),
    }
    let mut corpus = Corpus::default();
    for (i, line) in lines {
        let fields: Vec<&str> = line.splitn(3, '|').collect();
        let [nct_id, title, criteria] = fields[..] else {
            warn!(line = i + 1, "skipping row with fewer than three fields");
            corpus.skipped += 1;
            continue;
        };
        let nct_id = nct_id.trim();
        if !is_nct_id(nct_id) {
            warn!(line = i + 1, nct_id, "skipping row with a malformed NCT id");
            corpus.skipped += 1;
            continue;
        }
        corpus.records.push(TrialRecord {
            nct_id: nct_id.to_string(),
            title: unescape(title.trim()),
            eligibility_text: unescape(criteria),
        });
    }
    Ok(corpus)
}

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Intents(#[from] IntentRuleError),
    #[error(transparent)]
    Embeddings(#[from] EmbeddingError),
    #[error(transparent)]
    Tags(#[from] TagIngestError),
    #[error("tagger mode {0} needs a tag file")]
    MissingTags(TaggerMode),
    #[error("knowledge base needs both a concept and an attribute file")]
    PartialKb,
}

/// Everything extraction reads, loaded once and shared by all trials.
pub struct Resources {
    pub kb: KnowledgeBase,
    pub extractor: AttributeExtractor,
    pub negation_rules: Vec<NegationRule>,
    pub intents: Vec<IntentRule>,
    pub embeddings: Option<EmbeddingTable>,
    pub matcher: ConceptMatcher,
    pub gazetteer: Gazetteer,
    pub linker: LinkerParams,
    pub tagger: TaggerMode,
}

impl Resources {
    pub fn load(config: &Config) -> Result<Self, ResourceError> {
        let kb = match (&config.kb_concepts, &config.kb_attributes) {
            (None, None) => KnowledgeBase::bundled(),
            (Some(c), Some(a)) => KnowledgeBase::load(c, a)?,
            _ => return Err(ResourceError::PartialKb),
        };
        let grammar = match &config.grammar {
            Some(p) => Grammar::load(p)?,
            None => Grammar::bundled(),
        };
        let negation_rules = match &config.negation_rules {
            Some(p) => load_rules(p)?,
            None => bundled_rules(),
        };
        let intents = match &config.intent_rules {
            Some(p) => load_intent_rules(p)?,
            None => bundled_intent_rules(),
        };
        let embeddings = config.embeddings.as_ref().map(load_embeddings).transpose()?;
        if config.tagger != TaggerMode::Gazetteer && config.tags.is_none() {
            return Err(ResourceError::MissingTags(config.tagger));
        }
        Ok(Resources {
            extractor: AttributeExtractor::new(&kb, grammar),
            matcher: ConceptMatcher::new(&kb),
            gazetteer: Gazetteer::new(&kb),
            kb,
            negation_rules,
            intents,
            embeddings,
            linker: config.linker,
            tagger: config.tagger,
        })
    }
}

/// A mention with its grounding and polarity, in the gold annotation shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub nct_id: String,
    pub block: BlockKind,
    pub line_index: usize,
    /// First and last token, inclusive.
    pub span: (usize, usize),
    pub category: EntityCategory,
    pub concept_id: Option<String>,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
}

/// An attribute constraint as written in one block, before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub nct_id: String,
    pub block: BlockKind,
    pub attribute_id: String,
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
    #[serde(default)]
    pub negated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_index: Option<usize>,
}

/// One line of a raw (pre-aggregation) annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationRecord {
    Entity(EntityRecord),
    Attribute(AttributeRecord),
}

impl AnnotationRecord {
    pub fn nct_id(&self) -> &str {
        match self {
            AnnotationRecord::Entity(e) => &e.nct_id,
            AnnotationRecord::Attribute(a) => &a.nct_id,
        }
    }

    /// The raw fact this record asserts, if any (ungrounded mentions assert
    /// nothing).
    pub fn to_fact(&self, kb: &KnowledgeBase) -> Option<CriterionFact> {
        match self {
            AnnotationRecord::Entity(e) => {
                let concept = e.concept_id.as_ref()?;
                Some(CriterionFact::entity(&e.nct_id, concept, e.polarity == Polarity::Affirmed, e.block))
            }
            AnnotationRecord::Attribute(a) => {
                let unit = kb.attribute(&a.attribute_id).map_or(String::new(), |d| d.canonical_unit.clone());
                let criterion = AttributeCriterion {
                    attribute_id: a.attribute_id.clone(),
                    lower: a.lower,
                    upper: a.upper,
                    unit,
                    negated: a.negated,
                };
                Some(CriterionFact::attribute(&a.nct_id, criterion, a.block))
            }
        }
    }
}

/// One output line per aggregated fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub trial_id: String,
    pub concept_id: String,
    pub concept_name: String,
    /// `entity` or `attribute`.
    pub kind: String,
    pub constraint: Constraint,
    /// Reading form, e.g. "requires participants have ≤ 38 kg/m2".
    pub text: String,
    pub provenance: Vec<Provenance>,
}

impl FactRecord {
    pub fn new(fact: &CriterionFact, kb: &KnowledgeBase) -> Self {
        let concept_name = kb.name_of(&fact.concept_ref).unwrap_or(&fact.concept_ref).to_string();
        let (kind, text) = match &fact.constraint {
            Constraint::Entity { requires_presence: true } => ("entity", format!("requires participants with {concept_name}")),
            Constraint::Entity { requires_presence: false } => ("entity", format!("excludes participants with {concept_name}")),
            Constraint::Attribute(c) => ("attribute", format!("requires participants have {}", c.bounds_text())),
        };
        FactRecord {
            trial_id: fact.trial_id.clone(),
            concept_id: fact.concept_ref.clone(),
            concept_name,
            kind: kind.to_string(),
            constraint: fact.constraint.clone(),
            text,
            provenance: fact.provenance.clone(),
        }
    }

    pub fn to_fact(&self) -> CriterionFact {
        CriterionFact {
            trial_id: self.trial_id.clone(),
            concept_ref: self.concept_id.clone(),
            constraint: self.constraint.clone(),
            form: BlockKind::Inclusion,
            provenance: self.provenance.clone(),
        }
    }
}

/// Extraction result for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub trial_id: String,
    pub profile: EligibilityProfile,
    /// Raw mentions and attribute constraints, before aggregation.
    pub records: Vec<AnnotationRecord>,
    /// Set when the trial could not be processed.
    pub error: Option<String>,
}

fn trial_mentions(
    trial: &PreprocessedTrial,
    resources: &Resources,
    external: Option<&[EntityMention]>,
) -> Vec<EntityMention> {
    let mut out = Vec::new();
    for (block, line) in trial.lines() {
        let gazetteer = match resources.tagger {
            TaggerMode::Gazetteer | TaggerMode::Merged => resources.gazetteer.tag_line(&trial.nct_id, block, line),
            TaggerMode::External => Vec::new(),
        };
        let tagged: Vec<EntityMention> = external
            .unwrap_or(&[])
            .iter()
            .filter(|m| m.line_index == line.index)
            .cloned()
            .collect();
        out.extend(match resources.tagger {
            TaggerMode::Gazetteer => gazetteer,
            TaggerMode::External => tagged,
            TaggerMode::Merged => merge_mentions(&gazetteer, &tagged),
        });
    }
    out
}

/// Runs every stage on one trial.
pub fn extract_trial(record: &TrialRecord, resources: &Resources, external: Option<&[EntityMention]>) -> TrialOutput {
    let trial = PreprocessedTrial::new(record.nct_id.clone(), &record.eligibility_text);
    extract_preprocessed(&trial, resources, external)
}

fn extract_preprocessed(trial: &PreprocessedTrial, resources: &Resources, external: Option<&[EntityMention]>) -> TrialOutput {
    let kb = &resources.kb;
    let id = trial.nct_id.as_str();
    let mentions = trial_mentions(trial, resources, external);
    let groundings = link_mentions(&mentions, resources.embeddings.as_ref(), &resources.matcher, &resources.linker);

    let mut facts = Vec::new();
    let mut records = Vec::new();
    let mut inverted = Vec::new();
    for (mention, grounding) in mentions.iter().zip(&groundings) {
        let (_, line) = trial.line(mention.line_index).expect("mentions come from trial lines");
        let polarity = detect_negation(&line.tokens, mention, &resources.negation_rules);
        let record = AnnotationRecord::Entity(EntityRecord {
            nct_id: id.to_string(),
            block: mention.block_kind,
            line_index: mention.line_index,
            span: mention.token_span,
            category: mention.category,
            concept_id: grounding.concept_id.clone(),
            polarity,
            surface: Some(mention.surface.clone()),
        });
        if let Some(fact) = record.to_fact(kb) {
            facts.push(fact.with_provenance(Provenance {
                block: mention.block_kind,
                line_index: line.index,
                text: line.text.clone(),
            }));
        }
        records.push(record);
    }
    for (block, line) in trial.lines() {
        let provenance = Provenance {
            block,
            line_index: line.index,
            text: line.text.clone(),
        };
        let found = resources.extractor.extract(&line.tokens, kb);
        for extracted in found.criteria {
            let c = &extracted.criterion;
            records.push(AnnotationRecord::Attribute(AttributeRecord {
                nct_id: id.to_string(),
                block,
                attribute_id: c.attribute_id.clone(),
                lower: c.lower,
                upper: c.upper,
                negated: c.negated,
                line_index: Some(line.index),
            }));
            facts.push(CriterionFact::attribute(id, extracted.criterion, block).with_provenance(provenance.clone()));
        }
        for rejected in found.rejected {
            match rejected.error {
                EvalError::BoundInversion { attribute, lower, upper } => {
                    let unit = kb.attribute(&attribute).map_or(String::new(), |a| a.canonical_unit.clone());
                    let criterion = AttributeCriterion::interval(
                        &attribute,
                        Some(Bound::inclusive(lower)),
                        Some(Bound::inclusive(upper)),
                        &unit,
                    );
                    inverted.push(DroppedFact {
                        fact: CriterionFact::attribute(id, criterion, block).with_provenance(provenance.clone()),
                        reason: DropReason::Contradiction,
                    });
                }
                other => debug!(trial = id, line = line.index, "parse not interpreted: {other}"),
            }
        }
    }
    let mut profile = aggregate(id, &facts, kb, &resources.intents);
    profile.dropped.extend(inverted);
    TrialOutput {
        trial_id: id.to_string(),
        profile,
        records,
        error: None,
    }
}

/// Extracts every trial in parallel. Output order follows input order, and
/// a failure in one trial leaves the others untouched.
pub fn run_extract(
    records: &[TrialRecord],
    resources: &Resources,
    tag_file: Option<&Path>,
) -> Result<Vec<TrialOutput>, ResourceError> {
    let trials: Vec<PreprocessedTrial> = records
        .par_iter()
        .map(|r| PreprocessedTrial::new(r.nct_id.clone(), &r.eligibility_text))
        .collect();
    let mut external: HashMap<String, Vec<EntityMention>> = HashMap::new();
    if let Some(path) = tag_file {
        for mention in ingest_external_tags(path, &trials)? {
            external.entry(mention.trial_id.clone()).or_default().push(mention);
        }
    } else if resources.tagger != TaggerMode::Gazetteer {
        return Err(ResourceError::MissingTags(resources.tagger));
    }
    Ok(trials
        .par_iter()
        .map(|trial| {
            let tagged = external.get(&trial.nct_id).map(Vec::as_slice);
            catch_unwind(AssertUnwindSafe(|| extract_preprocessed(trial, resources, tagged))).unwrap_or_else(|panic| {
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown failure".into());
                error!(trial = %trial.nct_id, "extraction failed: {message}");
                TrialOutput {
                    trial_id: trial.nct_id.clone(),
                    profile: EligibilityProfile {
                        trial_id: trial.nct_id.clone(),
                        facts: Vec::new(),
                        dropped: Vec::new(),
                    },
                    records: Vec::new(),
                    error: Some(message),
                }
            })
        })
        .collect())
}

/// Writes the header line (config and counts) followed by one line per fact.
pub fn write_facts(
    out: &mut impl Write,
    outputs: &[TrialOutput],
    kb: &KnowledgeBase,
    config: &Config,
    skipped_rows: usize,
) -> std::io::Result<()> {
    let failed: Vec<&str> = outputs.iter().filter(|o| o.error.is_some()).map(|o| o.trial_id.as_str()).collect();
    let header = serde_json::json!({
        "config": config.to_map(),
        "trials": outputs.len(),
        "skipped_rows": skipped_rows,
        "failed_trials": failed,
    });
    writeln!(out, "{header}")?;
    for output in outputs {
        for fact in &output.profile.facts {
            let line = serde_json::to_string(&FactRecord::new(fact, kb)).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Writes raw mention and attribute records in the gold annotation shape.
pub fn write_records(out: &mut impl Write, outputs: &[TrialOutput]) -> std::io::Result<()> {
    for output in outputs {
        for record in &output.records {
            let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
