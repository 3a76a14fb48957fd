//! Scoring of extraction output against hand annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::aggregator::{aggregate, Constraint, CriterionFact, IntentRule};
use crate::attribute_cfg::{AttributeCriterion, Bound};
use crate::knowledge_base::KnowledgeBase;
use crate::pipeline::{AnnotationRecord, AttributeRecord, EntityRecord, FactRecord};

/// Matching rules behind each reported number. Printed in every report.
pub const MATCHING_RULES: &[&str] = &[
    "entity recognition: a predicted mention is correct when trial, line, token span and category equal a gold mention",
    "entity linking: recognized mentions with the gold concept id, over all predicted mentions",
    "relation extraction: recognized mentions with the gold polarity, over all recognized mentions",
    "attribute linking: gold attribute constraints with a predicted constraint on the same trial and attribute, over gold constraints",
    "end-to-end: aggregated facts equal in trial, concept and constraint (bounds within 1e-9), over gold facts plus unmatched predictions",
];

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvalCounts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EvalCounts {
    /// Panics if `true_positives` exceeds either total.
    pub fn new(true_positives: usize, predicted: usize, gold: usize) -> Self {
        assert!(
            true_positives <= predicted.min(gold),
            "{true_positives} true positives exceed min({predicted}, {gold})"
        );
        EvalCounts {
            true_positives,
            predicted,
            gold,
        }
    }
}

/// Precision, recall and F1. A metric is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn ratio(numerator: usize, denominator: usize) -> Option<f64> {
    (denominator > 0).then(|| numerator as f64 / denominator as f64)
}

pub fn compute_prf(counts: &EvalCounts) -> Prf {
    let precision = ratio(counts.true_positives, counts.predicted);
    let recall = ratio(counts.true_positives, counts.gold);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Prf { precision, recall, f1 }
}

/// Rounds to three decimals, the precision reports are printed at.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn show(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |v| format!("{v:.3}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub value: Option<f64>,
}

impl Accuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        Accuracy {
            correct,
            total,
            value: ratio(correct, total),
        }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{})", show(self.value), self.correct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recognition {
    pub counts: EvalCounts,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub matching_rules: Vec<String>,
    pub trials: usize,
    /// Stages scored from raw mention records; absent without them.
    pub entity_recognition: Option<Recognition>,
    pub entity_linking: Option<Accuracy>,
    pub relation_extraction: Option<Accuracy>,
    pub attribute_linking: Option<Accuracy>,
    pub end_to_end: Accuracy,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "matching rules:")?;
        for rule in &self.matching_rules {
            writeln!(f, "  {rule}")?;
        }
        writeln!(f, "trials: {}", self.trials)?;
        match &self.entity_recognition {
            Some(r) => writeln!(
                f,
                "entity recognition: P {} ({}/{})  R {} ({}/{})  F1 {}",
                show(r.prf.precision),
                r.counts.true_positives,
                r.counts.predicted,
                show(r.prf.recall),
                r.counts.true_positives,
                r.counts.gold,
                show(r.prf.f1)
            )?,
            None => writeln!(f, "entity recognition: n/a (no raw predictions)")?,
        }
        let line = |a: &Option<Accuracy>| a.map_or("n/a (no raw predictions)".to_string(), |a| a.to_string());
        writeln!(f, "entity linking: {}", line(&self.entity_linking))?;
        writeln!(f, "relation extraction: {}", line(&self.relation_extraction))?;
        writeln!(f, "attribute linking: {}", line(&self.attribute_linking))?;
        writeln!(f, "end-to-end: {}", self.end_to_end)
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("predicted trials missing from gold: {}", .0.join(", "))]
    TrialMismatch(Vec<String>),
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, skip: impl Fn(&serde_json::Value) -> bool) -> Result<Vec<T>, ScoringError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| ScoringError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ScoringError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let json_err = |source| ScoringError::Json {
            path: shown.clone(),
            line: i + 1,
            source,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(json_err)?;
        if skip(&value) {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(json_err)?);
    }
    Ok(out)
}

/// Reads extraction output, skipping its header line.
pub fn read_fact_records(path: impl AsRef<Path>) -> Result<Vec<FactRecord>, ScoringError> {
    read_jsonl(path.as_ref(), |v| v.get("config").is_some())
}

/// Reads raw or gold annotation records.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, ScoringError> {
    read_jsonl(path.as_ref(), |_| false)
}

fn split(records: &[AnnotationRecord]) -> (Vec<&EntityRecord>, Vec<&AttributeRecord>) {
    let mut entities = Vec::new();
    let mut attributes = Vec::new();
    for r in records {
        match r {
            AnnotationRecord::Entity(e) => entities.push(e),
            AnnotationRecord::Attribute(a) => attributes.push(a),
        }
    }
    (entities, attributes)
}

/// Pairs each gold item with the first unused predicted item that matches.
fn pair<G, P>(gold: &[G], predicted: &[P], matches: impl Fn(&G, &P) -> bool) -> Vec<(usize, usize)> {
    let mut used = vec![false; predicted.len()];
    let mut pairs = Vec::new();
    for (g, gold_item) in gold.iter().enumerate() {
        if let Some(p) = (0..predicted.len()).find(|&p| !used[p] && matches(gold_item, &predicted[p])) {
            used[p] = true;
            pairs.push((g, p));
        }
    }
    pairs
}

fn close(a: Option<Bound>, b: Option<Bound>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => a.inclusive == b.inclusive && (a.value - b.value).abs() <= TOLERANCE,
        _ => false,
    }
}

fn criteria_match(a: &AttributeCriterion, b: &AttributeCriterion) -> bool {
    a.attribute_id == b.attribute_id
        && a.negated == b.negated
        && a.unit == b.unit
        && close(a.lower, b.lower)
        && close(a.upper, b.upper)
}

/// Equality of aggregated facts, ignoring provenance.
pub fn facts_match(a: &CriterionFact, b: &CriterionFact) -> bool {
    a.trial_id == b.trial_id
        && a.concept_ref == b.concept_ref
        && match (&a.constraint, &b.constraint) {
            (Constraint::Attribute(x), Constraint::Attribute(y)) => criteria_match(x, y),
            (x, y) => x == y,
        }
}

/// Aggregates gold annotations per trial into the facts extraction should emit.
pub fn gold_facts(gold: &[AnnotationRecord], kb: &KnowledgeBase, intents: &[IntentRule]) -> Vec<CriterionFact> {
    let mut by_trial: BTreeMap<&str, Vec<CriterionFact>> = BTreeMap::new();
    for record in gold {
        let facts = by_trial.entry(record.nct_id()).or_default();
        facts.extend(record.to_fact(kb));
    }
    by_trial
        .into_iter()
        .flat_map(|(trial, facts)| aggregate(trial, &facts, kb, intents).facts)
        .collect()
}

/// Scores predictions against gold annotations. Every predicted trial must
/// appear in the gold set; gold trials without predictions count as misses.
pub fn run_eval(
    predicted: &[FactRecord],
    raw: Option<&[AnnotationRecord]>,
    gold: &[AnnotationRecord],
    kb: &KnowledgeBase,
    intents: &[IntentRule],
) -> Result<EvalReport, ScoringError> {
    let gold_trials: BTreeSet<&str> = gold.iter().map(AnnotationRecord::nct_id).collect();
    let predicted_trials = predicted
        .iter()
        .map(|f| f.trial_id.as_str())
        .chain(raw.unwrap_or(&[]).iter().map(AnnotationRecord::nct_id));
    let unmatched: BTreeSet<&str> = predicted_trials.filter(|t| !gold_trials.contains(t)).collect();
    if !unmatched.is_empty() {
        return Err(ScoringError::TrialMismatch(unmatched.into_iter().map(String::from).collect()));
    }

    let (gold_entities, gold_attributes) = split(gold);
    let mut report = EvalReport {
        matching_rules: MATCHING_RULES.iter().map(|s| s.to_string()).collect(),
        trials: gold_trials.len(),
        entity_recognition: None,
        entity_linking: None,
        relation_extraction: None,
        attribute_linking: None,
        end_to_end: Accuracy::new(0, 0),
    };

    if let Some(raw) = raw {
        let (entities, attributes) = split(raw);
        let pairs = pair(&gold_entities, &entities, |g, p| {
            g.nct_id == p.nct_id && g.line_index == p.line_index && g.span == p.span && g.category == p.category
        });
        let counts = EvalCounts::new(pairs.len(), entities.len(), gold_entities.len());
        report.entity_recognition = Some(Recognition {
            counts,
            prf: compute_prf(&counts),
        });
        let linked = pairs
            .iter()
            .filter(|&&(g, p)| gold_entities[g].concept_id == entities[p].concept_id)
            .count();
        report.entity_linking = Some(Accuracy::new(linked, entities.len()));
        let polar = pairs
            .iter()
            .filter(|&&(g, p)| gold_entities[g].polarity == entities[p].polarity)
            .count();
        report.relation_extraction = Some(Accuracy::new(polar, pairs.len()));
        let attr_pairs = pair(&gold_attributes, &attributes, |g, p| {
            g.nct_id == p.nct_id && g.attribute_id == p.attribute_id
        });
        report.attribute_linking = Some(Accuracy::new(attr_pairs.len(), gold_attributes.len()));
    }

    let expected = gold_facts(gold, kb, intents);
    let produced: Vec<CriterionFact> = predicted.iter().map(FactRecord::to_fact).collect();
    let matched = pair(&expected, &produced, facts_match).len();
    let spurious = produced.len() - matched;
    report.end_to_end = Accuracy::new(matched, expected.len() + spurious);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::bundled_intent_rules;
    use crate::knowledge_base::EntityCategory;
    use crate::preprocessor::BlockKind;
    use crate::relation_extractor::Polarity;

    fn entity(line: usize, span: (usize, usize), concept: &str) -> AnnotationRecord {
        AnnotationRecord::Entity(EntityRecord {
            nct_id: "NCT00000001".into(),
            block: BlockKind::Exclusion,
            line_index: line,
            span,
            category: EntityCategory::ChronicDisease,
            concept_id: Some(concept.into()),
            polarity: Polarity::Affirmed,
            surface: None,
        })
    }

    fn facts_for(records: &[AnnotationRecord], kb: &KnowledgeBase) -> Vec<FactRecord> {
        gold_facts(records, kb, &bundled_intent_rules())
            .iter()
            .map(|f| FactRecord::new(f, kb))
            .collect()
    }

    #[test]
    fn prf_edge_cases() {
        let perfect = compute_prf(&EvalCounts::new(7, 7, 7));
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (Some(1.0), Some(1.0), Some(1.0)));
        let zero = compute_prf(&EvalCounts::new(0, 3, 4));
        assert_eq!((zero.precision, zero.recall, zero.f1), (Some(0.0), Some(0.0), Some(0.0)));
        let none = compute_prf(&EvalCounts::new(0, 0, 4));
        assert_eq!((none.precision, none.recall, none.f1), (None, Some(0.0), None));
    }

    #[test]
    #[should_panic]
    fn counts_invariant() {
        EvalCounts::new(5, 4, 10);
    }

    #[test]
    fn identical_predictions_score_one() {
        let kb = KnowledgeBase::bundled();
        let gold = vec![entity(1, (0, 0), "D006505"), entity(2, (1, 2), "D003924")];
        let report = run_eval(&facts_for(&gold, &kb), Some(&gold), &gold, &kb, &[]).unwrap();
        let ner = report.entity_recognition.unwrap();
        assert_eq!((ner.prf.precision, ner.prf.recall, ner.prf.f1), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(report.entity_linking.unwrap().value, Some(1.0));
        assert_eq!(report.relation_extraction.unwrap().value, Some(1.0));
        assert_eq!(report.end_to_end.value, Some(1.0));
    }

    #[test]
    fn empty_predictions() {
        let kb = KnowledgeBase::bundled();
        let gold = vec![entity(1, (0, 0), "D006505")];
        let report = run_eval(&[], Some(&[]), &gold, &kb, &[]).unwrap();
        assert_eq!(report.entity_recognition.unwrap().prf.recall, Some(0.0));
        assert_eq!(report.end_to_end.value, Some(0.0));
        assert_eq!(report.attribute_linking.unwrap().value, None);
    }

    #[test]
    fn two_correct_one_spurious() {
        let kb = KnowledgeBase::bundled();
        let gold = vec![entity(1, (0, 0), "D006505"), entity(2, (0, 1), "D003924"), entity(3, (2, 2), "D001249")];
        let predicted = vec![entity(1, (0, 0), "D006505"), entity(2, (0, 1), "D003924"), entity(4, (0, 0), "D006973")];
        let report = run_eval(&[], Some(&predicted), &gold, &kb, &[]).unwrap();
        let ner = report.entity_recognition.unwrap();
        assert_eq!(ner.counts, EvalCounts::new(2, 3, 3));
        assert_eq!(ner.prf.precision, Some(2.0 / 3.0));
        assert_eq!(ner.prf.recall, Some(2.0 / 3.0));
    }

    #[test]
    fn trial_mismatch() {
        let kb = KnowledgeBase::bundled();
        let gold = vec![entity(1, (0, 0), "D006505")];
        let mut stray = FactRecord::new(&CriterionFact::entity("NCT99999999", "D006505", false, BlockKind::Inclusion), &kb);
        stray.provenance.clear();
        match run_eval(&[stray], None, &gold, &kb, &[]) {
            Err(ScoringError::TrialMismatch(ids)) => assert_eq!(ids, vec!["NCT99999999".to_string()]),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn attribute_bounds_tolerance() {
        let kb = KnowledgeBase::bundled();
        let gold = vec![AnnotationRecord::Attribute(AttributeRecord {
            nct_id: "NCT00000001".into(),
            block: BlockKind::Inclusion,
            attribute_id: "age".into(),
            lower: Some(Bound::inclusive(18.0)),
            upper: None,
            negated: false,
            line_index: None,
        })];
        let mut facts = facts_for(&gold, &kb);
        if let Constraint::Attribute(c) = &mut facts[0].constraint {
            c.lower = Some(Bound::inclusive(18.0 + 1e-12));
        }
        let report = run_eval(&facts, None, &gold, &kb, &[]).unwrap();
        assert_eq!(report.end_to_end.value, Some(1.0));
        assert!(report.to_string().contains("entity recognition: n/a"));
    }
}
