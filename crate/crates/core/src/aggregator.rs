//! Trial-level aggregation of criterion facts and patient screening.
//!
//! Raw facts come from inclusion and exclusion blocks. Aggregation rewrites
//! exclusion facts as inclusion requirements, removes duplicates, drops
//! general facts shadowed by more specific ones, removes contradictions, and
//! intersects attribute bounds. The resulting profile is a conjunction: a
//! patient is eligible when every fact holds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute_cfg::{unit_key, AttributeCriterion, Bound};
use crate::knowledge_base::KnowledgeBase;
use crate::preprocessor::BlockKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Constraint {
    Entity { requires_presence: bool },
    Attribute(AttributeCriterion),
}

impl Constraint {
    /// The constraint with its meaning inverted.
    pub fn complement(&self) -> Constraint {
        match self {
            Constraint::Entity { requires_presence } => Constraint::Entity {
                requires_presence: !requires_presence,
            },
            Constraint::Attribute(c) => Constraint::Attribute(c.complement()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub block: BlockKind,
    pub line_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionFact {
    pub trial_id: String,
    /// Concept or attribute id.
    pub concept_ref: String,
    pub constraint: Constraint,
    /// Exclusion-form facts state what disqualifies a patient; inclusion-form
    /// facts state what a patient must satisfy.
    pub form: BlockKind,
    pub provenance: Vec<Provenance>,
}

impl CriterionFact {
    pub fn entity(trial_id: &str, concept_id: &str, requires_presence: bool, form: BlockKind) -> Self {
        CriterionFact {
            trial_id: trial_id.to_string(),
            concept_ref: concept_id.to_string(),
            constraint: Constraint::Entity { requires_presence },
            form,
            provenance: Vec::new(),
        }
    }

    pub fn attribute(trial_id: &str, criterion: AttributeCriterion, form: BlockKind) -> Self {
        CriterionFact {
            trial_id: trial_id.to_string(),
            concept_ref: criterion.attribute_id.clone(),
            constraint: Constraint::Attribute(criterion),
            form,
            provenance: Vec::new(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance.push(provenance);
        self
    }

    fn same_claim(&self, other: &CriterionFact) -> bool {
        self.concept_ref == other.concept_ref && self.constraint == other.constraint && self.form == other.form
    }

    fn presence(&self) -> Option<bool> {
        match self.constraint {
            Constraint::Entity { requires_presence } => Some(requires_presence),
            Constraint::Attribute(_) => None,
        }
    }
}

/// Rewrites a fact in the opposite form: an exclusion fact becomes the
/// inclusion requirement that avoids it. Applying it twice is the identity.
pub fn cast_exclusion(fact: &CriterionFact) -> CriterionFact {
    CriterionFact {
        constraint: fact.constraint.complement(),
        form: fact.form.flipped(),
        ..fact.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    /// A more specific fact with the same polarity is kept.
    Generalized { witness: String },
    Contradiction,
    /// An intent rule prefers the `winner` concept.
    IntentConflict { winner: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFact {
    pub fact: CriterionFact,
    #[serde(flatten)]
    pub reason: DropReason,
}

/// Collapses facts stating the same thing; provenance lists are merged into
/// the first occurrence.
pub fn deduplicate(facts: Vec<CriterionFact>) -> (Vec<CriterionFact>, Vec<DroppedFact>) {
    let mut kept: Vec<CriterionFact> = Vec::new();
    let mut dropped = Vec::new();
    for fact in facts {
        match kept.iter_mut().find(|k| k.same_claim(&fact)) {
            Some(existing) => {
                for p in &fact.provenance {
                    if !existing.provenance.contains(p) {
                        existing.provenance.push(p.clone());
                    }
                }
                dropped.push(DroppedFact {
                    fact,
                    reason: DropReason::Duplicate,
                });
            }
            None => kept.push(fact),
        }
    }
    (kept, dropped)
}

fn strict_descendant(kb: &KnowledgeBase, ancestor: &str, descendant: &str) -> bool {
    kb.is_ancestor(ancestor, descendant).unwrap_or(false)
}

/// Drops entity facts when a fact with the same polarity about a strictly
/// more specific concept is present. The witness recorded for each drop is
/// itself kept.
pub fn drop_generalized(facts: Vec<CriterionFact>, kb: &KnowledgeBase) -> (Vec<CriterionFact>, Vec<DroppedFact>) {
    let shadowed = |f: &CriterionFact| -> Vec<usize> {
        let Some(polarity) = f.presence() else { return Vec::new() };
        facts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.presence() == Some(polarity) && strict_descendant(kb, &f.concept_ref, &g.concept_ref))
            .map(|(i, _)| i)
            .collect()
    };
    let descendants: Vec<Vec<usize>> = facts.iter().map(shadowed).collect();
    let witnesses: Vec<Option<String>> = descendants
        .iter()
        .map(|ds| {
            // descendants without descendants of their own are never dropped
            ds.iter()
                .filter(|&&d| descendants[d].is_empty())
                .map(|&d| facts[d].concept_ref.clone())
                .min()
        })
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (fact, witness) in facts.into_iter().zip(witnesses) {
        match witness {
            Some(witness) => dropped.push(DroppedFact {
                fact,
                reason: DropReason::Generalized { witness },
            }),
            None => kept.push(fact),
        }
    }
    (kept, dropped)
}

/// A (winner, loser) pair: when both concepts are required present, the
/// loser is dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRule {
    pub winner: String,
    pub loser: String,
    pub note: String,
}

#[derive(Debug, Error)]
pub enum IntentRuleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("intent rules line {line}: {message}")]
    Malformed { line: usize, message: String },
}

const BUNDLED_INTENTS: &str = include_str!("../resources/intent_rules.tsv");

pub fn bundled_intent_rules() -> Vec<IntentRule> {
    parse_intent_rules(BUNDLED_INTENTS).expect("bundled intent rules are valid")
}

pub fn load_intent_rules(path: impl AsRef<Path>) -> Result<Vec<IntentRule>, IntentRuleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IntentRuleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_intent_rules(&text)
}

pub fn parse_intent_rules(text: &str) -> Result<Vec<IntentRule>, IntentRuleError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        let (winner, loser) = match fields.as_slice() {
            [w, l] | [w, l, _] if !w.is_empty() && !l.is_empty() => (*w, *l),
            _ => {
                return Err(IntentRuleError::Malformed {
                    line: i + 1,
                    message: "expected winner<TAB>loser<TAB>note".into(),
                })
            }
        };
        rules.push(IntentRule {
            winner: winner.to_string(),
            loser: loser.to_string(),
            note: fields.get(2).unwrap_or(&"").to_string(),
        });
    }
    Ok(rules)
}

/// Drops facts that cannot hold together: presence and absence of the same
/// concept (both dropped), attributes whose plain intervals have an empty
/// intersection (all dropped), and intent-rule losers.
pub fn remove_contradictions(facts: Vec<CriterionFact>, intents: &[IntentRule]) -> (Vec<CriterionFact>, Vec<DroppedFact>) {
    let mut conflicting = vec![false; facts.len()];
    for (i, f) in facts.iter().enumerate() {
        if let Some(p) = f.presence() {
            if facts.iter().any(|g| g.concept_ref == f.concept_ref && g.presence() == Some(!p)) {
                conflicting[i] = true;
            }
        }
    }
    let mut by_attribute: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in facts.iter().enumerate() {
        if let Constraint::Attribute(c) = &f.constraint {
            if !c.negated {
                by_attribute.entry(&f.concept_ref).or_default().push(i);
            }
        }
    }
    for indices in by_attribute.values() {
        if combined_interval(indices.iter().map(|&i| &facts[i])).is_none() {
            for &i in indices {
                conflicting[i] = true;
            }
        }
    }

    let required: BTreeSet<&str> = facts
        .iter()
        .zip(&conflicting)
        .filter(|(f, c)| !**c && f.presence() == Some(true))
        .map(|(f, _)| f.concept_ref.as_str())
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (fact, conflict) in facts.iter().zip(conflicting) {
        let reason = if conflict {
            Some(DropReason::Contradiction)
        } else if fact.presence() == Some(true) {
            intents
                .iter()
                .find(|r| r.loser == fact.concept_ref && r.winner != r.loser && required.contains(r.winner.as_str()))
                .map(|r| DropReason::IntentConflict {
                    winner: r.winner.clone(),
                })
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedFact {
                fact: fact.clone(),
                reason,
            }),
            None => kept.push(fact.clone()),
        }
    }
    (kept, dropped)
}

fn combined_interval<'a>(facts: impl Iterator<Item = &'a CriterionFact>) -> Option<AttributeCriterion> {
    let mut acc: Option<AttributeCriterion> = None;
    for f in facts {
        let Constraint::Attribute(c) = &f.constraint else { continue };
        acc = Some(match acc {
            None if c.is_empty_interval() => return None,
            None => c.clone(),
            Some(a) => a.intersect(c)?,
        });
    }
    acc
}

/// Merges the plain (non-negated) facts of each attribute into one fact.
fn intersect_attributes(facts: Vec<CriterionFact>) -> Vec<CriterionFact> {
    let mut out: Vec<CriterionFact> = Vec::new();
    for fact in facts {
        let merge_into = match &fact.constraint {
            Constraint::Attribute(c) if !c.negated => out.iter().position(|o| {
                o.concept_ref == fact.concept_ref && matches!(&o.constraint, Constraint::Attribute(a) if !a.negated)
            }),
            _ => None,
        };
        match merge_into {
            Some(k) => {
                let (Constraint::Attribute(a), Constraint::Attribute(b)) = (&out[k].constraint, &fact.constraint) else {
                    unreachable!("both are attribute facts")
                };
                let merged = a.intersect(b).expect("empty intersections were removed as contradictions");
                out[k].constraint = Constraint::Attribute(merged);
                for p in fact.provenance {
                    if !out[k].provenance.contains(&p) {
                        out[k].provenance.push(p);
                    }
                }
            }
            None => out.push(fact),
        }
    }
    out
}

fn cmp_bound(a: &Option<Bound>, b: &Option<Bound>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.value.total_cmp(&y.value).then(x.inclusive.cmp(&y.inclusive)),
    }
}

fn cmp_facts(a: &CriterionFact, b: &CriterionFact) -> Ordering {
    a.concept_ref.cmp(&b.concept_ref).then_with(|| match (&a.constraint, &b.constraint) {
        (Constraint::Entity { requires_presence: x }, Constraint::Entity { requires_presence: y }) => y.cmp(x),
        (Constraint::Entity { .. }, Constraint::Attribute(_)) => Ordering::Less,
        (Constraint::Attribute(_), Constraint::Entity { .. }) => Ordering::Greater,
        (Constraint::Attribute(x), Constraint::Attribute(y)) => x
            .negated
            .cmp(&y.negated)
            .then_with(|| cmp_bound(&x.lower, &y.lower))
            .then_with(|| cmp_bound(&x.upper, &y.upper)),
    })
}

/// One trial's eligibility requirements, all in inclusion form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityProfile {
    pub trial_id: String,
    pub facts: Vec<CriterionFact>,
    pub dropped: Vec<DroppedFact>,
}

impl EligibilityProfile {
    pub fn contradictions(&self) -> impl Iterator<Item = &DroppedFact> {
        self.dropped.iter().filter(|d| d.reason == DropReason::Contradiction)
    }
}

/// Runs the aggregation steps on one trial's raw facts. Facts come back in
/// a canonical order, so aggregating a profile's facts again changes nothing.
pub fn aggregate(trial_id: &str, facts: &[CriterionFact], kb: &KnowledgeBase, intents: &[IntentRule]) -> EligibilityProfile {
    let cast: Vec<CriterionFact> = facts
        .iter()
        .map(|f| match f.form {
            BlockKind::Exclusion => cast_exclusion(f),
            BlockKind::Inclusion => f.clone(),
        })
        .collect();
    let (unique, mut dropped) = deduplicate(cast);
    let (specific, generalized) = drop_generalized(unique, kb);
    dropped.extend(generalized);
    let (consistent, conflicts) = remove_contradictions(specific, intents);
    dropped.extend(conflicts);
    let mut facts = intersect_attributes(consistent);
    facts.sort_by(cmp_facts);
    EligibilityProfile {
        trial_id: trial_id.to_string(),
        facts,
        dropped,
    }
}

/// One patient datum.
#[derive(Debug, Clone, PartialEq)]
pub enum PatientValue {
    Presence(bool),
    Numeric { value: f64, unit: Option<String> },
}

impl PatientValue {
    /// Parses `present`, `absent`, a number, or a number followed by a unit
    /// (`70 kg`, `1.5x uln`).
    pub fn parse(text: &str) -> Option<PatientValue> {
        let text = text.trim();
        match text.to_lowercase().as_str() {
            "present" => return Some(PatientValue::Presence(true)),
            "absent" => return Some(PatientValue::Presence(false)),
            _ => {}
        }
        let split = text
            .char_indices()
            .find(|&(i, c)| !(c.is_ascii_digit() || c == '.' || (i == 0 && (c == '-' || c == '+'))))
            .map_or(text.len(), |(i, _)| i);
        let value: f64 = text[..split].parse().ok()?;
        let unit = text[split..].trim();
        Some(PatientValue::Numeric {
            value,
            unit: (!unit.is_empty()).then(|| unit.to_lowercase()),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Option<PatientValue> {
        match value {
            serde_json::Value::Bool(b) => Some(PatientValue::Presence(*b)),
            serde_json::Value::Number(n) => n.as_f64().map(|value| PatientValue::Numeric { value, unit: None }),
            serde_json::Value::String(s) => PatientValue::parse(s),
            _ => None,
        }
    }
}

/// Patient data keyed by knowledge-base id.
pub type Patient = BTreeMap<String, PatientValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactVerdict {
    Satisfied,
    Violated,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eligibility {
    Eligible,
    Ineligible,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientVerdict {
    pub eligibility: Eligibility,
    /// One verdict per profile fact, in profile order.
    pub facts: Vec<FactVerdict>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatientError {
    #[error("fact on `{concept_ref}` expects {expected}, patient value is {found}")]
    TypeMismatch {
        concept_ref: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("fact on `{concept_ref}`: unit `{unit}` is not accepted")]
    UnitMismatch { concept_ref: String, unit: String },
}

/// Checks a patient against every profile fact. Any violated fact makes the
/// patient ineligible; otherwise any fact without data makes the result
/// indeterminate.
pub fn evaluate_patient(profile: &EligibilityProfile, patient: &Patient, kb: &KnowledgeBase) -> Result<PatientVerdict, PatientError> {
    let mut verdicts = Vec::with_capacity(profile.facts.len());
    for fact in &profile.facts {
        let verdict = match (patient.get(&fact.concept_ref), &fact.constraint) {
            (None, _) => FactVerdict::Unknown,
            (Some(PatientValue::Presence(present)), Constraint::Entity { requires_presence }) => {
                if present == requires_presence {
                    FactVerdict::Satisfied
                } else {
                    FactVerdict::Violated
                }
            }
            (Some(PatientValue::Numeric { value, unit }), Constraint::Attribute(c)) => {
                let canonical = match unit {
                    None => *value,
                    Some(u) => {
                        let key = unit_key(u);
                        kb.attribute(&fact.concept_ref)
                            .and_then(|a| {
                                a.accepted_units
                                    .iter()
                                    .find(|(symbol, _)| !symbol.is_empty() && unit_key(symbol) == key)
                            })
                            .map(|(_, factor)| factor.to_canonical(*value))
                            .ok_or_else(|| PatientError::UnitMismatch {
                                concept_ref: fact.concept_ref.clone(),
                                unit: u.clone(),
                            })?
                    }
                };
                if c.contains(canonical) {
                    FactVerdict::Satisfied
                } else {
                    FactVerdict::Violated
                }
            }
            (Some(PatientValue::Numeric { .. }), Constraint::Entity { .. }) => {
                return Err(PatientError::TypeMismatch {
                    concept_ref: fact.concept_ref.clone(),
                    expected: "present or absent",
                    found: "numeric",
                })
            }
            (Some(PatientValue::Presence(_)), Constraint::Attribute(_)) => {
                return Err(PatientError::TypeMismatch {
                    concept_ref: fact.concept_ref.clone(),
                    expected: "a number",
                    found: "present/absent",
                })
            }
        };
        verdicts.push(verdict);
    }
    let eligibility = if verdicts.contains(&FactVerdict::Violated) {
        Eligibility::Ineligible
    } else if verdicts.contains(&FactVerdict::Unknown) {
        Eligibility::Indeterminate
    } else {
        Eligibility::Eligible
    };
    Ok(PatientVerdict {
        eligibility,
        facts: verdicts,
    })
}
