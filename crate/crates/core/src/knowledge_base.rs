//! Hierarchical vocabulary of entity concepts and attribute definitions.
//!
//! Concepts are organized as a forest (single parent per concept, parent in
//! the same category). Attributes carry their canonical unit and the
//! multiplicative factors that convert every accepted unit into it.
//!
//! Both files are tab-separated:
//!
//! ```text
//! # concepts
//! id  preferred_name  syn1|syn2  category  parent_id_or_empty
//! # attributes
//! id  canonical_name  alias1|alias2  numeric|ordinal  unit_or_-  unit=factor,unit=factor
//! ```
//!
//! Conversion factors may be written as fractions (`months=1/12`) so that
//! common conversions stay exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ten entity classes a mention can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    Treatment,
    ChronicDisease,
    Cancer,
    Gender,
    Pregnancy,
    Allergy,
    ContraceptionConsent,
    LanguageLiteracy,
    TechnologyAccess,
    Ethnicity,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 10] = [
        EntityCategory::Treatment,
        EntityCategory::ChronicDisease,
        EntityCategory::Cancer,
        EntityCategory::Gender,
        EntityCategory::Pregnancy,
        EntityCategory::Allergy,
        EntityCategory::ContraceptionConsent,
        EntityCategory::LanguageLiteracy,
        EntityCategory::TechnologyAccess,
        EntityCategory::Ethnicity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityCategory::Treatment => "treatment",
            EntityCategory::ChronicDisease => "chronic_disease",
            EntityCategory::Cancer => "cancer",
            EntityCategory::Gender => "gender",
            EntityCategory::Pregnancy => "pregnancy",
            EntityCategory::Allergy => "allergy",
            EntityCategory::ContraceptionConsent => "contraception_consent",
            EntityCategory::LanguageLiteracy => "language_literacy",
            EntityCategory::TechnologyAccess => "technology_access",
            EntityCategory::Ethnicity => "ethnicity",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown entity category `{0}`")]
pub struct ParseCategoryError(pub String);

impl FromStr for EntityCategory {
    type Err = ParseCategoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ParseCategoryError(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub preferred_name: String,
    pub synonyms: BTreeSet<String>,
    pub category: EntityCategory,
    pub parent_id: Option<String>,
}

impl Concept {
    /// Preferred name followed by every synonym.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.preferred_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Numeric,
    Ordinal,
}

impl ValueKind {
    fn as_str(self) -> &'static str {
        match self {
            ValueKind::Numeric => "numeric",
            ValueKind::Ordinal => "ordinal",
        }
    }
}

/// Multiplicative conversion `canonical = value * numerator / denominator`.
///
/// Kept as a ratio so that factors such as 1/12 convert exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitFactor {
    pub numerator: f64,
    pub denominator: f64,
}

impl UnitFactor {
    pub const IDENTITY: UnitFactor = UnitFactor { numerator: 1.0, denominator: 1.0 };

    pub fn value(self) -> f64 {
        self.numerator / self.denominator
    }

    pub fn to_canonical(self, value: f64) -> f64 {
        value * self.numerator / self.denominator
    }

    pub fn from_canonical(self, value: f64) -> f64 {
        value * self.denominator / self.numerator
    }

    fn parse(text: &str) -> Option<UnitFactor> {
        let (num, den) = match text.split_once('/') {
            Some((n, d)) => (n.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?),
            None => (text.trim().parse::<f64>().ok()?, 1.0),
        };
        Some(UnitFactor { numerator: num, denominator: den })
    }
}

impl fmt::Display for UnitFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denominator == 1.0 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/{}", self.numerator, self.denominator)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub id: String,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
    pub value_kind: ValueKind,
    /// Empty for dimensionless attributes.
    pub canonical_unit: String,
    pub accepted_units: BTreeMap<String, UnitFactor>,
}

impl AttributeDef {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    pub fn factor(&self, unit: &str) -> Option<UnitFactor> {
        self.accepted_units.get(unit).copied()
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Malformed { file: &'static str, line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("concept `{id}` has unknown parent `{parent}`")]
    DanglingParent { id: String, parent: String },
    #[error("concept `{id}` ({category}) has parent `{parent}` of category {parent_category}")]
    ParentCategory {
        id: String,
        category: EntityCategory,
        parent: String,
        parent_category: EntityCategory,
    },
    #[error("hierarchy cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown id `{0}`")]
    UnknownId(String),
}

/// Lowercase, collapse internal whitespace, strip surrounding sentence
/// punctuation and one pair of enclosing brackets. Symbols that are part of
/// a name (`k+`, `(bmi)` at the end) survive.
pub fn normalize_name(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let edge = |c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'') || c.is_whitespace();
    let trimmed = collapsed.trim_matches(edge);
    match trimmed.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
        Some(inner) if !inner.contains(['(', ')']) => inner.trim_matches(edge).to_string(),
        _ => trimmed.to_string(),
    }
}

/// Which table an indexed id belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdKind {
    Concept,
    Attribute,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    concepts: BTreeMap<String, Concept>,
    attributes: BTreeMap<String, AttributeDef>,
    name_index: BTreeMap<String, BTreeSet<String>>,
}

const BUNDLED_CONCEPTS: &str = include_str!("../resources/concepts.tsv");
const BUNDLED_ATTRIBUTES: &str = include_str!("../resources/attributes.tsv");

impl KnowledgeBase {
    pub fn load(concept_file: impl AsRef<Path>, attribute_file: impl AsRef<Path>) -> Result<Self, KbError> {
        let concepts = read_to_string(concept_file.as_ref())?;
        let attributes = read_to_string(attribute_file.as_ref())?;
        Self::from_tsv(&concepts, &attributes)
    }

    /// The sample vocabulary shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_CONCEPTS, BUNDLED_ATTRIBUTES).expect("bundled knowledge base is valid")
    }

    pub fn from_tsv(concepts: &str, attributes: &str) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::default();
        for (line, fields) in data_rows(concepts) {
            let concept = parse_concept(line, &fields)?;
            if kb.concepts.contains_key(&concept.id) {
                return Err(KbError::DuplicateId(concept.id));
            }
            kb.concepts.insert(concept.id.clone(), concept);
        }
        for (line, fields) in data_rows(attributes) {
            let attribute = parse_attribute(line, &fields)?;
            if kb.concepts.contains_key(&attribute.id) || kb.attributes.contains_key(&attribute.id) {
                return Err(KbError::DuplicateId(attribute.id));
            }
            kb.attributes.insert(attribute.id.clone(), attribute);
        }
        kb.validate_hierarchy()?;
        kb.build_index();
        Ok(kb)
    }

    fn validate_hierarchy(&self) -> Result<(), KbError> {
        for concept in self.concepts.values() {
            let Some(parent_id) = &concept.parent_id else { continue };
            let parent = self.concepts.get(parent_id).ok_or_else(|| KbError::DanglingParent {
                id: concept.id.clone(),
                parent: parent_id.clone(),
            })?;
            if parent.category != concept.category {
                return Err(KbError::ParentCategory {
                    id: concept.id.clone(),
                    category: concept.category,
                    parent: parent_id.clone(),
                    parent_category: parent.category,
                });
            }
        }
        // Every concept walks to a root; a revisit on the way is a cycle.
        let mut settled: BTreeSet<&str> = BTreeSet::new();
        for start in self.concepts.keys() {
            let mut path: Vec<&str> = Vec::new();
            let mut current = Some(start.as_str());
            while let Some(id) = current {
                if settled.contains(id) {
                    break;
                }
                if let Some(pos) = path.iter().position(|p| *p == id) {
                    let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.push(id.to_string());
                    return Err(KbError::Cycle(cycle));
                }
                path.push(id);
                current = self.concepts[id].parent_id.as_deref();
            }
            settled.extend(path);
        }
        Ok(())
    }

    fn build_index(&mut self) {
        let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for concept in self.concepts.values() {
            for name in concept.names() {
                index.entry(normalize_name(name)).or_default().insert(concept.id.clone());
            }
        }
        for attribute in self.attributes.values() {
            for name in attribute.names() {
                index.entry(normalize_name(name)).or_default().insert(attribute.id.clone());
            }
        }
        self.name_index = index;
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn attribute(&self, id: &str) -> Option<&AttributeDef> {
        self.attributes.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AttributeDef> {
        self.attributes.values()
    }

    pub fn kind_of(&self, id: &str) -> Option<IdKind> {
        if self.concepts.contains_key(id) {
            Some(IdKind::Concept)
        } else if self.attributes.contains_key(id) {
            Some(IdKind::Attribute)
        } else {
            None
        }
    }

    /// Display name of a concept or attribute id.
    pub fn name_of(&self, id: &str) -> Option<&str> {
        self.concepts
            .get(id)
            .map(|c| c.preferred_name.as_str())
            .or_else(|| self.attributes.get(id).map(|a| a.canonical_name.as_str()))
    }

    pub fn len(&self) -> usize {
        self.concepts.len() + self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True iff `ancestor_id` is reachable from `descendant_id` through one
    /// or more parent links.
    pub fn is_ancestor(&self, ancestor_id: &str, descendant_id: &str) -> Result<bool, KbError> {
        if !self.concepts.contains_key(ancestor_id) {
            return Err(KbError::UnknownId(ancestor_id.to_string()));
        }
        let mut current = self
            .concepts
            .get(descendant_id)
            .ok_or_else(|| KbError::UnknownId(descendant_id.to_string()))?
            .parent_id
            .as_deref();
        while let Some(id) = current {
            if id == ancestor_id {
                return Ok(true);
            }
            current = self.concepts[id].parent_id.as_deref();
        }
        Ok(false)
    }

    /// Ids (concepts and attributes) whose name or synonym equals the
    /// normalized surface.
    pub fn lookup_exact(&self, surface: &str) -> BTreeSet<String> {
        let key = normalize_name(surface);
        if key.is_empty() {
            return BTreeSet::new();
        }
        self.name_index.get(&key).cloned().unwrap_or_default()
    }

    pub fn name_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.name_index
    }

    pub fn to_concept_tsv(&self) -> String {
        let mut out = String::new();
        for c in self.concepts.values() {
            let synonyms: Vec<&str> = c.synonyms.iter().map(String::as_str).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.id,
                c.preferred_name,
                synonyms.join("|"),
                c.category,
                c.parent_id.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn to_attribute_tsv(&self) -> String {
        let mut out = String::new();
        for a in self.attributes.values() {
            let aliases: Vec<&str> = a.aliases.iter().map(String::as_str).collect();
            let units: Vec<String> = a.accepted_units.iter().map(|(u, f)| format!("{u}={f}")).collect();
            let canonical = if a.canonical_unit.is_empty() { "-" } else { a.canonical_unit.as_str() };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                a.id,
                a.canonical_name,
                aliases.join("|"),
                a.value_kind.as_str(),
                canonical,
                units.join(",")
            ));
        }
        out
    }
}

fn read_to_string(path: &Path) -> Result<String, KbError> {
    std::fs::read_to_string(path).map_err(|source| KbError::Io { path: path.display().to_string(), source })
}

/// Non-comment, non-blank rows with 1-based line numbers.
fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed.split('\t').collect()))
        }
    })
}

fn split_names(field: &str) -> BTreeSet<String> {
    field.split('|').map(normalize_name).filter(|s| !s.is_empty()).collect()
}

fn parse_concept(line: usize, fields: &[&str]) -> Result<Concept, KbError> {
    let malformed = |message: String| KbError::Malformed { file: "concepts", line, message };
    if fields.len() < 4 || fields.len() > 5 {
        return Err(malformed(format!("expected 5 tab-separated fields, found {}", fields.len())));
    }
    let id = fields[0].trim().to_string();
    if id.is_empty() {
        return Err(malformed("empty id".into()));
    }
    let preferred_name = normalize_name(fields[1]);
    if preferred_name.is_empty() {
        return Err(malformed(format!("concept `{id}` has an empty preferred name")));
    }
    let mut synonyms = split_names(fields[2]);
    synonyms.remove(&preferred_name);
    let category = fields[3].trim().parse::<EntityCategory>().map_err(|e| malformed(e.to_string()))?;
    let parent_id = fields.get(4).map(|p| p.trim()).filter(|p| !p.is_empty()).map(str::to_string);
    Ok(Concept { id, preferred_name, synonyms, category, parent_id })
}

fn parse_attribute(line: usize, fields: &[&str]) -> Result<AttributeDef, KbError> {
    let malformed = |message: String| KbError::Malformed { file: "attributes", line, message };
    if fields.len() < 5 || fields.len() > 6 {
        return Err(malformed(format!("expected 6 tab-separated fields, found {}", fields.len())));
    }
    let id = fields[0].trim().to_string();
    if id.is_empty() {
        return Err(malformed("empty id".into()));
    }
    let canonical_name = normalize_name(fields[1]);
    if canonical_name.is_empty() {
        return Err(malformed(format!("attribute `{id}` has an empty name")));
    }
    let mut aliases = split_names(fields[2]);
    aliases.remove(&canonical_name);
    let value_kind = match fields[3].trim() {
        "numeric" => ValueKind::Numeric,
        "ordinal" => ValueKind::Ordinal,
        other => return Err(malformed(format!("unknown value kind `{other}`"))),
    };
    let canonical_unit = match fields[4].trim() {
        "-" | "" => String::new(),
        unit => unit.to_lowercase(),
    };
    let mut accepted_units = BTreeMap::new();
    for entry in fields.get(5).copied().unwrap_or("").split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (unit, factor) =
            entry.split_once('=').ok_or_else(|| malformed(format!("unit entry `{entry}` lacks `=`")))?;
        let factor =
            UnitFactor::parse(factor).ok_or_else(|| malformed(format!("bad conversion factor in `{entry}`")))?;
        if !(factor.value().is_finite() && factor.value() > 0.0) {
            return Err(malformed(format!("conversion factor in `{entry}` must be positive")));
        }
        accepted_units.insert(unit.trim().to_lowercase(), factor);
    }
    match accepted_units.get(&canonical_unit) {
        Some(f) if f.value() != 1.0 => {
            return Err(malformed(format!("canonical unit `{canonical_unit}` must have factor 1")));
        }
        Some(_) => {}
        None => {
            accepted_units.insert(canonical_unit.clone(), UnitFactor::IDENTITY);
        }
    }
    Ok(AttributeDef { id, canonical_name, aliases, value_kind, canonical_unit, accepted_units })
}
