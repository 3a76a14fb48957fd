//! Keyword negation detection for entity mentions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity_tagger::EntityMention;
use crate::knowledge_base::EntityCategory;
use crate::preprocessor::{tokenize, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Affirmed,
    Negated,
}

impl Polarity {
    pub fn is_negated(self) -> bool {
        self == Polarity::Negated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Keyword must end before the mention starts.
    Preceding,
    /// Keyword may sit on either side of the mention.
    Either,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Preceding => "preceding",
            Direction::Either => "either",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preceding" => Ok(Direction::Preceding),
            "either" => Ok(Direction::Either),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegationRule {
    /// `None` applies to every category.
    pub category: Option<EntityCategory>,
    /// Each keyword is a lowercase token sequence.
    pub keywords: Vec<Vec<String>>,
    pub max_token_distance: usize,
    pub direction: Direction,
}

impl NegationRule {
    pub fn new(
        category: Option<EntityCategory>,
        keywords: &[&str],
        max_token_distance: usize,
        direction: Direction,
    ) -> Self {
        NegationRule {
            category,
            keywords: keywords.iter().map(|k| keyword_tokens(k)).collect(),
            max_token_distance,
            direction,
        }
    }

    pub fn applies_to(&self, category: EntityCategory) -> bool {
        self.category.is_none_or(|c| c == category)
    }
}

fn keyword_tokens(keyword: &str) -> Vec<String> {
    tokenize(keyword).iter().map(Token::lower).collect()
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("negation rules line {line}: {message}")]
    Malformed { line: usize, message: String },
}

const BUNDLED_RULES: &str = include_str!("../resources/negation_rules.tsv");

pub fn bundled_rules() -> Vec<NegationRule> {
    parse_rules(BUNDLED_RULES).expect("bundled negation rules are valid")
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<NegationRule>, RuleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rules(&text)
}

/// Parses the TSV rule format. Rows sharing category, distance and direction
/// are folded into one rule.
pub fn parse_rules(text: &str) -> Result<Vec<NegationRule>, RuleError> {
    let mut rules: Vec<NegationRule> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let malformed = |message: String| RuleError::Malformed { line, message };
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
        }
        let category = match fields[0] {
            "*" => None,
            name => Some(name.parse::<EntityCategory>().map_err(|e| malformed(e.to_string()))?),
        };
        let keyword = keyword_tokens(fields[1]);
        if keyword.is_empty() {
            return Err(malformed("empty keyword".into()));
        }
        let max_token_distance = fields[2]
            .parse::<usize>()
            .map_err(|_| malformed(format!("bad distance `{}`", fields[2])))?;
        let direction = fields[3].parse::<Direction>().map_err(malformed)?;
        match rules.iter_mut().find(|r| {
            r.category == category && r.max_token_distance == max_token_distance && r.direction == direction
        }) {
            Some(rule) => {
                if !rule.keywords.contains(&keyword) {
                    rule.keywords.push(keyword);
                }
            }
            None => rules.push(NegationRule {
                category,
                keywords: vec![keyword],
                max_token_distance,
                direction,
            }),
        }
    }
    Ok(rules)
}

/// Number of tokens strictly between a keyword occurrence and the mention,
/// or `None` when the keyword is on the wrong side for `direction`.
/// An occurrence overlapping the mention counts as distance 0.
fn keyword_distance(keyword: (usize, usize), mention: (usize, usize), direction: Direction) -> Option<usize> {
    let (ks, ke) = keyword;
    let (ms, me) = mention;
    if ke < ms {
        Some(ms - ke - 1)
    } else if ks > me {
        match direction {
            Direction::Either => Some(ks - me - 1),
            Direction::Preceding => None,
        }
    } else {
        Some(0)
    }
}

fn rule_hits(lowered: &[String], span: (usize, usize), rule: &NegationRule) -> bool {
    rule.keywords.iter().any(|keyword| {
        let n = keyword.len();
        (0..lowered.len().saturating_sub(n - 1)).any(|start| {
            lowered[start..start + n] == keyword[..]
                && keyword_distance((start, start + n - 1), span, rule.direction)
                    .is_some_and(|d| d <= rule.max_token_distance)
        })
    })
}

/// Negated when any rule for the mention's category finds a keyword close
/// enough to the mention span.
pub fn detect_negation(line_tokens: &[Token], mention: &EntityMention, rules: &[NegationRule]) -> Polarity {
    let lowered: Vec<String> = line_tokens.iter().map(Token::lower).collect();
    let hit = rules
        .iter()
        .filter(|r| r.applies_to(mention.category))
        .any(|r| rule_hits(&lowered, mention.token_span, r));
    if hit {
        Polarity::Negated
    } else {
        Polarity::Affirmed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessor::{BlockKind, CriteriaLine};

    fn line(text: &str) -> CriteriaLine {
        CriteriaLine {
            index: 0,
            text: text.to_string(),
            tokens: tokenize(text),
        }
    }

    fn mention(line: &CriteriaLine, span: (usize, usize), category: EntityCategory) -> EntityMention {
        EntityMention::new("NCT00000001", BlockKind::Inclusion, line, span, category, 1.0)
    }

    #[test]
    fn preceding_keyword_within_distance() {
        let l = line("no history of leukemia");
        let rules = vec![NegationRule::new(None, &["no", "without", "absence of"], 5, Direction::Preceding)];
        let m = mention(&l, (3, 3), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &rules), Polarity::Negated);
    }

    #[test]
    fn distance_gate() {
        let l = line("no history of leukemia");
        let rules = vec![NegationRule::new(None, &["no"], 1, Direction::Preceding)];
        let m = mention(&l, (3, 3), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &rules), Polarity::Affirmed);
        let rules = vec![NegationRule::new(None, &["no"], 2, Direction::Preceding)];
        assert_eq!(detect_negation(&l.tokens, &m, &rules), Polarity::Negated);
    }

    #[test]
    fn no_keyword_is_affirmed() {
        let l = line("leukemia");
        let m = mention(&l, (0, 0), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &bundled_rules()), Polarity::Affirmed);
    }

    #[test]
    fn following_keyword_for_either_rules() {
        let l = line("hiv seronegative");
        let m = mention(&l, (0, 0), EntityCategory::ChronicDisease);
        assert_eq!(detect_negation(&l.tokens, &m, &bundled_rules()), Polarity::Negated);
        // the same keyword does not apply to other categories
        let m = mention(&l, (0, 0), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &bundled_rules()), Polarity::Affirmed);
    }

    #[test]
    fn preceding_rules_ignore_following_keywords() {
        let l = line("leukemia : no");
        let m = mention(&l, (0, 0), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &bundled_rules()), Polarity::Affirmed);
    }

    #[test]
    fn keyword_overlapping_mention() {
        let l = line("not pregnant");
        let m = mention(&l, (1, 1), EntityCategory::Pregnancy);
        let rules = vec![NegationRule::new(Some(EntityCategory::Pregnancy), &["not pregnant"], 0, Direction::Either)];
        assert_eq!(detect_negation(&l.tokens, &m, &rules), Polarity::Negated);
    }

    #[test]
    fn empty_rules_affirm() {
        let l = line("no leukemia");
        let m = mention(&l, (1, 1), EntityCategory::Cancer);
        assert_eq!(detect_negation(&l.tokens, &m, &[]), Polarity::Affirmed);
    }

    #[test]
    fn rule_file_grouping() {
        let rules = bundled_rules();
        let wildcard = rules.iter().find(|r| r.category.is_none()).unwrap();
        assert_eq!(wildcard.keywords.len(), 7);
        assert_eq!(wildcard.max_token_distance, 6);
        assert_eq!(rules.len(), 4);
    }

    #[test]
    fn malformed_rule_rows() {
        assert!(matches!(parse_rules("*\tno\tsix\tpreceding"), Err(RuleError::Malformed { line: 1, .. })));
        assert!(parse_rules("cancer\tno\t3\tbackwards").is_err());
        assert!(parse_rules("tumour\tno\t3\teither").is_err());
        assert!(parse_rules("*\tno\t3").is_err());
    }
}
