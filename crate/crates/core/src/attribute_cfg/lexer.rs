use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::knowledge_base::KnowledgeBase;
use crate::preprocessor::{is_number_text, tokenize, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Between,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Between => "between",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "≤",
            CmpOp::Gt => ">",
            CmpOp::Ge => "≥",
            CmpOp::Eq => "=",
            CmpOp::Between => "between",
        }
    }

    /// The operator seen from the other operand: `18 < age` is `age > 18`.
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connector {
    And,
    Or,
    To,
    Dash,
}

impl Connector {
    pub fn as_str(self) -> &'static str {
        match self {
            Connector::And => "and",
            Connector::Or => "or",
            Connector::To => "to",
            Connector::Dash => "dash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LexKind {
    Attribute(String),
    /// Unit key, see [`unit_key`].
    Unit(String),
    Comparison {
        op: CmpOp,
        /// Written after its value, as in "18 or older".
        postfix: bool,
        /// Attribute the phrase names by itself ("older than" is about age).
        implied_attribute: Option<String>,
    },
    Number(f64),
    Negation,
    Connector(Connector),
    EndOfString,
    Unknown,
}

impl LexKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LexKind::Attribute(_) => "attribute",
            LexKind::Unit(_) => "unit",
            LexKind::Comparison { .. } => "comparison",
            LexKind::Number(_) => "number",
            LexKind::Negation => "negation",
            LexKind::Connector(_) => "connector",
            LexKind::EndOfString => "end_of_string",
            LexKind::Unknown => "unknown",
        }
    }

    /// The qualifier a grammar terminal can test, if this kind has one.
    pub fn qualifier(&self) -> Option<&'static str> {
        match self {
            LexKind::Comparison { op, .. } => Some(op.as_str()),
            LexKind::Connector(c) => Some(c.as_str()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexToken {
    pub kind: LexKind,
    pub surface: String,
    /// Half-open range of line tokens this lexeme covers.
    pub tokens: (usize, usize),
}

impl LexToken {
    pub fn new(kind: LexKind, surface: impl Into<String>, tokens: (usize, usize)) -> Self {
        LexToken {
            kind,
            surface: surface.into(),
            tokens,
        }
    }
}

impl fmt::Display for LexToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LexKind::Attribute(id) => write!(f, "[attribute({id})]"),
            LexKind::Unit(u) => write!(f, "[unit({u})]"),
            LexKind::Comparison { op, .. } => write!(f, "[comparison({})]", op.symbol()),
            LexKind::Number(v) => write!(f, "[number({v})]"),
            LexKind::Negation => f.write_str("[negation]"),
            LexKind::Connector(c) => write!(f, "[connector({})]", c.as_str()),
            LexKind::EndOfString => f.write_str("[end]"),
            LexKind::Unknown => write!(f, "[unknown({})]", self.surface),
        }
    }
}

/// Comparison phrases. `*` marks phrases that imply the age attribute.
const PREFIX_COMPARISONS: &[(CmpOp, &[&str])] = &[
    (
        CmpOp::Ge,
        &[
            "≥", ">=", "=>", "≧", "at least", "greater than or equal to", "more than or equal to",
            "no less than", "not less than", "minimum", "minimum of", "a minimum of", "min",
            "equal to or greater than", "equal or greater than", "greater or equal to",
        ],
    ),
    (
        CmpOp::Le,
        &[
            "≤", "<=", "=<", "≦", "at most", "less than or equal to", "no more than", "not more than",
            "no greater than", "not greater than", "not exceeding", "not to exceed", "maximum",
            "maximum of", "a maximum of", "max", "up to", "equal to or less than", "equal or less than",
            "less or equal to",
        ],
    ),
    (
        CmpOp::Gt,
        &[
            ">", "greater than", "more than", "over", "above", "exceeding", "exceeds", "higher than",
            "in excess of", "*older than",
        ],
    ),
    (CmpOp::Lt, &["<", "less than", "under", "below", "lower than", "fewer than", "*younger than"]),
    (CmpOp::Eq, &["=", "equal to", "equals"]),
    (CmpOp::Between, &["between"]),
];

const POSTFIX_COMPARISONS: &[(CmpOp, &[&str])] = &[
    (
        CmpOp::Ge,
        &[
            "*or older", "*and older", "or more", "or greater", "or above",
            "or higher", "and above", "or over", "and over",
        ],
    ),
    (
        CmpOp::Le,
        &["*or younger", "*and younger", "or less", "or fewer", "or below", "or lower", "and below", "and under", "or under"],
    ),
];

const NEGATIONS: &[&str] = &["not", "no", "never"];

const CONNECTORS: &[(Connector, &[&str])] = &[
    (Connector::And, &["and"]),
    (Connector::Or, &["or"]),
    (Connector::To, &["to"]),
    (Connector::Dash, &["-", "–", "—"]),
];

/// Tokens dropped before lexing; they carry no meaning inside a criterion
/// ("Age: 18 to 65").
const IGNORED: &[&str] = &[":"];

/// Id of the attribute that age phrases ("older than") refer to.
pub const AGE_ATTRIBUTE: &str = "age";

/// Units that name the age attribute on their own ("18 years old").
pub const AGE_UNITS: &[&str] = &["years old", "year old"];

/// Lookup key of a unit symbol: its lowercased token surfaces concatenated,
/// so "kg / m2" and "kg/m2" share a key.
pub fn unit_key(symbol: &str) -> String {
    tokenize(symbol).iter().map(Token::lower).collect()
}

fn phrase_key(phrase: &str) -> Vec<String> {
    tokenize(phrase).iter().map(Token::lower).collect()
}

/// Phrase table built from the attribute catalog plus the fixed comparison,
/// negation and connector vocabularies.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<Vec<String>, LexKind>,
    /// Unit readings of phrases that are also attribute names ("pack-years").
    shadowed_units: HashMap<Vec<String>, LexKind>,
    max_len: usize,
}

impl Lexicon {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let mut lexicon = Lexicon {
            entries: HashMap::new(),
            shadowed_units: HashMap::new(),
            max_len: 0,
        };
        let age = kb.attribute(AGE_ATTRIBUTE).map(|a| a.id.clone());
        // insertion order is the tie-break priority: first entry for a key wins
        for (table, postfix) in [(PREFIX_COMPARISONS, false), (POSTFIX_COMPARISONS, true)] {
            for (op, phrases) in table {
                for phrase in *phrases {
                    let (phrase, implied_attribute) = match phrase.strip_prefix('*') {
                        Some(p) => (p, age.clone()),
                        None => (*phrase, None),
                    };
                    lexicon.add(
                        phrase,
                        LexKind::Comparison {
                            op: *op,
                            postfix,
                            implied_attribute,
                        },
                    );
                }
            }
        }
        for phrase in NEGATIONS {
            lexicon.add(phrase, LexKind::Negation);
        }
        for (connector, phrases) in CONNECTORS {
            for phrase in *phrases {
                lexicon.add(phrase, LexKind::Connector(*connector));
            }
        }
        for attribute in kb.attributes() {
            for name in attribute.names() {
                lexicon.add(name, LexKind::Attribute(attribute.id.clone()));
            }
        }
        for attribute in kb.attributes() {
            for unit in attribute.accepted_units.keys().filter(|u| !u.is_empty()) {
                lexicon.add(unit, LexKind::Unit(unit_key(unit)));
            }
        }
        lexicon
    }

    fn add(&mut self, phrase: &str, kind: LexKind) {
        let key = phrase_key(phrase);
        if key.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(key.len());
        if let (LexKind::Unit(_), Some(LexKind::Attribute(_))) = (&kind, self.entries.get(&key)) {
            self.shadowed_units.entry(key).or_insert(kind);
            return;
        }
        self.entries.entry(key).or_insert(kind);
    }

    /// Greedy longest match over the line tokens; an end-of-string token is
    /// always appended.
    pub fn lex(&self, line_tokens: &[Token]) -> Vec<LexToken> {
        let lowered: Vec<String> = line_tokens.iter().map(Token::lower).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < lowered.len() {
            if IGNORED.contains(&lowered[i].as_str()) {
                i += 1;
                continue;
            }
            let longest = self.max_len.min(lowered.len() - i);
            let matched = (1..=longest)
                .rev()
                .find_map(|len| self.entries.get(&lowered[i..i + len]).map(|kind| (len, kind.clone())));
            let after_number = matches!(out.last(), Some(LexToken { kind: LexKind::Number(_), .. }));
            let (len, kind) = match matched {
                // a phrase naming both an attribute and a unit is the unit right after a number
                Some((len, LexKind::Attribute(_))) if after_number && self.shadowed_units.contains_key(&lowered[i..i + len]) => {
                    (len, self.shadowed_units[&lowered[i..i + len]].clone())
                }
                Some(found) => found,
                None if is_number_text(&line_tokens[i].surface) => {
                    let digits: String = line_tokens[i].surface.chars().filter(|c| *c != ',').collect();
                    match digits.parse::<f64>() {
                        Ok(v) => (1, LexKind::Number(v)),
                        Err(_) => (1, LexKind::Unknown),
                    }
                }
                None => (1, LexKind::Unknown),
            };
            let surface = line_tokens[i..i + len]
                .iter()
                .map(|t| t.surface.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            out.push(LexToken::new(kind, surface, (i, i + len)));
            i += len;
        }
        let n = line_tokens.len();
        out.push(LexToken::new(LexKind::EndOfString, "", (n, n)));
        out
    }
}

/// One-shot lexing against a catalog.
pub fn lex(line_tokens: &[Token], kb: &KnowledgeBase) -> Vec<LexToken> {
    Lexicon::new(kb).lex(line_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<String> {
        let kb = KnowledgeBase::bundled();
        lex(&tokenize(text), &kb).iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn age_bound() {
        assert_eq!(
            kinds("age ≥ 18 years"),
            ["[attribute(age)]", "[comparison(≥)]", "[number(18)]", "[unit(years)]", "[end]"]
        );
    }

    #[test]
    fn empty_line() {
        assert_eq!(kinds(""), ["[end]"]);
    }

    #[test]
    fn spaced_unit() {
        assert_eq!(
            kinds("body mass index ≤ 38 kg / m2"),
            ["[attribute(bmi)]", "[comparison(≤)]", "[number(38)]", "[unit(kg/m2)]", "[end]"]
        );
    }

    #[test]
    fn phrases_normalize() {
        assert_eq!(kinds("at least")[0], "[comparison(≥)]");
        assert_eq!(kinds("no more than")[0], "[comparison(≤)]");
        assert_eq!(kinds("over")[0], "[comparison(>)]");
        assert_eq!(kinds("greater than")[0], "[comparison(>)]");
        assert_eq!(kinds("under")[0], "[comparison(<)]");
        assert_eq!(kinds("less than")[0], "[comparison(<)]");
        assert_eq!(kinds("between")[0], "[comparison(between)]");
        assert_eq!(kinds(">=")[0], "[comparison(≥)]");
        assert_eq!(kinds("not")[0], "[negation]");
        assert_eq!(kinds("–")[0], "[connector(dash)]");
    }

    #[test]
    fn postfix_and_implied_age() {
        let kb = KnowledgeBase::bundled();
        let toks = lex(&tokenize("18 years or older"), &kb);
        assert_eq!(
            toks[2].kind,
            LexKind::Comparison {
                op: CmpOp::Ge,
                postfix: true,
                implied_attribute: Some("age".into()),
            }
        );
        let toks = lex(&tokenize("2 or less"), &kb);
        assert!(matches!(toks[1].kind, LexKind::Comparison { op: CmpOp::Le, postfix: true, implied_attribute: None }));
    }

    #[test]
    fn numbers_and_units() {
        assert_eq!(
            kinds("platelets > 100,000/mm3"),
            ["[attribute(platelets)]", "[comparison(>)]", "[number(100000)]", "[unit(/mm3)]", "[end]"]
        );
        assert_eq!(kinds("1.5 x ULN")[..2], ["[number(1.5)]", "[unit(xuln)]"]);
        assert_eq!(kinds("100 x 10^9/L")[..2], ["[number(100)]", "[unit(x10^9/l)]"]);
        assert_eq!(kinds("70%")[..2], ["[number(70)]", "[unit(%)]"]);
    }

    #[test]
    fn unknown_and_ignored_tokens() {
        assert_eq!(kinds("Age: 18")[..2], ["[attribute(age)]", "[number(18)]"]);
        assert_eq!(kinds("patients with")[..2], ["[unknown(patients)]", "[unknown(with)]"]);
    }

    #[test]
    fn token_ranges_cover_the_line() {
        let kb = KnowledgeBase::bundled();
        let line = tokenize("no more than 2 x ULN");
        let toks = lex(&line, &kb);
        assert_eq!(toks[0].tokens, (0, 3));
        assert_eq!(toks[1].tokens, (3, 4));
        assert_eq!(toks[2].tokens, (4, 6));
        assert_eq!(toks[3].tokens, (6, 6));
    }

    #[test]
    fn attribute_name_used_as_unit() {
        assert_eq!(kinds("pack-years ≥ 10")[0], "[attribute(pack_years)]");
        assert_eq!(kinds("≥ 10 pack-years")[1..3], ["[number(10)]", "[unit(pack-years)]"]);
    }
}
