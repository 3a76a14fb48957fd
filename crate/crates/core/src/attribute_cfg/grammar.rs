use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::lexer::LexToken;

/// Token kinds a preterminal may name, with the qualifiers each accepts.
const TERMINAL_KINDS: &[(&str, &[&str])] = &[
    ("attribute", &[]),
    ("unit", &[]),
    ("comparison", &["lt", "le", "gt", "ge", "eq", "between"]),
    ("number", &[]),
    ("negation", &[]),
    ("connector", &["and", "or", "to", "dash"]),
    ("end_of_string", &[]),
    ("unknown", &[]),
];

pub const START_SYMBOL: &str = "CRITERION";

/// Right-hand side of a preterminal: a token kind, optionally narrowed to a
/// set of qualifiers (`comparison:lt|le`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Terminal {
    pub kind: &'static str,
    /// Empty means any qualifier.
    pub qualifiers: Vec<&'static str>,
}

impl Terminal {
    pub fn matches(&self, token: &LexToken) -> bool {
        token.kind.kind_name() == self.kind
            && (self.qualifiers.is_empty() || token.kind.qualifier().is_some_and(|q| self.qualifiers.contains(&q)))
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind)?;
        if !self.qualifiers.is_empty() {
            write!(f, ":{}", self.qualifiers.join("|"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Production {
    Binary { lhs: usize, left: usize, right: usize },
    Preterminal { lhs: usize, terminal: Terminal },
}

impl Production {
    pub fn lhs(&self) -> usize {
        match self {
            Production::Binary { lhs, .. } | Production::Preterminal { lhs, .. } => *lhs,
        }
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("grammar line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("nonterminal `{0}` is used but has no productions")]
    Undefined(String),
    #[error("start symbol {START_SYMBOL} has no productions")]
    MissingStart,
    #[error("start symbol {START_SYMBOL} derives no sentence")]
    Unproductive,
}

/// A context-free grammar in the binary/preterminal form CYK needs.
#[derive(Debug, Clone)]
pub struct Grammar {
    nonterminals: Vec<String>,
    productions: Vec<Production>,
    start: usize,
}

const BUNDLED_GRAMMAR: &str = include_str!("../../resources/grammar.cfg");

fn is_nonterminal(symbol: &str) -> bool {
    symbol.starts_with(|c: char| c.is_ascii_uppercase())
}

fn parse_terminal(symbol: &str) -> Result<Terminal, String> {
    let (kind, qualifiers) = match symbol.split_once(':') {
        Some((k, q)) => (k, Some(q)),
        None => (symbol, None),
    };
    let &(kind, allowed) = TERMINAL_KINDS
        .iter()
        .find(|(k, _)| *k == kind)
        .ok_or_else(|| format!("unknown token kind `{kind}`"))?;
    let mut parsed = Vec::new();
    if let Some(qualifiers) = qualifiers {
        for q in qualifiers.split('|') {
            let q = *allowed
                .iter()
                .find(|a| **a == q)
                .ok_or_else(|| format!("`{q}` is not a qualifier of {kind}"))?;
            if !parsed.contains(&q) {
                parsed.push(q);
            }
        }
    }
    Ok(Terminal {
        kind,
        qualifiers: parsed,
    })
}

impl Grammar {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GrammarError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut nonterminals: Vec<String> = Vec::new();
        let mut intern = |name: &str| -> usize {
            *ids.entry(name.to_string()).or_insert_with(|| {
                nonterminals.push(name.to_string());
                nonterminals.len() - 1
            })
        };
        let mut productions = Vec::new();
        let mut defined: Vec<bool> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: String| GrammarError::Syntax { line, message };
            let (lhs, rhs) = content
                .split_once("->")
                .ok_or_else(|| syntax("expected `LHS -> RHS`".into()))?;
            let lhs = lhs.trim();
            if !is_nonterminal(lhs) || lhs.contains(char::is_whitespace) {
                return Err(syntax(format!("`{lhs}` is not a nonterminal name")));
            }
            let rhs: Vec<&str> = rhs.split_whitespace().collect();
            let lhs = intern(lhs);
            let production = match rhs.as_slice() {
                [left, right] if is_nonterminal(left) && is_nonterminal(right) => Production::Binary {
                    lhs,
                    left: intern(left),
                    right: intern(right),
                },
                [single] if !is_nonterminal(single) => Production::Preterminal {
                    lhs,
                    terminal: parse_terminal(single).map_err(syntax)?,
                },
                [_] => return Err(syntax("unit productions are not allowed".into())),
                [_, _] => return Err(syntax("binary productions take two nonterminals".into())),
                _ => return Err(syntax("a production has one terminal or two nonterminals".into())),
            };
            defined.resize(defined.len().max(lhs + 1), false);
            defined[lhs] = true;
            productions.push(production);
        }
        defined.resize(nonterminals.len(), false);
        if let Some(undefined) = (0..nonterminals.len()).find(|&n| !defined[n]) {
            if nonterminals[undefined] == START_SYMBOL {
                return Err(GrammarError::MissingStart);
            }
            return Err(GrammarError::Undefined(nonterminals[undefined].clone()));
        }
        let start = *ids.get(START_SYMBOL).ok_or(GrammarError::MissingStart)?;
        let grammar = Grammar {
            nonterminals,
            productions,
            start,
        };
        if !grammar.productive()[start] {
            return Err(GrammarError::Unproductive);
        }
        Ok(grammar)
    }

    /// Nonterminals that derive at least one terminal string.
    fn productive(&self) -> Vec<bool> {
        let mut productive = vec![false; self.nonterminals.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for p in &self.productions {
                let ok = match p {
                    Production::Preterminal { .. } => true,
                    Production::Binary { left, right, .. } => productive[*left] && productive[*right],
                };
                if ok && !productive[p.lhs()] {
                    productive[p.lhs()] = true;
                    changed = true;
                }
            }
        }
        productive
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn nonterminal_name(&self, id: usize) -> &str {
        &self.nonterminals[id]
    }

    pub fn nonterminal_id(&self, name: &str) -> Option<usize> {
        self.nonterminals.iter().position(|n| n == name)
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.productions {
            match p {
                Production::Binary { lhs, left, right } => writeln!(
                    f,
                    "{} -> {} {}",
                    self.nonterminals[*lhs], self.nonterminals[*left], self.nonterminals[*right]
                )?,
                Production::Preterminal { lhs, terminal } => {
                    writeln!(f, "{} -> {terminal}", self.nonterminals[*lhs])?
                }
            }
        }
        Ok(())
    }
}
