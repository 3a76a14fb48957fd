//! Numeric attribute constraints: lexer, CYK parser and interpreter.

mod grammar;
mod interpret;
mod lexer;
mod parser;

pub use grammar::{Grammar, GrammarError, Production, Terminal, START_SYMBOL};
pub use interpret::{evaluate, AttributeCriterion, Bound, EvalError};
pub use lexer::{lex, unit_key, CmpOp, Connector, LexKind, LexToken, Lexicon, AGE_ATTRIBUTE};
pub use parser::{parse_cyk, prune, ParseTree};

use crate::knowledge_base::KnowledgeBase;
use crate::preprocessor::Token;

/// A criterion found on a line, with the line tokens it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedAttribute {
    pub criterion: AttributeCriterion,
    /// First and last line token, inclusive.
    pub token_span: (usize, usize),
}

/// A parse that could not be turned into a criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedParse {
    pub error: EvalError,
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineAttributes {
    pub criteria: Vec<ExtractedAttribute>,
    pub rejected: Vec<RejectedParse>,
}

/// Lexicon and grammar bundled for per-line extraction.
#[derive(Debug, Clone)]
pub struct AttributeExtractor {
    lexicon: Lexicon,
    grammar: Grammar,
}

impl AttributeExtractor {
    pub fn new(kb: &KnowledgeBase, grammar: Grammar) -> Self {
        AttributeExtractor {
            lexicon: Lexicon::new(kb),
            grammar,
        }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Lex, parse, prune and evaluate one line. Identical criteria from
    /// alternative parses of the same span are reported once.
    pub fn extract(&self, line_tokens: &[Token], kb: &KnowledgeBase) -> LineAttributes {
        let tokens = self.lexicon.lex(line_tokens);
        let mut out = LineAttributes::default();
        for tree in prune(&parse_cyk(&tokens, &self.grammar)) {
            let token_span = (tokens[tree.start].tokens.0, tokens[tree.end - 1].tokens.1 - 1);
            match evaluate(&tree, &tokens, kb) {
                Ok(criteria) => {
                    for criterion in criteria {
                        let found = ExtractedAttribute { criterion, token_span };
                        if !out.criteria.contains(&found) {
                            out.criteria.push(found);
                        }
                    }
                }
                Err(error) => out.rejected.push(RejectedParse { error, token_span }),
            }
        }
        out
    }
}
