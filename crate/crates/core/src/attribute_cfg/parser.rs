use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::grammar::{Grammar, Production};
use super::lexer::LexToken;

/// A derivation over lexer tokens `start..end`. Leaves are preterminal
/// productions over a single token and have no children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParseTree {
    /// Index of the production applied at this node.
    pub rule: usize,
    pub start: usize,
    pub end: usize,
    pub children: Vec<ParseTree>,
}

impl ParseTree {
    pub fn leaf(rule: usize, position: usize) -> Self {
        ParseTree {
            rule,
            start: position,
            end: position + 1,
            children: Vec::new(),
        }
    }

    pub fn node(rule: usize, left: ParseTree, right: ParseTree) -> Self {
        ParseTree {
            rule,
            start: left.start,
            end: right.end,
            children: vec![left, right],
        }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Token positions of the leaves, left to right.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        if self.children.is_empty() {
            out.push(self.start);
        }
        for child in &self.children {
            child.collect_leaves(out);
        }
    }

    /// The same tree moved `offset` tokens to the right.
    pub fn shifted(&self, offset: usize) -> ParseTree {
        ParseTree {
            rule: self.rule,
            start: self.start + offset,
            end: self.end + offset,
            children: self.children.iter().map(|c| c.shifted(offset)).collect(),
        }
    }
}

/// Upper bound on trees kept per chart cell, so a highly ambiguous user
/// grammar cannot exhaust memory.
const MAX_TREES_PER_CELL: usize = 4096;

/// Recognition chart: one nonterminal bitset per span.
struct Chart {
    n: usize,
    words: usize,
    cells: Vec<u64>,
}

impl Chart {
    fn offset(&self, start: usize, end: usize) -> usize {
        (start * (self.n + 1) + end) * self.words
    }

    fn get(&self, start: usize, end: usize, nt: usize) -> bool {
        self.cells[self.offset(start, end) + nt / 64] & (1 << (nt % 64)) != 0
    }

    fn set(&mut self, start: usize, end: usize, nt: usize) {
        let i = self.offset(start, end) + nt / 64;
        self.cells[i] |= 1 << (nt % 64);
    }

    fn is_empty(&self, start: usize, end: usize) -> bool {
        let o = self.offset(start, end);
        self.cells[o..o + self.words].iter().all(|w| *w == 0)
    }
}

fn recognize(tokens: &[LexToken], grammar: &Grammar) -> Chart {
    let n = tokens.len();
    let words = grammar.nonterminal_count().div_ceil(64).max(1);
    let mut chart = Chart {
        n,
        words,
        cells: vec![0; (n + 1) * (n + 1) * words],
    };
    for (i, token) in tokens.iter().enumerate() {
        for p in grammar.productions() {
            if let Production::Preterminal { lhs, terminal } = p {
                if terminal.matches(token) {
                    chart.set(i, i + 1, *lhs);
                }
            }
        }
    }
    let binary: Vec<(usize, usize, usize)> = grammar
        .productions()
        .iter()
        .filter_map(|p| match p {
            Production::Binary { lhs, left, right } => Some((*lhs, *left, *right)),
            Production::Preterminal { .. } => None,
        })
        .collect();
    for len in 2..=n {
        for start in 0..=n - len {
            let end = start + len;
            for split in start + 1..end {
                if chart.is_empty(start, split) || chart.is_empty(split, end) {
                    continue;
                }
                for &(lhs, left, right) in &binary {
                    if chart.get(start, split, left) && chart.get(split, end, right) {
                        chart.set(start, end, lhs);
                    }
                }
            }
        }
    }
    chart
}

struct Enumerator<'a> {
    tokens: &'a [LexToken],
    grammar: &'a Grammar,
    chart: &'a Chart,
    memo: HashMap<(usize, usize, usize), Rc<Vec<ParseTree>>>,
}

impl Enumerator<'_> {
    /// All trees rooted at `nt` over `start..end`, in production order, then
    /// split point, then left and right subtree order.
    fn trees(&mut self, nt: usize, start: usize, end: usize) -> Rc<Vec<ParseTree>> {
        if let Some(found) = self.memo.get(&(nt, start, end)) {
            return Rc::clone(found);
        }
        let mut out = Vec::new();
        'rules: for (rule, p) in self.grammar.productions().iter().enumerate() {
            match p {
                Production::Preterminal { lhs, terminal } if *lhs == nt => {
                    if end == start + 1 && terminal.matches(&self.tokens[start]) {
                        out.push(ParseTree::leaf(rule, start));
                    }
                }
                Production::Binary { lhs, left, right } if *lhs == nt => {
                    for split in start + 1..end {
                        if !(self.chart.get(start, split, *left) && self.chart.get(split, end, *right)) {
                            continue;
                        }
                        let lefts = self.trees(*left, start, split);
                        let rights = self.trees(*right, split, end);
                        for l in lefts.iter() {
                            for r in rights.iter() {
                                if out.len() == MAX_TREES_PER_CELL {
                                    warn!(start, end, "parse tree limit reached, remaining derivations dropped");
                                    break 'rules;
                                }
                                out.push(ParseTree::node(rule, l.clone(), r.clone()));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let out = Rc::new(out);
        self.memo.insert((nt, start, end), Rc::clone(&out));
        out
    }
}

/// Every tree rooted at the start symbol over every contiguous token span,
/// ordered by span start, then span length, then production order.
pub fn parse_cyk(tokens: &[LexToken], grammar: &Grammar) -> Vec<ParseTree> {
    let chart = recognize(tokens, grammar);
    let n = tokens.len();
    let start_symbol = grammar.start();
    let mut enumerator = Enumerator {
        tokens,
        grammar,
        chart: &chart,
        memo: HashMap::new(),
    };
    let mut out = Vec::new();
    for start in 0..n {
        for end in start + 1..=n {
            if chart.get(start, end, start_symbol) {
                out.extend(enumerator.trees(start_symbol, start, end).iter().cloned());
            }
        }
    }
    out
}

fn strictly_contains(outer: (usize, usize), inner: (usize, usize)) -> bool {
    outer != inner && outer.0 <= inner.0 && inner.1 <= outer.1
}

/// Removes structural duplicates and every tree whose span lies strictly
/// inside another tree's span. The result is sorted, so the input order does
/// not matter.
pub fn prune(trees: &[ParseTree]) -> Vec<ParseTree> {
    let unique: BTreeSet<&ParseTree> = trees.iter().collect();
    let spans: BTreeSet<(usize, usize)> = unique.iter().map(|t| t.span()).collect();
    unique
        .into_iter()
        .filter(|t| !spans.iter().any(|s| strictly_contains(*s, t.span())))
        .cloned()
        .collect()
}
