//! Block segmentation and tokenization of eligibility text.
//!
//! Each retained line keeps its raw text plus a token list. Tokens carry both
//! the literal surface (needed by the attribute grammar) and a delexicalized,
//! case-folded view where number runs and punctuation are masked.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUMBER_MASK: &str = "<nummask>";
pub const PUNCT_MASK: &str = "<puncmask>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Inclusion,
    Exclusion,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Inclusion => "inclusion",
            BlockKind::Exclusion => "exclusion",
        }
    }

    pub fn flipped(self) -> BlockKind {
        match self {
            BlockKind::Inclusion => BlockKind::Exclusion,
            BlockKind::Exclusion => BlockKind::Inclusion,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A token of one line. Offsets are character (not byte) positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub delex: String,
}

impl Token {
    /// Case-folded literal surface; numbers and punctuation are kept.
    pub fn lower(&self) -> String {
        self.surface.to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaLine {
    /// Position among all retained lines of the trial, across blocks.
    pub index: usize,
    pub text: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaBlock {
    pub kind: BlockKind,
    pub lines: Vec<CriteriaLine>,
}

const HEADINGS: &[(&str, BlockKind)] = &[
    ("key inclusion criteria", BlockKind::Inclusion),
    ("key exclusion criteria", BlockKind::Exclusion),
    ("inclusion criteria", BlockKind::Inclusion),
    ("exclusion criteria", BlockKind::Exclusion),
    ("eligibility criteria", BlockKind::Inclusion),
    ("inclusion", BlockKind::Inclusion),
    ("exclusion", BlockKind::Exclusion),
];

/// Recognizes a heading line. A heading may be followed by `:` and inline
/// criterion text, which is returned as the remainder.
fn match_heading(line: &str) -> Option<(BlockKind, &str)> {
    let trimmed = line.trim().trim_start_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    for (phrase, kind) in HEADINGS {
        let Some(head) = trimmed.get(..phrase.len()) else { continue };
        if !head.eq_ignore_ascii_case(phrase) {
            continue;
        }
        let rest = &trimmed[phrase.len()..];
        if rest.chars().all(|c| c.is_ascii_punctuation() || c.is_whitespace()) {
            return Some((*kind, ""));
        }
        let after_space = rest.trim_start();
        if let Some(inline) = after_space.strip_prefix(':') {
            return Some((*kind, inline.trim()));
        }
    }
    None
}

/// Removes a leading bullet (`-`, `*`, `•`) or enumeration (`1.`, `2)`, `(3)`).
pub fn strip_bullet(line: &str) -> &str {
    let trimmed = line.trim();
    if let Some(rest) = trimmed.strip_prefix(['-', '*', '•', '·', '–']) {
        return rest.trim_start();
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(after) = rest.strip_prefix(['.', ')']) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    if let Some(inner) = trimmed.strip_prefix('(') {
        let digits = inner.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            if let Some(after) = inner[digits..].strip_prefix(')') {
                return after.trim_start();
            }
        }
    }
    trimmed
}

/// Splits eligibility text into inclusion/exclusion blocks.
///
/// Lines before any heading belong to an inclusion block. Empty input
/// yields one empty inclusion block.
pub fn segment_blocks(eligibility_text: &str) -> Vec<CriteriaBlock> {
    let mut blocks: Vec<CriteriaBlock> = Vec::new();
    let mut next_index = 0;
    let mut push_line = |blocks: &mut Vec<CriteriaBlock>, text: &str| {
        if blocks.is_empty() {
            blocks.push(CriteriaBlock { kind: BlockKind::Inclusion, lines: Vec::new() });
        }
        let text = text.to_string();
        let tokens = tokenize(&text);
        blocks.last_mut().unwrap().lines.push(CriteriaLine { index: next_index, text, tokens });
        next_index += 1;
    };
    for raw in eligibility_text.lines() {
        if let Some((kind, inline)) = match_heading(raw) {
            blocks.push(CriteriaBlock { kind, lines: Vec::new() });
            let inline = strip_bullet(inline);
            if !inline.is_empty() {
                push_line(&mut blocks, inline);
            }
            continue;
        }
        let content = strip_bullet(raw);
        if !content.is_empty() {
            push_line(&mut blocks, content);
        }
    }
    if blocks.is_empty() {
        blocks.push(CriteriaBlock { kind: BlockKind::Inclusion, lines: Vec::new() });
    }
    blocks
}

/// A trial's eligibility text after segmentation and tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedTrial {
    pub nct_id: String,
    pub blocks: Vec<CriteriaBlock>,
}

impl PreprocessedTrial {
    pub fn new(nct_id: impl Into<String>, eligibility_text: &str) -> Self {
        PreprocessedTrial { nct_id: nct_id.into(), blocks: segment_blocks(eligibility_text) }
    }

    /// All retained lines in order, with the kind of their block.
    pub fn lines(&self) -> impl Iterator<Item = (BlockKind, &CriteriaLine)> {
        self.blocks.iter().flat_map(|b| b.lines.iter().map(move |l| (b.kind, l)))
    }

    pub fn line(&self, index: usize) -> Option<(BlockKind, &CriteriaLine)> {
        self.lines().find(|(_, l)| l.index == index)
    }
}

/// True for number token surfaces such as `18`, `2.5` or `100,000`.
pub fn is_number_text(text: &str) -> bool {
    let mut seen_digit = false;
    for c in text.chars() {
        match c {
            '0'..='9' => seen_digit = true,
            '.' | ',' => {}
            _ => return false,
        }
    }
    seen_digit && text.starts_with(|c: char| c.is_ascii_digit())
}

/// Masked, case-folded form of a token surface. Idempotent.
pub fn delexicalize(surface: &str) -> String {
    if is_number_text(surface) {
        NUMBER_MASK.to_string()
    } else if !surface.is_empty() && surface.chars().all(|c| !c.is_alphanumeric() && !c.is_whitespace()) {
        PUNCT_MASK.to_string()
    } else {
        surface.to_lowercase()
    }
}

/// Splits a line into word, number and single-character punctuation tokens.
///
/// Numbers absorb a decimal part (`2.5`) and thousands groups (`100,000`).
pub fn tokenize(line: &str) -> Vec<Token> {
    let chars: Vec<char> = line.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            i = scan_number(&chars, i);
        } else if c.is_alphanumeric() {
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        let surface: String = chars[start..i].iter().collect();
        let delex = delexicalize(&surface);
        tokens.push(Token { surface, start, end: i, delex });
    }
    tokens
}

fn scan_number(chars: &[char], mut i: usize) -> usize {
    let digit = |j: usize| chars.get(j).is_some_and(|c| c.is_ascii_digit());
    while digit(i) {
        i += 1;
    }
    // thousands groups: `,ddd` not followed by another digit
    while chars.get(i) == Some(&',') && digit(i + 1) && digit(i + 2) && digit(i + 3) && !digit(i + 4) {
        i += 4;
    }
    if chars.get(i) == Some(&'.') && digit(i + 1) {
        i += 1;
        while digit(i) {
            i += 1;
        }
    }
    i
}
