use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{unit_key, CmpOp, LexKind, LexToken, AGE_ATTRIBUTE, AGE_UNITS};
use super::parser::ParseTree;
use crate::knowledge_base::{AttributeDef, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

impl Bound {
    pub fn inclusive(value: f64) -> Self {
        Bound { value, inclusive: true }
    }

    pub fn exclusive(value: f64) -> Self {
        Bound { value, inclusive: false }
    }
}

/// A numeric constraint on one attribute, in the attribute's canonical unit.
///
/// The constraint is the interval between `lower` and `upper`, or its
/// complement when `negated` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCriterion {
    pub attribute_id: String,
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
    pub unit: String,
    #[serde(default)]
    pub negated: bool,
}

impl AttributeCriterion {
    pub fn interval(attribute_id: &str, lower: Option<Bound>, upper: Option<Bound>, unit: &str) -> Self {
        AttributeCriterion {
            attribute_id: attribute_id.to_string(),
            lower,
            upper,
            unit: unit.to_string(),
            negated: false,
        }
    }

    fn interval_contains(&self, value: f64) -> bool {
        let above = self.lower.is_none_or(|b| if b.inclusive { value >= b.value } else { value > b.value });
        let below = self.upper.is_none_or(|b| if b.inclusive { value <= b.value } else { value < b.value });
        above && below
    }

    /// Whether a canonical-unit value satisfies the constraint.
    pub fn contains(&self, value: f64) -> bool {
        self.interval_contains(value) != self.negated
    }

    /// The logical complement. A one-sided bound flips to the opposite side;
    /// a two-sided interval toggles `negated`. Applying it twice is the
    /// identity.
    pub fn complement(&self) -> AttributeCriterion {
        let mut out = self.clone();
        match (self.lower, self.upper) {
            (Some(l), None) if !self.negated => {
                out.lower = None;
                out.upper = Some(Bound { value: l.value, inclusive: !l.inclusive });
            }
            (None, Some(u)) if !self.negated => {
                out.upper = None;
                out.lower = Some(Bound { value: u.value, inclusive: !u.inclusive });
            }
            _ => out.negated = !self.negated,
        }
        out
    }

    /// Intersection of two non-negated constraints on the same attribute,
    /// or `None` when it is empty.
    pub fn intersect(&self, other: &AttributeCriterion) -> Option<AttributeCriterion> {
        debug_assert!(!self.negated && !other.negated && self.attribute_id == other.attribute_id);
        let lower = tighter(self.lower, other.lower, |a, b| a > b);
        let upper = tighter(self.upper, other.upper, |a, b| a < b);
        let out = AttributeCriterion {
            attribute_id: self.attribute_id.clone(),
            lower,
            upper,
            unit: self.unit.clone(),
            negated: false,
        };
        (!out.is_empty_interval()).then_some(out)
    }

    /// True when the bounds admit no value.
    pub fn is_empty_interval(&self) -> bool {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => l.value > u.value || (l.value == u.value && !(l.inclusive && u.inclusive)),
            _ => false,
        }
    }
}

fn tighter(a: Option<Bound>, b: Option<Bound>, stricter: impl Fn(f64, f64) -> bool) -> Option<Bound> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(if stricter(a.value, b.value) {
            a
        } else if stricter(b.value, a.value) {
            b
        } else {
            Bound {
                value: a.value,
                inclusive: a.inclusive && b.inclusive,
            }
        }),
    }
}

fn format_number(v: f64) -> String {
    let rounded = (v * 1e6).round() / 1e6;
    format!("{rounded}")
}

impl AttributeCriterion {
    /// The bounds in reading form, e.g. `≤ 38 kg/m2` or `[18, 65) years`.
    pub fn bounds_text(&self) -> String {
        let unit = if self.unit.is_empty() {
            String::new()
        } else {
            format!(" {}", self.unit)
        };
        let body = match (self.lower, self.upper) {
            (Some(l), Some(u)) if l.value == u.value && l.inclusive && u.inclusive => {
                format!("= {}{unit}", format_number(l.value))
            }
            (Some(l), Some(u)) => format!(
                "{}{}, {}{}{unit}",
                if l.inclusive { "[" } else { "(" },
                format_number(l.value),
                format_number(u.value),
                if u.inclusive { "]" } else { ")" }
            ),
            (Some(l), None) => format!("{} {}{unit}", if l.inclusive { "≥" } else { ">" }, format_number(l.value)),
            (None, Some(u)) => format!("{} {}{unit}", if u.inclusive { "≤" } else { "<" }, format_number(u.value)),
            (None, None) => "any value".to_string(),
        };
        if self.negated {
            format!("outside {body}")
        } else {
            body
        }
    }
}

impl fmt::Display for AttributeCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.attribute_id, self.bounds_text())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no attribute in `{0}`")]
    NoAttribute(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("comparison without a value in `{0}`")]
    NoValue(String),
    #[error("unit `{unit}` is not accepted for {attribute}")]
    UnitMismatch { attribute: String, unit: String },
    #[error("{attribute}: lower bound {lower} exceeds upper bound {upper}")]
    BoundInversion { attribute: String, lower: f64, upper: f64 },
}

impl EvalError {
    /// Errors the aggregator treats as a self-contradictory criterion.
    pub fn is_contradiction(&self) -> bool {
        matches!(self, EvalError::BoundInversion { .. })
    }
}

struct Value {
    first: usize,
    last: usize,
    number: f64,
    unit: Option<String>,
}

fn convert(attribute: &AttributeDef, value: f64, unit: Option<&str>) -> Result<f64, EvalError> {
    let Some(key) = unit else { return Ok(value) };
    attribute
        .accepted_units
        .iter()
        .find(|(symbol, _)| !symbol.is_empty() && unit_key(symbol) == key)
        .map(|(_, factor)| factor.to_canonical(value))
        .ok_or_else(|| EvalError::UnitMismatch {
            attribute: attribute.id.clone(),
            unit: key.to_string(),
        })
}

fn op_bounds(op: CmpOp, v: f64) -> (Option<Bound>, Option<Bound>) {
    match op {
        CmpOp::Lt => (None, Some(Bound::exclusive(v))),
        CmpOp::Le => (None, Some(Bound::inclusive(v))),
        CmpOp::Gt => (Some(Bound::exclusive(v)), None),
        CmpOp::Ge => (Some(Bound::inclusive(v)), None),
        CmpOp::Eq | CmpOp::Between => (Some(Bound::inclusive(v)), Some(Bound::inclusive(v))),
    }
}

/// Interprets a parse tree over `tokens` as attribute constraints.
///
/// The reading is driven by the leaf sequence: the attribute comes from an
/// attribute token (or a phrase that implies one), each comparison binds to
/// the value beside it, `between`/range forms give inclusive intervals, and
/// an odd number of negations complements the result.
pub fn evaluate(tree: &ParseTree, tokens: &[LexToken], kb: &KnowledgeBase) -> Result<Vec<AttributeCriterion>, EvalError> {
    let leaves: Vec<&LexToken> = tree.leaves().into_iter().map(|i| &tokens[i]).collect();
    let text = || leaves.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");

    let negations = leaves.iter().filter(|t| t.kind == LexKind::Negation).count();
    let explicit = leaves.iter().find_map(|t| match &t.kind {
        LexKind::Attribute(id) => Some(id.clone()),
        _ => None,
    });
    let implied = || {
        leaves.iter().find_map(|t| match &t.kind {
            LexKind::Comparison { implied_attribute, .. } => implied_attribute.clone(),
            _ => None,
        })
    };
    let by_unit = || {
        let age_keys: Vec<String> = AGE_UNITS.iter().map(|u| unit_key(u)).collect();
        leaves
            .iter()
            .any(|t| matches!(&t.kind, LexKind::Unit(u) if age_keys.contains(u)))
            .then(|| AGE_ATTRIBUTE.to_string())
    };
    let attribute_id = explicit
        .or_else(implied)
        .or_else(by_unit)
        .ok_or_else(|| EvalError::NoAttribute(text()))?;
    let attribute = kb
        .attribute(&attribute_id)
        .ok_or_else(|| EvalError::UnknownAttribute(attribute_id.clone()))?;

    let mut values: Vec<Value> = Vec::new();
    let mut i = 0;
    while i < leaves.len() {
        if let LexKind::Number(number) = leaves[i].kind {
            let unit = match leaves.get(i + 1).map(|t| &t.kind) {
                Some(LexKind::Unit(u)) => Some(u.clone()),
                _ => None,
            };
            let last = if unit.is_some() { i + 1 } else { i };
            values.push(Value { first: i, last, number, unit });
            i = last;
        }
        i += 1;
    }
    // a bare number shares the unit of its neighbour: "18 - 65 years"
    for k in 0..values.len() {
        if values[k].unit.is_none() {
            let borrowed = values[k + 1..]
                .iter()
                .find_map(|v| v.unit.clone())
                .or_else(|| values[..k].iter().rev().find_map(|v| v.unit.clone()));
            values[k].unit = borrowed;
        }
    }
    let canonical: Vec<f64> = values
        .iter()
        .map(|v| convert(attribute, v.number, v.unit.as_deref()))
        .collect::<Result<_, _>>()?;

    let comparisons: Vec<(usize, CmpOp, bool)> = leaves
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match t.kind {
            LexKind::Comparison { op, postfix, .. } => Some((i, op, postfix)),
            _ => None,
        })
        .collect();

    let mut lower: Option<Bound> = None;
    let mut upper: Option<Bound> = None;
    let is_range = comparisons.iter().any(|(_, op, _)| *op == CmpOp::Between) || comparisons.is_empty();
    if is_range {
        if values.len() != 2 {
            return Err(EvalError::NoValue(text()));
        }
        lower = Some(Bound::inclusive(canonical[0]));
        upper = Some(Bound::inclusive(canonical[1]));
    } else {
        for &(pos, op, postfix) in &comparisons {
            let after = values.iter().position(|v| v.first == pos + 1);
            let before = values.iter().position(|v| v.last + 1 == pos);
            let attribute_after = matches!(leaves.get(pos + 1).map(|t| &t.kind), Some(LexKind::Attribute(_)));
            let attribute_before = pos > 0 && matches!(leaves[pos - 1].kind, LexKind::Attribute(_));
            let (index, op) = match (after, before) {
                (Some(k), _) => (k, op),
                // "18 <= age" reads as "age >= 18"; postfix phrases already face the attribute
                (None, Some(k)) if attribute_after && !postfix => (k, op.flipped()),
                (None, Some(k)) => (k, op),
                (None, None) if attribute_before => {
                    // "18 years of age or older"
                    let k = values
                        .iter()
                        .position(|v| v.last + 2 == pos)
                        .ok_or_else(|| EvalError::NoValue(text()))?;
                    (k, op)
                }
                (None, None) => return Err(EvalError::NoValue(text())),
            };
            let (l, u) = op_bounds(op, canonical[index]);
            lower = tighter(lower, l, |a, b| a > b);
            upper = tighter(upper, u, |a, b| a < b);
        }
    }

    let mut criterion = AttributeCriterion::interval(&attribute.id, lower, upper, &attribute.canonical_unit);
    if criterion.is_empty_interval() {
        return Err(EvalError::BoundInversion {
            attribute: attribute.id.clone(),
            lower: lower.map_or(f64::NAN, |b| b.value),
            upper: upper.map_or(f64::NAN, |b| b.value),
        });
    }
    if negations % 2 == 1 {
        criterion = criterion.complement();
    }
    Ok(vec![criterion])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribute_cfg::grammar::Grammar;
    use crate::attribute_cfg::lexer::lex;
    use crate::attribute_cfg::parser::{parse_cyk, prune};
    use crate::preprocessor::tokenize;

    fn eval(text: &str) -> Vec<Result<Vec<AttributeCriterion>, EvalError>> {
        let kb = KnowledgeBase::bundled();
        let tokens = lex(&tokenize(text), &kb);
        prune(&parse_cyk(&tokens, &Grammar::bundled()))
            .iter()
            .map(|t| evaluate(t, &tokens, &kb))
            .collect()
    }

    fn single(text: &str) -> AttributeCriterion {
        let results = eval(text);
        assert_eq!(results.len(), 1, "{text}: {results:?}");
        let mut criteria = results.into_iter().next().unwrap().unwrap();
        assert_eq!(criteria.len(), 1);
        criteria.remove(0)
    }

    #[test]
    fn lower_bound_in_years() {
        let c = single("age ≥ 18 years");
        assert_eq!(c, AttributeCriterion::interval("age", Some(Bound::inclusive(18.0)), None, "years"));
    }

    #[test]
    fn between_is_inclusive() {
        let c = single("bmi between 20 and 30");
        assert_eq!(
            c,
            AttributeCriterion::interval("bmi", Some(Bound::inclusive(20.0)), Some(Bound::inclusive(30.0)), "kg/m2")
        );
    }

    #[test]
    fn months_convert_to_years() {
        let c = single("age ≥ 216 months");
        assert_eq!(c.lower, Some(Bound::inclusive(18.0)));
        assert_eq!(c.unit, "years");
    }

    #[test]
    fn reversed_and_postfix_forms() {
        assert_eq!(single("18 years or older").lower, Some(Bound::inclusive(18.0)));
        assert_eq!(single("18 <= age").lower, Some(Bound::inclusive(18.0)));
        assert_eq!(single("65 > age").upper, Some(Bound::exclusive(65.0)));
        assert_eq!(single("18 years of age or older").lower, Some(Bound::inclusive(18.0)));
        assert_eq!(single("ECOG 2 or less").upper, Some(Bound::inclusive(2.0)));
        assert_eq!(single("≥ 18 years of age").lower, Some(Bound::inclusive(18.0)));
    }

    #[test]
    fn ranges_and_compounds() {
        let c = single("age 18 - 65 years");
        assert_eq!((c.lower, c.upper), (Some(Bound::inclusive(18.0)), Some(Bound::inclusive(65.0))));
        let c = single("age ≥ 18 years and < 65 years");
        assert_eq!((c.lower, c.upper), (Some(Bound::inclusive(18.0)), Some(Bound::exclusive(65.0))));
        let c = single("ECOG = 1");
        assert_eq!((c.lower, c.upper), (Some(Bound::inclusive(1.0)), Some(Bound::inclusive(1.0))));
    }

    #[test]
    fn negation_complements() {
        let c = single("hemoglobin not below 9 g/dl");
        assert_eq!((c.lower, c.upper, c.negated), (Some(Bound::inclusive(9.0)), None, false));
        let c = single("not age between 18 and 65");
        assert!(c.negated);
        assert!(!c.contains(30.0));
        assert!(c.contains(70.0));
    }

    #[test]
    fn inversion_is_a_contradiction() {
        let results = eval("age between 65 and 18");
        let err = results[0].clone().unwrap_err();
        assert!(err.is_contradiction());
    }

    #[test]
    fn unit_mismatch() {
        let results = eval("age ≥ 18 kg");
        assert!(matches!(results[0], Err(EvalError::UnitMismatch { .. })));
    }

    #[test]
    fn complement_is_an_involution() {
        let cases = [
            AttributeCriterion::interval("age", Some(Bound::inclusive(18.0)), None, "years"),
            AttributeCriterion::interval("age", None, Some(Bound::exclusive(65.0)), "years"),
            AttributeCriterion::interval("age", Some(Bound::inclusive(18.0)), Some(Bound::inclusive(65.0)), "years"),
        ];
        for c in cases {
            assert_eq!(c.complement().complement(), c);
            for v in [0.0, 18.0, 40.0, 65.0, 90.0] {
                assert_eq!(c.complement().contains(v), !c.contains(v));
            }
        }
    }

    #[test]
    fn intersection() {
        let a = AttributeCriterion::interval("age", Some(Bound::inclusive(18.0)), None, "years");
        let b = AttributeCriterion::interval("age", None, Some(Bound::exclusive(65.0)), "years");
        let c = a.intersect(&b).unwrap();
        assert_eq!((c.lower, c.upper), (Some(Bound::inclusive(18.0)), Some(Bound::exclusive(65.0))));
        let d = AttributeCriterion::interval("age", None, Some(Bound::exclusive(18.0)), "years");
        assert_eq!(a.intersect(&d), None);
    }

    #[test]
    fn display() {
        let c = AttributeCriterion::interval("bmi", None, Some(Bound::inclusive(38.0)), "kg/m2");
        assert_eq!(c.to_string(), "bmi ≤ 38 kg/m2");
    }
}
