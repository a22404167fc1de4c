//! Free-form math answer canonicalization, exact equivalence checking,
//! and the two rule-based graders (naive string matching and the text
//! processing pipeline).
//!
//! All numeric comparison is exact rational arithmetic: decimals become
//! power-of-ten fractions and fractions are reduced to lowest terms, so
//! `0.5` and `30/60` compare equal with no epsilon anywhere.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Binary grading outcome of the two-class task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    CorrectAnswer,
    WrongAnswer,
}

impl VerdictLabel {
    pub fn is_correct(self) -> bool {
        self == VerdictLabel::CorrectAnswer
    }

    pub fn from_bool(correct: bool) -> Self {
        if correct {
            VerdictLabel::CorrectAnswer
        } else {
            VerdictLabel::WrongAnswer
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictLabel::CorrectAnswer => "correct_answer",
            VerdictLabel::WrongAnswer => "wrong_answer",
        })
    }
}

/// A grading decision with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingVerdict {
    pub label: VerdictLabel,
    /// Identifier of the strategy that produced the verdict.
    pub strategy: String,
    pub rationale: Option<String>,
    /// Wall-clock seconds spent obtaining the verdict, when measured.
    pub latency_s: Option<f64>,
}

impl GradingVerdict {
    pub fn new(label: VerdictLabel, strategy: &str) -> Self {
        GradingVerdict {
            label,
            strategy: strategy.to_string(),
            rationale: None,
            latency_s: None,
        }
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }
}

/// Normalized parse of a student or expected answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MathValue {
    /// Exact rational in lowest terms with positive denominator.
    Rational(BigRational),
    /// Multiple-choice letter, uppercase A-E.
    ChoiceLetter(char),
    /// Choice letter accompanied by its numeric value, as in `B.36`.
    ChoiceWithValue(char, BigRational),
    /// Values extracted in order from a worked answer; grading compares
    /// the final one.
    ValueSequence(Vec<MathValue>),
    /// Anything the parser does not recognize, kept in canonical form.
    OpaqueText(String),
}

impl MathValue {
    pub fn integer(n: i64) -> Self {
        MathValue::Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn fraction(numerator: i64, denominator: i64) -> Self {
        MathValue::Rational(BigRational::new(
            BigInt::from(numerator),
            BigInt::from(denominator),
        ))
    }

    /// The value grading compares: the last element for sequences, the
    /// value itself otherwise.
    pub fn final_value(&self) -> &MathValue {
        match self {
            MathValue::ValueSequence(values) => {
                values.last().map(|v| v.final_value()).unwrap_or(self)
            }
            other => other,
        }
    }
}

impl fmt::Display for MathValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MathValue::Rational(r) => {
                if r.denom().is_one() {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            MathValue::ChoiceLetter(letter) => write!(f, "{letter}"),
            MathValue::ChoiceWithValue(letter, value) => {
                let rendered = MathValue::Rational(value.clone());
                write!(f, "{letter}.{rendered}")
            }
            MathValue::ValueSequence(values) => {
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
            MathValue::OpaqueText(text) => f.write_str(text),
        }
    }
}

/// Text-normalization rules. The filler-token list ships with defaults
/// but can be replaced from a text resource (one token per line).
#[derive(Debug, Clone)]
pub struct TextRules {
    pub fillers: Vec<String>,
}

const DEFAULT_FILLERS: &str = include_str!("../resources/fillers.txt");

impl TextRules {
    pub fn from_lines(text: &str) -> Self {
        let mut fillers: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        // Longest first so "the answer is" wins over "is".
        fillers.sort_by_key(|f| std::cmp::Reverse(f.len()));
        TextRules { fillers }
    }
}

impl Default for TextRules {
    fn default() -> Self {
        TextRules::from_lines(DEFAULT_FILLERS)
    }
}

fn default_rules() -> &'static TextRules {
    static RULES: OnceLock<TextRules> = OnceLock::new();
    RULES.get_or_init(TextRules::default)
}

/// Canonicalize raw answer text: Unicode compatibility normalization,
/// whitespace collapse, removal of leading filler tokens ("is", "the
/// answer is", ...), trailing punctuation strip, and diacritic removal
/// for single-letter answers. Idempotent.
pub fn canonicalize_text(raw: &str) -> String {
    canonicalize_text_with(default_rules(), raw)
}

pub fn canonicalize_text_with(rules: &TextRules, raw: &str) -> String {
    let mut text: String = raw.nfkc().collect::<String>();
    loop {
        let collapsed = collapse_whitespace(&text);
        let defilled = strip_fillers(rules, &collapsed);
        let depunct = strip_trailing_punctuation(defilled);
        let next = strip_single_letter_marks(depunct);
        if next == text {
            return next;
        }
        text = next;
    }
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_fillers<'a>(rules: &TextRules, text: &'a str) -> &'a str {
    let mut rest = text.trim();
    'outer: loop {
        for filler in &rules.fillers {
            if filler == "=" {
                if let Some(tail) = rest.strip_prefix('=') {
                    rest = tail.trim_start();
                    continue 'outer;
                }
                continue;
            }
            let prefix = match rest.get(..filler.len()) {
                Some(p) => p,
                None => continue,
            };
            if prefix.eq_ignore_ascii_case(filler) {
                let tail = &rest[filler.len()..];
                // Word fillers only strip at a token boundary, so
                // "island" is untouched while "is 2" becomes "2".
                let boundary = tail.is_empty()
                    || tail.starts_with(char::is_whitespace)
                    || filler.ends_with(':');
                if boundary {
                    rest = tail.trim_start();
                    continue 'outer;
                }
            }
        }
        return rest;
    }
}

fn strip_trailing_punctuation(text: &str) -> &str {
    text.trim_end_matches(['.', ',', '!', '?', ';', ':']).trim_end()
}

fn strip_single_letter_marks(text: &str) -> String {
    let mut chars = text.chars();
    let first = match chars.next() {
        Some(c) => c,
        None => return String::new(),
    };
    if chars.clone().next().is_some() && !chars.all(is_combining_mark) {
        return text.to_string();
    }
    let stripped: String = first
        .to_string()
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .collect();
    if stripped.is_empty() {
        text.to_string()
    } else {
        stripped
    }
}

fn parse_digits(s: &str) -> Option<BigInt> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_signed_integer(s: &str) -> Option<BigInt> {
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = parse_digits(body)?;
    Some(if negative { -value } else { value })
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (whole, frac) = body.split_once('.')?;
    if whole.is_empty() && frac.is_empty() {
        return None;
    }
    let whole_digits = if whole.is_empty() {
        BigInt::zero()
    } else {
        parse_digits(whole)?
    };
    let frac_digits = if frac.is_empty() {
        BigInt::zero()
    } else {
        parse_digits(frac)?
    };
    let scale = BigInt::from(10u8).pow(frac.len() as u32);
    let numer = whole_digits * &scale + frac_digits;
    let value = BigRational::new(numer, scale);
    Some(if negative { -value } else { value })
}

fn parse_fraction(s: &str) -> Option<BigRational> {
    let (numer, denom) = s.split_once('/')?;
    let numer = parse_signed_integer(numer.trim())?;
    let denom = parse_signed_integer(denom.trim())?;
    if denom.is_zero() {
        return None;
    }
    Some(BigRational::new(numer, denom))
}

/// Largest exponent magnitude evaluated exactly; anything bigger falls
/// through to opaque text.
const MAX_EXPONENT: i64 = 64;

fn parse_exponent(s: &str) -> Option<BigRational> {
    let (base, exponent) = s.split_once('^')?;
    let base = parse_scalar_rational(base.trim())?;
    let exponent: i64 = exponent.trim().parse().ok()?;
    if exponent.unsigned_abs() > MAX_EXPONENT as u64 {
        return None;
    }
    if base.is_zero() && exponent < 0 {
        return None;
    }
    Some(base.pow(exponent as i32))
}

fn parse_scalar_rational(s: &str) -> Option<BigRational> {
    if let Some(v) = parse_fraction(s) {
        return Some(v);
    }
    if let Some(v) = parse_decimal(s) {
        return Some(v);
    }
    parse_signed_integer(s).map(BigRational::from_integer)
}

fn parse_numeric(s: &str) -> Option<BigRational> {
    parse_scalar_rational(s).or_else(|| parse_exponent(s))
}

fn parse_choice(s: &str) -> Option<MathValue> {
    let mut chars = s.chars();
    let letter = chars.next()?;
    let upper = letter.to_ascii_uppercase();
    if !('A'..='E').contains(&upper) {
        return None;
    }
    let rest = chars.as_str();
    if rest.is_empty() {
        return Some(MathValue::ChoiceLetter(upper));
    }
    let rest = rest.strip_prefix(['.', ')', ':'])?;
    let rest = rest.trim();
    if rest.is_empty() {
        return Some(MathValue::ChoiceLetter(upper));
    }
    parse_numeric(rest).map(|value| MathValue::ChoiceWithValue(upper, value))
}

fn parse_token(token: &str) -> Option<MathValue> {
    if let Some(choice) = parse_choice(token) {
        return Some(choice);
    }
    parse_numeric(token).map(MathValue::Rational)
}

/// Parse canonicalized answer text into a [`MathValue`]. Recognizes, in
/// priority order: a choice letter with optional value; a fraction,
/// decimal, integer, or integer-exponent form (all exact rationals); a
/// worked answer of several `=`- or whitespace-separated values; and
/// otherwise opaque text. Never fails.
pub fn parse_math(text: &str) -> MathValue {
    if let Some(value) = parse_token(text) {
        return value;
    }
    let tokens: Vec<&str> = text
        .split(|c: char| c == '=' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.len() >= 2 {
        let mut values: Vec<MathValue> = tokens.iter().filter_map(|t| parse_token(t)).collect();
        match values.len() {
            0 => {}
            1 => return values.pop().unwrap(),
            _ => return MathValue::ValueSequence(values),
        }
    }
    MathValue::OpaqueText(text.to_string())
}

/// Exact mathematical equivalence between two parsed answers.
/// Symmetric and reflexive; mixed shapes that have no meaningful
/// comparison are unequal.
pub fn equivalent(a: &MathValue, b: &MathValue) -> bool {
    use MathValue::*;
    match (a, b) {
        (ValueSequence(_), _) => equivalent(a.final_value(), b),
        (_, ValueSequence(_)) => equivalent(a, b.final_value()),
        (Rational(x), Rational(y)) => x == y,
        (ChoiceLetter(x), ChoiceLetter(y)) => x == y,
        (ChoiceWithValue(x, _), ChoiceLetter(y)) | (ChoiceLetter(y), ChoiceWithValue(x, _)) => {
            x == y
        }
        (ChoiceWithValue(x, _), ChoiceWithValue(y, _)) => x == y,
        (OpaqueText(x), OpaqueText(y)) => x.to_lowercase() == y.to_lowercase(),
        _ => false,
    }
}

pub const STRATEGY_NAIVE: &str = "naive_string";
pub const STRATEGY_TEXT: &str = "text_processing";

fn is_integer_form(text: &str) -> bool {
    parse_signed_integer(text).is_some()
}

fn is_fraction_form(text: &str) -> bool {
    matches!(text.split_once('/'), Some((n, d))
        if parse_signed_integer(n.trim()).is_some() && parse_signed_integer(d.trim()).is_some())
}

fn integer_fraction_form_mismatch(expected: &str, student: &str) -> bool {
    (is_integer_form(expected) && is_fraction_form(student))
        || (is_fraction_form(expected) && is_integer_form(student))
}

/// Simple rule-based grading: trimmed, case-folded string equality, no
/// parsing of any kind.
pub fn naive_match(expected: &str, student: &str) -> GradingVerdict {
    let matched = student.trim().to_lowercase() == expected.trim().to_lowercase();
    GradingVerdict::new(VerdictLabel::from_bool(matched), STRATEGY_NAIVE)
        .with_rationale(if matched { "exact match" } else { "no exact match" })
}

/// Rule-based grading with text substitutions and symbolic evaluation:
/// naive matching first, then canonicalization, exact-rational parsing,
/// and equivalence of the parsed answers (final value for worked
/// answers). Deterministic; the rationale names the stage that decided.
pub fn text_process_grade(question: &str, expected: &str, student: &str) -> GradingVerdict {
    text_process_grade_with(default_rules(), question, expected, student)
}

pub fn text_process_grade_with(
    rules: &TextRules,
    _question: &str,
    expected: &str,
    student: &str,
) -> GradingVerdict {
    if naive_match(expected, student).label.is_correct() {
        return GradingVerdict::new(VerdictLabel::CorrectAnswer, STRATEGY_TEXT)
            .with_rationale("exact match");
    }
    let expected_canonical = canonicalize_text_with(rules, expected);
    let student_canonical = canonicalize_text_with(rules, student);
    // A bare fraction against a bare integer is context-dependent: for
    // fill-in-the-numerator blanks the values can coincide ("30/15" vs
    // an expected "2") without the answer being right. Rules cannot see
    // the blank, so these pairs are passed on to the LLM strategies.
    if integer_fraction_form_mismatch(&expected_canonical, &student_canonical) {
        return GradingVerdict::new(VerdictLabel::WrongAnswer, STRATEGY_TEXT)
            .with_rationale("integer/fraction form mismatch is left to LLM strategies");
    }
    let expected_value = parse_math(&expected_canonical);
    let student_value = parse_math(&student_canonical);
    if equivalent(&expected_value, &student_value) {
        GradingVerdict::new(VerdictLabel::CorrectAnswer, STRATEGY_TEXT).with_rationale(format!(
            "equivalent after normalization: `{expected_value}` = `{student_value}`"
        ))
    } else {
        GradingVerdict::new(VerdictLabel::WrongAnswer, STRATEGY_TEXT).with_rationale(format!(
            "not equivalent: `{expected_value}` vs `{student_value}`"
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonicalize_strips_fillers_and_punctuation() {
        assert_eq!(canonicalize_text("is 2"), "2");
        assert_eq!(canonicalize_text("  the Answer is   2."), "2");
        assert_eq!(canonicalize_text("answer: 7"), "7");
        assert_eq!(canonicalize_text("=6+6 =12"), "6+6 =12");
        assert_eq!(canonicalize_text("2"), "2");
        assert_eq!(canonicalize_text("island"), "island");
    }

    #[test]
    fn canonicalize_handles_unicode() {
        assert_eq!(canonicalize_text("\u{c0}"), "A"); // À
        assert_eq!(canonicalize_text("\u{e9}"), "e"); // é
        assert_eq!(canonicalize_text("caf\u{e9}"), "caf\u{e9}");
        assert_eq!(canonicalize_text("\u{ff12}"), "2"); // fullwidth 2
    }

    #[test]
    fn canonicalize_is_idempotent_on_corpus() {
        for s in [
            "is 2",
            "the answer is B.",
            "=6+6 =12",
            "\u{c0}",
            "  spaced   out  ",
            "answer:answer: 3",
            "",
        ] {
            let once = canonicalize_text(s);
            assert_eq!(canonicalize_text(&once), once, "input {s:?}");
        }
    }

    #[test]
    fn parse_recognizes_choice_forms() {
        assert_eq!(
            parse_math("B.36"),
            MathValue::ChoiceWithValue('B', BigRational::from_integer(36.into()))
        );
        assert_eq!(
            parse_math("B) 36"),
            MathValue::ChoiceWithValue('B', BigRational::from_integer(36.into()))
        );
        assert_eq!(parse_math("d"), MathValue::ChoiceLetter('D'));
        assert_eq!(parse_math("x"), MathValue::OpaqueText("x".to_string()));
    }

    #[test]
    fn parse_reduces_fractions_and_decimals() {
        assert_eq!(parse_math("30/15"), MathValue::integer(2));
        assert_eq!(parse_math("0.5"), MathValue::fraction(1, 2));
        assert_eq!(parse_math("-3/4"), MathValue::fraction(-3, 4));
        assert_eq!(parse_math("2/15"), MathValue::fraction(2, 15));
        assert_eq!(parse_math("12"), MathValue::integer(12));
    }

    #[test]
    fn parse_evaluates_small_exponents() {
        assert_eq!(parse_math("3^2"), MathValue::integer(9));
        assert_eq!(parse_math("2^-2"), MathValue::fraction(1, 4));
        assert_eq!(
            parse_math("2^100"),
            MathValue::OpaqueText("2^100".to_string())
        );
    }

    #[test]
    fn parse_extracts_worked_answer_values() {
        let parsed = parse_math(&canonicalize_text("=6+6 =12"));
        assert_eq!(parsed.final_value(), &MathValue::integer(12));
        let multi = parse_math("3 = 3.0 = 6/2");
        assert_eq!(
            multi,
            MathValue::ValueSequence(vec![
                MathValue::integer(3),
                MathValue::integer(3),
                MathValue::integer(3),
            ])
        );
        assert_eq!(
            parse_math("no values here at all"),
            MathValue::OpaqueText("no values here at all".to_string())
        );
    }

    #[test]
    fn equivalence_rules() {
        assert!(equivalent(&parse_math("1/2"), &parse_math("0.5")));
        assert!(equivalent(&MathValue::ChoiceLetter('D'), &parse_math("d")));
        assert!(!equivalent(&parse_math("2/15"), &parse_math("2")));
        assert!(equivalent(&parse_math("B.36"), &parse_math("B")));
        assert!(!equivalent(&parse_math("B.36"), &parse_math("36")));
        assert!(equivalent(
            &parse_math(&canonicalize_text("=6+6 =12")),
            &parse_math("12")
        ));
    }

    #[test]
    fn naive_match_cases() {
        assert!(naive_match("2", "2").label.is_correct());
        assert!(!naive_match("2", "is 2").label.is_correct());
        assert!(naive_match("D", "d").label.is_correct());
        assert!(naive_match("2", " 2 ").label.is_correct());
    }

    #[test]
    fn text_process_grades_table_rows() {
        // Worked answer resolved by final-value extraction.
        let verdict = text_process_grade("3^2 + 3^1 = __", "12", "=6+6 =12");
        assert!(verdict.label.is_correct());
        // Filler prefix.
        assert!(text_process_grade("q", "2", "is 2").label.is_correct());
        // Documented rule-stage false negative: context-dependent
        // fill-in answers are left to the LLM strategies.
        assert!(!text_process_grade("fill _/15", "2", "2/15").label.is_correct());
        // Plain wrong values stay wrong.
        assert!(!text_process_grade("q", "2", "30").label.is_correct());
        assert!(!text_process_grade("q", "2", "30/15").label.is_correct());
    }

    #[test]
    fn fraction_integer_pairs_are_deferred_despite_equal_values() {
        // 30/15 and 2 are the same rational, but a fraction offered
        // where an integer is expected is a fill-in ambiguity the rules
        // must not settle.
        assert!(equivalent(&parse_math("30/15"), &parse_math("2")));
        assert!(!text_process_grade("q", "2", "30/15").label.is_correct());
        assert!(!text_process_grade("q", "4/2", "2").label.is_correct());
        // Decimals still match fractions by exact value.
        assert!(text_process_grade("q", "1/2", "0.5").label.is_correct());
        assert!(text_process_grade("q", "2", "2.0").label.is_correct());
    }

    #[test]
    fn text_process_label_is_always_binary() {
        for (e, s) in [("2", ""), ("", ""), ("b", "q"), ("1/0", "1/0")] {
            let v = text_process_grade("q", e, s);
            assert!(matches!(
                v.label,
                VerdictLabel::CorrectAnswer | VerdictLabel::WrongAnswer
            ));
        }
    }

    fn arb_math_text() -> impl Strategy<Value = String> {
        prop_oneof![
            any::<i32>().prop_map(|n| n.to_string()),
            (any::<i32>(), 1u32..10_000).prop_map(|(n, d)| format!("{n}/{d}")),
            (0u32..100_000, 0u32..10_000).prop_map(|(w, f)| format!("{w}.{f}")),
            (1u32..5u32).prop_map(|i| {
                char::from(b'A' + i as u8 - 1).to_string()
            }),
            (1u32..5u32, any::<u16>()).prop_map(|(i, v)| {
                format!("{}.{v}", char::from(b'A' + i as u8 - 1))
            }),
            "[a-z ]{0,12}",
            (any::<i16>(), any::<i16>(), 1u32..100).prop_map(|(a, b, d)| {
                format!("= {a} ={b}/{d}")
            }),
        ]
    }

    proptest! {
        #[test]
        fn canonicalize_idempotent(s in "\\PC{0,40}") {
            let once = canonicalize_text(&s);
            prop_assert_eq!(canonicalize_text(&once), once);
        }

        #[test]
        fn parse_render_parse_round_trip(s in arb_math_text()) {
            let value = parse_math(&canonicalize_text(&s));
            let rendered = value.to_string();
            let reparsed = parse_math(&canonicalize_text(&rendered));
            prop_assert_eq!(reparsed, value);
        }

        #[test]
        fn equivalent_reflexive_symmetric(a in arb_math_text(), b in arb_math_text()) {
            let va = parse_math(&canonicalize_text(&a));
            let vb = parse_math(&canonicalize_text(&b));
            prop_assert!(equivalent(&va, &va));
            prop_assert_eq!(equivalent(&va, &vb), equivalent(&vb, &va));
        }

        #[test]
        fn naive_match_identity(s in "\\PC{1,20}") {
            prop_assume!(!s.trim().is_empty());
            prop_assert!(naive_match(&s, &s).label.is_correct());
        }

        #[test]
        fn fraction_equivalence_is_cross_multiplication(
            a in -10_000i64..10_000,
            b in 1i64..10_000,
            c in -10_000i64..10_000,
            d in 1i64..10_000,
        ) {
            let left = parse_math(&format!("{a}/{b}"));
            let right = parse_math(&format!("{c}/{d}"));
            // Oracle: big-integer cross multiplication.
            let cross = BigInt::from(a) * BigInt::from(d) == BigInt::from(c) * BigInt::from(b);
            prop_assert_eq!(equivalent(&left, &right), cross);
        }

        #[test]
        fn naive_correct_implies_text_correct(e in "\\PC{1,16}", s in "\\PC{1,16}") {
            if naive_match(&e, &s).label.is_correct() {
                prop_assert!(text_process_grade("q", &e, &s).label.is_correct());
            }
        }
    }
}
