//! Response parsing and the three rule-based reward components.
//!
//! A response is parsed into a reasoning block, an answer region, and any
//! boxed spans; three independent components are then computed:
//!
//! - **answer reward** — 1 or 0. Numeric truths compare the last boxed span
//!   as an exact rational; code truths evaluate the boxed program against
//!   every test case in the expression sandbox (all must pass); constraint
//!   truths require every constraint to hold.
//! - **format coefficient** — 0.1 when the response uses more than one box
//!   or its reasoning block is shorter than the minimum token threshold,
//!   else 1.0.
//! - **repetition coefficient** — 0.1 when the duplicated token n-gram
//!   fraction exceeds the configured ratio, else 1.0.
//!
//! Parsing is total: any byte-clean text produces a `ParsedResponse`, and
//! anything unparseable in an answer simply scores 0. Boxed spans are
//! collected from the whole response, reasoning block included, so format
//! violations cannot hide inside the think region.

pub mod exprlang;
pub mod rational;

use crate::taskgen::{token_count, Constraint, GroundTruth};
use rational::Rational;
use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const BOX_OPEN: &str = "\\box[";
pub const BOX_CLOSE: char = ']';

/// The coefficient applied when a format or repetition penalty fires.
pub const PENALTY_COEFFICIENT: f64 = 0.1;

/// Thresholds for the format and repetition rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    /// Reasoning blocks shorter than this many tokens are "overly brief".
    pub min_reasoning_tokens: usize,
    /// n-gram size for repetition detection; at least 2.
    pub ngram_n: usize,
    /// Duplicated n-gram fraction above which the repetition penalty fires.
    pub max_dup_ratio: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            min_reasoning_tokens: 8,
            ngram_n: 8,
            max_dup_ratio: 0.3,
        }
    }
}

/// A response split into its structural parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Content of the first well-formed `<think>...</think>` pair, else empty.
    pub think_text: String,
    /// Everything after the think block, or the whole text when absent.
    pub answer_text: String,
    /// `\box[...]` payloads in document order, from the whole response.
    pub boxed_spans: Vec<String>,
    /// Whitespace token count of the full response text.
    pub token_length: usize,
}

/// The three rule outcomes as independent booleans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFlags {
    pub answer_correct: bool,
    pub format_violation: bool,
    pub repetition_detected: bool,
}

/// Split out the first well-formed think block. Returns `(think, answer)`;
/// a missing or unterminated block degrades to an empty think and the whole
/// text as the answer.
pub fn split_think(text: &str) -> (&str, &str) {
    if let Some(open) = text.find(THINK_OPEN) {
        let body_start = open + THINK_OPEN.len();
        if let Some(close_rel) = text[body_start..].find(THINK_CLOSE) {
            let think = &text[body_start..body_start + close_rel];
            let answer = &text[body_start + close_rel + THINK_CLOSE.len()..];
            return (think, answer);
        }
    }
    ("", text)
}

/// Extract `\box[...]` payloads by bracket matching with no nesting; an
/// unterminated opener yields no span.
fn boxed_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find(BOX_OPEN) {
        let payload_start = open + BOX_OPEN.len();
        match rest[payload_start..].find(BOX_CLOSE) {
            Some(close_rel) => {
                spans.push(rest[payload_start..payload_start + close_rel].to_string());
                rest = &rest[payload_start + close_rel + 1..];
            }
            None => break,
        }
    }
    spans
}

/// Total parse of arbitrary response text.
pub fn parse_response(text: &str) -> ParsedResponse {
    let (think, answer) = split_think(text);
    ParsedResponse {
        think_text: think.to_string(),
        answer_text: answer.to_string(),
        boxed_spans: boxed_spans(text),
        token_length: token_count(text),
    }
}

/// 1 iff the parsed response answers correctly under the ground truth.
pub fn answer_reward(parsed: &ParsedResponse, truth: &GroundTruth) -> f64 {
    let correct = match truth {
        GroundTruth::Numeric { value } => parsed
            .boxed_spans
            .last()
            .and_then(|span| Rational::parse(span))
            .is_some_and(|candidate| candidate == *value),
        GroundTruth::CodeTests { tests, .. } => match parsed.boxed_spans.last() {
            Some(program) => tests.iter().all(|test| {
                exprlang::eval(program, test.input).is_ok_and(|output| output == test.expected)
            }),
            None => false,
        },
        GroundTruth::Constraints { constraints } => constraints
            .iter()
            .all(|constraint| constraint_holds(constraint, parsed)),
    };
    if correct {
        1.0
    } else {
        0.0
    }
}

fn constraint_holds(constraint: &Constraint, parsed: &ParsedResponse) -> bool {
    match constraint {
        Constraint::ExactlyOneBoxed => parsed.boxed_spans.len() == 1,
        Constraint::ContainsKeyword { keyword } => {
            parsed.think_text.contains(keyword.as_str())
                || parsed.answer_text.contains(keyword.as_str())
        }
    }
}

/// 0.1 on excessive boxing or an overly brief reasoning block, else 1.0.
pub fn format_coefficient(parsed: &ParsedResponse, config: &VerifierConfig) -> f64 {
    let excessive_boxes = parsed.boxed_spans.len() > 1;
    let brief_reasoning = token_count(&parsed.think_text) < config.min_reasoning_tokens;
    if excessive_boxes || brief_reasoning {
        PENALTY_COEFFICIENT
    } else {
        1.0
    }
}

/// 0.1 when the duplicated n-gram fraction over the response tokens
/// exceeds `max_dup_ratio`, else 1.0. Texts shorter than `n` tokens never
/// fire.
pub fn repetition_coefficient(parsed: &ParsedResponse, config: &VerifierConfig) -> f64 {
    assert!(config.ngram_n >= 2, "n-gram size must be at least 2");
    let fraction = duplicated_ngram_fraction(
        parsed
            .think_text
            .split_whitespace()
            .chain(parsed.answer_text.split_whitespace()),
        config.ngram_n,
    );
    if fraction > config.max_dup_ratio {
        PENALTY_COEFFICIENT
    } else {
        1.0
    }
}

/// Fraction of n-gram windows that are duplicates of an earlier window.
/// Zero when there are fewer than `n` tokens.
fn duplicated_ngram_fraction<'a>(tokens: impl Iterator<Item = &'a str>, n: usize) -> f64 {
    // Intern tokens so windows compare exactly, not by hash.
    let mut ids = Vec::new();
    let mut intern: std::collections::HashMap<&str, u32> = std::collections::HashMap::new();
    for token in tokens {
        let next = intern.len() as u32;
        ids.push(*intern.entry(token).or_insert(next));
    }
    if ids.len() < n {
        return 0.0;
    }
    let mut seen: std::collections::HashSet<&[u32]> = std::collections::HashSet::new();
    let mut duplicates = 0usize;
    let windows = ids.len() - n + 1;
    for window in ids.windows(n) {
        if !seen.insert(window) {
            duplicates += 1;
        }
    }
    duplicates as f64 / windows as f64
}

/// All three components at once, as used by the local reward provider.
pub fn rule_components(
    text: &str,
    truth: &GroundTruth,
    config: &VerifierConfig,
) -> (f64, f64, f64) {
    let parsed = parse_response(text);
    let answer = answer_reward(&parsed, truth);
    let format = format_coefficient(&parsed, config);
    let repetition = repetition_coefficient(&parsed, config);
    (answer, format, repetition)
}

/// The three rule outcomes as independent flags.
pub fn rule_flags(
    parsed: &ParsedResponse,
    truth: &GroundTruth,
    config: &VerifierConfig,
) -> RuleFlags {
    RuleFlags {
        answer_correct: answer_reward(parsed, truth) == 1.0,
        format_violation: format_coefficient(parsed, config) == PENALTY_COEFFICIENT,
        repetition_detected: repetition_coefficient(parsed, config) == PENALTY_COEFFICIENT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::CodeTest;
    use proptest::prelude::*;

    fn numeric(n: i128, d: i128) -> GroundTruth {
        GroundTruth::Numeric {
            value: Rational::new(n, d).unwrap(),
        }
    }

    #[test]
    fn parses_well_formed_response() {
        let parsed = parse_response("<think>abc</think>ans \\box[42]");
        assert_eq!(parsed.think_text, "abc");
        assert_eq!(parsed.boxed_spans, vec!["42"]);
        assert_eq!(parsed.answer_text, "ans \\box[42]");
    }

    #[test]
    fn parses_without_tags() {
        let parsed = parse_response("no tags \\box[7] \\box[7]");
        assert_eq!(parsed.think_text, "");
        assert_eq!(parsed.boxed_spans, vec!["7", "7"]);
        assert_eq!(parsed.answer_text, "no tags \\box[7] \\box[7]");
    }

    #[test]
    fn unterminated_think_degrades_to_empty() {
        let parsed = parse_response("<think>open only");
        assert_eq!(parsed.think_text, "");
        assert_eq!(parsed.answer_text, "<think>open only");
    }

    #[test]
    fn unterminated_box_yields_no_span() {
        let parsed = parse_response("a \\box[unclosed");
        assert!(parsed.boxed_spans.is_empty());
    }

    #[test]
    fn token_length_counts_whole_text() {
        let parsed = parse_response("<think> a b </think> c \\box[1]");
        assert_eq!(parsed.token_length, 6);
    }

    #[test]
    fn numeric_answers_compare_canonically() {
        let truth = numeric(1, 2);
        assert_eq!(answer_reward(&parse_response("\\box[0.50]"), &truth), 1.0);
        assert_eq!(answer_reward(&parse_response("\\box[2/4]"), &truth), 1.0);
        assert_eq!(answer_reward(&parse_response("\\box[0.51]"), &truth), 0.0);
        assert_eq!(answer_reward(&parse_response("no box here"), &truth), 0.0);
        assert_eq!(answer_reward(&parse_response("\\box[junk]"), &truth), 0.0);
    }

    #[test]
    fn last_boxed_span_is_the_answer() {
        let truth = numeric(3, 1);
        assert_eq!(
            answer_reward(&parse_response("\\box[1] then \\box[3]"), &truth),
            1.0
        );
    }

    #[test]
    fn code_answers_must_pass_every_test() {
        let truth = GroundTruth::CodeTests {
            program: "x*x".into(),
            tests: vec![
                CodeTest {
                    input: 2,
                    expected: 4,
                },
                CodeTest {
                    input: 3,
                    expected: 9,
                },
            ],
        };
        assert_eq!(answer_reward(&parse_response("\\box[x*x]"), &truth), 1.0);
        // x+x passes (2 -> 4) but fails (3 -> 9).
        assert_eq!(answer_reward(&parse_response("\\box[x+x]"), &truth), 0.0);
        assert_eq!(
            answer_reward(&parse_response("\\box[not code]"), &truth),
            0.0
        );
    }

    #[test]
    fn constraint_answers_require_all_constraints() {
        let truth = GroundTruth::Constraints {
            constraints: vec![
                Constraint::ExactlyOneBoxed,
                Constraint::ContainsKeyword {
                    keyword: "velvet".into(),
                },
            ],
        };
        assert_eq!(
            answer_reward(&parse_response("velvet \\box[ok]"), &truth),
            1.0
        );
        assert_eq!(answer_reward(&parse_response("\\box[ok]"), &truth), 0.0);
        assert_eq!(
            answer_reward(&parse_response("velvet \\box[a] \\box[b]"), &truth),
            0.0
        );
    }

    #[test]
    fn rule_flags_are_independent() {
        let cfg = VerifierConfig::default();
        let truth = numeric(5, 1);
        // Correct answer, brief reasoning, repetitive text: all three fire
        // independently.
        let text = format!("<think>a</think> {} \\box[5]", "x y ".repeat(30));
        let flags = rule_flags(&parse_response(&text), &truth, &cfg);
        assert!(flags.answer_correct);
        assert!(flags.format_violation);
        assert!(flags.repetition_detected);

        let clean: String = (0..40).map(|i| format!("w{i} ")).collect();
        let text = format!("<think>{clean}</think> \\box[6]");
        let flags = rule_flags(&parse_response(&text), &truth, &cfg);
        assert!(!flags.answer_correct);
        assert!(!flags.format_violation);
        assert!(!flags.repetition_detected);
    }

    #[test]
    fn format_fires_on_multiple_boxes() {
        let cfg = VerifierConfig::default();
        let text = format!("<think>{}</think> \\box[1] \\box[2]", "w ".repeat(20));
        assert_eq!(format_coefficient(&parse_response(&text), &cfg), 0.1);
    }

    #[test]
    fn format_fires_on_brief_reasoning() {
        let cfg = VerifierConfig::default();
        let parsed = parse_response("<think>a b c</think> \\box[1]");
        assert_eq!(format_coefficient(&parsed, &cfg), 0.1);
    }

    #[test]
    fn format_passes_clean_response() {
        let cfg = VerifierConfig::default();
        let text = format!("<think>{}</think> \\box[1]", "w ".repeat(50));
        assert_eq!(format_coefficient(&parse_response(&text), &cfg), 1.0);
    }

    #[test]
    fn repetition_fires_on_cyclic_text() {
        let cfg = VerifierConfig {
            ngram_n: 4,
            ..VerifierConfig::default()
        };
        let text = "a b c d ".repeat(20);
        let parsed = parse_response(&text);
        // 80 tokens -> 77 windows, only 4 distinct cyclic 4-grams.
        assert_eq!(repetition_coefficient(&parsed, &cfg), 0.1);
    }

    #[test]
    fn repetition_passes_distinct_tokens() {
        let cfg = VerifierConfig::default();
        let text: String = (0..100).map(|i| format!("w{i} ")).collect();
        let parsed = parse_response(&text);
        assert_eq!(repetition_coefficient(&parsed, &cfg), 1.0);
    }

    #[test]
    fn repetition_ignores_short_texts() {
        let cfg = VerifierConfig::default();
        let parsed = parse_response("a a a");
        assert_eq!(repetition_coefficient(&parsed, &cfg), 1.0);
    }

    #[test]
    fn duplicated_fraction_matches_sliding_window_oracle() {
        // Independent oracle: count windows seen before, over string keys.
        let text = "a b c d ".repeat(20);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let n = 4;
        let mut seen = std::collections::HashSet::new();
        let mut dup = 0;
        for w in tokens.windows(n) {
            if !seen.insert(w.join(" ")) {
                dup += 1;
            }
        }
        let expected = dup as f64 / (tokens.len() - n + 1) as f64;
        let got = duplicated_ngram_fraction(tokens.iter().copied(), n);
        assert_eq!(got, expected);
        assert!((expected - 73.0 / 77.0).abs() < 1e-15);
    }

    proptest! {
        /// Parsing never panics and components stay in their ranges on
        /// arbitrary text.
        #[test]
        fn parse_is_total_and_components_in_range(text in "\\PC{0,300}") {
            let cfg = VerifierConfig::default();
            let parsed = parse_response(&text);
            prop_assert!(parsed.token_length == token_count(&text));
            let truth = numeric(1, 2);
            let a = answer_reward(&parsed, &truth);
            prop_assert!(a == 0.0 || a == 1.0);
            let f = format_coefficient(&parsed, &cfg);
            prop_assert!(f == 0.1 || f == 1.0);
            let r = repetition_coefficient(&parsed, &cfg);
            prop_assert!(r == 0.1 || r == 1.0);
        }

        /// Numeric comparison is invariant under surface formatting.
        #[test]
        fn numeric_reward_invariant_under_format(num in -500i128..500, shift in 1i128..40) {
            let den = 2 * shift;
            let truth = numeric(num, den);
            let value = Rational::new(num, den).unwrap();
            let as_fraction = format!("\\box[{}/{}]", num * 3, den * 3);
            let reduced = format!("\\box[{value}]");
            let a = answer_reward(&parse_response(&as_fraction), &truth);
            let b = answer_reward(&parse_response(&reduced), &truth);
            prop_assert_eq!(a, 1.0);
            prop_assert_eq!(b, 1.0);
        }

        /// All-distinct token streams never trip the repetition rule, in
        /// any order.
        #[test]
        fn distinct_tokens_never_fire_repetition(perm in proptest::sample::subsequence((0..200usize).collect::<Vec<_>>(), 50)) {
            let cfg = VerifierConfig::default();
            let text: String = perm.iter().map(|i| format!("tok{i} ")).collect();
            let parsed = parse_response(&text);
            prop_assert_eq!(repetition_coefficient(&parsed, &cfg), 1.0);
        }
    }
}
