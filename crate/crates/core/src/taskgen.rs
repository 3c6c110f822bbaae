//! Synthetic reasoning tasks and the outcome environment.
//!
//! Tasks span five data families (math, code, STEM, instruction following,
//! mobile service). A response to a task is modeled as a choice of
//! length bucket plus a correctness draw: the probability of a correct
//! answer saturates with response length and decays with task difficulty,
//!
//! ```text
//! p(b, d) = p_max * (1 - exp(-T_b / (tau0 * (1 + gamma * d))))
//! ```
//!
//! so longer responses are always more accurate — "overthinking" pays when
//! length is free and wastes tokens when it is penalized. The shortest
//! bucket additionally emits an under-length reasoning block, so the format
//! checker fires on it by construction.
//!
//! The whole outcome space is finite (buckets × correctness), which makes
//! every downstream quantity — expected rewards, budget curves, policy
//! gradients — exactly computable by enumeration.
//!
//! Token counting everywhere in this crate is whitespace-delimited word
//! count; see [`token_count`]. Surrogate response text is generated to hit
//! each bucket's representative token count exactly.

use crate::rng::Stream;
use crate::verifier::rational::Rational;
use serde::{Deserialize, Serialize};

/// The five RL data families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Math,
    Code,
    Stem,
    InstructionFollowing,
    MobileService,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 5] = [
        TaskFamily::Math,
        TaskFamily::Code,
        TaskFamily::Stem,
        TaskFamily::InstructionFollowing,
        TaskFamily::MobileService,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Math => "math",
            TaskFamily::Code => "code",
            TaskFamily::Stem => "stem",
            TaskFamily::InstructionFollowing => "instruction_following",
            TaskFamily::MobileService => "mobile_service",
        }
    }
}

/// One executable test case for a code task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeTest {
    pub input: i64,
    pub expected: i64,
}

/// A checkable format constraint for instruction-following style tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    /// The response must contain exactly one boxed answer.
    ExactlyOneBoxed,
    /// The response text must contain this keyword as a substring.
    ContainsKeyword { keyword: String },
}

/// What counts as a correct answer, by family.
///
/// The `program` on `CodeTests` is the environment's reference solution —
/// the verifier never reads it; it exists so the environment can emit
/// responses that genuinely pass all tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Numeric {
        value: Rational,
    },
    CodeTests {
        program: String,
        tests: Vec<CodeTest>,
    },
    Constraints {
        constraints: Vec<Constraint>,
    },
}

/// One synthetic query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub family: TaskFamily,
    pub prompt: String,
    pub ground_truth: GroundTruth,
    /// In `[0, 1]`; higher is harder.
    pub difficulty: f64,
    pub think_mode: bool,
}

/// The finite outcome environment: representative token counts per length
/// bucket plus the parameters of the saturating correctness curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    /// Strictly increasing representative token counts, all positive.
    pub bucket_tokens: Vec<u32>,
    /// Correctness ceiling, in `(0, 1]`.
    pub p_max: f64,
    /// Saturation scale in tokens, positive.
    pub tau0: f64,
    /// Difficulty sensitivity, non-negative.
    pub gamma: f64,
}

impl Default for EnvModel {
    fn default() -> Self {
        Self {
            bucket_tokens: vec![64, 256, 1024, 4096, 16384],
            p_max: 0.95,
            tau0: 800.0,
            gamma: 0.3,
        }
    }
}

impl EnvModel {
    pub fn validate(&self) -> Result<(), TaskGenError> {
        if self.bucket_tokens.is_empty() {
            return Err(TaskGenError::InvalidConfig("no length buckets".into()));
        }
        if self.bucket_tokens[0] == 0 {
            return Err(TaskGenError::InvalidConfig(
                "bucket token counts must be positive".into(),
            ));
        }
        if !self.bucket_tokens.windows(2).all(|w| w[0] < w[1]) {
            return Err(TaskGenError::InvalidConfig(
                "bucket token counts must be strictly increasing".into(),
            ));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(TaskGenError::InvalidConfig(format!(
                "p_max must be in (0, 1], got {}",
                self.p_max
            )));
        }
        if !(self.tau0 > 0.0) {
            return Err(TaskGenError::InvalidConfig(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(TaskGenError::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_tokens.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskGenError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bucket index {index} out of range (environment has {count} buckets)")]
    BucketIndex { index: usize, count: usize },
}

/// Whitespace-delimited word count: the token rule used everywhere in this
/// crate. Locale-independent and tokenizer-free.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// The saturating correctness curve, exposed raw so limit behavior is
/// testable independent of bucket validation.
pub fn saturating_probability(
    p_max: f64,
    tau0: f64,
    gamma: f64,
    tokens: f64,
    difficulty: f64,
) -> f64 {
    p_max * (1.0 - (-tokens / (tau0 * (1.0 + gamma * difficulty))).exp())
}

/// `p(b, d)` for a validated bucket index.
pub fn correctness_probability(
    env: &EnvModel,
    bucket_index: usize,
    difficulty: f64,
) -> Result<f64, TaskGenError> {
    let tokens = *env
        .bucket_tokens
        .get(bucket_index)
        .ok_or(TaskGenError::BucketIndex {
            index: bucket_index,
            count: env.bucket_tokens.len(),
        })?;
    debug_assert!((0.0..=1.0).contains(&difficulty));
    Ok(saturating_probability(
        env.p_max,
        env.tau0,
        env.gamma,
        tokens as f64,
        difficulty,
    ))
}

/// Per-family generation weights. Families absent from the map get zero.
pub type FamilyMix = std::collections::BTreeMap<TaskFamily, f64>;

/// Options beyond the required generation arguments.
#[derive(Clone, Copy, Debug)]
pub struct TaskGenOptions {
    /// Fraction of tasks flagged `think_mode`.
    pub think_fraction: f64,
}

impl Default for TaskGenOptions {
    fn default() -> Self {
        Self {
            think_fraction: 0.5,
        }
    }
}

/// Generate `count` tasks with family counts apportioned to the weights by
/// largest remainder, difficulties uniform in `[0, 1]`, and deterministic
/// output for a given seed.
pub fn generate_tasks(
    seed: u64,
    count: usize,
    mix: &FamilyMix,
) -> Result<Vec<TaskInstance>, TaskGenError> {
    generate_tasks_opt(seed, count, mix, TaskGenOptions::default())
}

pub fn generate_tasks_opt(
    seed: u64,
    count: usize,
    mix: &FamilyMix,
    options: TaskGenOptions,
) -> Result<Vec<TaskInstance>, TaskGenError> {
    if count == 0 {
        return Err(TaskGenError::InvalidConfig(
            "count must be at least 1".into(),
        ));
    }
    if mix.values().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(TaskGenError::InvalidConfig(
            "family weights must be non-negative and finite".into(),
        ));
    }
    let total: f64 = mix.values().sum();
    if total <= 0.0 {
        return Err(TaskGenError::InvalidConfig(
            "family weights must not all be zero".into(),
        ));
    }

    let counts = apportion(count, mix, total);
    let mut families = Vec::with_capacity(count);
    for family in TaskFamily::ALL {
        families.extend(std::iter::repeat(family).take(counts[&family]));
    }
    // Fisher-Yates so the emitted order interleaves families.
    let mut shuffle = Stream::derive(seed, "task_order", &[]);
    for i in (1..families.len()).rev() {
        let j = shuffle.next_below(i as u64 + 1) as usize;
        families.swap(i, j);
    }

    let mut tasks = Vec::with_capacity(count);
    for (index, family) in families.into_iter().enumerate() {
        let mut stream = Stream::derive(seed, "task", &[index as u64]);
        let difficulty = stream.next_f64();
        let think_mode = stream.next_bool(options.think_fraction);
        let ground_truth = generate_truth(family, &mut stream);
        let id = format!("task-{seed:x}-{index:05}");
        let prompt = render_prompt(family, &id, &ground_truth);
        tasks.push(TaskInstance {
            id,
            family,
            prompt,
            ground_truth,
            difficulty,
            think_mode,
        });
    }
    Ok(tasks)
}

/// Largest-remainder apportionment over the fixed family order; guarantees
/// per-family counts within one of the exact proportional share.
fn apportion(
    count: usize,
    mix: &FamilyMix,
    total: f64,
) -> std::collections::BTreeMap<TaskFamily, usize> {
    let mut quotas: Vec<(TaskFamily, f64)> = TaskFamily::ALL
        .iter()
        .map(|&f| {
            (
                f,
                count as f64 * mix.get(&f).copied().unwrap_or(0.0) / total,
            )
        })
        .collect();
    let mut counts: std::collections::BTreeMap<TaskFamily, usize> = quotas
        .iter()
        .map(|&(f, q)| (f, q.floor() as usize))
        .collect();
    let assigned: usize = counts.values().sum();
    // Distribute the remainder by descending fractional part, family order
    // breaking ties.
    quotas.sort_by(|a, b| {
        let fa = a.1 - a.1.floor();
        let fb = b.1 - b.1.floor();
        fb.partial_cmp(&fa).unwrap().then_with(|| a.0.cmp(&b.0))
    });
    for (family, _) in quotas.iter().cycle().take(count - assigned) {
        *counts.get_mut(family).unwrap() += 1;
    }
    counts
}

const KEYWORDS: [&str; 8] = [
    "velvet", "quartz", "harbor", "lantern", "orchid", "timber", "copper", "meadow",
];

fn generate_truth(family: TaskFamily, stream: &mut Stream) -> GroundTruth {
    match family {
        TaskFamily::Math | TaskFamily::Stem => {
            let numer = stream.next_below(199) as i128 - 99;
            let denom = [1i128, 2, 4, 5, 10][stream.next_below(5) as usize];
            GroundTruth::Numeric {
                value: Rational::new(numer, denom).expect("nonzero denominator"),
            }
        }
        TaskFamily::Code => {
            let a = stream.next_below(9) as i64 + 1;
            let b = stream.next_below(21) as i64 - 10;
            let program = match stream.next_below(3) {
                0 => format!("x*{a}+{b}"),
                1 => format!("x*x+{a}"),
                _ => format!("(x+{a})*x-{b}"),
            };
            let mut tests = Vec::new();
            let mut used = std::collections::BTreeSet::new();
            while tests.len() < 3 {
                let input = stream.next_below(19) as i64 - 9;
                if !used.insert(input) {
                    continue;
                }
                let expected = crate::verifier::exprlang::eval(&program, input)
                    .expect("generated programs evaluate on small inputs");
                tests.push(CodeTest { input, expected });
            }
            GroundTruth::CodeTests { program, tests }
        }
        TaskFamily::InstructionFollowing | TaskFamily::MobileService => {
            let keyword = KEYWORDS[stream.next_below(KEYWORDS.len() as u64) as usize];
            GroundTruth::Constraints {
                constraints: vec![
                    Constraint::ExactlyOneBoxed,
                    Constraint::ContainsKeyword {
                        keyword: keyword.to_string(),
                    },
                ],
            }
        }
    }
}

fn render_prompt(family: TaskFamily, id: &str, truth: &GroundTruth) -> String {
    match (family, truth) {
        (TaskFamily::Math, _) => format!(
            "[{id}] Work the problem step by step and give the final value in one \\box[...]."
        ),
        (TaskFamily::Stem, _) => {
            format!("[{id}] Derive the quantity asked for and report it in one \\box[...].")
        }
        (TaskFamily::Code, GroundTruth::CodeTests { tests, .. }) => format!(
            "[{id}] Write an expression in x passing {} hidden tests; answer in one \\box[...].",
            tests.len()
        ),
        (TaskFamily::InstructionFollowing, GroundTruth::Constraints { .. }) => {
            format!("[{id}] Answer with exactly one \\box[...] and include the required keyword.")
        }
        (TaskFamily::MobileService, GroundTruth::Constraints { .. }) => format!(
            "[{id}] Summarize the screen action; one \\box[...], include the required keyword."
        ),
        _ => format!("[{id}] Answer in one \\box[...]."),
    }
}

/// How a synthesized response at a given bucket is laid out, in tokens.
/// This is the single source of truth shared by text synthesis and the
/// structure-based scoring fast path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResponseShape {
    /// Tokens inside the `<think>` block (0 when the block is absent).
    pub think_tokens: u32,
    /// Filler tokens between `</think>` and the boxed answer.
    pub answer_filler_tokens: u32,
    /// Whether `<think>`/`</think>` wrapper tokens are emitted.
    pub has_think_block: bool,
}

/// Token count of the shortest bucket's deliberately under-length think
/// block. Below the default minimum-reasoning threshold, so the format
/// checker fires on bucket 0.
pub const BRIEF_THINK_TOKENS: u32 = 3;

/// Fixed overhead when a think block is present: `<think>`, `</think>`,
/// and the boxed answer, one token each.
const WRAPPED_OVERHEAD: u32 = 3;

pub fn response_shape(bucket_index: usize, bucket_tokens: u32) -> ResponseShape {
    if bucket_tokens < WRAPPED_OVERHEAD + 1 {
        // Too small for a think block: filler plus the boxed answer.
        return ResponseShape {
            think_tokens: 0,
            answer_filler_tokens: bucket_tokens.saturating_sub(1),
            has_think_block: false,
        };
    }
    let budget = bucket_tokens - WRAPPED_OVERHEAD;
    let think_tokens = if bucket_index == 0 {
        budget.min(BRIEF_THINK_TOKENS)
    } else {
        budget
    };
    ResponseShape {
        think_tokens,
        answer_filler_tokens: budget - think_tokens,
        has_think_block: true,
    }
}

/// Rule components of a synthesized response, derived from its outcome
/// structure without materializing text. By construction a synthesized
/// response has exactly one boxed span and all-distinct filler tokens, so
/// only the brief-reasoning rule can fire; correctness is the sampled
/// outcome. Equivalence with the full text route is property-tested.
pub fn structured_rule_components(
    env: &EnvModel,
    bucket_index: usize,
    is_correct: bool,
    config: &crate::verifier::VerifierConfig,
) -> Result<(f64, f64, f64), TaskGenError> {
    let tokens = *env
        .bucket_tokens
        .get(bucket_index)
        .ok_or(TaskGenError::BucketIndex {
            index: bucket_index,
            count: env.bucket_tokens.len(),
        })?;
    let shape = response_shape(bucket_index, tokens);
    let answer = if is_correct { 1.0 } else { 0.0 };
    let format = if (shape.think_tokens as usize) < config.min_reasoning_tokens {
        crate::verifier::PENALTY_COEFFICIENT
    } else {
        1.0
    };
    Ok((answer, format, 1.0))
}

const FILLER_WORDS: [&str; 16] = [
    "thus", "hence", "note", "expand", "group", "factor", "apply", "check", "carry", "shift",
    "scale", "reduce", "compare", "balance", "combine", "verify",
];

/// Emit surrogate response text whose token count equals the bucket's
/// representative count exactly. The boxed content equals the ground truth
/// iff `is_correct`.
pub fn synthesize_response(
    task: &TaskInstance,
    env: &EnvModel,
    bucket_index: usize,
    is_correct: bool,
    stream: &mut Stream,
) -> Result<String, TaskGenError> {
    let tokens = *env
        .bucket_tokens
        .get(bucket_index)
        .ok_or(TaskGenError::BucketIndex {
            index: bucket_index,
            count: env.bucket_tokens.len(),
        })?;
    let shape = response_shape(bucket_index, tokens);
    let boxed = boxed_answer(task, is_correct, stream);

    let mut out = String::with_capacity(tokens as usize * 8 + 16);
    let mut filler_index = 0u32;
    let push = |out: &mut String, word: &str| {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    };
    let mut push_filler = |out: &mut String, stream: &mut Stream, n: u32| {
        for _ in 0..n {
            let base = FILLER_WORDS[stream.next_below(FILLER_WORDS.len() as u64) as usize];
            // The index suffix keeps every filler token distinct, so
            // synthesized text never trips the repetition detector.
            let word = format!("{base}{filler_index}");
            filler_index += 1;
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&word);
        }
    };

    if shape.has_think_block {
        push(&mut out, "<think>");
        push_filler(&mut out, stream, shape.think_tokens);
        push(&mut out, "</think>");
    }
    push_filler(&mut out, stream, shape.answer_filler_tokens);
    push(&mut out, &boxed);
    debug_assert_eq!(token_count(&out), tokens as usize);
    Ok(out)
}

fn boxed_answer(task: &TaskInstance, is_correct: bool, stream: &mut Stream) -> String {
    let content = match &task.ground_truth {
        GroundTruth::Numeric { value } => {
            let v = if is_correct {
                *value
            } else {
                value
                    .checked_add(&Rational::from_integer(1))
                    .unwrap_or_else(|| Rational::from_integer(1))
            };
            render_rational(&v, stream)
        }
        GroundTruth::CodeTests { program, .. } => {
            if is_correct {
                program.clone()
            } else {
                // A constant shift fails every test.
                format!("{program}+1")
            }
        }
        GroundTruth::Constraints { constraints } => {
            let keyword = constraints.iter().find_map(|c| match c {
                Constraint::ContainsKeyword { keyword } => Some(keyword.as_str()),
                _ => None,
            });
            if is_correct {
                keyword.unwrap_or("done").to_string()
            } else {
                "skipped".to_string()
            }
        }
    };
    format!("\\box[{content}]")
}

/// Render a rational in a stream-chosen surface form; equivalent forms
/// (`1/2`, `0.5`, `2/4`) all canonicalize back to the same value.
fn render_rational(value: &Rational, stream: &mut Stream) -> String {
    let num = value.numer();
    let den = value.denom();
    match stream.next_below(3) {
        // Unreduced fraction.
        0 if den > 1 && num.checked_mul(2).is_some() && den.checked_mul(2).is_some() => {
            format!("{}/{}", num * 2, den * 2)
        }
        // Exact decimal when the denominator divides ten.
        1 if den > 1 && 10 % den == 0 && num.checked_mul(10 / den).is_some() => {
            let scale = 10 / den;
            let scaled = num * scale;
            let sign = if scaled < 0 { "-" } else { "" };
            format!("{sign}{}.{}", scaled.abs() / 10, scaled.abs() % 10)
        }
        _ => value.to_string(),
    }
}

/// Serialize a task set as line-delimited JSON, one object per task.
pub fn tasks_to_jsonl(tasks: &[TaskInstance]) -> String {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    out
}

/// Parse a task set from line-delimited JSON. Blank lines are skipped.
pub fn tasks_from_jsonl(text: &str) -> Result<Vec<TaskInstance>, TaskGenError> {
    let mut tasks = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(line)
            .map_err(|e| TaskGenError::InvalidConfig(format!("task line {}: {e}", number + 1)))?;
        tasks.push(task);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(p_max: f64, tau0: f64, gamma: f64) -> EnvModel {
        EnvModel {
            bucket_tokens: vec![64, 256, 1024, 2000, 16384],
            p_max,
            tau0,
            gamma,
        }
    }

    #[test]
    fn correctness_probability_matches_closed_form() {
        // p = 0.9 * (1 - e^{-2000 / (1000 * (1 + 1))}) = 0.9 * (1 - e^{-1})
        let env = env(0.9, 1000.0, 1.0);
        let p = correctness_probability(&env, 3, 1.0).unwrap();
        assert!((p - 0.5689085029457019).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn probability_limits() {
        assert_eq!(saturating_probability(0.9, 1000.0, 1.0, 0.0, 0.3), 0.0);
        let p = saturating_probability(0.9, 1000.0, 1.0, 1e12, 0.3);
        assert!((p - 0.9).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_bucket_is_an_index_error() {
        let env = env(0.9, 1000.0, 1.0);
        assert!(matches!(
            correctness_probability(&env, 5, 0.5),
            Err(TaskGenError::BucketIndex { index: 5, count: 5 })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let mix = FamilyMix::from([(TaskFamily::Math, 1.0)]);
        let a = generate_tasks(7, 4, &mix).unwrap();
        let b = generate_tasks(7, 4, &mix).unwrap();
        assert_eq!(a, b);
        assert_eq!(tasks_to_jsonl(&a), tasks_to_jsonl(&b), "byte-for-byte");
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|t| t.family == TaskFamily::Math));
    }

    #[test]
    fn family_counts_match_weights_within_one() {
        let mix = FamilyMix::from([
            (TaskFamily::Math, 5.0),
            (TaskFamily::Code, 3.0),
            (TaskFamily::Stem, 1.5),
            (TaskFamily::InstructionFollowing, 3.0),
            (TaskFamily::MobileService, 2.0),
        ]);
        let tasks = generate_tasks(11, 145, &mix).unwrap();
        let count = |f: TaskFamily| tasks.iter().filter(|t| t.family == f).count() as i64;
        // Exact proportional shares: 50 / 30 / 15 / 30 / 20.
        assert!((count(TaskFamily::Math) - 50).abs() <= 1);
        assert!((count(TaskFamily::Code) - 30).abs() <= 1);
        assert!((count(TaskFamily::Stem) - 15).abs() <= 1);
        assert!((count(TaskFamily::InstructionFollowing) - 30).abs() <= 1);
        assert!((count(TaskFamily::MobileService) - 20).abs() <= 1);
    }

    #[test]
    fn all_zero_mix_is_a_config_error() {
        let mix = FamilyMix::new();
        assert!(matches!(
            generate_tasks(1, 5, &mix),
            Err(TaskGenError::InvalidConfig(_))
        ));
        let zero = FamilyMix::from([(TaskFamily::Math, 0.0)]);
        assert!(generate_tasks(1, 5, &zero).is_err());
    }

    #[test]
    fn difficulties_are_in_unit_interval() {
        let mix = FamilyMix::from([(TaskFamily::Math, 1.0), (TaskFamily::Code, 1.0)]);
        let tasks = generate_tasks(3, 200, &mix).unwrap();
        assert!(tasks.iter().all(|t| (0.0..=1.0).contains(&t.difficulty)));
    }

    #[test]
    fn synthesized_token_count_is_exact_for_every_bucket_and_family() {
        let env = EnvModel::default();
        let mix: FamilyMix = TaskFamily::ALL.iter().map(|&f| (f, 1.0)).collect();
        let tasks = generate_tasks(5, 10, &mix).unwrap();
        for task in &tasks {
            for b in 0..env.bucket_count() {
                for correct in [false, true] {
                    let mut stream = Stream::derive(5, "synth", &[b as u64]);
                    let text = synthesize_response(task, &env, b, correct, &mut stream).unwrap();
                    assert_eq!(
                        token_count(&text),
                        env.bucket_tokens[b] as usize,
                        "family {:?} bucket {b}",
                        task.family
                    );
                }
            }
        }
    }

    #[test]
    fn boxed_content_parses_to_truth_iff_correct() {
        let env = EnvModel::default();
        let mix = FamilyMix::from([(TaskFamily::Math, 1.0)]);
        let task = &generate_tasks(41, 1, &mix).unwrap()[0];
        let GroundTruth::Numeric { value } = &task.ground_truth else {
            panic!("math tasks carry numeric truths");
        };
        for correct in [true, false] {
            let mut stream = Stream::derive(41, "boxed", &[correct as u64]);
            let text = synthesize_response(task, &env, 2, correct, &mut stream).unwrap();
            let spans: Vec<&str> = text
                .match_indices("\\box[")
                .map(|(start, _)| {
                    let payload = &text[start + 5..];
                    &payload[..payload.find(']').unwrap()]
                })
                .collect();
            assert_eq!(spans.len(), 1, "exactly one boxed answer");
            let parsed = Rational::parse(spans[0]).unwrap();
            assert_eq!(parsed == *value, correct);
        }
    }

    #[test]
    fn tiny_buckets_still_hit_exact_counts() {
        let env = EnvModel {
            bucket_tokens: vec![1, 2, 3, 4, 5, 12],
            ..EnvModel::default()
        };
        let mix = FamilyMix::from([(TaskFamily::Math, 1.0)]);
        let task = &generate_tasks(9, 1, &mix).unwrap()[0];
        for b in 0..env.bucket_count() {
            let mut stream = Stream::derive(9, "tiny", &[b as u64]);
            let text = synthesize_response(task, &env, b, true, &mut stream).unwrap();
            assert_eq!(token_count(&text), env.bucket_tokens[b] as usize);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mix: FamilyMix = TaskFamily::ALL.iter().map(|&f| (f, 1.0)).collect();
        let tasks = generate_tasks(21, 25, &mix).unwrap();
        let text = tasks_to_jsonl(&tasks);
        let back = tasks_from_jsonl(&text).unwrap();
        assert_eq!(tasks, back);
    }

    #[test]
    fn probability_is_monotone_over_random_envs() {
        // For fixed d: strictly increasing in bucket, bounded by p_max.
        // For fixed bucket with gamma > 0: strictly decreasing in d.
        let mut stream = Stream::derive(77, "env_prop", &[]);
        for _ in 0..500 {
            let bucket_count = 2 + stream.next_below(6) as usize;
            let mut tokens = Vec::new();
            let mut next = 1 + stream.next_below(50) as u32;
            for _ in 0..bucket_count {
                tokens.push(next);
                next += 1 + stream.next_below(4000) as u32;
            }
            let env = EnvModel {
                bucket_tokens: tokens,
                p_max: 0.05 + 0.95 * stream.next_f64(),
                tau0: 1.0 + 5000.0 * stream.next_f64(),
                gamma: 0.01 + 2.0 * stream.next_f64(),
            };
            env.validate().unwrap();
            let d = stream.next_f64();
            let saturated = env.p_max * (1.0 - 1e-12);
            let mut previous = 0.0;
            for b in 0..bucket_count {
                let p = correctness_probability(&env, b, d).unwrap();
                // Strict monotonicity up to f64 saturation: once exp(-x)
                // underflows, consecutive buckets tie exactly at p_max.
                assert!(
                    p > previous || (p == previous && p >= saturated),
                    "increasing in bucket"
                );
                assert!(p > 0.0 && p <= env.p_max, "within (0, p_max]");
                previous = p;
            }
            let (d_lo, d_hi) = {
                let a = stream.next_f64();
                let b = stream.next_f64();
                (a.min(b), a.max(b))
            };
            if d_hi > d_lo {
                let bucket = stream.next_below(bucket_count as u64) as usize;
                let p_easy = correctness_probability(&env, bucket, d_lo).unwrap();
                let p_hard = correctness_probability(&env, bucket, d_hi).unwrap();
                assert!(
                    p_easy > p_hard || (p_easy == p_hard && p_easy >= saturated),
                    "decreasing in difficulty"
                );
            }
        }
    }

    #[test]
    fn env_validation_rejects_bad_models() {
        let mut env = EnvModel::default();
        env.bucket_tokens = vec![5, 5];
        assert!(env.validate().is_err());
        env.bucket_tokens = vec![0, 5];
        assert!(env.validate().is_err());
        env.bucket_tokens = vec![5, 10];
        env.p_max = 1.5;
        assert!(env.validate().is_err());
        env.p_max = 0.9;
        env.tau0 = 0.0;
        assert!(env.validate().is_err());
    }
}
