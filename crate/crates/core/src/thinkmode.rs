//! The thinking-mode control protocol.
//!
//! A single reserved control token, placed after the final user query,
//! switches a response into thinking mode. Placement after the query (not
//! before) keeps activation stable when the query itself is a rigid,
//! instruction-heavy prompt. Omitting the token in the current turn
//! deactivates the mode, so multi-turn conversations switch per turn.
//!
//! The template is a minimal role-marked plain-text format:
//!
//! ```text
//! <|user|>
//! how many primes below 100? [|BlueThink|]
//! <|assistant|>
//! ```
//!
//! Role markers and the control token are reserved literals: occurrences
//! inside turn content are stripped at render time, so mode detection is a
//! pure function of the rendered text and can never be forged by content.
//! For loss masking, user-turn content tokens and the control token are
//! excluded; assistant content and the training target are included.

use crate::verifier::split_think;
use serde::{Deserialize, Serialize};

/// The reserved thinking-mode control token.
pub const CONTROL_TOKEN: &str = "[|BlueThink|]";
/// Role marker opening a user turn.
pub const USER_MARKER: &str = "<|user|>";
/// Role marker opening an assistant turn (also the trailing generation cue).
pub const ASSISTANT_MARKER: &str = "<|assistant|>";

/// Whether a prompt or rollout runs in thinking mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkMode {
    Thinking,
    NonThinking,
}

impl ThinkMode {
    pub const ALL: [ThinkMode; 2] = [ThinkMode::Thinking, ThinkMode::NonThinking];

    pub fn name(&self) -> &'static str {
        match self {
            ThinkMode::Thinking => "thinking",
            ThinkMode::NonThinking => "non_thinking",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// One conversation turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    /// Only meaningful on user turns; must be false on assistant turns.
    #[serde(default)]
    pub think_requested: bool,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>, think_requested: bool) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            think_requested,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            think_requested: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ThinkModeError {
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
}

/// A rendered prompt with position bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptAssembly {
    pub rendered: String,
    /// Byte spans of the literal control token within `rendered`.
    pub control_token_spans: Vec<(usize, usize)>,
    pub mode: ThinkMode,
    /// Byte span of each turn's sanitized content within `rendered`.
    segments: Vec<(Role, usize, usize)>,
}

/// Remove reserved literals from content, iterating so removal cannot
/// splice a new occurrence together (e.g. `<|us<|user|>er|>`).
fn sanitize(content: &str) -> String {
    let mut text = content.to_string();
    loop {
        let before = text.len();
        for reserved in [CONTROL_TOKEN, USER_MARKER, ASSISTANT_MARKER] {
            text = text.replace(reserved, "");
        }
        if text.len() == before {
            return text;
        }
    }
}

/// Render a conversation. The final turn must be a user turn; when it
/// requests thinking, the control token is appended after the query text
/// and the assembly is in thinking mode.
pub fn build_prompt(turns: &[ChatTurn]) -> Result<PromptAssembly, ThinkModeError> {
    let last = turns
        .last()
        .ok_or_else(|| ThinkModeError::InvalidConversation("conversation has no turns".into()))?;
    if last.role != Role::User {
        return Err(ThinkModeError::InvalidConversation(
            "final turn must be a user turn".into(),
        ));
    }
    if let Some(turn) = turns
        .iter()
        .find(|t| t.role == Role::Assistant && t.think_requested)
    {
        return Err(ThinkModeError::InvalidConversation(format!(
            "assistant turn cannot request thinking: {:?}",
            turn.content
        )));
    }

    let mut rendered = String::new();
    let mut segments = Vec::with_capacity(turns.len());
    let mut control_token_spans = Vec::new();
    for (index, turn) in turns.iter().enumerate() {
        let marker = match turn.role {
            Role::User => USER_MARKER,
            Role::Assistant => ASSISTANT_MARKER,
        };
        rendered.push_str(marker);
        rendered.push('\n');
        let content = sanitize(&turn.content);
        let start = rendered.len();
        rendered.push_str(&content);
        let end = rendered.len();
        segments.push((turn.role, start, end));
        if index == turns.len() - 1 && turn.think_requested {
            if !content.is_empty() {
                rendered.push(' ');
            }
            let token_start = rendered.len();
            rendered.push_str(CONTROL_TOKEN);
            control_token_spans.push((token_start, rendered.len()));
        }
        rendered.push('\n');
    }
    rendered.push_str(ASSISTANT_MARKER);
    rendered.push('\n');

    let mode = if last.think_requested {
        ThinkMode::Thinking
    } else {
        ThinkMode::NonThinking
    };
    Ok(PromptAssembly {
        rendered,
        control_token_spans,
        mode,
        segments,
    })
}

/// Mode of a rendered prompt: thinking iff the control token appears in the
/// final user segment (the text after the last user-role marker).
pub fn detect_mode(rendered: &str) -> ThinkMode {
    match rendered.rfind(USER_MARKER) {
        Some(position) => {
            let segment = &rendered[position + USER_MARKER.len()..];
            if segment.contains(CONTROL_TOKEN) {
                ThinkMode::Thinking
            } else {
                ThinkMode::NonThinking
            }
        }
        None => ThinkMode::NonThinking,
    }
}

/// Split a response into its reasoning block and answer. Same parsing rule
/// as the verifier, by shared implementation.
pub fn split_think_answer(response: &str) -> (String, String) {
    let (think, answer) = split_think(response);
    (think.to_string(), answer.to_string())
}

/// Rewrite a thinking-mode response as a non-thinking training target: the
/// reasoning block is dropped and only the answer region remains.
pub fn derive_non_thinking_target(response: &str) -> String {
    split_think(response).1.trim_start().to_string()
}

/// Parse conversations from line-delimited JSON: one turn array per line.
/// Blank lines are skipped.
pub fn conversations_from_jsonl(text: &str) -> Result<Vec<Vec<ChatTurn>>, ThinkModeError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(number, line)| {
            serde_json::from_str(line).map_err(|e| {
                ThinkModeError::InvalidConversation(format!("line {}: {e}", number + 1))
            })
        })
        .collect()
}

/// Per-token include flags over a training sample (prompt tokens followed
/// by target tokens).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LossMask {
    pub include: Vec<bool>,
    /// How many leading positions belong to the rendered prompt.
    pub prompt_tokens: usize,
}

impl LossMask {
    pub fn excluded_positions(&self) -> Vec<usize> {
        self.include
            .iter()
            .enumerate()
            .filter_map(|(i, &inc)| (!inc).then_some(i))
            .collect()
    }
}

/// Whitespace token spans as byte ranges.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Build the loss mask for a training sample: user-turn content tokens and
/// the control token are excluded; role markers, assistant content, and
/// every target token are included.
pub fn loss_mask(assembly: &PromptAssembly, target: &str) -> LossMask {
    let excluded_spans: Vec<(usize, usize)> = assembly
        .segments
        .iter()
        .filter(|(role, _, _)| *role == Role::User)
        .map(|&(_, start, end)| (start, end))
        .chain(assembly.control_token_spans.iter().copied())
        .collect();

    let prompt_spans = token_spans(&assembly.rendered);
    let mut include = Vec::with_capacity(prompt_spans.len());
    for (start, end) in &prompt_spans {
        let excluded = excluded_spans
            .iter()
            .any(|&(ex_start, ex_end)| *start < ex_end && ex_start < *end);
        include.push(!excluded);
    }
    let prompt_tokens = include.len();
    include.extend(std::iter::repeat(true).take(token_spans(target).len()));
    LossMask {
        include,
        prompt_tokens,
    }
}
