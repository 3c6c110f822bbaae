//! The pluggable reward-provider boundary.
//!
//! Providers score response text into the three rule components. The wire
//! protocol is newline-delimited JSON over a reliable byte stream:
//!
//! ```text
//! -> {"id": "...", "family": "...", "response_text": "...", "ground_truth": {...}}
//! <- {"id": "...", "answer_reward": 1.0, "format_coef": 1.0, "repetition_coef": 1.0}
//! ```
//!
//! Requests carry correlation ids; a server may answer out of order and the
//! client reassembles by id. The in-process [`LocalProvider`] and the
//! [`RemoteProvider`] TCP client implement the identical interface, so a
//! training run can swap a remote scoring service in without touching the
//! loop. Any provider failure poisons the whole batch — group scoring
//! aborts rather than emit partial gradients.

use crate::taskgen::GroundTruth;
use crate::verifier::{rule_components, VerifierConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

/// One scoring request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub id: String,
    pub family: String,
    pub response_text: String,
    pub ground_truth: GroundTruth,
}

/// One scoring response, correlated by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub id: String,
    pub answer_reward: f64,
    pub format_coef: f64,
    pub repetition_coef: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("i/o failure talking to reward provider: {0}")]
    Io(#[from] std::io::Error),
    #[error("provider timed out; missing responses for {0:?}")]
    Timeout(Vec<String>),
    #[error("provider protocol violation: {0}")]
    Protocol(String),
}

impl ProviderError {
    /// Ids the failure can be pinned to, for whole-group abort reporting.
    pub fn failed_ids(&self) -> Vec<String> {
        match self {
            ProviderError::Timeout(ids) => ids.clone(),
            _ => Vec::new(),
        }
    }
}

/// A scorer of response batches. Implementations must return exactly one
/// response per request, in request order.
pub trait RewardProvider {
    fn score(&self, requests: &[RewardRequest]) -> Result<Vec<RewardResponse>, ProviderError>;
}

/// In-process rule-based provider.
#[derive(Clone, Debug, Default)]
pub struct LocalProvider {
    pub config: VerifierConfig,
}

impl LocalProvider {
    pub fn new(config: VerifierConfig) -> Self {
        Self { config }
    }

    fn score_one(&self, request: &RewardRequest) -> RewardResponse {
        let (answer_reward, format_coef, repetition_coef) =
            rule_components(&request.response_text, &request.ground_truth, &self.config);
        RewardResponse {
            id: request.id.clone(),
            answer_reward,
            format_coef,
            repetition_coef,
        }
    }
}

impl RewardProvider for LocalProvider {
    fn score(&self, requests: &[RewardRequest]) -> Result<Vec<RewardResponse>, ProviderError> {
        Ok(requests.iter().map(|r| self.score_one(r)).collect())
    }
}

/// TCP client for a remote scoring service speaking the wire protocol.
///
/// Each batch opens one connection, streams all requests from a writer
/// thread, and reads until every correlation id is answered or the deadline
/// passes. Transport failures are retried with a fresh connection.
#[derive(Clone, Debug)]
pub struct RemoteProvider {
    pub address: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl RemoteProvider {
    pub fn new(address: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            address: address.into(),
            timeout,
            retries,
        }
    }

    fn score_once(&self, requests: &[RewardRequest]) -> Result<Vec<RewardResponse>, ProviderError> {
        let deadline = Instant::now() + self.timeout;
        let stream = TcpStream::connect(&self.address)?;
        stream.set_nodelay(true).ok();

        let mut expected: BTreeSet<&str> = BTreeSet::new();
        for request in requests {
            if !expected.insert(&request.id) {
                return Err(ProviderError::Protocol(format!(
                    "duplicate correlation id {:?} in batch",
                    request.id
                )));
            }
        }

        let mut by_id: BTreeMap<String, RewardResponse> = BTreeMap::new();
        std::thread::scope(|scope| -> Result<(), ProviderError> {
            let mut writer = stream.try_clone()?;
            let write_handle = scope.spawn(move || -> std::io::Result<()> {
                for request in requests {
                    let line = serde_json::to_string(request).expect("request serializes");
                    writer.write_all(line.as_bytes())?;
                    writer.write_all(b"\n")?;
                }
                writer.flush()
            });

            let mut reader = BufReader::new(&stream);
            let mut line = String::new();
            while by_id.len() < requests.len() {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    break;
                }
                stream.set_read_timeout(Some(remaining))?;
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        let response: RewardResponse = serde_json::from_str(line.trim_end())
                            .map_err(|e| {
                                ProviderError::Protocol(format!("bad response line: {e}"))
                            })?;
                        if !expected.contains(response.id.as_str()) {
                            return Err(ProviderError::Protocol(format!(
                                "response for unknown id {:?}",
                                response.id
                            )));
                        }
                        by_id.insert(response.id.clone(), response);
                    }
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut =>
                    {
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            // The writer thread ends once its lines are flushed; surface its
            // errors unless reading already failed.
            match write_handle.join() {
                Ok(Ok(())) => Ok(()),
                Ok(Err(e)) if by_id.len() < requests.len() => Err(e.into()),
                Ok(Err(_)) => Ok(()),
                Err(_) => Err(ProviderError::Protocol("writer thread panicked".into())),
            }
        })?;

        if by_id.len() < requests.len() {
            let missing = requests
                .iter()
                .filter(|r| !by_id.contains_key(&r.id))
                .map(|r| r.id.clone())
                .collect();
            return Err(ProviderError::Timeout(missing));
        }
        Ok(requests
            .iter()
            .map(|r| by_id.remove(&r.id).expect("all ids present"))
            .collect())
    }
}

impl RewardProvider for RemoteProvider {
    fn score(&self, requests: &[RewardRequest]) -> Result<Vec<RewardResponse>, ProviderError> {
        let mut last_error = None;
        for _ in 0..=self.retries {
            match self.score_once(requests) {
                Ok(responses) => return Ok(responses),
                Err(e) => last_error = Some(e),
            }
        }
        Err(last_error.expect("at least one attempt runs"))
    }
}

/// Serve the rule-based scorer over the wire protocol. Blocks accepting
/// connections; spawn it on a thread for loopback use. Each connection is
/// handled on its own thread and scored line by line.
pub fn serve_rule_provider(listener: TcpListener, config: VerifierConfig) -> std::io::Result<()> {
    loop {
        let (stream, _) = listener.accept()?;
        let provider = LocalProvider::new(config);
        std::thread::spawn(move || {
            let _ = handle_connection(stream, &provider);
        });
    }
}

fn handle_connection(stream: TcpStream, provider: &LocalProvider) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(request) = serde_json::from_str::<RewardRequest>(&line) else {
            // Malformed request: drop the connection; the client will
            // time out on the missing id and retry or abort.
            break;
        };
        let response = provider.score_one(&request);
        writer.write_all(
            serde_json::to_string(&response)
                .expect("serializes")
                .as_bytes(),
        )?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{generate_tasks, FamilyMix, TaskFamily};

    fn request(id: &str, text: &str) -> RewardRequest {
        RewardRequest {
            id: id.into(),
            family: "math".into(),
            response_text: text.into(),
            ground_truth: GroundTruth::Numeric {
                value: crate::verifier::rational::Rational::from_integer(42),
            },
        }
    }

    #[test]
    fn local_provider_scores_components() {
        let provider = LocalProvider::default();
        let think = "w ".repeat(20);
        let responses = provider
            .score(&[
                request("a", &format!("<think>{think}</think> \\box[42]")),
                request("b", "\\box[41] \\box[42]"),
            ])
            .unwrap();
        assert_eq!(responses[0].answer_reward, 1.0);
        assert_eq!(responses[0].format_coef, 1.0);
        assert_eq!(responses[1].answer_reward, 1.0);
        assert_eq!(responses[1].format_coef, 0.1);
    }

    #[test]
    fn wire_round_trip_is_exact() {
        let mix: FamilyMix = TaskFamily::ALL.iter().map(|&f| (f, 1.0)).collect();
        let task = &generate_tasks(3, 5, &mix).unwrap()[0];
        let req = RewardRequest {
            id: "r-0".into(),
            family: task.family.name().into(),
            response_text: "<think>a</think> \\box[1]".into(),
            ground_truth: task.ground_truth.clone(),
        };
        let line = serde_json::to_string(&req).unwrap();
        let back: RewardRequest = serde_json::from_str(&line).unwrap();
        assert_eq!(req, back);
    }
}
