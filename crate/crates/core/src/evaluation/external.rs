//! Evaluation delegated to an external generation pipeline.
//!
//! The pipeline runs as a child process speaking line-delimited JSON over
//! stdin/stdout. Each request carries the rendered prompt, the attribute
//! assignment and the number of valid samples wanted; each response carries
//! the measured accuracy and how many valid samples it was computed on.
//!
//! ```text
//! > {"id":0,"prompt":"A side view of ...","assignment":{"viewpoint":"side",...},"n_samples":50}
//! < {"id":0,"accuracy":0.92,"valid_samples":50}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluator, Measurement, DEFAULT_NUM_SAMPLES};
use crate::domain::{AttributeSchema, Subdomain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Valid samples requested per subdomain; set from the run config.
    #[serde(skip, default = "default_samples")]
    pub n_samples: u32,
}

fn default_timeout() -> u64 {
    3600
}

fn default_samples() -> u32 {
    DEFAULT_NUM_SAMPLES
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            args: Vec::new(),
            timeout_secs: default_timeout(),
            n_samples: default_samples(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRequest {
    pub id: u64,
    pub prompt: String,
    pub assignment: IndexMap<String, String>,
    pub n_samples: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResponse {
    pub id: u64,
    pub accuracy: f64,
    pub valid_samples: u32,
}

struct Process {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl Process {
    fn spawn(config: &ExternalConfig) -> Result<Self, EvalError> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Process {
                message: format!("cannot spawn `{}`: {e}", config.command),
                raw: String::new(),
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().ok_or_else(|| EvalError::Process {
            message: "evaluator stdout unavailable".into(),
            raw: String::new(),
        })?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct State {
    process: Option<Process>,
    next_id: u64,
    sent: u64,
}

pub struct ExternalEvaluator {
    schema: AttributeSchema,
    config: ExternalConfig,
    state: Mutex<State>,
}

impl ExternalEvaluator {
    pub fn new(schema: AttributeSchema, config: ExternalConfig) -> Result<Self, EvalError> {
        if config.n_samples == 0 {
            return Err(EvalError::Config("n_samples must be at least 1".into()));
        }
        if config.command.is_empty() {
            return Err(EvalError::Config("evaluator command is empty".into()));
        }
        Ok(Self {
            schema,
            config,
            state: Mutex::new(State {
                process: None,
                next_id: 0,
                sent: 0,
            }),
        })
    }

    /// Requests written so far, across process restarts.
    pub fn requests_sent(&self) -> u64 {
        self.state.lock().unwrap().sent
    }

    pub fn request_for(&self, id: u64, s: &Subdomain) -> ProtocolRequest {
        ProtocolRequest {
            id,
            prompt: self.schema.render_prompt(s),
            assignment: self
                .schema
                .attributes()
                .iter()
                .zip(self.schema.value_names(s))
                .map(|(a, v)| (a.name.clone(), v.to_string()))
                .collect(),
            n_samples: self.config.n_samples,
        }
    }

    fn exchange(&self, state: &mut State, request: &ProtocolRequest) -> Result<Measurement, EvalError> {
        if state.process.is_none() {
            state.process = Some(Process::spawn(&self.config)?);
        }
        let process = state.process.as_mut().unwrap();
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let stdin = process.stdin.as_mut().ok_or_else(|| EvalError::Process {
            message: "evaluator stdin closed".into(),
            raw: String::new(),
        })?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| EvalError::Process {
                message: format!("write to evaluator failed: {e}"),
                raw: String::new(),
            })?;
        state.sent += 1;

        let timeout = Duration::from_secs(self.config.timeout_secs);
        let raw = match process.lines.recv_timeout(timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                return Err(EvalError::Process {
                    message: format!("read from evaluator failed: {e}"),
                    raw: String::new(),
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(EvalError::Timeout {
                    secs: self.config.timeout_secs,
                    raw: String::new(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = process
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map_or_else(|| "closed stdout".to_string(), |s| s.to_string());
                return Err(EvalError::Process {
                    message: format!("evaluator exited before responding ({status})"),
                    raw: String::new(),
                });
            }
        };
        parse_response(request.id, &raw)
    }
}

/// Validates one response line against the request id.
pub(crate) fn parse_response(expected_id: u64, raw: &str) -> Result<Measurement, EvalError> {
    let response: ProtocolResponse =
        serde_json::from_str(raw.trim()).map_err(|e| EvalError::Malformed {
            message: e.to_string(),
            raw: raw.to_string(),
        })?;
    let violation = |message: String| EvalError::ProtocolViolation {
        message,
        raw: raw.to_string(),
    };
    if response.id != expected_id {
        return Err(violation(format!(
            "response id {} does not match request id {expected_id}",
            response.id
        )));
    }
    if !(0.0..=1.0).contains(&response.accuracy) {
        return Err(violation(format!(
            "accuracy {} outside [0, 1]",
            response.accuracy
        )));
    }
    if response.valid_samples == 0 {
        return Err(violation("valid_samples must be at least 1".into()));
    }
    Ok(Measurement {
        accuracy: response.accuracy,
        num_samples: response.valid_samples,
    })
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, s: &Subdomain) -> Result<Measurement, EvalError> {
        let mut state = self.state.lock().unwrap();
        let id = state.next_id;
        state.next_id += 1;
        let request = self.request_for(id, s);
        let result = self.exchange(&mut state, &request);
        if matches!(
            result,
            Err(EvalError::Process { .. } | EvalError::Timeout { .. })
        ) {
            // the stream is out of sync or dead; respawn on the next call
            state.process = None;
        }
        result
    }

    fn parallel_friendly(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_validation() {
        let ok = parse_response(3, r#"{"id":3,"accuracy":1.0,"valid_samples":50}"#).unwrap();
        assert_eq!(ok.accuracy, 1.0);
        assert_eq!(ok.num_samples, 50);
        assert!(matches!(
            parse_response(3, r#"{"id":3,"accuracy":1.5,"valid_samples":50}"#),
            Err(EvalError::ProtocolViolation { .. })
        ));
        assert!(matches!(
            parse_response(3, r#"{"id":3,"accuracy":-0.01,"valid_samples":50}"#),
            Err(EvalError::ProtocolViolation { .. })
        ));
        assert!(matches!(
            parse_response(3, r#"{"id":4,"accuracy":0.5,"valid_samples":50}"#),
            Err(EvalError::ProtocolViolation { .. })
        ));
        assert!(matches!(
            parse_response(3, r#"{"id":3,"accuracy":0.5,"valid_samples":0}"#),
            Err(EvalError::ProtocolViolation { .. })
        ));
        let err = parse_response(3, "not json").unwrap_err();
        assert!(matches!(err, EvalError::Malformed { ref raw, .. } if raw == "not json"));
        assert!(matches!(
            parse_response(3, r#"{"id":3}"#),
            Err(EvalError::Malformed { .. })
        ));
    }

    #[test]
    fn request_wire_shape() {
        let schema = AttributeSchema::new(
            vec![
                crate::domain::Attribute::new("color", &["white", "blue"]),
                crate::domain::Attribute::new("time", &["day"]),
            ],
            vec![],
            "a {color} dog during the {time}",
        )
        .unwrap();
        let ev = ExternalEvaluator::new(schema.clone(), ExternalConfig::new("unused")).unwrap();
        let s = schema.subdomain(vec![1, 0]).unwrap();
        let json = serde_json::to_string(&ev.request_for(7, &s)).unwrap();
        assert_eq!(
            json,
            r#"{"id":7,"prompt":"a blue dog during the day","assignment":{"color":"blue","time":"day"},"n_samples":50}"#
        );
    }

    #[test]
    fn missing_command_is_process_error() {
        let schema = AttributeSchema::new(
            vec![crate::domain::Attribute::new("a", &["x"])],
            vec![],
            "{a}",
        )
        .unwrap();
        let ev = ExternalEvaluator::new(
            schema.clone(),
            ExternalConfig::new("/nonexistent/evaluator-binary"),
        )
        .unwrap();
        let s = schema.subdomain(vec![0]).unwrap();
        assert!(matches!(ev.evaluate(&s), Err(EvalError::Process { .. })));
    }
}
