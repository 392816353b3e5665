//! Client for black-box evaluators running as child processes.
//!
//! One JSON message per line on the child's stdin/stdout:
//!
//! ```text
//! request:  {"id": 0, "x": [0.1, 0.2], "z": [1.0, 0.5], "seed": 7}
//! response: {"id": 0, "y": -1.25, "cost": 0.6}
//! ```
//!
//! `cost` is optional. Output lines that do not start with `{` are logs and are
//! skipped; a `{` line that is not a valid response is a protocol error.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Evaluation, KnownOptimum, Objective};
use crate::error::{Error, ObjectiveError, Result};
use crate::space::{Bounds, Fidelity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub x: Vec<f64>,
    pub z: [f64; 2],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: u64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    next_id: u64,
}

impl Session {
    fn spawn(command: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(|l| l.ok()) {
                let mut s = sink.lock().expect("stderr buffer");
                s.push_str(&line);
                s.push('\n');
            }
        });
        Ok(Session {
            child,
            stdin,
            lines,
            stderr,
            next_id: 0,
        })
    }

    fn stderr(&self) -> String {
        self.stderr.lock().map(|s| s.clone()).unwrap_or_default()
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// [`Objective`] backed by a long-lived child process. The child is started on
/// first use and restarted after any failure.
pub struct ExternalObjective {
    command: Vec<String>,
    timeout: Duration,
    bounds: Bounds,
    known_optimum: Option<KnownOptimum>,
    session: Mutex<Option<Session>>,
}

impl ExternalObjective {
    pub fn new(command: Vec<String>, design_dim: usize, timeout_seconds: f64) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::invalid("external objective needs a command"));
        }
        if !(timeout_seconds.is_finite() && timeout_seconds > 0.0) {
            return Err(Error::invalid(format!("timeout {timeout_seconds}")));
        }
        if design_dim == 0 {
            return Err(Error::invalid("external objective needs a design dimension"));
        }
        Ok(ExternalObjective {
            command,
            timeout: Duration::from_secs_f64(timeout_seconds),
            bounds: Bounds::unit(design_dim),
            known_optimum: None,
            session: Mutex::new(None),
        })
    }

    pub fn with_known_optimum(mut self, optimum: KnownOptimum) -> Self {
        self.known_optimum = Some(optimum);
        self
    }

    fn round_trip(&self, session: &mut Session, x: &[f64], z: &Fidelity, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let id = session.next_id;
        session.next_id += 1;
        let request = Request {
            id,
            x: x.to_vec(),
            z: z.0,
            seed,
        };
        let mut line = serde_json::to_string(&request).expect("requests serialize");
        line.push('\n');
        if let Err(e) = session.stdin.write_all(line.as_bytes()).and_then(|_| session.stdin.flush()) {
            return Err(self.exited(session).unwrap_or(ObjectiveError::Io(e)));
        }

        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match session.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ObjectiveError::Io(e)),
                Err(RecvTimeoutError::Timeout) => {
                    session.kill();
                    return Err(ObjectiveError::Timeout {
                        seconds: self.timeout.as_secs_f64(),
                        stderr: session.stderr(),
                    });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.exited(session).unwrap_or_else(|| ObjectiveError::Exited {
                        status: "closed stdout".into(),
                        stderr: session.stderr(),
                    }));
                }
            };
            if !line.trim_start().starts_with('{') {
                continue;
            }
            let response: Response = serde_json::from_str(line.trim()).map_err(|e| ObjectiveError::Protocol {
                reason: format!("malformed response ({e})"),
                line: line.clone(),
            })?;
            if response.id != id {
                return Err(ObjectiveError::Protocol {
                    reason: format!("expected id {id}, got {}", response.id),
                    line,
                });
            }
            if !response.y.is_finite() {
                return Err(ObjectiveError::NonFinite(response.y));
            }
            if let Some(c) = response.cost {
                if !(c.is_finite() && c > 0.0) {
                    return Err(ObjectiveError::Protocol {
                        reason: format!("cost must be positive, got {c}"),
                        line,
                    });
                }
            }
            return Ok(Evaluation {
                y: response.y,
                cost: response.cost,
            });
        }
    }

    fn exited(&self, session: &mut Session) -> Option<ObjectiveError> {
        // give the child a moment to finish exiting after closing its pipes
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(status)) = session.child.try_wait() {
                thread::sleep(Duration::from_millis(20));
                return Some(ObjectiveError::Exited {
                    status: status.to_string(),
                    stderr: session.stderr(),
                });
            }
            thread::sleep(Duration::from_millis(10));
        }
        None
    }
}

impl Objective for ExternalObjective {
    fn name(&self) -> &str {
        "external"
    }

    fn design_bounds(&self) -> Bounds {
        self.bounds.clone()
    }

    fn evaluate(&self, x: &[f64], z: &Fidelity, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Session::spawn(&self.command)?);
        }
        let session = guard.as_mut().expect("session started above");
        let result = self.round_trip(session, x, z, seed);
        if result.is_err() {
            if let Some(mut s) = guard.take() {
                s.kill();
            }
        }
        result
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        self.known_optimum.clone()
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.session.lock() {
            if let Some(mut s) = guard.take() {
                s.kill();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let r = Request {
            id: 3,
            x: vec![0.5, 0.25],
            z: [1.0, 0.0],
            seed: 9,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":3,"x":[0.5,0.25],"z":[1.0,0.0],"seed":9}"#
        );
        let resp: Response = serde_json::from_str(r#"{"id": 3, "y": -1.5}"#).unwrap();
        assert_eq!(resp.cost, None);
        let resp: Response = serde_json::from_str(r#"{"id": 3, "y": -1.5, "cost": 0.6}"#).unwrap();
        assert_eq!(resp.cost, Some(0.6));
    }

    #[test]
    fn constructor_validation() {
        assert!(ExternalObjective::new(vec![], 2, 1.0).is_err());
        assert!(ExternalObjective::new(vec!["true".into()], 2, 0.0).is_err());
        assert!(ExternalObjective::new(vec!["true".into()], 0, 1.0).is_err());
    }

    #[test]
    fn missing_program_is_an_io_error() {
        let o = ExternalObjective::new(vec!["/nonexistent/evaluator".into()], 1, 1.0).unwrap();
        assert!(matches!(o.evaluate(&[0.5], &Fidelity::TARGET, 0), Err(ObjectiveError::Io(_))));
    }
}
