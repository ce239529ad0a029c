//! Newline-delimited JSON protocol for external twin simulators.
//!
//! The child prints a handshake `{"protocol":"twinproto/1","dims":[d_0,..,d_T]}`
//! on start, then answers each request line
//! `{"id":7,"x0":[..],"actions":[..],"seed":123}` with either
//! `{"id":7,"states":[[..],..]}` or `{"id":7,"error":"..."}`. Responses may
//! arrive in any order. Closing the child's stdin ends the session.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::synth::{request_seed, select_x0};
use crate::trajectory::{Provenance, SchemaSpec, TwinDataset, TwinTrajectory};

pub const PROTOCOL: &str = "twinproto/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinRequest {
    pub id: u64,
    pub x0: Vec<f64>,
    pub actions: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TwinResponse {
    States { id: u64, states: Vec<Vec<f64>> },
    Error { id: u64, error: String },
}

impl TwinResponse {
    pub fn parse(line: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::Protocol(format!("malformed response line {line:?}: {e}")))?;
        let id = v
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Protocol(format!("response without integer id: {line:?}")))?;
        if let Some(err) = v.get("error") {
            return Ok(TwinResponse::Error {
                id,
                error: err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string()),
            });
        }
        let states =
            v.get("states").ok_or_else(|| Error::Protocol(format!("response {id} has neither states nor error")))?;
        let states: Vec<Vec<f64>> = serde_json::from_value(states.clone())
            .map_err(|e| Error::Protocol(format!("response {id}: states are not numeric vectors: {e}")))?;
        Ok(TwinResponse::States { id, states })
    }

    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct States<'a> {
            id: u64,
            states: &'a [Vec<f64>],
        }
        #[derive(Serialize)]
        struct Failure<'a> {
            id: u64,
            error: &'a str,
        }
        match self {
            TwinResponse::States { id, states } => serde_json::to_string(&States { id: *id, states }),
            TwinResponse::Error { id, error } => serde_json::to_string(&Failure { id: *id, error }),
        }
        .expect("response serialises")
    }
}

/// Program plus arguments, split on whitespace (no shell quoting).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwinCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl std::str::FromStr for TwinCommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| Error::invalid("empty twin command"))?;
        Ok(TwinCommand { program, args: parts.collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Maximum wait for the handshake and for each response.
    pub timeout: Duration,
    /// Requests allowed in flight.
    pub window: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { timeout: Duration::from_secs(30), window: 64 }
    }
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl Session {
    fn spawn(cmd: &TwinCommand) -> Result<Self> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start twin {:?}: {e}", cmd.program)))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session { child, stdin, lines: rx })
    }

    fn recv(&self, timeout: Duration) -> std::result::Result<String, Option<Error>> {
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(Some(Error::Protocol(format!("reading twin output: {e}")))),
                Err(RecvTimeoutError::Timeout) => return Err(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Some(Error::Protocol("twin closed its output early".into())))
                }
            }
        }
    }

    fn send(&mut self, req: &TwinRequest) -> Result<()> {
        let stdin = self.stdin.as_mut().expect("stdin open during session");
        let mut line = serde_json::to_vec(req)?;
        line.push(b'\n');
        stdin
            .write_all(&line)
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Protocol(format!("writing request {}: {e}", req.id)))
    }

    /// Closes stdin and waits up to `grace` for a clean exit, then kills.
    fn shutdown(mut self, grace: Duration) {
        drop(self.stdin.take());
        let start = Instant::now();
        while start.elapsed() < grace {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Collects `n` twin trajectories for `actions` from an external process.
///
/// The x0 values are drawn from `pool` without replacement and request `i`
/// carries seed [`request_seed`]`(master, i)`, so the result matches
/// [`crate::synth::generate_twin`] for a twin that simulates the same way.
/// Output keeps request order.
pub fn run_external_twin(
    cmd: &TwinCommand,
    schema: &SchemaSpec,
    pool: &[Vec<f64>],
    actions: &[u32],
    n: usize,
    master: u64,
    opts: SessionOptions,
) -> Result<TwinDataset> {
    let chosen = select_x0(pool.len(), n, master)?;
    let mut session = Session::spawn(cmd)?;
    match collect(&mut session, schema, pool, actions, &chosen, master, opts) {
        Ok(records) => {
            session.shutdown(opts.timeout);
            Ok(TwinDataset {
                schema: schema.clone(),
                actions: actions.to_vec(),
                records,
                provenance: Provenance { source: Some(format!("twin-cmd:{}", cmd.program)), seed: Some(master) },
            })
        }
        Err(e) => {
            session.kill();
            Err(e)
        }
    }
}

fn collect(
    session: &mut Session,
    schema: &SchemaSpec,
    pool: &[Vec<f64>],
    actions: &[u32],
    chosen: &[usize],
    master: u64,
    opts: SessionOptions,
) -> Result<Vec<TwinTrajectory>> {
    let n = chosen.len();
    let handshake = session
        .recv(opts.timeout)
        .map_err(|e| e.unwrap_or(Error::Protocol("no handshake from twin before timeout".into())))?;
    let hs: Handshake = serde_json::from_str(&handshake)
        .map_err(|e| Error::Protocol(format!("malformed handshake {handshake:?}: {e}")))?;
    if hs.protocol != PROTOCOL {
        return Err(Error::Protocol(format!("unsupported protocol {:?}", hs.protocol)));
    }
    if hs.dims != schema.dims {
        return Err(Error::Protocol(format!("twin reports dims {:?}, schema has {:?}", hs.dims, schema.dims)));
    }

    let window = opts.window.max(1);
    let mut results: Vec<Option<Vec<Vec<f64>>>> = vec![None; n];
    let mut pending: HashMap<u64, usize> = HashMap::new();
    let mut next = 0usize;
    let mut done = 0usize;
    while done < n {
        while next < n && pending.len() < window {
            let req = TwinRequest {
                id: next as u64,
                x0: pool[chosen[next]].clone(),
                actions: actions.to_vec(),
                seed: request_seed(master, next as u64),
            };
            session.send(&req)?;
            pending.insert(req.id, next);
            next += 1;
        }
        let line =
            session.recv(opts.timeout).map_err(|e| e.unwrap_or(Error::Timeout { completed: done, requested: n }))?;
        let (id, states) = match TwinResponse::parse(&line)? {
            TwinResponse::Error { id, error } => {
                return Err(Error::Protocol(format!("twin failed request {id}: {error}")))
            }
            TwinResponse::States { id, states } => (id, states),
        };
        let slot =
            pending.remove(&id).ok_or_else(|| Error::Protocol(format!("duplicate or unknown response id {id}")))?;
        check_states(&states, actions.len(), schema).map_err(|m| Error::Protocol(format!("response {id}: {m}")))?;
        results[slot] = Some(states);
        done += 1;
    }
    Ok(results
        .into_iter()
        .zip(chosen)
        .map(|(states, &k)| TwinTrajectory {
            x0: pool[k].clone(),
            actions: actions.to_vec(),
            states: states.expect("every request answered"),
        })
        .collect())
}

fn check_states(states: &[Vec<f64>], t: usize, schema: &SchemaSpec) -> std::result::Result<(), String> {
    if states.len() != t {
        return Err(format!("expected {t} states, got {}", states.len()));
    }
    for (i, x) in states.iter().enumerate() {
        let s = i + 1;
        if x.len() != schema.dims[s] {
            return Err(format!("dimension mismatch in states[{i}]: expected {}, got {}", schema.dims[s], x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite value in states[{i}]"));
        }
    }
    Ok(())
}

/// Serves the protocol on the given streams until the input ends.
///
/// `handler` maps a request to its states or an error message. Lines that do
/// not parse as requests are answered with an error; when the id cannot be
/// recovered it is reported as 0.
pub fn serve_twin<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    dims: &[usize],
    mut handler: impl FnMut(&TwinRequest) -> std::result::Result<Vec<Vec<f64>>, String>,
) -> std::io::Result<()> {
    let hs = Handshake { protocol: PROTOCOL.into(), dims: dims.to_vec() };
    writeln!(output, "{}", serde_json::to_string(&hs).expect("handshake serialises"))?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<TwinRequest>(&line) {
            Ok(req) => match handler(&req) {
                Ok(states) => TwinResponse::States { id: req.id, states },
                Err(error) => TwinResponse::Error { id: req.id, error },
            },
            Err(e) => TwinResponse::Error {
                id: serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0),
                error: format!("malformed request: {e}"),
            },
        };
        writeln!(output, "{}", response.to_line())?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_parsing() {
        assert_eq!(
            TwinResponse::parse(r#"{"id":3,"states":[[1.5,2]]}"#).unwrap(),
            TwinResponse::States { id: 3, states: vec![vec![1.5, 2.0]] }
        );
        assert_eq!(
            TwinResponse::parse(r#"{"id":4,"error":"boom"}"#).unwrap(),
            TwinResponse::Error { id: 4, error: "boom".into() }
        );
        assert!(TwinResponse::parse("not json").is_err());
        assert!(TwinResponse::parse(r#"{"states":[]}"#).is_err());
        assert!(TwinResponse::parse(r#"{"id":1}"#).is_err());
        assert!(TwinResponse::parse(r#"{"id":1,"states":[["x"]]}"#).is_err());
    }

    #[test]
    fn float_lines_roundtrip() {
        let r = TwinResponse::States { id: 0, states: vec![vec![0.1 + 0.2, 1e-300, -3.25]] };
        assert_eq!(TwinResponse::parse(&r.to_line()).unwrap(), r);
    }

    #[test]
    fn server_answers_in_order() {
        let input = "{\"id\":0,\"x0\":[1.0],\"actions\":[1],\"seed\":5}\n\nbad\n{\"id\":2,\"x0\":[1.0],\"actions\":[],\"seed\":5}\n";
        let mut out = Vec::new();
        serve_twin(input.as_bytes(), &mut out, &[1, 1], |req| {
            if req.actions.is_empty() {
                Err("no actions".into())
            } else {
                Ok(vec![vec![req.seed as f64]])
            }
        })
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"protocol":"twinproto/1","dims":[1,1]}"#);
        assert_eq!(lines[1], r#"{"id":0,"states":[[5.0]]}"#);
        assert!(lines[2].contains("malformed request"));
        assert_eq!(lines[3], r#"{"id":2,"error":"no actions"}"#);
    }

    #[test]
    fn command_parsing() {
        let c: TwinCommand = "twin --mode correct".parse().unwrap();
        assert_eq!(c.program, "twin");
        assert_eq!(c.args, vec!["--mode", "correct"]);
        assert!("  ".parse::<TwinCommand>().is_err());
    }
}
