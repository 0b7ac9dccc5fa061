//! Line-delimited JSON bridge to externally hosted models.
//!
//! The client spawns the model server as a child process and talks to it
//! over stdin/stdout, one JSON object per line:
//!
//! ```text
//! -> {"op":"capabilities","id":0}
//! <- {"id":0,"has_decision_function":true,"has_predict_proba":true,"class_count":2,"model_tag":"svc-rbf"}
//! -> {"op":"margin","id":7,"X":[[0.1,-1.2],[0.3,0.0]]}
//! <- {"id":7,"Y":[[-0.4,0.4],[1.2,-1.2]]}
//! -> {"op":"predict","id":8,"X":[[0.1,-1.2]]}
//! <- {"id":8,"y":[1]}
//! -> {"op":"shutdown","id":9}
//! <- {"id":9,"ok":true}
//! ```
//!
//! Errors come back as `{"id":k,"error":"message"}`. Servers must keep logs
//! on stderr: any stdout line that is not the expected response is a
//! protocol error. Floats are written in shortest round-trip form, so every
//! finite double survives the trip unchanged.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::learners::argmax_rows;
use crate::model::{Capabilities, ScoreProvider};

/// Rows per request envelope.
pub const CHUNK_ROWS: usize = 4096;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Tolerance on probability row sums.
pub const PROBA_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeCapabilities {
    pub has_decision_function: bool,
    pub has_predict_proba: bool,
    pub class_count: usize,
    pub model_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreOp {
    Margin,
    Proba,
}

impl ScoreOp {
    fn name(self) -> &'static str {
        match self {
            ScoreOp::Margin => "margin",
            ScoreOp::Proba => "proba",
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    op: &'a str,
    id: u64,
    #[serde(rename = "X", skip_serializing_if = "Option::is_none")]
    x: Option<Vec<&'a [f64]>>,
}

fn rows_of(x: &Array2<f64>) -> Vec<&[f64]> {
    x.as_slice()
        .map(|s| {
            if x.ncols() == 0 {
                Vec::new()
            } else {
                s.chunks(x.ncols()).collect()
            }
        })
        .unwrap_or_default()
}

/// Serializes one request envelope, newline included.
pub fn encode_request(op: &str, id: u64, x: Option<&Array2<f64>>) -> String {
    let owned;
    let x = match x {
        Some(m) if m.is_standard_layout() => Some(rows_of(m)),
        Some(m) => {
            owned = m.as_standard_layout().to_owned();
            Some(rows_of(&owned))
        }
        None => None,
    };
    let mut line = serde_json::to_string(&Request { op, id, x }).expect("finite floats serialize");
    line.push('\n');
    line
}

type LineSource = Receiver<std::io::Result<String>>;

/// Strict request/response client over any line transport.
pub struct BridgeClient {
    writer: Box<dyn Write + Send>,
    lines: LineSource,
    child: Option<Child>,
    next_id: u64,
    lines_read: usize,
    timeout: Duration,
    caps: Option<BridgeCapabilities>,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("next_id", &self.next_id)
            .field("caps", &self.caps)
            .finish()
    }
}

impl BridgeClient {
    /// Spawns `command` (program followed by arguments) and performs the
    /// capability handshake.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("failed to spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_io(BufReader::new(stdout), stdin, timeout);
        client.child = Some(child);
        client.handshake()?;
        Ok(client)
    }

    /// Wraps an existing transport without performing the handshake.
    pub fn from_io<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self {
            writer: Box::new(writer),
            lines: rx,
            child: None,
            next_id: 0,
            lines_read: 0,
            timeout,
            caps: None,
        }
    }

    pub fn capabilities(&self) -> Option<&BridgeCapabilities> {
        self.caps.as_ref()
    }

    fn send(&mut self, op: &str, x: Option<&Array2<f64>>) -> Result<u64> {
        let id = self.next_id;
        self.next_id += 1;
        let line = encode_request(op, id, x);
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Protocol(format!("write to endpoint failed: {e}")))?;
        Ok(id)
    }

    fn receive(&mut self, id: u64) -> Result<Value> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Protocol(format!("read from endpoint failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Protocol("endpoint closed its output".into()))
            }
        };
        self.lines_read += 1;
        let line_no = self.lines_read;
        let text = line.trim_end_matches(['\n', '\r']);
        let shown: String = text.chars().take(120).collect();
        let value: Value = serde_json::from_str(text).map_err(|e| {
            Error::Protocol(format!(
                "malformed JSON on response line {line_no}, byte {}: {e} (line: `{shown}`)",
                e.column()
            ))
        })?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Protocol(format!(
                "response line {line_no} is not a JSON object: `{shown}`"
            )));
        };
        match obj.get("id").and_then(Value::as_u64) {
            Some(got) if got == id => {}
            Some(got) => {
                return Err(Error::Protocol(format!(
                    "response line {line_no} answers id {got}, expected {id}"
                )))
            }
            None => {
                return Err(Error::Protocol(format!(
                    "response line {line_no} has no id: `{shown}`"
                )))
            }
        }
        if let Some(msg) = obj.get("error") {
            let msg = msg
                .as_str()
                .map(str::to_string)
                .unwrap_or_else(|| msg.to_string());
            return Err(Error::Remote(msg));
        }
        Ok(value)
    }

    /// Sends `capabilities` and validates the reply.
    pub fn handshake(&mut self) -> Result<BridgeCapabilities> {
        let id = self.send("capabilities", None)?;
        let v = self.receive(id)?;
        let caps: BridgeCapabilities = serde_json::from_value(v)
            .map_err(|e| Error::Protocol(format!("bad capabilities response: {e}")))?;
        if !caps.has_decision_function && !caps.has_predict_proba {
            return Err(Error::Protocol(format!(
                "endpoint `{}` reports neither decision function nor probabilities",
                caps.model_tag
            )));
        }
        if caps.class_count < 2 {
            return Err(Error::Protocol(format!(
                "endpoint reports {} classes",
                caps.class_count
            )));
        }
        self.caps = Some(caps.clone());
        Ok(caps)
    }

    fn caps_or_err(&self) -> Result<&BridgeCapabilities> {
        self.caps
            .as_ref()
            .ok_or_else(|| Error::Protocol("handshake not performed".into()))
    }

    /// Margins (`n × C`, or `n × 1` for binary single-score models) or
    /// probabilities (`n × C`, rows summing to one), chunked by
    /// [`CHUNK_ROWS`] and re-concatenated in order.
    pub fn batch_score(&mut self, op: ScoreOp, x: &Array2<f64>) -> Result<Array2<f64>> {
        let caps = self.caps_or_err()?.clone();
        match op {
            ScoreOp::Margin if !caps.has_decision_function => {
                return Err(Error::Protocol("endpoint has no decision function".into()))
            }
            ScoreOp::Proba if !caps.has_predict_proba => {
                return Err(Error::Protocol("endpoint has no probabilities".into()))
            }
            _ => {}
        }
        let c = caps.class_count;
        let mut rows: Vec<f64> = Vec::with_capacity(x.nrows() * c);
        let mut width = None;
        for start in (0..x.nrows()).step_by(CHUNK_ROWS) {
            let end = (start + CHUNK_ROWS).min(x.nrows());
            let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
            let id = self.send(op.name(), Some(&chunk))?;
            let v = self.receive(id)?;
            let y = v
                .get("Y")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol(format!("response {id} lacks `Y`")))?;
            if y.len() != chunk.nrows() {
                return Err(Error::Protocol(format!(
                    "response {id} has {} rows, request had {}",
                    y.len(),
                    chunk.nrows()
                )));
            }
            for (r, row) in y.iter().enumerate() {
                let vals: Vec<f64> = row
                    .as_array()
                    .ok_or_else(|| {
                        Error::Protocol(format!("response {id} row {r} is not an array"))
                    })?
                    .iter()
                    .map(|v| v.as_f64())
                    .collect::<Option<_>>()
                    .ok_or_else(|| {
                        Error::Protocol(format!(
                            "response {id} row {r} has non-finite or non-numeric values"
                        ))
                    })?;
                let w = *width.get_or_insert(vals.len());
                let ok_width = match op {
                    ScoreOp::Margin => vals.len() == c || (c == 2 && vals.len() == 1),
                    ScoreOp::Proba => vals.len() == c,
                };
                if !ok_width || vals.len() != w {
                    return Err(Error::Protocol(format!(
                        "response {id} row {r} has {} columns",
                        vals.len()
                    )));
                }
                if op == ScoreOp::Proba {
                    let s: f64 = vals.iter().sum();
                    if (s - 1.0).abs() > PROBA_SUM_TOL || vals.iter().any(|&p| p < 0.0) {
                        return Err(Error::Protocol(format!(
                            "response {id} row {r}: probabilities sum to {s}"
                        )));
                    }
                }
                rows.extend(vals);
            }
        }
        let w = width.unwrap_or(c);
        Array2::from_shape_vec((x.nrows(), w), rows).map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn predict(&mut self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let c = self.caps_or_err()?.class_count;
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(CHUNK_ROWS) {
            let end = (start + CHUNK_ROWS).min(x.nrows());
            let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
            let id = self.send("predict", Some(&chunk))?;
            let v = self.receive(id)?;
            let y = v
                .get("y")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol(format!("response {id} lacks `y`")))?;
            if y.len() != chunk.nrows() {
                return Err(Error::Protocol(format!(
                    "response {id} has {} labels, request had {} rows",
                    y.len(),
                    chunk.nrows()
                )));
            }
            for label in y {
                match label.as_u64() {
                    Some(l) if (l as usize) < c => out.push(l as usize),
                    _ => {
                        return Err(Error::Protocol(format!(
                            "response {id} has invalid label {label}"
                        )))
                    }
                }
            }
        }
        Ok(out)
    }

    /// Sends `shutdown` and waits for the child to exit.
    pub fn shutdown(mut self) -> Result<()> {
        let id = self.send("shutdown", None)?;
        let v = self.receive(id)?;
        if v.get("ok").and_then(Value::as_bool) != Some(true) {
            return Err(Error::Protocol("shutdown not acknowledged".into()));
        }
        if let Some(mut child) = self.child.take() {
            let status = child
                .wait()
                .map_err(|e| Error::Protocol(format!("waiting for endpoint: {e}")))?;
            if !status.success() {
                return Err(Error::Protocol(format!("endpoint exited with {status}")));
            }
        }
        Ok(())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// [`ScoreProvider`] backed by a bridge endpoint. Calls are serialized
/// through a mutex: one request in flight per endpoint.
#[derive(Debug)]
pub struct BridgeProvider {
    client: Mutex<BridgeClient>,
    caps: BridgeCapabilities,
}

impl BridgeProvider {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let client = BridgeClient::spawn(command, timeout)?;
        Self::new(client)
    }

    /// Takes a client that has completed its handshake.
    pub fn new(client: BridgeClient) -> Result<Self> {
        let caps = client.caps_or_err()?.clone();
        Ok(Self {
            client: Mutex::new(client),
            caps,
        })
    }

    pub fn bridge_capabilities(&self) -> &BridgeCapabilities {
        &self.caps
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        self.lock()?.predict(x)
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, BridgeClient>> {
        self.client
            .lock()
            .map_err(|_| Error::Protocol("bridge client poisoned by an earlier panic".into()))
    }
}

impl ScoreProvider for BridgeProvider {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_margin: self.caps.has_decision_function,
            has_probability: self.caps.has_predict_proba,
        }
    }

    fn class_count(&self) -> usize {
        self.caps.class_count
    }

    fn tag(&self) -> String {
        format!("bridge:{}", self.caps.model_tag)
    }

    fn margins(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.lock()?.batch_score(ScoreOp::Margin, x)
    }

    fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.lock()?.batch_score(ScoreOp::Proba, x)
    }
}

fn parse_rows(v: &Value) -> std::result::Result<Array2<f64>, String> {
    let rows = v
        .get("X")
        .and_then(Value::as_array)
        .ok_or("request lacks `X`")?;
    let d = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * d);
    for (r, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or(format!("row {r} is not an array"))?;
        if row.len() != d {
            return Err(format!("row {r} has {} values, expected {d}", row.len()));
        }
        for v in row {
            data.push(
                v.as_f64()
                    .ok_or(format!("row {r} has a non-numeric value"))?,
            );
        }
    }
    Array2::from_shape_vec((rows.len(), d), data).map_err(|e| e.to_string())
}

fn matrix_json(m: &Array2<f64>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|r| Value::Array(r.iter().map(|&v| json!(v)).collect()))
            .collect(),
    )
}

/// Answers protocol requests for `provider` until `shutdown` or end of
/// input. Malformed requests get error envelopes; the loop never panics on
/// client input.
pub fn serve<R: BufRead, W: Write>(
    provider: &dyn ScoreProvider,
    reader: R,
    mut writer: W,
) -> Result<()> {
    let caps = provider.capabilities();
    let reply = |w: &mut W, v: Value| -> Result<()> {
        let mut line = serde_json::to_string(&v).expect("json value serializes");
        line.push('\n');
        w.write_all(line.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))
    };
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Protocol(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                reply(
                    &mut writer,
                    json!({"id": null, "error": format!("malformed request: {e}")}),
                )?;
                continue;
            }
        };
        let id = req.get("id").cloned().unwrap_or(Value::Null);
        let op = req.get("op").and_then(Value::as_str).unwrap_or("");
        let result: std::result::Result<Value, String> = match op {
            "capabilities" => Ok(json!({
                "id": id,
                "has_decision_function": caps.has_margin,
                "has_predict_proba": caps.has_probability,
                "class_count": provider.class_count(),
                "model_tag": provider.tag(),
            })),
            "margin" | "proba" | "predict" => parse_rows(&req).and_then(|x| {
                let scores = |margin: bool| {
                    if margin {
                        provider.margins(&x)
                    } else {
                        provider.probabilities(&x)
                    }
                    .map_err(|e| e.to_string())
                };
                match op {
                    "margin" if caps.has_margin => {
                        Ok(json!({"id": id, "Y": matrix_json(&scores(true)?)}))
                    }
                    "proba" if caps.has_probability => {
                        Ok(json!({"id": id, "Y": matrix_json(&scores(false)?)}))
                    }
                    "predict" => {
                        let s = scores(caps.has_margin)?;
                        let s = if s.ncols() == 1 {
                            Array2::from_shape_fn((s.nrows(), 2), |(i, c)| {
                                if c == 1 {
                                    s[[i, 0]]
                                } else {
                                    -s[[i, 0]]
                                }
                            })
                        } else {
                            s
                        };
                        Ok(json!({"id": id, "y": argmax_rows(&s)}))
                    }
                    _ => Err(format!("operation `{op}` not supported by this model")),
                }
            }),
            "shutdown" => {
                reply(&mut writer, json!({"id": id, "ok": true}))?;
                return Ok(());
            }
            other => Err(format!("unknown op `{other}`")),
        };
        match result {
            Ok(v) => reply(&mut writer, v)?,
            Err(msg) => reply(&mut writer, json!({"id": id, "error": msg}))?,
        }
    }
    Ok(())
}
