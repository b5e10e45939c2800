//! Client side of the model bridge protocol.
//!
//! Newline-delimited JSON over a spawned process's stdio or a TCP stream:
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"version":1,"labels":["blues","jazz",...]}
//! -> {"id":7,"op":"classify","sample_rate":22050,"samples_b64":"..."}
//! <- {"id":7,"label":"jazz","score":0.7,"scores":{"blues":0.3,"jazz":0.7}}
//! ```
//!
//! Samples travel as base64 of little-endian float32, exactly `4 * n` bytes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Classification, ClassifierHandle, Model, ModelKind};
use crate::error::{Error, Result};
use crate::signal::TimeSignal;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeEndpoint {
    /// Program and arguments to spawn; the protocol runs over its stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a listening bridge.
    Tcp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeOptions {
    /// Per-request response timeout.
    pub timeout: Duration,
    /// Time allowed for the hello exchange (model loading happens here).
    pub handshake_timeout: Duration,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            handshake_timeout: Duration::from_secs(600),
        }
    }
}

#[derive(Serialize)]
struct Hello {
    op: &'static str,
    version: u32,
}

#[derive(Deserialize)]
struct HelloReply {
    version: u32,
    #[serde(default)]
    labels: Vec<String>,
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    id: u64,
    op: &'static str,
    sample_rate: u32,
    samples_b64: &'a str,
}

#[derive(Deserialize)]
struct ClassifyReply {
    id: u64,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    scores: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    error: Option<String>,
}

pub fn encode_samples(samples: &[f32]) -> String {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_samples(b64: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Protocol(format!(
            "{} sample bytes is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// A connected bridge session.
pub struct BridgeModel {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    labels: Vec<String>,
    next_id: u64,
    timeout: Duration,
}

impl BridgeModel {
    pub fn connect(endpoint: &BridgeEndpoint, options: &BridgeOptions) -> Result<Self> {
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) = match endpoint {
            BridgeEndpoint::Command(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| Error::Config("empty bridge command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                (Box::new(stdout), Box::new(stdin), Some(child))
            }
            BridgeEndpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let read_half = stream.try_clone()?;
                (Box::new(read_half), Box::new(stream), None)
            }
        };

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let mut model = BridgeModel {
            writer,
            lines: rx,
            child,
            labels: Vec::new(),
            next_id: 0,
            timeout: options.timeout,
        };
        model.handshake(options.handshake_timeout)?;
        Ok(model)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn send<T: Serialize>(&mut self, message: &T) -> Result<()> {
        let mut line = serde_json::to_vec(message)?;
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("bridge closed the connection".into())),
        }
    }

    fn handshake(&mut self, timeout: Duration) -> Result<()> {
        self.send(&Hello {
            op: "hello",
            version: PROTOCOL_VERSION,
        })?;
        let line = self.receive(timeout)?;
        let reply: HelloReply =
            serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad handshake reply: {e}")))?;
        if reply.version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "bridge speaks version {}, expected {PROTOCOL_VERSION}",
                reply.version
            )));
        }
        self.labels = reply.labels;
        Ok(())
    }

    fn parse_reply(&self, id: u64, line: &str) -> Result<Classification> {
        let reply: ClassifyReply =
            serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad classify reply: {e}")))?;
        if reply.id != id {
            return Err(Error::Protocol(format!(
                "reply id {} does not match request id {id}",
                reply.id
            )));
        }
        if let Some(message) = reply.error {
            return Err(Error::Protocol(format!("bridge error: {message}")));
        }
        match (reply.label, reply.score, reply.scores) {
            (label, score, Some(scores)) => {
                let top = Classification::from_scores(scores)?;
                if label.as_ref().is_some_and(|l| *l != top.label) || score.is_some_and(|s| s != top.score) {
                    return Err(Error::Protocol("label/score disagree with the argmax of scores".into()));
                }
                Ok(top)
            }
            (Some(label), Some(score), None) => Classification::new(label, score),
            _ => Err(Error::Protocol("reply has neither label+score nor scores".into())),
        }
    }
}

impl Model for BridgeModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Bridge
    }

    fn predict(&mut self, signal: &TimeSignal) -> Result<Classification> {
        self.next_id += 1;
        let id = self.next_id;
        let samples_b64 = encode_samples(signal.samples());
        self.send(&ClassifyRequest {
            id,
            op: "classify",
            sample_rate: signal.sample_rate(),
            samples_b64: &samples_b64,
        })?;
        let line = self.receive(self.timeout)?;
        self.parse_reply(id, &line)
    }
}

impl Drop for BridgeModel {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Connects to a bridge and completes the handshake.
pub fn bridge_classifier(endpoint: &BridgeEndpoint, options: &BridgeOptions) -> Result<ClassifierHandle> {
    Ok(ClassifierHandle::new(BridgeModel::connect(endpoint, options)?))
}
