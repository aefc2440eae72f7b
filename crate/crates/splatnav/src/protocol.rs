//! Length-prefixed JSON framing, request decoding and per-connection
//! sessions.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use splatnav_core::env::{Env, Observation, Stage, StepInfo, StepResult};

/// Largest accepted frame payload (16 MiB).
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    Oversized(usize),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("server replied with {kind} error: {message}")]
    Remote { kind: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::Oversized(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => e.into(),
    })?;
    Ok(Some(buf))
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), ProtocolError> {
    if payload.len() > MAX_FRAME {
        return Err(ProtocolError::Oversized(payload.len()));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Reset {
        seed: u64,
        #[serde(default)]
        stage: Option<u8>,
    },
    Step {
        action: f64,
    },
    Close,
}

const COMMANDS: [&str; 3] = ["reset", "step", "close"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsMessage {
    /// Base64 of row-major RGB8.
    pub image: String,
    pub h: usize,
    pub w: usize,
    pub state: [f64; 8],
}

impl From<&Observation> for ObsMessage {
    fn from(o: &Observation) -> Self {
        ObsMessage {
            image: base64::engine::general_purpose::STANDARD.encode(&o.image),
            h: o.height,
            w: o.width,
            state: o.state,
        }
    }
}

impl ObsMessage {
    pub fn decode_image(&self) -> Result<Vec<u8>, ProtocolError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.image)
            .map_err(|e| ProtocolError::Malformed(format!("image is not base64: {e}")))?;
        if bytes.len() != 3 * self.h * self.w {
            return Err(ProtocolError::Malformed(format!(
                "image has {} bytes, expected {}",
                bytes.len(),
                3 * self.h * self.w
            )));
        }
        Ok(bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMessage {
    pub obs: ObsMessage,
    pub reward: f64,
    pub done: bool,
    pub reason: String,
    pub info: StepInfo,
}

impl From<&StepResult> for StepMessage {
    fn from(r: &StepResult) -> Self {
        StepMessage {
            obs: ObsMessage::from(&r.observation),
            reward: r.reward,
            done: r.terminated,
            reason: r.reason.as_str().to_string(),
            info: r.info.clone(),
        }
    }
}

pub fn error_reply(kind: &str, message: impl Into<String>) -> Value {
    json!({ "error": message.into(), "kind": kind })
}

/// What the connection should do after a reply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Close,
}

/// One connection's environment.
pub struct Session {
    env: Env,
}

impl Session {
    pub fn new(env: Env) -> Self {
        Session { env }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Decodes and executes one request payload.
    pub fn handle(&mut self, payload: &[u8]) -> (Value, Flow) {
        let value: Value = match serde_json::from_slice(payload) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return (error_reply("malformed", "request must be a JSON object"), Flow::Close),
            Err(e) => return (error_reply("malformed", format!("invalid JSON: {e}")), Flow::Close),
        };
        let cmd = value.get("cmd").and_then(Value::as_str).map(str::to_owned);
        let req: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                return match cmd {
                    Some(c) if !COMMANDS.contains(&c.as_str()) => {
                        (error_reply("unknown_command", format!("unknown cmd {c:?}")), Flow::Continue)
                    }
                    None => (error_reply("bad_request", "missing string field \"cmd\""), Flow::Continue),
                    Some(_) => (error_reply("bad_request", e.to_string()), Flow::Continue),
                };
            }
        };
        match req {
            Request::Reset { seed, stage } => {
                let stage = match stage.map(Stage::try_from).transpose() {
                    Ok(s) => s.unwrap_or(self.env.config().stage),
                    Err(e) => return (error_reply("bad_request", e.to_string()), Flow::Continue),
                };
                match self.env.reset(seed, stage) {
                    Ok(obs) => (json!({ "obs": ObsMessage::from(&obs) }), Flow::Continue),
                    Err(e) => (error_reply("env", e.to_string()), Flow::Continue),
                }
            }
            Request::Step { action } => match self.env.step(action) {
                Ok(r) => match serde_json::to_value(StepMessage::from(&r)) {
                    Ok(v) => (v, Flow::Continue),
                    Err(e) => (error_reply("internal", e.to_string()), Flow::Continue),
                },
                Err(e @ splatnav_core::Error::EpisodeInactive(_)) => {
                    (error_reply("protocol", e.to_string()), Flow::Continue)
                }
                Err(e) => (error_reply("bad_request", e.to_string()), Flow::Continue),
            },
            Request::Close => (json!({ "ok": true }), Flow::Close),
        }
    }

    /// Serves frames until the peer closes, sends `close`, or sends a
    /// malformed frame. Malformed and oversized frames get an error reply
    /// before the connection is dropped.
    pub fn run<S: Read + Write>(&mut self, stream: &mut S) -> Result<(), ProtocolError> {
        loop {
            let payload = match read_frame(stream) {
                Ok(Some(p)) => p,
                Ok(None) => return Ok(()),
                Err(e @ ProtocolError::Oversized(_)) => {
                    let reply = error_reply("malformed", e.to_string());
                    write_frame(stream, reply.to_string().as_bytes())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let (reply, flow) = self.handle(&payload);
            write_frame(stream, reply.to_string().as_bytes())?;
            if flow == Flow::Close {
                return Ok(());
            }
        }
    }
}

/// Blocking client for one session.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client { stream })
    }

    /// Sends raw bytes as one frame and returns the parsed reply.
    pub fn request_raw(&mut self, payload: &[u8]) -> Result<Value, ProtocolError> {
        write_frame(&mut self.stream, payload)?;
        self.read_reply()
    }

    pub fn request(&mut self, msg: &Value) -> Result<Value, ProtocolError> {
        self.request_raw(msg.to_string().as_bytes())
    }

    pub fn read_reply(&mut self) -> Result<Value, ProtocolError> {
        let bytes = read_frame(&mut self.stream)?.ok_or(ProtocolError::Truncated)?;
        serde_json::from_slice(&bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn stream_mut(&mut self) -> &mut TcpStream {
        &mut self.stream
    }

    pub fn reset(&mut self, seed: u64, stage: Option<u8>) -> Result<ObsMessage, ProtocolError> {
        let mut msg = json!({ "cmd": "reset", "seed": seed });
        if let Some(s) = stage {
            msg["stage"] = json!(s);
        }
        let v = ok_or_remote(self.request(&msg)?)?;
        serde_json::from_value(v["obs"].clone()).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn step(&mut self, action: f64) -> Result<StepMessage, ProtocolError> {
        let v = ok_or_remote(self.request(&json!({ "cmd": "step", "action": action }))?)?;
        serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn close(mut self) -> Result<(), ProtocolError> {
        ok_or_remote(self.request(&json!({ "cmd": "close" }))?).map(drop)
    }
}

fn ok_or_remote(v: Value) -> Result<Value, ProtocolError> {
    match v.get("error") {
        Some(msg) => Err(ProtocolError::Remote {
            kind: v["kind"].as_str().unwrap_or("unknown").to_string(),
            message: msg.as_str().unwrap_or_default().to_string(),
        }),
        None => Ok(v),
    }
}
