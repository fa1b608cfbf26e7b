//! Newline-delimited JSON protocol for classifiers that live in another
//! process.
//!
//! ```text
//! → {"type":"hello","version":1}
//! ← {"type":"hello_ack","version":1,"num_classes":C,"input_shape":[H,W,Ch]}
//! → {"type":"eval","id":k,"images":["<base64 f32 LE>", ...]}
//! ← {"type":"eval_ok","id":k,"probs":[[...], ...]}
//! → {"type":"grad","id":k,"image":"<base64>","label":y}
//! ← {"type":"grad_ok","id":k,"grad":"<base64>"}
//! ← {"type":"error","id":k,"message":"..."}
//! ```
//!
//! Image payloads use the channel-major layout of [`ImageTensor`]. The
//! gradient is that of the untargeted cross-entropy loss on `label`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Classifier, ImageShape, ImageTensor, ModelError};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
    },
    HelloAck {
        version: u32,
        num_classes: usize,
        input_shape: [usize; 3],
    },
    Eval {
        id: u64,
        images: Vec<String>,
    },
    EvalOk {
        id: u64,
        probs: Vec<Vec<f64>>,
    },
    Grad {
        id: u64,
        image: String,
        label: usize,
    },
    GradOk {
        id: u64,
        grad: String,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

/// Base64 of the values as little-endian `f32`s.
pub fn encode_floats(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_floats(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("payload of {} bytes is not a whole number of f32s", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
}

/// Where the bridge lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `cmd:program arg ...`, spoken over the child's stdio.
    Command { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("empty tcp address".into());
            }
            Ok(Self::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or("empty bridge command")?;
            Ok(Self::Command { program, args: parts.collect() })
        } else {
            Err(format!("endpoint '{s}' must start with tcp:// or cmd:"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: Endpoint,
    pub timeout: Duration,
}

impl ClientConfig {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint, timeout: DEFAULT_TIMEOUT }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
}

fn spawn_reader<R: io::Read + Send + 'static>(input: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(input);
        loop {
            let mut line = String::new();
            let item = match reader.read_line(&mut line) {
                Ok(0) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "bridge closed the connection")),
                Ok(_) => Ok(line),
                Err(e) => Err(e),
            };
            let done = item.is_err();
            if tx.send(item).is_err() || done {
                return;
            }
        }
    });
    rx
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, ModelError> {
        let transport = |e: io::Error| ModelError::Transport(e.to_string());
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                let _ = stream.set_nodelay(true);
                let reader = stream.try_clone().map_err(transport)?;
                Ok(Self { writer: Box::new(stream), lines: spawn_reader(reader), child: None })
            }
            Endpoint::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ModelError::Transport(format!("cannot start bridge '{program}': {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self { writer: Box::new(stdin), lines: spawn_reader(stdout), child: Some(child) })
            }
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), ModelError> {
        let mut line = serde_json::to_string(msg).expect("messages serialize");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| ModelError::Transport(e.to_string()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, ModelError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => serde_json::from_str(line.trim())
                .map_err(|e| ModelError::Protocol(format!("{e} in {:?}", truncate(&line)))),
            Ok(Err(e)) => Err(ModelError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ModelError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ModelError::Transport("reader stopped".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}

fn is_transport(e: &ModelError) -> bool {
    matches!(e, ModelError::Transport(_) | ModelError::Timeout(_))
}

/// Classifier whose calls are forwarded to a bridge process. Calls on one
/// client are serialized over a single connection.
pub struct ExternalClassifier {
    config: ClientConfig,
    conn: Mutex<Option<Connection>>,
    num_classes: usize,
    shape: ImageShape,
    next_id: AtomicU64,
}

fn handshake(conn: &mut Connection, timeout: Duration) -> Result<(usize, ImageShape), ModelError> {
    conn.send(&Message::Hello { version: PROTOCOL_VERSION })?;
    match conn.recv(timeout)? {
        Message::HelloAck { version, .. } if version != PROTOCOL_VERSION => {
            Err(ModelError::VersionMismatch { expected: PROTOCOL_VERSION, got: version })
        }
        Message::HelloAck { num_classes, input_shape: [h, w, c], .. } => {
            if num_classes == 0 || h * w * c == 0 {
                return Err(ModelError::Protocol("handshake advertised an empty model".into()));
            }
            Ok((num_classes, ImageShape::new(h, w, c)))
        }
        Message::Error { message, .. } => Err(ModelError::Remote(message)),
        other => Err(ModelError::Protocol(format!("expected hello_ack, got {other:?}"))),
    }
}

/// Connects to a bridge and performs the version handshake.
pub fn external_oracle_client(config: ClientConfig) -> Result<ExternalClassifier, ModelError> {
    let mut conn = Connection::open(&config.endpoint)?;
    let (num_classes, shape) = handshake(&mut conn, config.timeout)?;
    Ok(ExternalClassifier { config, conn: Mutex::new(Some(conn)), num_classes, shape, next_id: AtomicU64::new(1) })
}

impl ExternalClassifier {
    fn reconnect(&self) -> Result<Connection, ModelError> {
        let mut conn = Connection::open(&self.config.endpoint)?;
        let (num_classes, shape) = handshake(&mut conn, self.config.timeout)?;
        if (num_classes, shape) != (self.num_classes, self.shape) {
            return Err(ModelError::Protocol("bridge changed its model across reconnects".into()));
        }
        Ok(conn)
    }

    /// One request/reply exchange, retried once on a transport failure.
    fn call(&self, request: impl Fn(u64) -> Message) -> Result<Message, ModelError> {
        let mut guard = self.conn.lock().expect("connection poisoned");
        let mut last = None;
        for _ in 0..2 {
            if guard.is_none() {
                match self.reconnect() {
                    Ok(c) => *guard = Some(c),
                    Err(e) if is_transport(&e) => {
                        last = Some(e);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            let conn = guard.as_mut().expect("connected");
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let reply = conn.send(&request(id)).and_then(|_| conn.recv(self.config.timeout));
            match reply {
                Ok(Message::Error { id: reply_id, message }) if reply_id.is_none() || reply_id == Some(id) => {
                    return Err(ModelError::Remote(message));
                }
                Ok(msg) => {
                    let reply_id = match &msg {
                        Message::EvalOk { id, .. } | Message::GradOk { id, .. } => Some(*id),
                        _ => None,
                    };
                    if reply_id != Some(id) {
                        *guard = None;
                        return Err(ModelError::Protocol(format!("reply {msg:?} does not answer request {id}")));
                    }
                    return Ok(msg);
                }
                Err(e) if is_transport(&e) => {
                    *guard = None;
                    last = Some(e);
                }
                Err(e) => {
                    *guard = None;
                    return Err(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl Classifier for ExternalClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn predict_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            if img.shape() != self.shape {
                return Err(ModelError::ShapeMismatch { expected: self.shape, got: img.shape() });
            }
        }
        let payload: Vec<String> = images.iter().map(|img| encode_floats(img.data())).collect();
        match self.call(|id| Message::Eval { id, images: payload.clone() })? {
            Message::EvalOk { probs, .. } => {
                if probs.len() != images.len() {
                    return Err(ModelError::Protocol(format!(
                        "expected {} probability vectors, got {}",
                        images.len(),
                        probs.len()
                    )));
                }
                if let Some(p) = probs.iter().find(|p| p.len() != self.num_classes) {
                    return Err(ModelError::Protocol(format!(
                        "probability vector of length {} for {} classes",
                        p.len(),
                        self.num_classes
                    )));
                }
                Ok(probs)
            }
            other => Err(ModelError::Protocol(format!("expected eval_ok, got {other:?}"))),
        }
    }

    fn loss_gradient(&self, image: &ImageTensor, label: usize) -> Result<Vec<f64>, ModelError> {
        if image.shape() != self.shape {
            return Err(ModelError::ShapeMismatch { expected: self.shape, got: image.shape() });
        }
        let payload = encode_floats(image.data());
        match self.call(|id| Message::Grad { id, image: payload.clone(), label })? {
            Message::GradOk { grad, .. } => {
                let grad = decode_floats(&grad).map_err(ModelError::Protocol)?;
                if grad.len() != self.shape.len() {
                    return Err(ModelError::Protocol(format!(
                        "gradient has {} values, image has {}",
                        grad.len(),
                        self.shape.len()
                    )));
                }
                Ok(grad)
            }
            other => Err(ModelError::Protocol(format!("expected grad_ok, got {other:?}"))),
        }
    }

    fn supports_gradient(&self) -> bool {
        true
    }
}

/// Server-side knobs; the version is overridable so clients can be tested
/// against a mismatched peer.
#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    pub version: u32,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { version: PROTOCOL_VERSION }
    }
}

fn decode_image(text: &str, shape: ImageShape) -> Result<ImageTensor, String> {
    let data = decode_floats(text)?;
    if data.len() != shape.len() {
        return Err(format!("image has {} values, model expects {}", data.len(), shape.len()));
    }
    ImageTensor::from_clamped(shape, data).map_err(|e| e.to_string())
}

fn handle(msg: Message, model: &dyn Classifier, opts: &ServeOptions) -> Message {
    let shape = model.input_shape();
    match msg {
        Message::Hello { .. } => Message::HelloAck {
            version: opts.version,
            num_classes: model.num_classes(),
            input_shape: [shape.height, shape.width, shape.channels],
        },
        Message::Eval { id, images } => {
            let decoded: Result<Vec<ImageTensor>, String> = images.iter().map(|t| decode_image(t, shape)).collect();
            match decoded.and_then(|imgs| {
                let refs: Vec<&ImageTensor> = imgs.iter().collect();
                model.predict_batch(&refs).map_err(|e| e.to_string())
            }) {
                Ok(probs) => Message::EvalOk { id, probs },
                Err(message) => Message::Error { id: Some(id), message },
            }
        }
        Message::Grad { id, image, label } => {
            match decode_image(&image, shape)
                .and_then(|img| model.loss_gradient(&img, label).map_err(|e| e.to_string()))
            {
                Ok(g) => Message::GradOk { id, grad: encode_floats(&g) },
                Err(message) => Message::Error { id: Some(id), message },
            }
        }
        other => Message::Error { id: None, message: format!("unexpected message {other:?}") },
    }
}

/// Answers requests from `input` until end of stream.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    model: &dyn Classifier,
    opts: &ServeOptions,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(msg) => handle(msg, model, opts),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
                Message::Error { id, message: format!("malformed message: {e}") }
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Serves every accepted connection on its own thread.
pub fn serve_tcp(listener: TcpListener, model: Arc<dyn Classifier>, opts: ServeOptions) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let model = model.clone();
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(r) => BufReader::new(r),
                Err(_) => return,
            };
            let _ = serve(reader, stream, model.as_ref(), &opts);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_wire_format() {
        let m = Message::Hello { version: 1 };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"type":"hello","version":1}"#);
        let ack: Message =
            serde_json::from_str(r#"{"type":"hello_ack","version":1,"num_classes":10,"input_shape":[64,64,3]}"#)
                .unwrap();
        assert_eq!(ack, Message::HelloAck { version: 1, num_classes: 10, input_shape: [64, 64, 3] });
        let err: Message = serde_json::from_str(r#"{"type":"error","id":4,"message":"bad"}"#).unwrap();
        assert_eq!(err, Message::Error { id: Some(4), message: "bad".into() });
    }

    #[test]
    fn float_payload_round_trip() {
        let v = [0.0, 0.25, 1.0, 0.1];
        let back = decode_floats(&encode_floats(&v)).unwrap();
        assert_eq!(back[..3], v[..3]);
        assert_eq!(back[3], f64::from(0.1f32));
        assert!(decode_floats("AAA").is_err());
        assert!(decode_floats(&STANDARD.encode([0u8; 5])).is_err());
    }

    #[test]
    fn endpoints_parse() {
        assert_eq!("tcp://127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert_eq!(
            "cmd:python bridge.py --port 1".parse::<Endpoint>().unwrap(),
            Endpoint::Command { program: "python".into(), args: vec!["bridge.py".into(), "--port".into(), "1".into()] }
        );
        assert!("http://x".parse::<Endpoint>().is_err());
        assert!("cmd:".parse::<Endpoint>().is_err());
    }
}
