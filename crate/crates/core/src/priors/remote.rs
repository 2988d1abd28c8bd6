//! Remote score models over HTTP.
//!
//! Protocol version 1. Every request carries the header `X-SPNP-Proto: 1`.
//!
//! * `GET /info` returns a JSON [`ServedModelInfo`].
//! * `POST /score` takes a message and answers with a message of the same
//!   shape. A message is one line of JSON, `{"shape":[N,C,H,W],"t":…,
//!   "request_id":…}`, a `\n`, then `N·C·H·W` little-endian `f32` values in
//!   row-major NCHW order. The response echoes `t` and `request_id`.
//!
//! Errors are JSON bodies `{"error": …, "field": …}` with status 400 (bad
//! shape, time or body), 409 (protocol version) or 500 (model failure).
//!
//! Responses are always scores. Servers wrapping ε-predicting models convert
//! with `score = −ε̂/√(1 − ᾱ_t)` before replying. Value-domain rescaling is the
//! client's job (see [`ServedModelInfo::value_domain`]).

use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Convention, PriorError, ScoreFunction, ValueDomain};
use crate::imaging::{ImageTensor, Shape};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const PROTOCOL_VERSION: u32 = 1;
pub const PROTOCOL_HEADER: &str = "X-SPNP-Proto";
const MAX_BODY: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Score,
    Epsilon,
}

/// Contract returned by `GET /info`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedModelInfo {
    pub proto: u32,
    pub convention: Convention,
    #[serde(rename = "T")]
    pub steps: usize,
    pub schedule: Option<ScheduleSpec>,
    pub layout: String,
    pub dtype: String,
    pub value_domain: ValueDomain,
    pub output_kind: OutputKind,
    /// How fractional `t` reaches the model, e.g. `"none"` or `"nearest"`.
    pub t_rounding: String,
    /// Fixed `[C, H, W]` input shape, if the model has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
}

impl ServedModelInfo {
    /// Info describing a local score model.
    pub fn describe(score: &dyn ScoreFunction) -> Self {
        let schedule = score.schedule().map(NoiseSchedule::to_spec);
        Self {
            proto: PROTOCOL_VERSION,
            convention: score.convention(),
            steps: score.schedule().map_or(0, NoiseSchedule::len),
            schedule,
            layout: "NCHW".into(),
            dtype: "float32-le".into(),
            value_domain: score.input_domain(),
            output_kind: OutputKind::Score,
            t_rounding: "none".into(),
            input_shape: None,
        }
    }

    fn validate(&self) -> Result<Option<NoiseSchedule>, PriorError> {
        if self.proto != PROTOCOL_VERSION {
            return Err(PriorError::Protocol(format!(
                "server speaks protocol {}, client speaks {PROTOCOL_VERSION}",
                self.proto
            )));
        }
        if self.layout != "NCHW" || self.dtype != "float32-le" {
            return Err(PriorError::Protocol(format!(
                "unsupported tensor layout {} / {}",
                self.layout, self.dtype
            )));
        }
        let schedule = match (&self.schedule, self.convention) {
            (_, Convention::NoiseLevelDirect) => None,
            (None, c) => return Err(PriorError::Protocol(format!("{c} model without a schedule"))),
            (Some(spec), _) => {
                let s = spec.build()?;
                if s.len() != self.steps {
                    return Err(PriorError::Protocol(format!(
                        "schedule has {} steps but T = {}",
                        s.len(),
                        self.steps
                    )));
                }
                Some(s)
            }
        };
        Ok(schedule)
    }
}

/// JSON header line of a wire message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHeader {
    pub shape: Vec<usize>,
    pub t: f64,
    pub request_id: u64,
}

pub fn encode_message(header: &WireHeader, data: &[f32]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<(WireHeader, Vec<f32>), PriorError> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| PriorError::Protocol("message has no header line".into()))?;
    let header: WireHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| PriorError::Protocol(format!("bad header: {e}")))?;
    let payload = &bytes[nl + 1..];
    let n: usize = header.shape.iter().product();
    if header.shape.is_empty() || payload.len() != 4 * n {
        return Err(PriorError::Protocol(format!(
            "shape {:?} needs {} bytes, got {}",
            header.shape,
            4 * n,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

fn to_nchw(x: &ImageTensor) -> (Vec<usize>, Vec<f32>) {
    let s = x.shape();
    (
        vec![1, s.channels, s.height, s.width],
        x.as_slice().iter().map(|v| *v as f32).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Client for a remote score model. Scores cross the wire as `f32`.
pub struct RemoteScore {
    base: String,
    agent: ureq::Agent,
    info: ServedModelInfo,
    schedule: Option<NoiseSchedule>,
    next_id: AtomicU64,
}

fn transport(e: ureq::Error) -> PriorError {
    PriorError::Transport(e.to_string())
}

fn error_text(status: u16, body: &[u8]) -> String {
    match serde_json::from_slice::<serde_json::Value>(body) {
        Ok(v) => {
            let msg = v.get("error").and_then(|e| e.as_str()).unwrap_or("unknown error");
            match v.get("field").and_then(|f| f.as_str()) {
                Some(f) => format!("HTTP {status}: {msg} (field {f})"),
                None => format!("HTTP {status}: {msg}"),
            }
        }
        Err(_) => format!("HTTP {status}"),
    }
}

fn status_error(status: u16, body: &[u8]) -> PriorError {
    let text = error_text(status, body);
    if (400..500).contains(&status) {
        PriorError::Protocol(text)
    } else {
        PriorError::Transport(text)
    }
}

impl RemoteScore {
    /// Fetches and validates `/info`.
    pub fn connect(config: &RemoteConfig) -> Result<Self, PriorError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let base = config.url.trim_end_matches('/').to_string();
        let mut resp = agent
            .get(&format!("{base}/info"))
            .header(PROTOCOL_HEADER, PROTOCOL_VERSION.to_string())
            .call()
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(transport)?;
        if status != 200 {
            return Err(status_error(status, &body));
        }
        let info: ServedModelInfo =
            serde_json::from_slice(&body).map_err(|e| PriorError::Protocol(format!("bad /info: {e}")))?;
        let schedule = info.validate()?;
        Ok(Self {
            base,
            agent,
            info,
            schedule,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn info(&self) -> &ServedModelInfo {
        &self.info
    }
}

impl ScoreFunction for RemoteScore {
    fn convention(&self) -> Convention {
        self.info.convention
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        self.schedule.as_ref()
    }

    fn input_domain(&self) -> ValueDomain {
        self.info.value_domain
    }

    fn score(&self, x: &ImageTensor, t: f64) -> Result<ImageTensor, PriorError> {
        let (shape, data) = to_nchw(x);
        if let Some(expected) = &self.info.input_shape {
            if expected[..] != shape[1..] {
                return Err(PriorError::Protocol(format!(
                    "model expects [C,H,W] = {expected:?}, input is {:?}",
                    &shape[1..]
                )));
            }
        }
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let header = WireHeader {
            shape: shape.clone(),
            t,
            request_id,
        };
        let mut resp = self
            .agent
            .post(&format!("{}/score", self.base))
            .header(PROTOCOL_HEADER, PROTOCOL_VERSION.to_string())
            .content_type("application/octet-stream")
            .send(&encode_message(&header, &data)[..])
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(transport)?;
        if status != 200 {
            return Err(status_error(status, &body));
        }
        let (rh, values) = decode_message(&body)?;
        if rh.request_id != request_id {
            return Err(PriorError::Protocol(format!(
                "response id {} does not match request {request_id}",
                rh.request_id
            )));
        }
        if rh.shape != shape {
            return Err(PriorError::Protocol(format!(
                "response shape {:?} differs from request {shape:?}",
                rh.shape
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PriorError::Numeric(format!("remote score is not finite at index {i}")));
        }
        Ok(x.with_data(values.into_iter().map(f64::from).collect())?)
    }
}

/// In-process HTTP server exposing a local score model through the wire
/// protocol. Stops when dropped.
pub struct ScoreServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ScoreServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves with
    /// `threads` workers.
    pub fn spawn(
        score: Arc<dyn ScoreFunction>,
        info: ServedModelInfo,
        addr: &str,
        threads: usize,
    ) -> Result<Self, PriorError> {
        let server = tiny_http::Server::http(addr).map_err(|e| PriorError::Transport(e.to_string()))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| PriorError::Transport("server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let info = Arc::new(info);
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, stop, score, info) = (server.clone(), stop.clone(), score.clone(), info.clone());
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(req)) => handle(req, score.as_ref(), &info),
                            Ok(None) => {}
                            Err(e) => {
                                log::warn!("score server: {e}");
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        Ok(Self { addr: bound, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ScoreServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

type Reply = tiny_http::Response<std::io::Cursor<Vec<u8>>>;

fn json_error(status: u16, message: &str, field: Option<&str>) -> Reply {
    let body = serde_json::json!({ "error": message, "field": field });
    tiny_http::Response::from_data(body.to_string().into_bytes())
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
}

fn header(k: &str, v: &str) -> tiny_http::Header {
    tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()).expect("static header")
}

fn handle(mut req: tiny_http::Request, score: &dyn ScoreFunction, info: &ServedModelInfo) {
    let reply = respond(&mut req, score, info)
        .with_header(header(PROTOCOL_HEADER, &PROTOCOL_VERSION.to_string()));
    if let Err(e) = req.respond(reply) {
        log::warn!("score server: failed to respond: {e}");
    }
}

fn respond(req: &mut tiny_http::Request, score: &dyn ScoreFunction, info: &ServedModelInfo) -> Reply {
    let proto = req
        .headers()
        .iter()
        .find(|h| h.field.equiv(PROTOCOL_HEADER))
        .map(|h| h.value.as_str().trim().to_string());
    if proto.as_deref() != Some(&PROTOCOL_VERSION.to_string()) {
        return json_error(
            409,
            &format!("protocol {PROTOCOL_VERSION} required, got {proto:?}"),
            Some(PROTOCOL_HEADER),
        );
    }
    match (req.method(), req.url()) {
        (tiny_http::Method::Get, "/info") => tiny_http::Response::from_data(
            serde_json::to_vec(info).expect("info serializes"),
        )
        .with_header(header("Content-Type", "application/json")),
        (tiny_http::Method::Post, "/score") => {
            let mut body = Vec::new();
            if let Err(e) = req.as_reader().take(MAX_BODY).read_to_end(&mut body) {
                return json_error(400, &format!("cannot read body: {e}"), Some("body"));
            }
            evaluate(&body, score, info)
        }
        _ => json_error(404, "no such endpoint", None),
    }
}

fn evaluate(body: &[u8], score: &dyn ScoreFunction, info: &ServedModelInfo) -> Reply {
    let (h, data) = match decode_message(body) {
        Ok(v) => v,
        Err(e) => return json_error(400, &e.to_string(), Some("shape")),
    };
    if h.shape.len() != 4 || h.shape.contains(&0) {
        return json_error(400, &format!("shape {:?} is not a nonempty [N,C,H,W]", h.shape), Some("shape"));
    }
    if let Some(expected) = &info.input_shape {
        if expected[..] != h.shape[1..] {
            return json_error(
                400,
                &format!("expected [C,H,W] = {expected:?}, got {:?}", &h.shape[1..]),
                Some("shape"),
            );
        }
    }
    if info.convention != Convention::NoiseLevelDirect && !(h.t >= 0.0 && h.t <= info.steps as f64) {
        return json_error(400, &format!("t = {} outside [0, {}]", h.t, info.steps), Some("t"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return json_error(400, "tensor contains non-finite values", Some("body"));
    }
    let (n, c, ht, wd) = (h.shape[0], h.shape[1], h.shape[2], h.shape[3]);
    let shape = Shape::new(ht, wd, c);
    let per = shape.len();
    let xs: Vec<ImageTensor> = data
        .chunks(per)
        .map(|chunk| ImageTensor::new(shape, chunk.iter().map(|v| f64::from(*v)).collect()))
        .collect::<Result<_, _>>()
        .expect("validated tensor");
    debug_assert_eq!(xs.len(), n);
    let out = match score.score_batch(&xs, h.t) {
        Ok(v) => v,
        Err(e @ PriorError::Condition(_)) => return json_error(400, &e.to_string(), Some("t")),
        Err(e @ PriorError::Dimension { .. }) => return json_error(400, &e.to_string(), Some("shape")),
        Err(e) => return json_error(500, &e.to_string(), None),
    };
    let values: Vec<f32> = out.iter().flat_map(|s| s.as_slice().iter().map(|v| *v as f32)).collect();
    tiny_http::Response::from_data(encode_message(&h, &values))
        .with_header(header("Content-Type", "application/octet-stream"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::testing::random_gmm;
    use crate::priors::{emulate_vp_network, AnalyticScore, PatchGeometry, PatchScore};
    use crate::rng::GaussianStream;

    fn served() -> Arc<dyn ScoreFunction> {
        let gmm = random_gmm(4, 3, 12);
        let inner = Arc::new(AnalyticScore::new(Arc::new(gmm)));
        let patch = Arc::new(PatchScore::new(inner, PatchGeometry::square(2)).unwrap());
        let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap();
        Arc::new(emulate_vp_network(patch, sched).unwrap())
    }

    fn connect(server: &ScoreServer) -> RemoteScore {
        RemoteScore::connect(&RemoteConfig {
            url: server.url(),
            timeout_ms: 5_000,
        })
        .unwrap()
    }

    #[test]
    fn wire_round_trip_is_bit_exact() {
        let mut rng = GaussianStream::new(4);
        let data: Vec<f32> = (0..2 * 3 * 5 * 7).map(|_| (rng.normal() * 1e3) as f32).collect();
        let mut data = data;
        data.extend([f32::MIN_POSITIVE, -0.0, f32::MAX, 1e-40]);
        let h = WireHeader {
            shape: vec![data.len()],
            t: 12.5,
            request_id: 99,
        };
        let (h2, d2) = decode_message(&encode_message(&h, &data)).unwrap();
        assert_eq!(h, h2);
        assert_eq!(
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn decode_rejects_truncated_payload() {
        let h = WireHeader {
            shape: vec![1, 1, 2, 2],
            t: 0.0,
            request_id: 1,
        };
        let mut m = encode_message(&h, &[1.0, 2.0, 3.0, 4.0]);
        m.pop();
        assert!(decode_message(&m).is_err());
        assert!(decode_message(b"no newline").is_err());
    }

    #[test]
    fn loopback_matches_local_evaluation() {
        let local = served();
        let server = ScoreServer::spawn(local.clone(), ServedModelInfo::describe(local.as_ref()), "127.0.0.1:0", 2)
            .unwrap();
        let remote = connect(&server);
        assert_eq!(remote.info().convention, Convention::Vp);
        assert_eq!(remote.info().steps, 1000);
        assert_eq!(remote.info(), &ServedModelInfo::describe(local.as_ref()));
        let mut rng = GaussianStream::new(7);
        for t in [1.0, 17.5, 400.0, 1000.0] {
            let x = ImageTensor::new(Shape::new(5, 4, 1), rng.normal_vec(20)).unwrap();
            let a = remote.score(&x, t).unwrap();
            let b = local.score(&x, t).unwrap();
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - v).abs() <= 1e-6 * v.abs().max(1.0), "t={t}: {u} vs {v}");
            }
        }
        // identical request bytes give identical responses
        let x = ImageTensor::new(Shape::new(5, 4, 1), rng.normal_vec(20)).unwrap();
        assert_eq!(remote.score(&x, 3.0).unwrap(), remote.score(&x, 3.0).unwrap());
    }

    #[test]
    fn info_is_stable_across_calls() {
        let local = served();
        let server =
            ScoreServer::spawn(local.clone(), ServedModelInfo::describe(local.as_ref()), "127.0.0.1:0", 1).unwrap();
        assert_eq!(connect(&server).info(), connect(&server).info());
    }

    #[test]
    fn errors_are_reported_not_swallowed() {
        let local = served();
        let mut info = ServedModelInfo::describe(local.as_ref());
        info.input_shape = Some(vec![1, 4, 4]);
        let server = ScoreServer::spawn(local, info, "127.0.0.1:0", 1).unwrap();
        let remote = connect(&server);
        let bad = ImageTensor::zeros(Shape::new(3, 3, 1));
        assert!(matches!(remote.score(&bad, 1.0), Err(PriorError::Protocol(_))));
        let ok = ImageTensor::zeros(Shape::new(4, 4, 1));
        match remote.score(&ok, 5000.0) {
            Err(PriorError::Protocol(m)) => assert!(m.contains("400") && m.contains("field t"), "{m}"),
            other => panic!("expected a 400, got {other:?}"),
        }

        // raw requests: malformed shape and missing protocol header
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let h = WireHeader {
            shape: vec![1, 1, 4],
            t: 1.0,
            request_id: 5,
        };
        let mut resp = agent
            .post(&format!("{}/score", server.url()))
            .header(PROTOCOL_HEADER, "1")
            .send(&encode_message(&h, &[0.0; 4])[..])
            .unwrap();
        assert_eq!(resp.status().as_u16(), 400);
        let v: serde_json::Value = serde_json::from_slice(&resp.body_mut().read_to_vec().unwrap()).unwrap();
        assert_eq!(v["field"], "shape");
        let resp = agent.get(&format!("{}/info", server.url())).call().unwrap();
        assert_eq!(resp.status().as_u16(), 409);
        let resp = agent
            .get(&format!("{}/info", server.url()))
            .header(PROTOCOL_HEADER, "2")
            .call()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 409);
    }

    #[test]
    fn protocol_mismatch_in_info_is_rejected() {
        let local = served();
        let mut info = ServedModelInfo::describe(local.as_ref());
        info.proto = 2;
        let server = ScoreServer::spawn(local, info, "127.0.0.1:0", 1).unwrap();
        let r = RemoteScore::connect(&RemoteConfig {
            url: server.url(),
            timeout_ms: 5_000,
        });
        assert!(matches!(r, Err(PriorError::Protocol(_))));
    }

    #[test]
    fn absent_server_is_a_transport_error() {
        // bind then release a port so nothing listens on it
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let r = RemoteScore::connect(&RemoteConfig {
            url: format!("http://127.0.0.1:{port}"),
            timeout_ms: 2_000,
        });
        assert!(matches!(r, Err(PriorError::Transport(_))));
    }
}
