//! Simulated actual systems served over the gateway protocol.
//!
//! Two asset models ship with the runtime:
//!
//! * `tank`: a 1-D tank, `level' = inflow * valve - outflow`, integrated
//!   with explicit Euler at a fixed step and clamped at zero. Elements:
//!   `level` (real, read-only), `valve` (real, read-write), `overflow`
//!   (event, raised when the level rises through `overflow_at`) and `flush`
//!   (function, empties the tank and returns `true`).
//! * `echo`: `message` (text, read-write), `count` (int, read-only, number
//!   of writes to `message`), `echoed` (event raised on every write),
//!   `echo(text) -> text` and `fault() -> bool`, which always faults.
//!
//! The asset clock is virtual: it advances by `step_ms` per step, whether
//! steps come from `step` requests or from the free-running timer.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::protocol::{ErrorCode, Message, Op, WireError};
use super::{Access, ElementKind, GatewayElementDecl};
use crate::value::{Value, ValueSchema};

/// Events raised by an asset operation, in order.
pub type Raised = Vec<(String, Value)>;

/// Behaviour of a simulated asset. Kind, access and schema checks are done
/// by the server against [`catalog`](AssetModel::catalog) before a call
/// reaches the model.
pub trait AssetModel: Send {
    fn catalog(&self) -> Vec<GatewayElementDecl>;
    fn properties(&self) -> BTreeMap<String, Value>;
    fn set(&mut self, name: &str, value: Value) -> Result<Raised, WireError>;
    fn invoke(&mut self, name: &str, args: Vec<Value>) -> Result<(Value, Raised), WireError>;
    fn step(&mut self, dt_ms: u64) -> Raised;
}

fn param_f64(params: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, String> {
    match params.get(key) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| format!("parameter {key}={s} is not a number")),
    }
}

fn reject_unknown(params: &BTreeMap<String, String>, known: &[&str]) -> Result<(), String> {
    match params.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown parameter {k}")),
        None => Ok(()),
    }
}

/// Builds a named asset model from `k=v` parameters.
pub fn build_model(
    kind: &str,
    params: &BTreeMap<String, String>,
    seed: u64,
) -> Result<Box<dyn AssetModel>, String> {
    match kind {
        "tank" => Ok(Box::new(TankModel::from_params(params, seed)?)),
        "echo" => {
            reject_unknown(params, &[])?;
            Ok(Box::new(EchoModel::default()))
        }
        other => Err(format!("unknown asset model {other:?}")),
    }
}

#[derive(Debug, Clone)]
pub struct TankModel {
    pub level: f64,
    pub valve: f64,
    pub inflow: f64,
    pub outflow: f64,
    pub overflow_at: f64,
    noise: f64,
    rng: ChaCha8Rng,
}

impl Default for TankModel {
    fn default() -> Self {
        Self {
            level: 0.0,
            valve: 0.0,
            inflow: 1.0,
            outflow: 0.0,
            overflow_at: 8.0,
            noise: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl TankModel {
    pub const PARAMS: [&'static str; 6] = [
        "level0",
        "valve0",
        "inflow",
        "outflow",
        "overflow_at",
        "noise",
    ];

    pub fn from_params(params: &BTreeMap<String, String>, seed: u64) -> Result<Self, String> {
        reject_unknown(params, &Self::PARAMS)?;
        let d = Self::default();
        Ok(Self {
            level: param_f64(params, "level0", d.level)?,
            valve: param_f64(params, "valve0", d.valve)?,
            inflow: param_f64(params, "inflow", d.inflow)?,
            outflow: param_f64(params, "outflow", d.outflow)?,
            overflow_at: param_f64(params, "overflow_at", d.overflow_at)?,
            noise: param_f64(params, "noise", d.noise)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn catalog_decls() -> Vec<GatewayElementDecl> {
        vec![
            GatewayElementDecl::function("flush", vec![], ValueSchema::Bool),
            GatewayElementDecl::property("level", ValueSchema::Real, Access::ReadOnly),
            GatewayElementDecl::event("overflow", ValueSchema::Real),
            GatewayElementDecl::property("valve", ValueSchema::Real, Access::ReadWrite),
        ]
    }

    fn set_level(&mut self, next: f64) -> Raised {
        let prev = self.level;
        self.level = next;
        if prev < self.overflow_at && next >= self.overflow_at {
            vec![("overflow".to_owned(), Value::Real(next))]
        } else {
            vec![]
        }
    }
}

impl AssetModel for TankModel {
    fn catalog(&self) -> Vec<GatewayElementDecl> {
        Self::catalog_decls()
    }

    fn properties(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("level".to_owned(), Value::Real(self.level)),
            ("valve".to_owned(), Value::Real(self.valve)),
        ])
    }

    fn set(&mut self, name: &str, value: Value) -> Result<Raised, WireError> {
        let x = value
            .as_f64()
            .ok_or_else(|| WireError::new(ErrorCode::Schema, "expected real"))?;
        match name {
            "level" => Ok(self.set_level(x)),
            "valve" => {
                self.valve = x;
                Ok(vec![])
            }
            _ => Err(WireError::new(ErrorCode::NoSuchElement, name)),
        }
    }

    fn invoke(&mut self, name: &str, _args: Vec<Value>) -> Result<(Value, Raised), WireError> {
        match name {
            "flush" => Ok((Value::Bool(true), self.set_level(0.0))),
            _ => Err(WireError::new(ErrorCode::NoSuchElement, name)),
        }
    }

    fn step(&mut self, dt_ms: u64) -> Raised {
        let dt = dt_ms as f64 / 1000.0;
        let inflow = if self.noise > 0.0 {
            self.inflow * (1.0 + self.noise * self.rng.gen_range(-1.0..=1.0))
        } else {
            self.inflow
        };
        let next = self.level + dt * (inflow * self.valve - self.outflow);
        // NaN passes through so a faulty configuration is visible on the wire
        let next = if next < 0.0 { 0.0 } else { next };
        self.set_level(next)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EchoModel {
    pub message: String,
    pub count: i64,
}

impl EchoModel {
    pub fn catalog_decls() -> Vec<GatewayElementDecl> {
        vec![
            GatewayElementDecl::property("count", ValueSchema::Int, Access::ReadOnly),
            GatewayElementDecl::function("echo", vec![ValueSchema::Text], ValueSchema::Text),
            GatewayElementDecl::event("echoed", ValueSchema::Text),
            GatewayElementDecl::function("fault", vec![], ValueSchema::Bool),
            GatewayElementDecl::property("message", ValueSchema::Text, Access::ReadWrite),
        ]
    }
}

impl AssetModel for EchoModel {
    fn catalog(&self) -> Vec<GatewayElementDecl> {
        Self::catalog_decls()
    }

    fn properties(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("count".to_owned(), Value::Int(self.count)),
            ("message".to_owned(), Value::Text(self.message.clone())),
        ])
    }

    fn set(&mut self, name: &str, value: Value) -> Result<Raised, WireError> {
        match (name, value) {
            ("message", Value::Text(s)) => {
                self.message = s.clone();
                self.count += 1;
                Ok(vec![("echoed".to_owned(), Value::Text(s))])
            }
            ("count", Value::Int(n)) => {
                self.count = n;
                Ok(vec![])
            }
            (name, _) => Err(WireError::new(
                ErrorCode::Schema,
                format!("bad value for {name}"),
            )),
        }
    }

    fn invoke(&mut self, name: &str, args: Vec<Value>) -> Result<(Value, Raised), WireError> {
        match name {
            "echo" => Ok((
                args.into_iter()
                    .next()
                    .unwrap_or(Value::Text(String::new())),
                vec![],
            )),
            "fault" => Err(WireError::new(ErrorCode::AssetFault, "fault requested")),
            _ => Err(WireError::new(ErrorCode::NoSuchElement, name)),
        }
    }

    fn step(&mut self, _dt_ms: u64) -> Raised {
        vec![]
    }
}

struct Session {
    writer: TcpStream,
    observed: BTreeSet<String>,
    subscribed: BTreeSet<String>,
}

struct State {
    model: Box<dyn AssetModel>,
    catalog: Vec<GatewayElementDecl>,
    clock_ms: u64,
    step_ms: u64,
    seq: BTreeMap<String, u64>,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
}

impl State {
    fn decl(&self, name: &str) -> Option<&GatewayElementDecl> {
        self.catalog.iter().find(|d| d.name == name)
    }

    fn bump(&mut self, element: &str) -> u64 {
        let s = self.seq.entry(element.to_owned()).or_insert(0);
        *s += 1;
        *s
    }

    fn current_seq(&self, element: &str) -> u64 {
        self.seq.get(element).copied().unwrap_or(0)
    }

    fn send(&mut self, session: u64, msg: &Message) {
        let line = msg.encode();
        let dead = match self.sessions.get_mut(&session) {
            Some(s) => s.writer.write_all(line.as_bytes()).is_err(),
            None => false,
        };
        if dead {
            self.sessions.remove(&session);
        }
    }

    /// Runs a mutation and pushes one sample per changed property and one
    /// event message per raised event.
    fn mutate<R>(
        &mut self,
        f: impl FnOnce(&mut dyn AssetModel) -> Result<(R, Raised), WireError>,
    ) -> Result<R, WireError> {
        let before = self.model.properties();
        let (out, raised) = f(self.model.as_mut())?;
        let after = self.model.properties();
        for (name, value) in &after {
            // bitwise comparison keeps NaN from looking unchanged
            if before.get(name).map(encode_cmp) != Some(encode_cmp(value)) {
                let seq = self.bump(name);
                let msg = Message::new(Op::Sample)
                    .with_element(name.clone())
                    .with_value(value.clone())
                    .with_ts(self.clock_ms)
                    .with_seq(seq);
                let targets: Vec<u64> = self
                    .sessions
                    .iter()
                    .filter(|(_, s)| s.observed.contains(name))
                    .map(|(id, _)| *id)
                    .collect();
                for id in targets {
                    self.send(id, &msg);
                }
            }
        }
        for (name, payload) in raised {
            let seq = self.bump(&name);
            let msg = Message::new(Op::Event)
                .with_element(name.clone())
                .with_value(payload)
                .with_ts(self.clock_ms)
                .with_seq(seq);
            let targets: Vec<u64> = self
                .sessions
                .iter()
                .filter(|(_, s)| s.subscribed.contains(&name))
                .map(|(id, _)| *id)
                .collect();
            for id in targets {
                self.send(id, &msg);
            }
        }
        Ok(out)
    }

    fn step(&mut self, count: u64) {
        for _ in 0..count {
            self.clock_ms += self.step_ms;
            let dt = self.step_ms;
            let _ = self.mutate(|m| Ok(((), m.step(dt))));
        }
    }

    fn handle(&mut self, session: u64, msg: Message) -> Message {
        let id = msg.id;
        match self.dispatch(session, msg) {
            Ok(mut resp) => {
                resp.id = id;
                resp
            }
            Err(e) => Message::error(id, e.code, e.message),
        }
    }

    fn require(
        &self,
        msg: &Message,
        kind: &[&str],
    ) -> Result<(String, GatewayElementDecl), WireError> {
        let name = msg
            .element
            .clone()
            .ok_or_else(|| WireError::new(ErrorCode::BadRequest, "missing element"))?;
        let decl = self
            .decl(&name)
            .cloned()
            .ok_or_else(|| WireError::new(ErrorCode::NoSuchElement, name.clone()))?;
        let tag = decl.tag().to_string();
        if !kind.contains(&tag.as_str()) {
            return Err(WireError::new(
                ErrorCode::WrongKind,
                format!("{name} is a {tag}"),
            ));
        }
        Ok((name, decl))
    }

    fn dispatch(&mut self, session: u64, msg: Message) -> Result<Message, WireError> {
        match msg.op {
            Op::Hello => {
                let mut m = Message::new(Op::Catalog);
                m.catalog = Some(self.catalog.clone());
                Ok(m)
            }
            Op::Ping => Ok(Message::new(Op::Pong)),
            Op::Read => {
                let (name, _) = self.require(&msg, &["property"])?;
                let value = self
                    .model
                    .properties()
                    .remove(&name)
                    .ok_or_else(|| WireError::new(ErrorCode::NoSuchElement, name.clone()))?;
                let seq = self.bump(&name);
                Ok(Message::new(Op::Sample)
                    .with_element(name)
                    .with_value(value)
                    .with_ts(self.clock_ms)
                    .with_seq(seq))
            }
            Op::Write | Op::Set => {
                let (name, decl) = self.require(&msg, &["property"])?;
                let ElementKind::Property { schema, access } = decl.kind else {
                    unreachable!()
                };
                if msg.op == Op::Write && access == Access::ReadOnly {
                    return Err(WireError::new(
                        ErrorCode::ReadOnly,
                        format!("{name} is read-only"),
                    ));
                }
                let value = msg
                    .value
                    .ok_or_else(|| WireError::new(ErrorCode::BadRequest, "missing value"))?;
                if !schema.accepts(&value) {
                    return Err(WireError::new(
                        ErrorCode::Schema,
                        format!("{name} expects {schema}"),
                    ));
                }
                self.mutate(|m| m.set(&name, value).map(|r| ((), r)))?;
                let seq = self.current_seq(&name);
                Ok(Message::new(Op::Ack)
                    .with_element(name)
                    .with_ts(self.clock_ms)
                    .with_seq(seq))
            }
            Op::Raise => {
                let (name, decl) = self.require(&msg, &["event"])?;
                let ElementKind::Event { payload } = decl.kind else {
                    unreachable!()
                };
                let value = msg
                    .value
                    .ok_or_else(|| WireError::new(ErrorCode::BadRequest, "missing value"))?;
                if !payload.accepts(&value) {
                    return Err(WireError::new(
                        ErrorCode::Schema,
                        format!("{name} payload expects {payload}"),
                    ));
                }
                let n = name.clone();
                self.mutate(move |_| Ok(((), vec![(n, value)])))?;
                let seq = self.current_seq(&name);
                Ok(Message::new(Op::Ack)
                    .with_element(name)
                    .with_ts(self.clock_ms)
                    .with_seq(seq))
            }
            Op::Observe | Op::Subscribe => {
                let kind = if msg.op == Op::Observe {
                    "property"
                } else {
                    "event"
                };
                let (name, _) = self.require(&msg, &[kind])?;
                if let Some(s) = self.sessions.get_mut(&session) {
                    if msg.op == Op::Observe {
                        s.observed.insert(name.clone());
                    } else {
                        s.subscribed.insert(name.clone());
                    }
                }
                Ok(Message::new(Op::Ack).with_element(name))
            }
            Op::Invoke => {
                let (name, decl) = self.require(&msg, &["function"])?;
                let ElementKind::Function { args: params, .. } = decl.kind else {
                    unreachable!()
                };
                let args = match msg.value {
                    Some(Value::List(args)) => args,
                    None => vec![],
                    Some(_) => {
                        return Err(WireError::new(
                            ErrorCode::Schema,
                            "arguments must be a list",
                        ))
                    }
                };
                if args.len() != params.len()
                    || !params.iter().zip(&args).all(|(p, a)| p.accepts(a))
                {
                    return Err(WireError::new(
                        ErrorCode::Schema,
                        format!("bad arguments for {name}"),
                    ));
                }
                let n = name.clone();
                let result = self.mutate(move |m| m.invoke(&n, args))?;
                Ok(Message::new(Op::Result)
                    .with_element(name)
                    .with_value(result)
                    .with_ts(self.clock_ms))
            }
            Op::Step => {
                let count = match msg.value {
                    None => 1,
                    Some(Value::Int(n)) if n >= 0 => n as u64,
                    Some(_) => {
                        return Err(WireError::new(
                            ErrorCode::BadRequest,
                            "step count must be a non-negative int",
                        ))
                    }
                };
                self.step(count);
                Ok(Message::new(Op::Ack).with_ts(self.clock_ms))
            }
            other => Err(WireError::new(
                ErrorCode::Unsupported,
                format!("{other:?} is not a request"),
            )),
        }
    }
}

fn encode_cmp(v: &Value) -> String {
    match v {
        Value::Real(r) => format!("real:{:016x}", r.to_bits()),
        other => serde_json::to_string(other).unwrap_or_default(),
    }
}

struct Shared {
    state: Mutex<State>,
    stop: AtomicBool,
}

/// A simulated asset listening for gateway connections.
pub struct AssetServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
    clock: Option<JoinHandle<()>>,
}

impl AssetServer {
    /// Binds `listen` (e.g. `127.0.0.1:0`) and serves `model`. The clock is
    /// stopped until [`start_clock`](Self::start_clock) or a `step` request.
    pub fn spawn(listen: &str, model: Box<dyn AssetModel>, step_ms: u64) -> io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let catalog = model.catalog();
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                model,
                catalog,
                clock_ms: 0,
                step_ms,
                seq: BTreeMap::new(),
                sessions: BTreeMap::new(),
                next_session: 1,
            }),
            stop: AtomicBool::new(false),
        });
        let accept = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name(format!("asset-accept-{addr}"))
                .spawn(move || accept_loop(listener, shared))?
        };
        Ok(Self {
            addr,
            shared,
            accept: Some(accept),
            clock: None,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("tcp://{}", self.addr)
    }

    /// Steps the asset every `step_ms` of wall time until shutdown.
    pub fn start_clock(&mut self) {
        if self.clock.is_some() {
            return;
        }
        let shared = Arc::clone(&self.shared);
        let period = Duration::from_millis(shared.state.lock().unwrap().step_ms.max(1));
        self.clock = Some(thread::spawn(move || {
            while !shared.stop.load(Ordering::SeqCst) {
                thread::sleep(period);
                shared.state.lock().unwrap().step(1);
            }
        }));
    }

    pub fn step(&self, count: u64) {
        self.shared.state.lock().unwrap().step(count);
    }

    /// Current property values, for tests that compare asset state.
    pub fn properties(&self) -> BTreeMap<String, Value> {
        self.shared.state.lock().unwrap().model.properties()
    }

    pub fn clock_ms(&self) -> u64 {
        self.shared.state.lock().unwrap().clock_ms
    }

    /// Drops every session and stops accepting, as if the asset died.
    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        {
            let mut st = self.shared.state.lock().unwrap();
            for s in st.sessions.values() {
                let _ = s.writer.shutdown(Shutdown::Both);
            }
            st.sessions.clear();
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        if let Some(h) = self.clock.take() {
            let _ = h.join();
        }
    }

    /// Serves until shutdown; used by the standalone asset executable.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for AssetServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let Ok(writer) = stream.try_clone() else {
                    continue;
                };
                let id = {
                    let mut st = shared.state.lock().unwrap();
                    let id = st.next_session;
                    st.next_session += 1;
                    st.sessions.insert(
                        id,
                        Session {
                            writer,
                            observed: BTreeSet::new(),
                            subscribed: BTreeSet::new(),
                        },
                    );
                    id
                };
                let shared = Arc::clone(&shared);
                thread::spawn(move || session_loop(stream, id, shared));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2))
            }
            Err(e) => {
                log::warn!("asset accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn session_loop(stream: TcpStream, id: u64, shared: Arc<Shared>) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let mut st = shared.state.lock().unwrap();
        let resp = match Message::decode(&line) {
            Ok(msg) => st.handle(id, msg),
            Err(e) => Message::error(
                Message::salvage_id(&line),
                ErrorCode::BadRequest,
                e.to_string(),
            ),
        };
        st.send(id, &resp);
    }
    shared.state.lock().unwrap().sessions.remove(&id);
}
