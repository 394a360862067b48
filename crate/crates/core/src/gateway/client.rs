use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::protocol::{Message, Op};
use super::{
    sorted, Access, Acknowledgement, ElementKind, EventOccurrence, GatewayDescriptor,
    GatewayElementDecl, GatewayError, KindTag, ValueSample,
};
use crate::value::Value;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

/// Line-level record of one connection, `> ` for sent and `< ` for
/// received lines.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<String>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, prefix: &str, line: &str) {
        self.0
            .lock()
            .unwrap()
            .push(format!("{prefix}{}", line.trim_end_matches('\n')));
    }

    pub fn lines(&self) -> Vec<String> {
        self.0.lock().unwrap().clone()
    }

    /// All lines joined with `\n`, newline-terminated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in self.0.lock().unwrap().iter() {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Why a sample or event stream stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamEnd {
    /// The asset link dropped.
    Disconnected,
    /// The owning handle was closed locally.
    Closed,
}

enum StreamItem<T> {
    Item(T),
    End(StreamEnd),
}

/// Change-driven stream of pushed samples or events, in arrival order.
pub struct Stream<T> {
    rx: Receiver<StreamItem<T>>,
    end: Option<StreamEnd>,
}

impl<T> Stream<T> {
    /// Next pending item without blocking.
    pub fn try_next(&mut self) -> Option<T> {
        if self.end.is_some() {
            return None;
        }
        match self.rx.try_recv() {
            Ok(StreamItem::Item(t)) => Some(t),
            Ok(StreamItem::End(cause)) => {
                self.end = Some(cause);
                None
            }
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => {
                self.end = Some(StreamEnd::Closed);
                None
            }
        }
    }

    pub fn next_timeout(&mut self, timeout: Duration) -> Option<T> {
        if self.end.is_some() {
            return None;
        }
        match self.rx.recv_timeout(timeout) {
            Ok(StreamItem::Item(t)) => Some(t),
            Ok(StreamItem::End(cause)) => {
                self.end = Some(cause);
                None
            }
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => {
                self.end = Some(StreamEnd::Closed);
                None
            }
        }
    }

    /// Everything currently queued.
    pub fn drain(&mut self) -> Vec<T> {
        std::iter::from_fn(|| self.try_next()).collect()
    }

    pub fn end_cause(&self) -> Option<StreamEnd> {
        self.end
    }

    /// Blocks until the stream ends or the timeout passes, discarding items.
    pub fn wait_end(&mut self, timeout: Duration) -> Option<StreamEnd> {
        let deadline = std::time::Instant::now() + timeout;
        while self.end.is_none() {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if left.is_zero() {
                break;
            }
            self.next_timeout(left);
        }
        self.end
    }
}

#[derive(Default)]
struct Router {
    samples: BTreeMap<String, Vec<Sender<StreamItem<ValueSample>>>>,
    events: BTreeMap<String, Vec<Sender<StreamItem<EventOccurrence>>>>,
    ended: Option<StreamEnd>,
}

impl Router {
    fn end_all(&mut self, cause: StreamEnd) {
        self.ended = Some(cause);
        for tx in self.samples.values().flatten() {
            let _ = tx.send(StreamItem::End(cause));
        }
        for tx in self.events.values().flatten() {
            let _ = tx.send(StreamItem::End(cause));
        }
        self.samples.clear();
        self.events.clear();
    }
}

type Response = (Option<u64>, Result<Message, GatewayError>);

/// One framed session with an asset: a writer owned by the caller and a
/// reader thread that routes responses and pushed messages.
struct Connection {
    writer: TcpStream,
    responses: Receiver<Response>,
    router: Arc<Mutex<Router>>,
    closing: Arc<AtomicBool>,
    transcript: Option<Transcript>,
    next_id: u64,
    reader: Option<JoinHandle<()>>,
}

fn parse_endpoint(endpoint: &str) -> Result<String, GatewayError> {
    let addr = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
    if addr.is_empty() || !addr.contains(':') {
        return Err(GatewayError::ConnectFailed(format!(
            "unsupported endpoint {endpoint:?}"
        )));
    }
    Ok(addr.to_owned())
}

impl Connection {
    fn open(endpoint: &str, transcript: Option<Transcript>) -> Result<Self, GatewayError> {
        let addr = parse_endpoint(endpoint)?;
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| GatewayError::ConnectFailed(format!("{addr}: {e}")))?
            .next()
            .ok_or_else(|| GatewayError::ConnectFailed(format!("{addr}: no address")))?;
        let stream = TcpStream::connect_timeout(&sock, CONNECT_TIMEOUT)
            .map_err(|e| GatewayError::ConnectFailed(format!("{addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        let read_half = stream
            .try_clone()
            .map_err(|e| GatewayError::ConnectFailed(e.to_string()))?;

        let (tx, rx) = mpsc::channel();
        let router = Arc::new(Mutex::new(Router::default()));
        let closing = Arc::new(AtomicBool::new(false));
        let reader = {
            let router = Arc::clone(&router);
            let closing = Arc::clone(&closing);
            let transcript = transcript.clone();
            thread::Builder::new()
                .name(format!("gateway-reader-{addr}"))
                .spawn(move || read_loop(read_half, tx, router, closing, transcript))
                .map_err(|e| GatewayError::ConnectFailed(e.to_string()))?
        };

        Ok(Self {
            writer: stream,
            responses: rx,
            router,
            closing,
            transcript,
            next_id: 1,
            reader: Some(reader),
        })
    }

    fn is_alive(&self) -> bool {
        self.router.lock().unwrap().ended.is_none()
    }

    fn request(&mut self, mut msg: Message) -> Result<Message, GatewayError> {
        if !self.is_alive() {
            return Err(GatewayError::Disconnected);
        }
        let id = self.next_id;
        self.next_id += 1;
        msg.id = Some(id);
        let line = msg.encode();
        if let Some(t) = &self.transcript {
            t.push("> ", &line);
        }
        self.writer
            .write_all(line.as_bytes())
            .map_err(|_| GatewayError::Disconnected)?;

        loop {
            match self.responses.recv_timeout(REQUEST_TIMEOUT) {
                Ok((rid, result)) if rid == Some(id) => {
                    let resp = result?;
                    if resp.op == Op::Error {
                        let element = msg.element.as_deref().unwrap_or("");
                        let err = resp.error.ok_or_else(|| {
                            GatewayError::ProtocolError("error without body".into())
                        })?;
                        return Err(err.into_gateway_error(element));
                    }
                    return Ok(resp);
                }
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(GatewayError::ProtocolError(format!(
                        "request {id} timed out"
                    )));
                }
                Err(RecvTimeoutError::Disconnected) => return Err(GatewayError::Disconnected),
            }
        }
    }

    fn add_sample_stream(&self, element: &str) -> Result<Stream<ValueSample>, GatewayError> {
        let mut router = self.router.lock().unwrap();
        if router.ended.is_some() {
            return Err(GatewayError::Disconnected);
        }
        let (tx, rx) = mpsc::channel();
        router
            .samples
            .entry(element.to_owned())
            .or_default()
            .push(tx);
        Ok(Stream { rx, end: None })
    }

    fn add_event_stream(&self, element: &str) -> Result<Stream<EventOccurrence>, GatewayError> {
        let mut router = self.router.lock().unwrap();
        if router.ended.is_some() {
            return Err(GatewayError::Disconnected);
        }
        let (tx, rx) = mpsc::channel();
        router
            .events
            .entry(element.to_owned())
            .or_default()
            .push(tx);
        Ok(Stream { rx, end: None })
    }

    fn ping(&mut self) -> Result<(), GatewayError> {
        expect_op(self.request(Message::new(Op::Ping))?, Op::Pong).map(|_| ())
    }

    fn sim_step(&mut self, count: u64) -> Result<u64, GatewayError> {
        let count = i64::try_from(count)
            .map_err(|_| GatewayError::ProtocolError("step count too large".into()))?;
        let resp = expect_op(
            self.request(Message::new(Op::Step).with_value(Value::Int(count)))?,
            Op::Ack,
        )?;
        resp.ts
            .ok_or_else(|| GatewayError::ProtocolError("ack without ts".into()))
    }

    fn sim_mutate(
        &mut self,
        op: Op,
        element: &str,
        value: Value,
    ) -> Result<Acknowledgement, GatewayError> {
        let resp = expect_op(
            self.request(Message::new(op).with_element(element).with_value(value))?,
            Op::Ack,
        )?;
        ack_from(element, resp)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.closing.store(true, Ordering::SeqCst);
        let _ = self.writer.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

fn read_loop(
    stream: TcpStream,
    responses: Sender<Response>,
    router: Arc<Mutex<Router>>,
    closing: Arc<AtomicBool>,
    transcript: Option<Transcript>,
) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if !line.ends_with('\n') {
            // torn final line: the peer went away mid-message
            break;
        }
        if let Some(t) = &transcript {
            t.push("< ", &line);
        }
        match Message::decode(&line) {
            Ok(msg) => {
                if msg.id.is_some() {
                    let _ = responses.send((msg.id, Ok(msg)));
                } else {
                    route_push(&router, msg);
                }
            }
            Err(err) => match Message::salvage_id(&line) {
                Some(id) => {
                    let _ = responses.send((Some(id), Err(err)));
                }
                None => log::warn!("dropping malformed push: {err}"),
            },
        }
    }
    let cause = if closing.load(Ordering::SeqCst) {
        StreamEnd::Closed
    } else {
        StreamEnd::Disconnected
    };
    router.lock().unwrap().end_all(cause);
}

fn route_push(router: &Mutex<Router>, msg: Message) {
    let (Some(element), Some(value), Some(ts), Some(seq)) =
        (msg.element, msg.value, msg.ts, msg.seq)
    else {
        log::warn!("dropping incomplete {:?} push", msg.op);
        return;
    };
    let mut router = router.lock().unwrap();
    match msg.op {
        Op::Sample => {
            if let Some(txs) = router.samples.get_mut(&element) {
                let sample = ValueSample {
                    element: element.clone(),
                    value,
                    asset_timestamp: ts,
                    sequence_no: seq,
                };
                txs.retain(|tx| tx.send(StreamItem::Item(sample.clone())).is_ok());
            }
        }
        Op::Event => {
            if let Some(txs) = router.events.get_mut(&element) {
                let occ = EventOccurrence {
                    name: element.clone(),
                    payload: value,
                    asset_timestamp: ts,
                    sequence_no: seq,
                };
                txs.retain(|tx| tx.send(StreamItem::Item(occ.clone())).is_ok());
            }
        }
        other => log::warn!("unexpected push {other:?}"),
    }
}

fn expect_op(msg: Message, op: Op) -> Result<Message, GatewayError> {
    if msg.op == op {
        Ok(msg)
    } else {
        Err(GatewayError::ProtocolError(format!(
            "expected {op:?}, got {:?}",
            msg.op
        )))
    }
}

fn ack_from(element: &str, resp: Message) -> Result<Acknowledgement, GatewayError> {
    match (resp.ts, resp.seq) {
        (Some(ts), Some(seq)) => Ok(Acknowledgement {
            element: element.to_owned(),
            asset_timestamp: ts,
            sequence_no: seq,
        }),
        _ => Err(GatewayError::ProtocolError("ack without ts/seq".into())),
    }
}

/// A live connection to one asset, checked against its descriptor.
///
/// Requests are serialized: every operation takes `&mut self` and waits for
/// its response. Streams returned by [`observe_property`] and
/// [`subscribe_event`] may be consumed on other threads. Once the link
/// drops the handle is dead; create a new one to reconnect.
///
/// [`observe_property`]: GatewayHandle::observe_property
/// [`subscribe_event`]: GatewayHandle::subscribe_event
pub struct GatewayHandle {
    descriptor: GatewayDescriptor,
    conn: Connection,
    observing: BTreeSet<String>,
    subscribed: BTreeSet<String>,
}

impl std::fmt::Debug for GatewayHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayHandle")
            .field("id", &self.descriptor.id)
            .field("alive", &self.is_alive())
            .finish()
    }
}

impl GatewayHandle {
    pub fn connect(descriptor: GatewayDescriptor) -> Result<Self, GatewayError> {
        Self::open(descriptor, None)
    }

    /// Like [`connect`](Self::connect), recording every line into `transcript`.
    pub fn connect_recorded(
        descriptor: GatewayDescriptor,
        transcript: Transcript,
    ) -> Result<Self, GatewayError> {
        Self::open(descriptor, Some(transcript))
    }

    fn open(
        descriptor: GatewayDescriptor,
        transcript: Option<Transcript>,
    ) -> Result<Self, GatewayError> {
        descriptor.validate()?;
        let mut conn = Connection::open(&descriptor.endpoint, transcript)?;
        let resp = conn.request(Message::new(Op::Hello))?;
        if resp.op != Op::Catalog {
            return Err(GatewayError::ProtocolError(format!(
                "expected catalog, got {:?}",
                resp.op
            )));
        }
        let advertised = resp
            .catalog
            .ok_or_else(|| GatewayError::ProtocolError("catalog message without catalog".into()))?;
        check_catalog(&descriptor, advertised)?;
        Ok(Self {
            descriptor,
            conn,
            observing: BTreeSet::new(),
            subscribed: BTreeSet::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.descriptor.id
    }

    pub fn descriptor(&self) -> &GatewayDescriptor {
        &self.descriptor
    }

    /// The element catalog agreed at handshake, name-sorted.
    pub fn catalog(&self) -> Vec<GatewayElementDecl> {
        self.descriptor.sorted_catalog()
    }

    pub fn is_alive(&self) -> bool {
        self.conn.is_alive()
    }

    fn element(&self, name: &str, expected: KindTag) -> Result<&GatewayElementDecl, GatewayError> {
        let decl = self
            .descriptor
            .element(name)
            .ok_or_else(|| GatewayError::NoSuchElement(name.to_owned()))?;
        if decl.tag() != expected {
            return Err(GatewayError::WrongKind {
                element: name.to_owned(),
                expected,
                actual: decl.tag(),
            });
        }
        Ok(decl)
    }

    pub fn read_property(&mut self, name: &str) -> Result<ValueSample, GatewayError> {
        let ElementKind::Property { schema, .. } = &self.element(name, KindTag::Property)?.kind
        else {
            unreachable!()
        };
        let schema = schema.clone();
        let resp = expect_op(
            self.conn
                .request(Message::new(Op::Read).with_element(name))?,
            Op::Sample,
        )?;
        match (resp.value, resp.ts, resp.seq) {
            (Some(value), Some(ts), Some(seq)) => {
                if !schema.accepts(&value) {
                    return Err(GatewayError::ProtocolError(format!(
                        "{name}: asset returned {} for schema {schema}",
                        value.type_name()
                    )));
                }
                Ok(ValueSample {
                    element: name.to_owned(),
                    value,
                    asset_timestamp: ts,
                    sequence_no: seq,
                })
            }
            _ => Err(GatewayError::ProtocolError(
                "sample without value/ts/seq".into(),
            )),
        }
    }

    pub fn write_property(
        &mut self,
        name: &str,
        value: Value,
    ) -> Result<Acknowledgement, GatewayError> {
        let ElementKind::Property { schema, access } = &self.element(name, KindTag::Property)?.kind
        else {
            unreachable!()
        };
        if *access == Access::ReadOnly {
            return Err(GatewayError::ReadOnlyViolation(name.to_owned()));
        }
        if !schema.accepts(&value) {
            return Err(GatewayError::SchemaViolation {
                element: name.to_owned(),
                detail: format!("expected {schema}, got {}", value.type_name()),
            });
        }
        let resp = expect_op(
            self.conn
                .request(Message::new(Op::Write).with_element(name).with_value(value))?,
            Op::Ack,
        )?;
        ack_from(name, resp)
    }

    /// Stream of pushed samples for a property, one per asset-side change.
    pub fn observe_property(&mut self, name: &str) -> Result<Stream<ValueSample>, GatewayError> {
        self.element(name, KindTag::Property)?;
        let stream = self.conn.add_sample_stream(name)?;
        if self.observing.insert(name.to_owned()) {
            let resp = self
                .conn
                .request(Message::new(Op::Observe).with_element(name));
            if let Err(e) = resp.and_then(|r| expect_op(r, Op::Ack)) {
                self.observing.remove(name);
                return Err(e);
            }
        }
        Ok(stream)
    }

    pub fn subscribe_event(&mut self, name: &str) -> Result<Stream<EventOccurrence>, GatewayError> {
        self.element(name, KindTag::Event)?;
        let stream = self.conn.add_event_stream(name)?;
        if self.subscribed.insert(name.to_owned()) {
            let resp = self
                .conn
                .request(Message::new(Op::Subscribe).with_element(name));
            if let Err(e) = resp.and_then(|r| expect_op(r, Op::Ack)) {
                self.subscribed.remove(name);
                return Err(e);
            }
        }
        Ok(stream)
    }

    pub fn invoke_function(&mut self, name: &str, args: Vec<Value>) -> Result<Value, GatewayError> {
        let ElementKind::Function {
            args: params,
            result,
        } = &self.element(name, KindTag::Function)?.kind
        else {
            unreachable!()
        };
        if params.len() != args.len() {
            return Err(GatewayError::SchemaViolation {
                element: name.to_owned(),
                detail: format!("expected {} argument(s), got {}", params.len(), args.len()),
            });
        }
        if let Some((i, (p, a))) = params
            .iter()
            .zip(&args)
            .enumerate()
            .find(|(_, (p, a))| !p.accepts(a))
        {
            return Err(GatewayError::SchemaViolation {
                element: name.to_owned(),
                detail: format!("argument {i}: expected {p}, got {}", a.type_name()),
            });
        }
        let result = result.clone();
        let resp = expect_op(
            self.conn.request(
                Message::new(Op::Invoke)
                    .with_element(name)
                    .with_value(Value::List(args)),
            )?,
            Op::Result,
        )?;
        let value = resp
            .value
            .ok_or_else(|| GatewayError::ProtocolError("result without value".into()))?;
        if !result.accepts(&value) {
            return Err(GatewayError::ProtocolError(format!(
                "{name}: result does not match {result}"
            )));
        }
        Ok(value)
    }

    /// Round trip that guarantees every push sent before it has been routed.
    pub fn ping(&mut self) -> Result<(), GatewayError> {
        self.conn.ping()
    }

    /// Simulation control: advance a simulated asset by `count` steps.
    pub fn sim_step(&mut self, count: u64) -> Result<u64, GatewayError> {
        self.conn.sim_step(count)
    }

    /// Simulation control: change a property from the physical side,
    /// bypassing its access mode.
    pub fn sim_set(
        &mut self,
        element: &str,
        value: Value,
    ) -> Result<Acknowledgement, GatewayError> {
        self.conn.sim_mutate(Op::Set, element, value)
    }

    /// Simulation control: make the asset raise an event.
    pub fn sim_raise(
        &mut self,
        element: &str,
        payload: Value,
    ) -> Result<Acknowledgement, GatewayError> {
        self.conn.sim_mutate(Op::Raise, element, payload)
    }
}

fn check_catalog(
    descriptor: &GatewayDescriptor,
    advertised: Vec<GatewayElementDecl>,
) -> Result<(), GatewayError> {
    let expected = descriptor.sorted_catalog();
    let advertised = sorted(advertised);
    if expected == advertised {
        return Ok(());
    }
    for e in &expected {
        match advertised.iter().find(|a| a.name == e.name) {
            None => {
                return Err(GatewayError::CatalogMismatch(format!(
                    "asset lacks element {}",
                    e.name
                )))
            }
            Some(a) if a != e => {
                return Err(GatewayError::CatalogMismatch(format!(
                    "element {}: declared {}, advertised {}",
                    e.name,
                    serde_json::to_string(&e.kind).unwrap_or_default(),
                    serde_json::to_string(&a.kind).unwrap_or_default()
                )))
            }
            Some(_) => {}
        }
    }
    let extra: Vec<_> = advertised
        .iter()
        .filter(|a| descriptor.element(&a.name).is_none())
        .map(|a| a.name.as_str())
        .collect();
    Err(GatewayError::CatalogMismatch(format!(
        "asset advertises undeclared element(s) {}",
        extra.join(", ")
    )))
}

/// Physical-side connection to a simulated asset: steps its clock and
/// perturbs its state without going through the twin.
pub struct AssetControl {
    conn: Connection,
}

impl AssetControl {
    pub fn connect(endpoint: &str) -> Result<Self, GatewayError> {
        Ok(Self {
            conn: Connection::open(endpoint, None)?,
        })
    }

    pub fn step(&mut self, count: u64) -> Result<u64, GatewayError> {
        self.conn.sim_step(count)
    }

    pub fn set(&mut self, element: &str, value: Value) -> Result<Acknowledgement, GatewayError> {
        self.conn.sim_mutate(Op::Set, element, value)
    }

    pub fn raise(
        &mut self,
        element: &str,
        payload: Value,
    ) -> Result<Acknowledgement, GatewayError> {
        self.conn.sim_mutate(Op::Raise, element, payload)
    }

    /// Reads a property without catalog checks.
    pub fn read(&mut self, element: &str) -> Result<Value, GatewayError> {
        let resp = expect_op(
            self.conn
                .request(Message::new(Op::Read).with_element(element))?,
            Op::Sample,
        )?;
        resp.value
            .ok_or_else(|| GatewayError::ProtocolError("sample without value".into()))
    }

    pub fn ping(&mut self) -> Result<(), GatewayError> {
        self.conn.ping()
    }
}
