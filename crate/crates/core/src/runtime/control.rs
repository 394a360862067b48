//! Local control channel of a running twin.
//!
//! Same framing as the gateway protocol: one JSON object per line, each
//! request answered by exactly one response line.
//!
//! ```text
//! > {"op":"invoke","gateway":"tank01","function":"flush","args":[]}
//! < {"ok":true,"result":{"bool":true}}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::Twin;
use crate::conformance::TwinConfiguration;
use crate::data::Selector;
use crate::engine::Mapping;
use crate::models::Mode;
use crate::services::{ServiceRequest, ServiceResponse};
use crate::value::Value;

/// Environment variable holding the control address of a running twin.
pub const CONTROL_ADDR_ENV: &str = "TWIN_CONTROL_ADDR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ControlRequest {
    Inspect,
    Invoke {
        gateway: String,
        function: String,
        #[serde(default)]
        args: Vec<Value>,
    },
    History {
        #[serde(default)]
        selector: Selector,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ControlResponse {
    pub fn ok(result: impl Serialize) -> Self {
        Self {
            ok: true,
            result: Some(serde_json::to_value(result).expect("results always encode")),
            error: None,
        }
    }

    pub fn err(error: impl ToString) -> Self {
        Self {
            ok: false,
            result: None,
            error: Some(error.to_string()),
        }
    }
}

/// Sorted, printable view of a twin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InspectView {
    pub tick: u64,
    pub gateways: Vec<GatewayView>,
    pub models: Vec<ModelView>,
    pub mappings: Vec<Mapping>,
    pub services: Vec<ServiceView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayView {
    pub id: String,
    pub endpoint: String,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub id: String,
    pub language: String,
    pub manager: Option<String>,
    pub mode: Mode,
    /// element -> property -> value
    pub elements: BTreeMap<String, BTreeMap<String, Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceView {
    pub id: String,
    pub enabled: bool,
}

impl InspectView {
    pub fn of_twin(twin: &Twin) -> Self {
        let e = twin.engine();
        let mut gateways: Vec<_> = e
            .gateway_descriptors()
            .map(|g| GatewayView {
                id: g.id.clone(),
                endpoint: g.endpoint.clone(),
                connected: e.gateway_alive(&g.id),
            })
            .collect();
        gateways.sort_by(|a, b| a.id.cmp(&b.id));
        let models = e
            .models()
            .models()
            .map(|m| ModelView {
                id: m.id.clone(),
                language: m.language.clone(),
                manager: Some(m.manager.clone()),
                mode: m.mode(),
                elements: m
                    .elements
                    .values()
                    .map(|el| {
                        (
                            el.id.clone(),
                            el.properties
                                .iter()
                                .map(|(k, p)| (k.clone(), p.value.clone()))
                                .collect(),
                        )
                    })
                    .collect(),
            })
            .collect();
        let services = e
            .services()
            .map(|(d, enabled)| ServiceView {
                id: d.id.clone(),
                enabled,
            })
            .collect();
        Self {
            tick: e.current_tick(),
            gateways,
            models,
            mappings: e.mappings().cloned().collect(),
            services,
        }
    }

    pub fn of_config(config: &TwinConfiguration) -> Self {
        let mut gateways: Vec<_> = config
            .gateways
            .iter()
            .map(|g| GatewayView {
                id: g.id.clone(),
                endpoint: g.endpoint.clone(),
                connected: false,
            })
            .collect();
        gateways.sort_by(|a, b| a.id.cmp(&b.id));
        let mut models: Vec<_> = config
            .models
            .iter()
            .map(|m| ModelView {
                id: m.id.clone(),
                language: m.language.clone(),
                manager: m.manager.clone(),
                mode: m.mode,
                elements: m
                    .elements
                    .iter()
                    .map(|el| (el.id.clone(), el.properties.clone()))
                    .collect(),
            })
            .collect();
        models.sort_by(|a, b| a.id.cmp(&b.id));
        let mut mappings = config.mappings.clone();
        mappings.sort_by(|a, b| a.id.cmp(&b.id));
        let mut services: Vec<_> = config
            .services
            .iter()
            .map(|s| ServiceView {
                id: s.id.clone(),
                enabled: true,
            })
            .collect();
        services.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            tick: 0,
            gateways,
            models,
            mappings,
            services,
        }
    }
}

impl Twin {
    /// Executes a control request with operator rights.
    pub fn handle_control(&mut self, req: ControlRequest) -> ControlResponse {
        match req {
            ControlRequest::Inspect => ControlResponse::ok(InspectView::of_twin(self)),
            ControlRequest::Invoke {
                gateway,
                function,
                args,
            } => {
                match self
                    .engine_mut()
                    .operator_request(ServiceRequest::InvokeFunction {
                        gateway,
                        function,
                        args,
                    }) {
                    Ok(ServiceResponse::Value(v)) => ControlResponse::ok(v),
                    Ok(other) => ControlResponse::ok(other),
                    Err(e) => ControlResponse::err(e),
                }
            }
            ControlRequest::History { selector } => match self.engine().data() {
                Some(d) => ControlResponse::ok(d.query(&selector)),
                None => ControlResponse::err("no data manager is configured"),
            },
        }
    }
}

type Pending = (ControlRequest, Sender<ControlResponse>);

/// Accepts control connections and hands requests to the owning loop.
pub struct ControlServer {
    addr: SocketAddr,
    rx: Receiver<Pending>,
}

impl ControlServer {
    pub fn bind(addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for conn in listener.incoming().flatten() {
                let tx = tx.clone();
                thread::spawn(move || serve(conn, tx));
            }
        });
        Ok(Self { addr, rx })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Answers requests until `deadline`, then returns.
    pub fn serve_until(
        &self,
        deadline: Instant,
        mut handle: impl FnMut(ControlRequest) -> ControlResponse,
    ) {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok((req, reply)) => {
                    let _ = reply.send(handle(req));
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }
}

fn serve(conn: TcpStream, tx: Sender<Pending>) {
    let _ = conn.set_nodelay(true);
    let Ok(mut writer) = conn.try_clone() else {
        return;
    };
    for line in BufReader::new(conn).lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ControlRequest>(&line) {
            Ok(req) => {
                let (rtx, rrx) = mpsc::channel();
                if tx.send((req, rtx)).is_err() {
                    return;
                }
                rrx.recv()
                    .unwrap_or_else(|_| ControlResponse::err("twin stopped"))
            }
            Err(e) => ControlResponse::err(format!("bad request: {e}")),
        };
        let mut s = serde_json::to_string(&resp).expect("responses always encode");
        s.push('\n');
        if writer.write_all(s.as_bytes()).is_err() {
            return;
        }
    }
}

/// Sends one request to a running twin and waits for the answer.
pub fn request(
    addr: &str,
    req: &ControlRequest,
    timeout: Duration,
) -> std::io::Result<ControlResponse> {
    let sock: SocketAddr = std::net::ToSocketAddrs::to_socket_addrs(addr)?
        .next()
        .ok_or_else(|| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("cannot resolve {addr}"),
            )
        })?;
    let mut conn = TcpStream::connect_timeout(&sock, timeout)?;
    conn.set_nodelay(true)?;
    conn.set_read_timeout(Some(timeout))?;
    let mut s = serde_json::to_string(req).expect("requests always encode");
    s.push('\n');
    conn.write_all(s.as_bytes())?;
    let mut line = String::new();
    BufReader::new(conn).read_line(&mut line)?;
    serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
