//! Assembling a running twin from a configuration and driving it.
//!
//! Gateways with a `sim://<model>?k=v&...` endpoint are served in-process
//! on an ephemeral port and stepped once per tick before the engine runs,
//! which makes runs reproducible. `step_ms` and `seed` are reserved
//! parameters; the rest go to the asset model. `tcp://` gateways are
//! external and run on their own clock.

mod control;
mod scenario;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use control::{
    request as control_request, ControlRequest, ControlResponse, ControlServer, GatewayView,
    InspectView, ModelView, ServiceView, CONTROL_ADDR_ENV,
};
pub use scenario::{DecisionPattern, Scenario, ScenarioError, Step};

use crate::conformance::TwinConfiguration;
use crate::data::{DataError, DataManager};
use crate::engine::{Engine, EngineError, Notice, SyncDecision};
use crate::gateway::sim::{build_model, AssetServer};
use crate::gateway::{AssetControl, GatewayError};
use crate::models::{Mode, ModelError, ModelRegistry};
use crate::refs::Tick;
use crate::services::ServiceError;
use crate::value::Value;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A parsed `sim://` endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEndpoint {
    pub model: String,
    pub params: BTreeMap<String, String>,
    pub step_ms: u64,
    pub seed: u64,
}

impl SimEndpoint {
    pub fn parse(endpoint: &str) -> Option<Result<Self, String>> {
        let rest = endpoint.strip_prefix("sim://")?;
        Some(Self::parse_rest(rest))
    }

    fn parse_rest(rest: &str) -> Result<Self, String> {
        let (model, query) = rest.split_once('?').unwrap_or((rest, ""));
        let mut params = BTreeMap::new();
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| format!("parameter {pair:?} is not k=v"))?;
            params.insert(k.to_owned(), v.to_owned());
        }
        let mut take = |k: &str, default: u64| -> Result<u64, String> {
            match params.remove(k) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| format!("{k}={v} is not an unsigned integer")),
            }
        };
        let step_ms = take("step_ms", 100)?;
        let seed = take("seed", 0)?;
        Ok(Self {
            model: model.to_owned(),
            params,
            step_ms,
            seed,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TwinOptions {
    /// Directory relative paths in the configuration are resolved against.
    pub base_dir: PathBuf,
    /// Journal path, overriding the configuration.
    pub journal: Option<PathBuf>,
    /// Where to write the decision log.
    pub decisions: Option<PathBuf>,
}

struct DrivenAsset {
    _server: AssetServer,
    control: AssetControl,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Decision(SyncDecision),
    Notice(Notice),
}

/// A configured engine plus the simulated assets it drives.
pub struct Twin {
    engine: Engine,
    driven: BTreeMap<String, DrivenAsset>,
    controls: BTreeMap<String, AssetControl>,
    endpoints: BTreeMap<String, String>,
    log: Option<BufWriter<File>>,
    history: Vec<SyncDecision>,
}

impl std::fmt::Debug for Twin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Twin")
            .field("engine", &self.engine)
            .field("endpoints", &self.endpoints)
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RuntimeError + '_ {
    move |source| RuntimeError::Io {
        path: path.to_owned(),
        source,
    }
}

impl Twin {
    pub fn start(config: &TwinConfiguration, opts: &TwinOptions) -> Result<Self, RuntimeError> {
        let mut driven = BTreeMap::new();
        let mut endpoints = BTreeMap::new();
        let mut gateways = Vec::new();
        for g in &config.gateways {
            let mut g = g.clone();
            if let Some(sim) = SimEndpoint::parse(&g.endpoint) {
                let sim =
                    sim.map_err(|e| RuntimeError::Config(format!("gateway {}: {e}", g.id)))?;
                let model = build_model(&sim.model, &sim.params, sim.seed)
                    .map_err(|e| RuntimeError::Config(format!("gateway {}: {e}", g.id)))?;
                let server =
                    AssetServer::spawn("127.0.0.1:0", model, sim.step_ms).map_err(|e| {
                        RuntimeError::Config(format!("gateway {}: cannot start asset: {e}", g.id))
                    })?;
                g.endpoint = server.endpoint();
                let control = AssetControl::connect(&g.endpoint)?;
                driven.insert(
                    g.id.clone(),
                    DrivenAsset {
                        _server: server,
                        control,
                    },
                );
            }
            endpoints.insert(g.id.clone(), g.endpoint.clone());
            gateways.push(g);
        }

        let mut registry = ModelRegistry::new();
        for l in &config.languages {
            registry.register_language(l.clone())?;
        }
        for m in &config.managers {
            registry.add_manager(m.clone())?;
        }
        for m in &config.models {
            let manager = m
                .manager
                .as_deref()
                .ok_or_else(|| RuntimeError::Config(format!("model {} has no manager", m.id)))?;
            registry.create_model(
                manager,
                &m.id,
                &m.language,
                m.elements.clone(),
                m.track_last_update,
            )?;
            if m.mode == Mode::Online {
                registry.set_mode(manager, &m.id, Mode::Online)?;
            }
        }

        let data = if config.data.enabled {
            let path = opts
                .journal
                .clone()
                .or_else(|| config.data.journal.as_ref().map(|j| opts.base_dir.join(j)));
            let mut dm = match path {
                Some(p) => DataManager::open(p)?,
                None => DataManager::in_memory(),
            };
            dm.require(config.data.required_metadata.iter().copied());
            Some(dm)
        } else {
            None
        };

        let mut engine = Engine::new(registry, data);
        engine.set_link_records(config.data.link_records);
        for g in gateways {
            engine.add_gateway(g)?;
        }
        for m in &config.mappings {
            engine.add_mapping(m.clone())?;
        }
        for s in &config.services {
            engine.register_service(s.descriptor(), s.builtin.instantiate())?;
        }

        let log = match &opts.decisions {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(io_err(p))?)),
            None => None,
        };
        Ok(Self {
            engine,
            driven,
            controls: BTreeMap::new(),
            endpoints,
            log,
            history: Vec::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn current_tick(&self) -> Tick {
        self.engine.current_tick()
    }

    /// Decisions of every tick so far.
    pub fn decisions(&self) -> &[SyncDecision] {
        &self.history
    }

    /// Endpoint each gateway is reached at, after starting simulated assets.
    pub fn endpoint(&self, gateway: &str) -> Option<&str> {
        self.endpoints.get(gateway).map(String::as_str)
    }

    /// Steps driven assets once, then runs the next engine tick.
    pub fn tick(&mut self) -> Result<Vec<SyncDecision>, RuntimeError> {
        for (id, asset) in self.driven.iter_mut() {
            if let Err(e) = asset.control.step(1) {
                log::warn!("asset {id}: step failed: {e}");
            }
        }
        let decisions = self.engine.tick(self.engine.current_tick() + 1)?;
        let notices = self.engine.take_notices();
        if let Some(log) = &mut self.log {
            let lines = decisions
                .iter()
                .cloned()
                .map(LogLine::Decision)
                .chain(notices.into_iter().map(LogLine::Notice));
            for line in lines {
                let mut s = serde_json::to_string(&line).expect("log lines always encode");
                s.push('\n');
                log.write_all(s.as_bytes())
                    .and_then(|_| log.flush())
                    .map_err(|source| RuntimeError::Io {
                        path: PathBuf::from("decision log"),
                        source,
                    })?;
            }
        }
        self.history.extend(decisions.iter().cloned());
        Ok(decisions)
    }

    fn control(&mut self, gateway: &str) -> Result<&mut AssetControl, RuntimeError> {
        if let Some(d) = self.driven.get_mut(gateway) {
            return Ok(&mut d.control);
        }
        if !self.controls.contains_key(gateway) {
            let endpoint = self
                .endpoints
                .get(gateway)
                .ok_or_else(|| EngineError::UnknownGateway(gateway.to_owned()))?;
            let c = AssetControl::connect(endpoint)?;
            self.controls.insert(gateway.to_owned(), c);
        }
        Ok(self.controls.get_mut(gateway).expect("inserted above"))
    }

    /// Changes an asset property from the physical side.
    pub fn asset_set(
        &mut self,
        gateway: &str,
        property: &str,
        value: Value,
    ) -> Result<(), RuntimeError> {
        self.control(gateway)?.set(property, value)?;
        Ok(())
    }

    pub fn asset_raise(
        &mut self,
        gateway: &str,
        event: &str,
        payload: Value,
    ) -> Result<(), RuntimeError> {
        self.control(gateway)?.raise(event, payload)?;
        Ok(())
    }

    /// Reads an asset property from the physical side, bypassing the twin.
    pub fn asset_read(&mut self, gateway: &str, property: &str) -> Result<Value, RuntimeError> {
        Ok(self.control(gateway)?.read(property)?)
    }
}
