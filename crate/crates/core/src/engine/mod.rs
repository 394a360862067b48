//! The twin engine: owns models, data, gateways, mappings and services, and
//! runs the synchronizer one externally supplied tick at a time.
//!
//! A tick proceeds in a fixed order:
//!
//! 1. a ping barrier on every live gateway, then a drain of all pushed
//!    samples and events into the change ledger and the trigger queue;
//! 2. mappings whose trigger occurred, triggers in FIFO order and mappings
//!    in id order, each mapping at most once;
//! 3. pending reconciliations after a model went back online;
//! 4. `EveryNTicks(n)` mappings with `tick % n == 0`;
//! 5. service hooks: events, then decisions, then ticks, each in service
//!    id order.
//!
//! The engine never reads a clock. Model edits made between ticks are
//! stamped with the upcoming tick, edits made during a tick with that tick.
//! Drained samples only feed the ledger and triggers; data records are
//! written by synchronizations, one per value that enters a model.

mod mapping;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use mapping::{Direction, GatewayPropertyRef, Mapping, Schedule, Transform, Trigger};

use crate::data::{DataManager, DataProperty, Origin, Processing, Timeliness};
use crate::gateway::{
    Access, ElementKind, EventOccurrence, EventStream, GatewayDescriptor, GatewayError,
    GatewayHandle, KindTag, SampleStream,
};
use crate::models::{
    Mode, ModelError, ModelRegistry, ModelSnapshot, OperatorOutcome, WriteStamp, Writer,
};
use crate::refs::{ModelElementRef, PropertyRef, Tick};
use crate::services::{
    AuditEntry, AuditOutcome, Hook, Service, ServiceContext, ServiceDescriptor, ServiceError,
    ServiceGrant, ServiceRequest, ServiceResponse,
};
use crate::value::Value;

/// Origin recorded when the engine forwards a value that itself came from
/// a synchronization.
pub const SYNCHRONIZER: &str = "synchronizer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncAction {
    PushDtToAs,
    PullAsToDt,
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncReason {
    Scheduled,
    Triggered,
    ConflictResolvedAsWins,
    ConflictResolvedDtWins,
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncDecision {
    pub tick: Tick,
    pub mapping: String,
    pub action: SyncAction,
    pub reason: SyncReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Something worth logging that is not a synchronization, such as a
/// service being disabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub tick: Tick,
    pub subject: String,
    pub event: String,
    pub note: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("mapping {0} already exists")]
    DuplicateMapping(String),
    #[error("mapping {mapping}: model side {target} does not resolve")]
    UnresolvedModelSide {
        mapping: String,
        target: PropertyRef,
    },
    #[error("mapping {mapping}: gateway side {target} is not a declared property")]
    UnresolvedGatewaySide {
        mapping: String,
        target: GatewayPropertyRef,
    },
    #[error("mapping {mapping}: {target} is read-only")]
    ReadOnlyTarget {
        mapping: String,
        target: GatewayPropertyRef,
    },
    #[error("mapping {mapping}: model {model} does not track its last update")]
    MissingLastUpdateSupport { mapping: String, model: String },
    #[error("mapping {0}: period must be at least 1")]
    InvalidSchedule(String),
    #[error("mapping {0}: trigger does not resolve")]
    UnresolvedTrigger(String),
    #[error("mapping {0}: transform must have a finite non-zero scale and a finite offset")]
    InvalidTransform(String),
    #[error("unknown mapping {0}")]
    UnknownMapping(String),
    #[error("gateway {0} already exists")]
    DuplicateGateway(String),
    #[error("unknown gateway {0}")]
    UnknownGateway(String),
    #[error("tick {got} out of order, expected {expected}")]
    TickOutOfOrder { expected: Tick, got: Tick },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Last asset-side change of a property, as drained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Observed {
    tick: Tick,
    seq: u64,
}

struct GatewayLink {
    descriptor: GatewayDescriptor,
    handle: Option<GatewayHandle>,
    samples: BTreeMap<String, SampleStream>,
    events: BTreeMap<String, EventStream>,
    ledger: BTreeMap<String, Observed>,
    /// Sequence number acknowledged for the engine's latest write; pushed
    /// samples at or below it are echoes of that write.
    own_writes: BTreeMap<String, u64>,
}

impl GatewayLink {
    fn alive(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| h.is_alive())
    }

    fn connect(&mut self) -> Result<(), GatewayError> {
        let mut handle = GatewayHandle::connect(self.descriptor.clone())?;
        let mut samples = BTreeMap::new();
        let mut events = BTreeMap::new();
        for decl in self.descriptor.sorted_catalog() {
            match decl.tag() {
                KindTag::Property => {
                    samples.insert(decl.name.clone(), handle.observe_property(&decl.name)?);
                }
                KindTag::Event => {
                    events.insert(decl.name.clone(), handle.subscribe_event(&decl.name)?);
                }
                KindTag::Function => {}
            }
        }
        self.handle = Some(handle);
        self.samples = samples;
        self.events = events;
        self.ledger.clear();
        self.own_writes.clear();
        Ok(())
    }

    fn drop_link(&mut self) {
        self.handle = None;
        self.samples.clear();
        self.events.clear();
    }

    fn handle(&mut self) -> Result<&mut GatewayHandle, GatewayError> {
        match &mut self.handle {
            Some(h) if h.is_alive() => Ok(h),
            _ => Err(GatewayError::Disconnected),
        }
    }

    /// Runs a gateway call, dropping the link if it turns out to be dead.
    fn call<T>(
        &mut self,
        f: impl FnOnce(&mut GatewayHandle) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let r = self.handle().and_then(f);
        if matches!(r, Err(GatewayError::Disconnected)) {
            self.drop_link();
        }
        r
    }
}

struct MappingSlot {
    mapping: Mapping,
    /// Model-side state at the last synchronization.
    seen_model: (Option<WriteStamp>, Value),
    /// Ledger sequence number at the last synchronization.
    seen_asset_seq: u64,
}

struct ServiceSlot {
    descriptor: ServiceDescriptor,
    grant: ServiceGrant,
    service: Option<Box<dyn Service>>,
    enabled: bool,
}

pub struct Engine {
    tick: Tick,
    in_tick: bool,
    models: ModelRegistry,
    data: Option<DataManager>,
    link_records: bool,
    gateways: BTreeMap<String, GatewayLink>,
    mappings: BTreeMap<String, MappingSlot>,
    pending: Vec<Trigger>,
    reconcile: BTreeSet<String>,
    services: BTreeMap<String, ServiceSlot>,
    audit: Vec<AuditEntry>,
    notices: Vec<Notice>,
    reconnect_every: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("tick", &self.tick)
            .field("gateways", &self.gateways.keys().collect::<Vec<_>>())
            .field("mappings", &self.mappings.keys().collect::<Vec<_>>())
            .field("services", &self.services.keys().collect::<Vec<_>>())
            .finish()
    }
}

enum Side {
    Dt,
    As,
}

impl Engine {
    pub fn new(models: ModelRegistry, data: Option<DataManager>) -> Self {
        Self {
            tick: 0,
            in_tick: false,
            models,
            data,
            link_records: true,
            gateways: BTreeMap::new(),
            mappings: BTreeMap::new(),
            pending: Vec::new(),
            reconcile: BTreeSet::new(),
            services: BTreeMap::new(),
            audit: Vec::new(),
            notices: Vec::new(),
            reconnect_every: 5,
        }
    }

    /// Whether synchronization records are linked to the mapped element.
    pub fn set_link_records(&mut self, on: bool) {
        self.link_records = on;
    }

    /// Dead gateways are retried on ticks divisible by `n`.
    pub fn set_reconnect_every(&mut self, n: u64) {
        self.reconnect_every = n.max(1);
    }

    pub fn current_tick(&self) -> Tick {
        self.tick
    }

    pub fn models(&self) -> &ModelRegistry {
        &self.models
    }

    pub fn data(&self) -> Option<&DataManager> {
        self.data.as_ref()
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Notices since the last call.
    pub fn take_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    pub fn mappings(&self) -> impl Iterator<Item = &Mapping> {
        self.mappings.values().map(|s| &s.mapping)
    }

    pub fn mapping(&self, id: &str) -> Option<&Mapping> {
        self.mappings.get(id).map(|s| &s.mapping)
    }

    pub fn gateway_descriptors(&self) -> impl Iterator<Item = &GatewayDescriptor> {
        self.gateways.values().map(|g| &g.descriptor)
    }

    pub fn gateway_alive(&self, id: &str) -> bool {
        self.gateways.get(id).is_some_and(GatewayLink::alive)
    }

    pub fn services(&self) -> impl Iterator<Item = (&ServiceDescriptor, bool)> {
        self.services.values().map(|s| (&s.descriptor, s.enabled))
    }

    /// Registers a gateway and connects to it. An unreachable asset is kept
    /// and retried; any other failure rejects the gateway.
    pub fn add_gateway(&mut self, descriptor: GatewayDescriptor) -> Result<(), EngineError> {
        descriptor.validate()?;
        if self.gateways.contains_key(&descriptor.id) {
            return Err(EngineError::DuplicateGateway(descriptor.id));
        }
        let mut link = GatewayLink {
            descriptor,
            handle: None,
            samples: BTreeMap::new(),
            events: BTreeMap::new(),
            ledger: BTreeMap::new(),
            own_writes: BTreeMap::new(),
        };
        match link.connect() {
            Ok(()) => {}
            Err(GatewayError::ConnectFailed(e)) | Err(GatewayError::ProtocolError(e)) => {
                log::warn!("gateway {}: {e}; will retry", link.descriptor.id);
                link.drop_link();
            }
            Err(e) => return Err(e.into()),
        }
        self.gateways.insert(link.descriptor.id.clone(), link);
        Ok(())
    }

    pub fn add_mapping(&mut self, m: Mapping) -> Result<(), EngineError> {
        if self.mappings.contains_key(&m.id) {
            return Err(EngineError::DuplicateMapping(m.id));
        }
        let model = self.models.model(&m.model.model);
        let prop = model
            .and_then(|md| md.property(&m.model.element, &m.model.property))
            .ok_or_else(|| EngineError::UnresolvedModelSide {
                mapping: m.id.clone(),
                target: m.model.clone(),
            })?;
        let access = self
            .gateways
            .get(&m.gateway.gateway)
            .and_then(|g| g.descriptor.element(&m.gateway.property))
            .and_then(|d| match &d.kind {
                ElementKind::Property { access, .. } => Some(*access),
                _ => None,
            })
            .ok_or_else(|| EngineError::UnresolvedGatewaySide {
                mapping: m.id.clone(),
                target: m.gateway.clone(),
            })?;
        if m.direction.writes_asset() && access == Access::ReadOnly {
            return Err(EngineError::ReadOnlyTarget {
                mapping: m.id.clone(),
                target: m.gateway.clone(),
            });
        }
        if m.direction == Direction::Bidirectional
            && !model.is_some_and(|md| md.tracks_last_update())
        {
            return Err(EngineError::MissingLastUpdateSupport {
                mapping: m.id.clone(),
                model: m.model.model.clone(),
            });
        }
        match &m.schedule {
            Schedule::EveryNTicks(0) => return Err(EngineError::InvalidSchedule(m.id)),
            Schedule::EveryNTicks(_) => {}
            Schedule::OnTrigger(t) if !self.trigger_resolves(t) => {
                return Err(EngineError::UnresolvedTrigger(m.id))
            }
            Schedule::OnTrigger(_) => {}
        }
        if !m.transform.is_valid() {
            return Err(EngineError::InvalidTransform(m.id));
        }
        let seen_model = (prop.written.clone(), prop.value.clone());
        self.mappings.insert(
            m.id.clone(),
            MappingSlot {
                mapping: m,
                seen_model,
                seen_asset_seq: 0,
            },
        );
        Ok(())
    }

    fn trigger_resolves(&self, t: &Trigger) -> bool {
        let gw_elem = |g: &str, e: &str, tag: KindTag| {
            self.gateways
                .get(g)
                .and_then(|l| l.descriptor.element(e))
                .is_some_and(|d| d.tag() == tag)
        };
        match t {
            Trigger::OnGatewayChange { gateway, property } => {
                gw_elem(gateway, property, KindTag::Property)
            }
            Trigger::OnGatewayEvent { gateway, event } => gw_elem(gateway, event, KindTag::Event),
            Trigger::OnModelChange(r) => self.models.value(r).is_some(),
        }
    }

    /// Re-enables a mapping, e.g. after an integrity violation disabled it.
    pub fn set_mapping_enabled(&mut self, id: &str, enabled: bool) -> Result<(), EngineError> {
        let slot = self
            .mappings
            .get_mut(id)
            .ok_or_else(|| EngineError::UnknownMapping(id.to_owned()))?;
        slot.mapping.enabled = enabled;
        Ok(())
    }

    fn edit_tick(&self) -> Tick {
        if self.in_tick {
            self.tick
        } else {
            self.tick + 1
        }
    }

    fn enqueue(&mut self, t: Trigger) {
        if !self.pending.contains(&t) {
            self.pending.push(t);
        }
    }

    /// The single path through which the engine changes a model.
    fn commit(
        &mut self,
        manager: &str,
        operator: &str,
        model: &str,
        args: &BTreeMap<String, Value>,
        by: Writer,
    ) -> Result<OperatorOutcome, ModelError> {
        let watched: Vec<PropertyRef> = self
            .mappings
            .values()
            .filter_map(|s| match &s.mapping.schedule {
                Schedule::OnTrigger(Trigger::OnModelChange(r)) if r.model == model => {
                    Some(r.clone())
                }
                _ => None,
            })
            .collect();
        let state = |reg: &ModelRegistry, r: &PropertyRef| {
            reg.model(&r.model)
                .and_then(|m| m.property(&r.element, &r.property))
                .cloned()
        };
        let before: Vec<_> = watched.iter().map(|r| state(&self.models, r)).collect();
        let stamp = WriteStamp::new(self.edit_tick(), by);
        let outcome = self
            .models
            .apply_operator(manager, operator, model, args, &stamp)?;
        for (r, b) in watched.into_iter().zip(before) {
            if state(&self.models, &r) != b {
                self.enqueue(Trigger::OnModelChange(r));
            }
        }
        Ok(outcome)
    }

    /// Applies an operator on behalf of the human operator.
    pub fn apply_operator(
        &mut self,
        manager: &str,
        operator: &str,
        model: &str,
        args: &BTreeMap<String, Value>,
    ) -> Result<OperatorOutcome, ModelError> {
        self.commit(manager, operator, model, args, Writer::Operator)
    }

    /// Switches a model's mode. Going online schedules a reconciliation of
    /// every mapping on the model at the next tick; while offline those
    /// mappings are suspended.
    pub fn set_mode(&mut self, manager: &str, model: &str, mode: Mode) -> Result<bool, ModelError> {
        let changed = self.models.set_mode(manager, model, mode)?;
        if changed && mode == Mode::Online {
            let ids: Vec<String> = self
                .mappings
                .values()
                .filter(|s| s.mapping.model.model == model)
                .map(|s| s.mapping.id.clone())
                .collect();
            self.reconcile.extend(ids);
        }
        Ok(changed)
    }

    pub fn restore(
        &mut self,
        manager: &str,
        snapshot: &ModelSnapshot,
    ) -> Result<String, ModelError> {
        Ok(self.models.restore(manager, snapshot)?.id.clone())
    }

    pub fn register_service(
        &mut self,
        descriptor: ServiceDescriptor,
        service: Box<dyn Service>,
    ) -> Result<(), ServiceError> {
        if self.services.contains_key(&descriptor.id) {
            return Err(ServiceError::DuplicateService(descriptor.id));
        }
        let grant = descriptor.effective_grant();
        for cap in &grant.capabilities {
            use crate::services::Capability::*;
            let Some(target) = cap.target() else { continue };
            let (what, ok) = match cap {
                ReadModel(_) | WriteModel(_) => ("model", self.models.model(target).is_some()),
                _ => ("gateway", self.gateways.contains_key(target)),
            };
            if !ok {
                return Err(ServiceError::DanglingGrantTarget {
                    service: descriptor.id.clone(),
                    what,
                    target: target.to_owned(),
                });
            }
        }
        for hook in &descriptor.hooks {
            if let Hook::OnEvent { gateway, event } = hook {
                let ok = self
                    .gateways
                    .get(gateway)
                    .and_then(|g| g.descriptor.element(event))
                    .is_some_and(|d| d.tag() == KindTag::Event);
                if !ok {
                    return Err(ServiceError::DanglingGrantTarget {
                        service: descriptor.id.clone(),
                        what: "event",
                        target: format!("{gateway}.{event}"),
                    });
                }
            }
        }
        let id = descriptor.id.clone();
        self.services.insert(
            id,
            ServiceSlot {
                descriptor,
                grant,
                service: Some(service),
                enabled: true,
            },
        );
        Ok(())
    }

    pub fn set_service_enabled(&mut self, id: &str, enabled: bool) -> Result<(), ServiceError> {
        let slot = self
            .services
            .get_mut(id)
            .ok_or_else(|| ServiceError::UnknownService(id.to_owned()))?;
        slot.enabled = enabled;
        Ok(())
    }

    fn record_audit(&mut self, caller: &str, request: &ServiceRequest, outcome: AuditOutcome) {
        self.audit.push(AuditEntry {
            tick: self.tick,
            caller: caller.to_owned(),
            request: request.kind().to_owned(),
            outcome,
        });
    }

    /// Executes a service request if the service's grant allows it and the
    /// service is enabled. The first denial disables the service; requests
    /// outside the grant keep being reported as denied.
    pub fn mediate_service_call(
        &mut self,
        service: &str,
        request: ServiceRequest,
    ) -> Result<ServiceResponse, ServiceError> {
        let slot = self
            .services
            .get_mut(service)
            .ok_or_else(|| ServiceError::UnknownService(service.to_owned()))?;
        let needed = request.required_capability();
        if !slot.grant.allows(&needed) {
            let was_enabled = std::mem::replace(&mut slot.enabled, false);
            let err = ServiceError::PermissionDenied {
                service: service.to_owned(),
                capability: needed,
            };
            self.record_audit(service, &request, AuditOutcome::Denied(err.to_string()));
            if was_enabled {
                self.notices.push(Notice {
                    tick: self.tick,
                    subject: format!("service:{service}"),
                    event: "disabled".into(),
                    note: err.to_string(),
                });
            }
            return Err(err);
        }
        if !slot.enabled {
            let err = ServiceError::Disabled(service.to_owned());
            self.record_audit(service, &request, AuditOutcome::Denied(err.to_string()));
            return Err(err);
        }
        let by = Writer::Service(service.to_owned());
        let origin = Origin::Service(service.to_owned());
        let result = self.execute(by, origin, request.clone());
        let outcome = match &result {
            Ok(_) => AuditOutcome::Allowed,
            Err(e) => AuditOutcome::Failed(e.to_string()),
        };
        self.record_audit(service, &request, outcome);
        result
    }

    /// Executes a request with full rights on behalf of the human operator.
    pub fn operator_request(
        &mut self,
        request: ServiceRequest,
    ) -> Result<ServiceResponse, ServiceError> {
        let result = self.execute(Writer::Operator, Origin::Operator, request.clone());
        let outcome = match &result {
            Ok(_) => AuditOutcome::Allowed,
            Err(e) => AuditOutcome::Failed(e.to_string()),
        };
        self.record_audit("operator", &request, outcome);
        result
    }

    fn execute(
        &mut self,
        by: Writer,
        origin: Origin,
        request: ServiceRequest,
    ) -> Result<ServiceResponse, ServiceError> {
        match request {
            ServiceRequest::ReadModel { property } => match self.models.value(&property) {
                Some(v) => Ok(ServiceResponse::Value(v.clone())),
                None => Err(ServiceError::UnknownProperty(property)),
            },
            ServiceRequest::ApplyOperator {
                model,
                operator,
                args,
            } => {
                let owner = self
                    .models
                    .model(&model)
                    .map(|m| m.manager.clone())
                    .ok_or_else(|| ModelError::UnknownModel(model.clone()))?;
                Ok(ServiceResponse::Applied(
                    self.commit(&owner, &operator, &model, &args, by)?,
                ))
            }
            ServiceRequest::QueryData { selector } => {
                let data = self.data.as_ref().ok_or(ServiceError::NoDataManager)?;
                Ok(ServiceResponse::Records(data.query(&selector)))
            }
            ServiceRequest::IngestProcessed { value, link } => {
                if let Some(l) = &link {
                    if !self
                        .models
                        .model(&l.model)
                        .is_some_and(|m| m.elements.contains_key(&l.element))
                    {
                        return Err(crate::data::DataError::DanglingModelRef(l.clone()).into());
                    }
                }
                let tick = self.tick;
                let data = self.data.as_mut().ok_or(ServiceError::NoDataManager)?;
                let props = vec![
                    DataProperty::Origin(origin),
                    DataProperty::Timeliness(Timeliness::Historical),
                    DataProperty::Processing(Processing::Processed),
                    DataProperty::LastUpdate(tick),
                ];
                Ok(ServiceResponse::Ingested(data.ingest(value, props, link)?))
            }
            ServiceRequest::ReadGateway { gateway, property } => {
                let link = self
                    .gateways
                    .get_mut(&gateway)
                    .ok_or_else(|| ServiceError::UnknownGateway(gateway.clone()))?;
                Ok(ServiceResponse::Sample(
                    link.call(|h| h.read_property(&property))?,
                ))
            }
            ServiceRequest::InvokeFunction {
                gateway,
                function,
                args,
            } => {
                let link = self
                    .gateways
                    .get_mut(&gateway)
                    .ok_or_else(|| ServiceError::UnknownGateway(gateway.clone()))?;
                Ok(ServiceResponse::Value(
                    link.call(|h| h.invoke_function(&function, args))?,
                ))
            }
        }
    }

    /// Waits until every push already sent by live assets has been
    /// received, so a following drain sees a deterministic state.
    pub fn sync_gateways(&mut self) {
        for link in self.gateways.values_mut() {
            if link.handle.is_some() {
                let _ = link.call(|h| h.ping());
            }
        }
    }

    /// Runs one tick. Ticks must be consecutive starting from 1.
    pub fn tick(&mut self, now: Tick) -> Result<Vec<SyncDecision>, EngineError> {
        if now != self.tick + 1 {
            return Err(EngineError::TickOutOfOrder {
                expected: self.tick + 1,
                got: now,
            });
        }
        self.tick = now;
        self.in_tick = true;
        if now.is_multiple_of(self.reconnect_every) {
            self.reconnect();
        }
        self.sync_gateways();
        let events = self.drain();

        let mut fired: Vec<(String, SyncReason)> = Vec::new();
        let mut seen = BTreeSet::new();
        for trigger in std::mem::take(&mut self.pending) {
            for slot in self.mappings.values() {
                if slot.mapping.enabled
                    && slot.mapping.schedule == Schedule::OnTrigger(trigger.clone())
                    && seen.insert(slot.mapping.id.clone())
                {
                    fired.push((slot.mapping.id.clone(), SyncReason::Triggered));
                }
            }
        }
        for id in std::mem::take(&mut self.reconcile) {
            if self.mappings.get(&id).is_some_and(|s| s.mapping.enabled) && seen.insert(id.clone())
            {
                fired.push((id, SyncReason::Triggered));
            }
        }
        for slot in self.mappings.values() {
            if let Schedule::EveryNTicks(n) = slot.mapping.schedule {
                if slot.mapping.enabled && now.is_multiple_of(n) && seen.insert(slot.mapping.id.clone()) {
                    fired.push((slot.mapping.id.clone(), SyncReason::Scheduled));
                }
            }
        }
        let decisions: Vec<SyncDecision> = fired
            .into_iter()
            .map(|(id, reason)| self.sync_mapping(&id, reason))
            .collect();

        let ids: Vec<String> = self.services.keys().cloned().collect();
        for (gateway, event) in &events {
            for id in &ids {
                let hooked = self.services[id]
                    .descriptor
                    .hooks
                    .iter()
                    .any(|h| matches!(h, Hook::OnEvent { gateway: g, event: e } if g == gateway && *e == event.name));
                if hooked {
                    self.run_service(id, |s, ctx| s.on_event(ctx, gateway, event));
                }
            }
        }
        for d in &decisions {
            for id in &ids {
                if self.services[id]
                    .descriptor
                    .hooks
                    .contains(&Hook::OnDecision)
                {
                    self.run_service(id, |s, ctx| s.on_decision(ctx, d));
                }
            }
        }
        for id in &ids {
            if self.services[id].descriptor.hooks.contains(&Hook::OnTick) {
                self.run_service(id, |s, ctx| s.on_tick(ctx));
            }
        }
        self.in_tick = false;
        Ok(decisions)
    }

    fn run_service(&mut self, id: &str, f: impl FnOnce(&mut dyn Service, &mut ServiceContext<'_>)) {
        let Some(slot) = self.services.get_mut(id) else {
            return;
        };
        if !slot.enabled {
            return;
        }
        let Some(mut service) = slot.service.take() else {
            return;
        };
        {
            let mut ctx = ServiceContext {
                engine: self,
                service: id,
            };
            f(service.as_mut(), &mut ctx);
        }
        if let Some(slot) = self.services.get_mut(id) {
            slot.service = Some(service);
        }
    }

    fn reconnect(&mut self) {
        let mut revived = Vec::new();
        for (id, link) in self.gateways.iter_mut().filter(|(_, l)| !l.alive()) {
            match link.connect() {
                Ok(()) => {
                    log::info!("gateway {id}: reconnected");
                    revived.push(id.clone());
                }
                Err(e) => log::debug!("gateway {id}: reconnect failed: {e}"),
            }
        }
        for slot in self
            .mappings
            .values_mut()
            .filter(|s| revived.contains(&s.mapping.gateway.gateway))
        {
            slot.seen_asset_seq = 0;
        }
    }

    fn drain(&mut self) -> Vec<(String, EventOccurrence)> {
        let now = self.tick;
        let mut triggers = Vec::new();
        let mut events = Vec::new();
        for (gid, link) in self.gateways.iter_mut() {
            for (name, stream) in link.samples.iter_mut() {
                for s in stream.drain() {
                    if link
                        .own_writes
                        .get(name)
                        .is_some_and(|w| s.sequence_no <= *w)
                    {
                        continue;
                    }
                    link.ledger.insert(
                        name.clone(),
                        Observed {
                            tick: now,
                            seq: s.sequence_no,
                        },
                    );
                    triggers.push(Trigger::OnGatewayChange {
                        gateway: gid.clone(),
                        property: name.clone(),
                    });
                }
            }
            for (name, stream) in link.events.iter_mut() {
                for e in stream.drain() {
                    triggers.push(Trigger::OnGatewayEvent {
                        gateway: gid.clone(),
                        event: name.clone(),
                    });
                    events.push((gid.clone(), e));
                }
            }
            if link.handle.as_ref().is_some_and(|h| !h.is_alive()) {
                log::warn!("gateway {gid}: connection lost");
                link.drop_link();
            }
        }
        for t in triggers {
            self.enqueue(t);
        }
        events
    }

    fn decision(
        &self,
        m: &Mapping,
        action: SyncAction,
        reason: SyncReason,
        note: Option<String>,
    ) -> SyncDecision {
        SyncDecision {
            tick: self.tick,
            mapping: m.id.clone(),
            action,
            reason,
            note,
        }
    }

    fn suspended(&self, m: &Mapping, note: impl Into<String>) -> SyncDecision {
        self.decision(
            m,
            SyncAction::NoOp,
            SyncReason::Suspended,
            Some(note.into()),
        )
    }

    fn sync_mapping(&mut self, id: &str, reason: SyncReason) -> SyncDecision {
        let m = self.mappings[id].mapping.clone();
        let Some(model) = self.models.model(&m.model.model) else {
            return self.suspended(&m, "model missing");
        };
        if model.mode() == Mode::Offline {
            return self.suspended(&m, "model offline");
        }
        if model
            .property(&m.model.element, &m.model.property)
            .is_none()
        {
            return self.suspended(&m, "mapped model property no longer exists");
        }
        if !self.gateway_alive(&m.gateway.gateway) {
            return self.suspended(&m, "gateway disconnected");
        }
        match m.direction {
            Direction::AsToDt => self.pull(&m, reason),
            Direction::DtToAs => self.push(&m, reason),
            Direction::Bidirectional => self.bidirectional(&m, reason),
        }
    }

    fn gateway_failure(&self, m: &Mapping, e: GatewayError) -> SyncDecision {
        self.suspended(&m.clone(), format!("gateway: {e}"))
    }

    fn ingest_sync_record(&mut self, m: &Mapping, value: Value, origin: Origin) {
        let tick = self.tick;
        let link = self
            .link_records
            .then(|| ModelElementRef::new(m.model.model.clone(), m.model.element.clone()));
        let Some(data) = self.data.as_mut() else {
            return;
        };
        let props = vec![
            DataProperty::Origin(origin),
            DataProperty::Timeliness(Timeliness::Live),
            DataProperty::Processing(Processing::Raw),
            DataProperty::LastUpdate(tick),
        ];
        if let Err(e) = data.ingest(value, props, link) {
            log::error!("mapping {}: record not stored: {e}", m.id);
        }
    }

    fn pull(&mut self, m: &Mapping, reason: SyncReason) -> SyncDecision {
        let gw = &m.gateway;
        let link = self
            .gateways
            .get_mut(&gw.gateway)
            .expect("mapping gateways are registered");
        let sample = match link.call(|h| h.read_property(&gw.property)) {
            Ok(s) => s,
            Err(e) => return self.gateway_failure(m, e),
        };
        let asset_seq = link.ledger.get(&gw.property).map_or(0, |o| o.seq);
        let value = match m.transform.to_model(&sample.value) {
            Ok(v) => v,
            Err(e) => return self.suspended(m, format!("transform failure: {e}")),
        };
        let owner = self
            .models
            .model(&m.model.model)
            .expect("checked by caller")
            .manager
            .clone();
        let args = BTreeMap::from([
            ("element".to_owned(), Value::text(m.model.element.clone())),
            ("property".to_owned(), Value::text(m.model.property.clone())),
            ("value".to_owned(), value),
        ]);
        match self.commit(
            &owner,
            "set_property",
            &m.model.model,
            &args,
            Writer::Sync {
                gateway: gw.gateway.clone(),
            },
        ) {
            Ok(_) => {}
            Err(ModelError::IntegrityViolation { rules, .. }) => {
                self.mappings
                    .get_mut(&m.id)
                    .expect("mapping exists")
                    .mapping
                    .enabled = false;
                return self.suspended(
                    m,
                    format!(
                        "integrity violation ({}); mapping disabled",
                        rules.join(", ")
                    ),
                );
            }
            Err(e) => return self.suspended(m, format!("model rejected value: {e}")),
        }
        self.ingest_sync_record(m, sample.value, Origin::ActualSystem(gw.gateway.clone()));
        let prop = self.models.value_state(&m.model);
        let slot = self.mappings.get_mut(&m.id).expect("mapping exists");
        slot.seen_model = prop;
        slot.seen_asset_seq = asset_seq;
        self.decision(m, SyncAction::PullAsToDt, reason, None)
    }

    fn push(&mut self, m: &Mapping, reason: SyncReason) -> SyncDecision {
        let (written, value) = self.models.value_state(&m.model);
        let asset_value = match m.transform.to_asset(&value) {
            Ok(v) => v,
            Err(e) => return self.suspended(m, format!("transform failure: {e}")),
        };
        let gw = &m.gateway;
        let link = self
            .gateways
            .get_mut(&gw.gateway)
            .expect("mapping gateways are registered");
        let ack = match link.call(|h| h.write_property(&gw.property, asset_value.clone())) {
            Ok(a) => a,
            Err(e) => return self.gateway_failure(m, e),
        };
        link.own_writes.insert(gw.property.clone(), ack.sequence_no);
        link.ledger.insert(
            gw.property.clone(),
            Observed {
                tick: self.tick,
                seq: ack.sequence_no,
            },
        );
        let origin = match written.as_ref().map(|w| &w.by) {
            None | Some(Writer::Operator) => Origin::Operator,
            Some(Writer::Service(s)) => Origin::Service(s.clone()),
            Some(Writer::Sync { .. }) => Origin::Service(SYNCHRONIZER.to_owned()),
        };
        self.ingest_sync_record(m, asset_value, origin);
        let slot = self.mappings.get_mut(&m.id).expect("mapping exists");
        slot.seen_model = (written, value);
        slot.seen_asset_seq = ack.sequence_no;
        self.decision(m, SyncAction::PushDtToAs, reason, None)
    }

    /// Last-writer-wins in tick space. A side counts as changed when its
    /// stamp or ledger entry moved since the previous synchronization; if
    /// exactly one side changed it wins, otherwise the newer tick wins and
    /// an exact tie goes to the model.
    fn bidirectional(&mut self, m: &Mapping, reason: SyncReason) -> SyncDecision {
        let model_state = self.models.value_state(&m.model);
        let gw = &m.gateway;
        let link = self
            .gateways
            .get_mut(&gw.gateway)
            .expect("mapping gateways are registered");
        let sample = match link.call(|h| h.read_property(&gw.property)) {
            Ok(s) => s,
            Err(e) => return self.gateway_failure(m, e),
        };
        let observed = link.ledger.get(&gw.property).copied().unwrap_or_default();
        let slot = &self.mappings[&m.id];
        let model_changed = slot.seen_model != model_state;
        let asset_changed = observed.seq > slot.seen_asset_seq;
        let in_sync = match m.transform.to_asset(&model_state.1) {
            Ok(v) => v == sample.value,
            Err(e) => return self.suspended(m, format!("transform failure: {e}")),
        };
        if in_sync {
            let slot = self.mappings.get_mut(&m.id).expect("mapping exists");
            slot.seen_model = model_state;
            slot.seen_asset_seq = observed.seq;
            return self.decision(m, SyncAction::NoOp, reason, None);
        }
        let model_tick = model_state.0.as_ref().map_or(0, |w| w.tick);
        let (winner, reason) = match (model_changed, asset_changed) {
            (true, false) => (Side::Dt, reason),
            (false, true) => (Side::As, reason),
            _ if observed.tick > model_tick => (Side::As, SyncReason::ConflictResolvedAsWins),
            _ => (Side::Dt, SyncReason::ConflictResolvedDtWins),
        };
        match winner {
            Side::Dt => self.push(m, reason),
            Side::As => self.pull(m, reason),
        }
    }
}

impl ModelRegistry {
    /// Write stamp and value of a mapped property. Mappings are validated
    /// against existing properties, and deletion of a mapped element is
    /// reported as a missing value.
    fn value_state(&self, r: &PropertyRef) -> (Option<WriteStamp>, Value) {
        match self
            .model(&r.model)
            .and_then(|m| m.property(&r.element, &r.property))
        {
            Some(p) => (p.written.clone(), p.value.clone()),
            None => (None, Value::Text(String::new())),
        }
    }
}
