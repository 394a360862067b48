//! Added-value services running on top of the engine.
//!
//! A service never holds a model, data store or gateway. Everything it does
//! goes through [`ServiceContext::request`], which the engine checks
//! against the service's [`ServiceGrant`] before executing.

mod builtin;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use builtin::{BuiltinSpec, KpiMonitor, KpiParams, ThresholdGuard, ThresholdParams};

use crate::data::{DataError, DataRecord, RecordId, Selector};
use crate::engine::{Engine, SyncDecision};
use crate::gateway::{EventOccurrence, GatewayError, ValueSample};
use crate::models::{ModelError, OperatorOutcome};
use crate::refs::{ModelElementRef, PropertyRef, Tick};
use crate::value::Value;

/// Wildcard target matching every model or gateway.
pub const ANY: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ReadModel(String),
    WriteModel(String),
    ReadData,
    IngestData,
    ReadGateway(String),
    CommandGateway(String),
}

impl Capability {
    /// Model or gateway named by the capability, unless it is a wildcard.
    pub fn target(&self) -> Option<&str> {
        match self {
            Capability::ReadModel(t)
            | Capability::WriteModel(t)
            | Capability::ReadGateway(t)
            | Capability::CommandGateway(t) => Some(t.as_str()).filter(|t| *t != ANY),
            Capability::ReadData | Capability::IngestData => None,
        }
    }

    fn covers(&self, needed: &Capability) -> bool {
        use Capability::*;
        match (self, needed) {
            (ReadModel(a), ReadModel(b))
            | (WriteModel(a), WriteModel(b))
            | (ReadGateway(a), ReadGateway(b))
            | (CommandGateway(a), CommandGateway(b)) => a == ANY || a == b,
            (ReadData, ReadData) | (IngestData, IngestData) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capability::ReadModel(t) => write!(f, "read_model({t})"),
            Capability::WriteModel(t) => write!(f, "write_model({t})"),
            Capability::ReadData => f.write_str("read_data"),
            Capability::IngestData => f.write_str("ingest_data"),
            Capability::ReadGateway(t) => write!(f, "read_gateway({t})"),
            Capability::CommandGateway(t) => write!(f, "command_gateway({t})"),
        }
    }
}

/// Positive capability set. Anything not listed is denied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceGrant {
    pub capabilities: Vec<Capability>,
}

impl ServiceGrant {
    pub fn new(capabilities: impl IntoIterator<Item = Capability>) -> Self {
        Self {
            capabilities: capabilities.into_iter().collect(),
        }
    }

    pub fn allows(&self, needed: &Capability) -> bool {
        self.capabilities.iter().any(|c| c.covers(needed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hook {
    OnTick,
    OnDecision,
    OnEvent { gateway: String, event: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub id: String,
    /// `None` is an ungated service: registered, but every request fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant: Option<ServiceGrant>,
    #[serde(default)]
    pub hooks: Vec<Hook>,
}

impl ServiceDescriptor {
    pub fn effective_grant(&self) -> ServiceGrant {
        self.grant.clone().unwrap_or_default()
    }
}

/// A mediated operation. Each variant needs exactly one capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "request", rename_all = "snake_case")]
pub enum ServiceRequest {
    ReadModel {
        property: PropertyRef,
    },
    ApplyOperator {
        model: String,
        operator: String,
        args: BTreeMap<String, Value>,
    },
    QueryData {
        selector: Selector,
    },
    /// Ingests a Processed, Historical record with the caller as origin.
    IngestProcessed {
        value: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link: Option<ModelElementRef>,
    },
    ReadGateway {
        gateway: String,
        property: String,
    },
    InvokeFunction {
        gateway: String,
        function: String,
        args: Vec<Value>,
    },
}

impl ServiceRequest {
    pub fn required_capability(&self) -> Capability {
        match self {
            ServiceRequest::ReadModel { property } => Capability::ReadModel(property.model.clone()),
            ServiceRequest::ApplyOperator { model, .. } => Capability::WriteModel(model.clone()),
            ServiceRequest::QueryData { .. } => Capability::ReadData,
            ServiceRequest::IngestProcessed { .. } => Capability::IngestData,
            ServiceRequest::ReadGateway { gateway, .. } => Capability::ReadGateway(gateway.clone()),
            ServiceRequest::InvokeFunction { gateway, .. } => {
                Capability::CommandGateway(gateway.clone())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceRequest::ReadModel { .. } => "read_model",
            ServiceRequest::ApplyOperator { .. } => "apply_operator",
            ServiceRequest::QueryData { .. } => "query_data",
            ServiceRequest::IngestProcessed { .. } => "ingest_processed",
            ServiceRequest::ReadGateway { .. } => "read_gateway",
            ServiceRequest::InvokeFunction { .. } => "invoke_function",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceResponse {
    Value(Value),
    Applied(OperatorOutcome),
    Records(Vec<DataRecord>),
    Ingested(RecordId),
    Sample(ValueSample),
}

impl ServiceResponse {
    pub fn into_value(self) -> Option<Value> {
        match self {
            ServiceResponse::Value(v) => Some(v),
            ServiceResponse::Sample(s) => Some(s.value),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("service {service} lacks {capability}")]
    PermissionDenied {
        service: String,
        capability: Capability,
    },
    #[error("service {0} is disabled")]
    Disabled(String),
    #[error("service {0} already exists")]
    DuplicateService(String),
    #[error("service {service}: grant names unknown {what} {target}")]
    DanglingGrantTarget {
        service: String,
        what: &'static str,
        target: String,
    },
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("unknown model property {0}")]
    UnknownProperty(PropertyRef),
    #[error("unknown gateway {0}")]
    UnknownGateway(String),
    #[error("no data manager is configured")]
    NoDataManager,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid service parameters: {0}")]
    InvalidParams(String),
}

/// Behaviour of a service. Hooks default to doing nothing; only hooks
/// listed in the descriptor are called.
pub trait Service: Send {
    fn on_tick(&mut self, _ctx: &mut ServiceContext<'_>) {}
    fn on_decision(&mut self, _ctx: &mut ServiceContext<'_>, _decision: &SyncDecision) {}
    fn on_event(
        &mut self,
        _ctx: &mut ServiceContext<'_>,
        _gateway: &str,
        _event: &EventOccurrence,
    ) {
    }
}

/// The only handle a running service gets.
pub struct ServiceContext<'a> {
    pub(crate) engine: &'a mut Engine,
    pub(crate) service: &'a str,
}

impl ServiceContext<'_> {
    pub fn service_id(&self) -> &str {
        self.service
    }

    pub fn tick(&self) -> Tick {
        self.engine.current_tick()
    }

    pub fn request(&mut self, request: ServiceRequest) -> Result<ServiceResponse, ServiceError> {
        self.engine.mediate_service_call(self.service, request)
    }
}

/// One line of the engine's mediated-request log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tick: Tick,
    pub caller: String,
    pub request: String,
    pub outcome: AuditOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Allowed,
    Denied(String),
    Failed(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcard_and_exact_targets() {
        let g = ServiceGrant::new([
            Capability::ReadModel(ANY.into()),
            Capability::CommandGateway("tank01".into()),
        ]);
        assert!(g.allows(&Capability::ReadModel("anything".into())));
        assert!(g.allows(&Capability::CommandGateway("tank01".into())));
        assert!(!g.allows(&Capability::CommandGateway("tank02".into())));
        assert!(!g.allows(&Capability::WriteModel("anything".into())));
        assert!(!g.allows(&Capability::ReadData));
    }

    #[test]
    fn empty_grant_allows_nothing() {
        let g = ServiceGrant::default();
        for c in [
            Capability::ReadModel(ANY.into()),
            Capability::WriteModel("m".into()),
            Capability::ReadData,
            Capability::IngestData,
            Capability::ReadGateway("g".into()),
            Capability::CommandGateway(ANY.into()),
        ] {
            assert!(!g.allows(&c));
        }
    }

    #[test]
    fn grant_encoding() {
        let g: ServiceGrant = serde_json::from_str(r#"["read_data",{"read_model":"*"}]"#).unwrap();
        assert_eq!(
            g.capabilities,
            vec![Capability::ReadData, Capability::ReadModel("*".into())]
        );
        let h: Vec<Hook> =
            serde_json::from_str(r#"["on_tick",{"on_event":{"gateway":"g","event":"e"}}]"#)
                .unwrap();
        assert_eq!(
            h[1],
            Hook::OnEvent {
                gateway: "g".into(),
                event: "e".into()
            }
        );
    }
}
