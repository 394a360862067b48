//! Gateways: the only path between the twin and an actual system.
//!
//! A gateway fronts exactly one asset and exposes its features of interest
//! as typed elements: properties (read, written, observed), events (raised
//! by the asset) and functions (invoked with arguments, returning a
//! result). Communication is a newline-delimited structured text protocol,
//! see [`protocol`].

mod client;
pub mod protocol;
pub mod sim;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Value, ValueSchema};

pub use client::{AssetControl, GatewayHandle, Stream, StreamEnd, Transcript};

pub type SampleStream = Stream<ValueSample>;
pub type EventStream = Stream<EventOccurrence>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayDescriptor {
    pub id: String,
    pub endpoint: String,
    #[serde(default)]
    pub elements: Vec<GatewayElementDecl>,
}

impl GatewayDescriptor {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.id.is_empty() {
            return Err(GatewayError::InvalidDescriptor(
                "gateway id is empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for e in &self.elements {
            if e.name.is_empty() {
                return Err(GatewayError::InvalidDescriptor(format!(
                    "gateway {}: element with empty name",
                    self.id
                )));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(GatewayError::InvalidDescriptor(format!(
                    "gateway {}: duplicate element {}",
                    self.id, e.name
                )));
            }
        }
        Ok(())
    }

    pub fn element(&self, name: &str) -> Option<&GatewayElementDecl> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Catalog in canonical (name-sorted) order.
    pub fn sorted_catalog(&self) -> Vec<GatewayElementDecl> {
        sorted(self.elements.clone())
    }
}

pub(crate) fn sorted(mut elements: Vec<GatewayElementDecl>) -> Vec<GatewayElementDecl> {
    elements.sort_by(|a, b| a.name.cmp(&b.name));
    elements
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayElementDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: ElementKind,
}

impl GatewayElementDecl {
    pub fn property(name: &str, schema: ValueSchema, access: Access) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::Property { schema, access },
        }
    }

    pub fn event(name: &str, payload: ValueSchema) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::Event { payload },
        }
    }

    pub fn function(name: &str, args: Vec<ValueSchema>, result: ValueSchema) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::Function { args, result },
        }
    }

    pub fn tag(&self) -> KindTag {
        self.kind.tag()
    }
}

/// Kind of a gateway element together with its schema fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    Property {
        schema: ValueSchema,
        access: Access,
    },
    Event {
        payload: ValueSchema,
    },
    Function {
        args: Vec<ValueSchema>,
        result: ValueSchema,
    },
}

impl ElementKind {
    pub fn tag(&self) -> KindTag {
        match self {
            ElementKind::Property { .. } => KindTag::Property,
            ElementKind::Event { .. } => KindTag::Event,
            ElementKind::Function { .. } => KindTag::Function,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KindTag {
    Property,
    Event,
    Function,
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KindTag::Property => "property",
            KindTag::Event => "event",
            KindTag::Function => "function",
        })
    }
}

/// A property value as reported by the asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    pub element: String,
    pub value: Value,
    /// Milliseconds since the asset started, on the asset's own clock.
    pub asset_timestamp: u64,
    pub sequence_no: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOccurrence {
    pub name: String,
    pub payload: Value,
    pub asset_timestamp: u64,
    pub sequence_no: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acknowledgement {
    pub element: String,
    pub asset_timestamp: u64,
    /// Sequence number of the property version produced by the write.
    pub sequence_no: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("no such element: {0}")]
    NoSuchElement(String),
    #[error("element {element} is a {actual}, expected a {expected}")]
    WrongKind {
        element: String,
        expected: KindTag,
        actual: KindTag,
    },
    #[error("property {0} is read-only")]
    ReadOnlyViolation(String),
    #[error("schema violation on {element}: {detail}")]
    SchemaViolation { element: String, detail: String },
    #[error("asset fault: {0}")]
    AssetFault(String),
    #[error("gateway disconnected")]
    Disconnected,
    #[error("invalid gateway descriptor: {0}")]
    InvalidDescriptor(String),
}
