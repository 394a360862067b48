//! Gateway wire protocol.
//!
//! Every message is one JSON object on one line, terminated by `\n`.
//! Fields are emitted in the fixed order `op, id, element, value, ts, seq,
//! catalog, error`, absent fields omitted, so transcripts are byte-stable.
//!
//! Requests carry an `id`; the response echoes it. Samples and events
//! pushed by the asset carry no `id`.
//!
//! | request                                   | response                                  |
//! |-------------------------------------------|-------------------------------------------|
//! | `hello`                                   | `catalog` with `catalog`                  |
//! | `read` element                            | `sample` element, value, ts, seq          |
//! | `write` element, value                    | `ack` element, ts, seq                    |
//! | `observe` element                         | `ack` element; later pushed `sample`s     |
//! | `subscribe` element                       | `ack` element; later pushed `event`s      |
//! | `invoke` element, value (list of args)    | `result` element, value, ts               |
//! | `ping`                                    | `pong`                                    |
//! | `step` value (int count, simulation only) | `ack` ts                                  |
//! | `set` element, value (simulation only)    | `ack` element, ts, seq                    |
//! | `raise` element, value (simulation only)  | `ack` element, ts, seq                    |
//!
//! Any request may instead be answered by `error` with `error: {code,
//! message}`.

use serde::{Deserialize, Serialize};

use super::{GatewayElementDecl, GatewayError};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Hello,
    Catalog,
    Read,
    Write,
    Observe,
    Subscribe,
    Invoke,
    Sample,
    Event,
    Ack,
    Result,
    Error,
    Ping,
    Pong,
    Step,
    Set,
    Raise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Vec<GatewayElementDecl>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Message {
    pub fn new(op: Op) -> Self {
        Self {
            op,
            id: None,
            element: None,
            value: None,
            ts: None,
            seq: None,
            catalog: None,
            error: None,
        }
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = Some(id);
        self
    }

    pub fn with_element(mut self, element: impl Into<String>) -> Self {
        self.element = Some(element.into());
        self
    }

    pub fn with_value(mut self, value: Value) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_ts(mut self, ts: u64) -> Self {
        self.ts = Some(ts);
        self
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn error(id: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        let mut m = Message::new(Op::Error);
        m.id = id;
        m.error = Some(WireError {
            code,
            message: message.into(),
        });
        m
    }

    /// Encodes as a single line including the trailing newline.
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message encoding is infallible");
        s.push('\n');
        s
    }

    /// Decodes one line (with or without its newline). Non-finite reals are
    /// rejected here so they never reach a sample.
    pub fn decode(line: &str) -> Result<Self, GatewayError> {
        let msg: Message = serde_json::from_str(line.trim_end_matches(['\n', '\r']))
            .map_err(|e| GatewayError::ProtocolError(format!("malformed message: {e}")))?;
        if msg.value.as_ref().is_some_and(|v| !v.is_finite()) {
            return Err(GatewayError::ProtocolError("non-finite value".into()));
        }
        Ok(msg)
    }

    /// Best-effort extraction of the correlation id from a line that failed
    /// to decode.
    pub fn salvage_id(line: &str) -> Option<u64> {
        serde_json::from_str::<serde_json::Value>(line)
            .ok()?
            .get("id")?
            .as_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NoSuchElement,
    WrongKind,
    ReadOnly,
    Schema,
    AssetFault,
    BadRequest,
    Unsupported,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Maps an asset-reported error onto the gateway error taxonomy.
    pub fn into_gateway_error(self, element: &str) -> GatewayError {
        match self.code {
            ErrorCode::NoSuchElement => GatewayError::NoSuchElement(element.to_owned()),
            ErrorCode::ReadOnly => GatewayError::ReadOnlyViolation(element.to_owned()),
            ErrorCode::Schema => GatewayError::SchemaViolation {
                element: element.to_owned(),
                detail: self.message,
            },
            ErrorCode::AssetFault => GatewayError::AssetFault(self.message),
            ErrorCode::WrongKind | ErrorCode::BadRequest | ErrorCode::Unsupported => {
                GatewayError::ProtocolError(format!("{:?}: {}", self.code, self.message))
            }
        }
    }
}
