use std::fmt;

use serde::{Deserialize, Serialize};

use crate::refs::PropertyRef;
use crate::value::Value;

/// A property of a gateway.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GatewayPropertyRef {
    pub gateway: String,
    pub property: String,
}

impl GatewayPropertyRef {
    pub fn new(gateway: impl Into<String>, property: impl Into<String>) -> Self {
        Self {
            gateway: gateway.into(),
            property: property.into(),
        }
    }
}

impl fmt::Display for GatewayPropertyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.gateway, self.property)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AsToDt,
    DtToAs,
    Bidirectional,
}

impl Direction {
    pub fn reads_asset(self) -> bool {
        matches!(self, Direction::AsToDt | Direction::Bidirectional)
    }

    pub fn writes_asset(self) -> bool {
        matches!(self, Direction::DtToAs | Direction::Bidirectional)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    OnGatewayChange { gateway: String, property: String },
    OnGatewayEvent { gateway: String, event: String },
    OnModelChange(PropertyRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    EveryNTicks(u64),
    OnTrigger(Trigger),
}

/// Affine value transform, `model = scale * asset + offset`. `unit` is a
/// label only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

fn one() -> f64 {
    1.0
}

impl Default for Transform {
    fn default() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
            unit: None,
        }
    }
}

impl Transform {
    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.scale.is_finite() && self.scale != 0.0 && self.offset.is_finite()
    }

    /// Asset value to model value.
    pub fn to_model(&self, v: &Value) -> Result<Value, String> {
        self.apply(v, |x| self.scale * x + self.offset)
    }

    /// Model value to asset value.
    pub fn to_asset(&self, v: &Value) -> Result<Value, String> {
        self.apply(v, |x| (x - self.offset) / self.scale)
    }

    // The identity passes any value through untouched, ints stay ints.
    fn apply(&self, v: &Value, f: impl Fn(f64) -> f64) -> Result<Value, String> {
        if self.is_identity() {
            return Ok(v.clone());
        }
        let x = v
            .as_f64()
            .ok_or_else(|| format!("cannot scale a {} value", v.type_name()))?;
        let y = f(x);
        if y.is_finite() {
            Ok(Value::Real(y))
        } else {
            Err(format!("transform of {x} is not finite"))
        }
    }
}

/// One-to-one synchronization link between a model property and a gateway
/// property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub id: String,
    pub model: PropertyRef,
    pub gateway: GatewayPropertyRef,
    pub direction: Direction,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Transform::is_identity")]
    pub transform: Transform,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl Mapping {
    pub fn new(
        id: impl Into<String>,
        model: PropertyRef,
        gateway: GatewayPropertyRef,
        direction: Direction,
        schedule: Schedule,
    ) -> Self {
        Self {
            id: id.into(),
            model,
            gateway,
            direction,
            schedule,
            transform: Transform::default(),
            enabled: true,
        }
    }
}
