//! Values exchanged with assets and stored in models and data records.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A dynamically typed value.
///
/// Encoded externally tagged, e.g. `{"real":0.5}` or `{"list":[{"int":1}]}`.
/// Reals must be finite; [`Value::is_finite`] is checked wherever values
/// cross a trust boundary (the gateway wire, the journal, configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Record(BTreeMap<String, Value>),
    List(Vec<Value>),
}

impl Value {
    pub fn is_finite(&self) -> bool {
        match self {
            Value::Real(r) => r.is_finite(),
            Value::Record(fields) => fields.values().all(Value::is_finite),
            Value::List(items) => items.iter().all(Value::is_finite),
            _ => true,
        }
    }

    /// Numeric view used by comparisons and transforms.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Text(_) => "text",
            Value::Record(_) => "record",
            Value::List(_) => "list",
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Record(fields) => {
                write!(f, "{{")?;
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                write!(f, "}}")
            }
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

/// Type of a value as declared in catalogs and languages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSchema {
    Any,
    Bool,
    Int,
    Real,
    Text,
    List(Box<ValueSchema>),
    Record(BTreeMap<String, ValueSchema>),
}

impl ValueSchema {
    /// Structural conformance. `Real` accepts only reals, `Int` only ints;
    /// records must carry exactly the declared fields.
    pub fn accepts(&self, value: &Value) -> bool {
        match (self, value) {
            (ValueSchema::Any, v) => v.is_finite(),
            (ValueSchema::Bool, Value::Bool(_)) => true,
            (ValueSchema::Int, Value::Int(_)) => true,
            (ValueSchema::Real, Value::Real(r)) => r.is_finite(),
            (ValueSchema::Text, Value::Text(_)) => true,
            (ValueSchema::List(item), Value::List(items)) => items.iter().all(|v| item.accepts(v)),
            (ValueSchema::Record(fields), Value::Record(values)) => {
                fields.len() == values.len()
                    && fields
                        .iter()
                        .all(|(name, schema)| values.get(name).is_some_and(|v| schema.accepts(v)))
            }
            _ => false,
        }
    }
}

impl fmt::Display for ValueSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSchema::Any => write!(f, "any"),
            ValueSchema::Bool => write!(f, "bool"),
            ValueSchema::Int => write!(f, "int"),
            ValueSchema::Real => write!(f, "real"),
            ValueSchema::Text => write!(f, "text"),
            ValueSchema::List(item) => write!(f, "list<{item}>"),
            ValueSchema::Record(fields) => {
                write!(f, "record{{")?;
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                write!(f, "}}")
            }
        }
    }
}
