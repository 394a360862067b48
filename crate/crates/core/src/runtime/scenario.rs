//! Scripted, deterministic twin runs.
//!
//! A script is a JSON object `{"steps": [...]}`; each step is tagged by
//! `"step"`:
//!
//! ```json
//! {"steps": [
//!   {"step": "tick", "count": 3},
//!   {"step": "model_edit", "manager": "ops", "operator": "set_property", "model": "tank_model",
//!    "args": {"element": {"text": "valve"}, "property": {"text": "opening"}, "value": {"real": 1.0}}},
//!   {"step": "expect_model", "property": {"model": "tank_model", "element": "tank", "property": "level"},
//!    "value": {"real": 0.5}}
//! ]}
//! ```
//!
//! Expectations abort the run with the failing step's index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RuntimeError, Twin};
use crate::data::Selector;
use crate::engine::{SyncAction, SyncDecision, SyncReason};
use crate::models::Mode;
use crate::refs::{PropertyRef, Tick};
use crate::services::ServiceRequest;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Tick {
        #[serde(default = "one")]
        count: u64,
    },
    AssetSet {
        gateway: String,
        property: String,
        value: Value,
    },
    AssetRaise {
        gateway: String,
        event: String,
        payload: Value,
    },
    ModelEdit {
        manager: String,
        operator: String,
        model: String,
        args: BTreeMap<String, Value>,
    },
    SetMode {
        manager: String,
        model: String,
        mode: Mode,
    },
    ServiceOff {
        service: String,
    },
    ServiceOn {
        service: String,
    },
    EnableMapping {
        mapping: String,
    },
    Invoke {
        gateway: String,
        function: String,
        #[serde(default)]
        args: Vec<Value>,
    },
    ExpectModel {
        property: PropertyRef,
        value: Value,
    },
    ExpectDecision {
        pattern: DecisionPattern,
    },
    ExpectRecordCount {
        #[serde(default)]
        selector: Selector,
        count: usize,
    },
}

/// Matches a decision when every given field is equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<SyncAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<SyncReason>,
}

impl DecisionPattern {
    pub fn matches(&self, d: &SyncDecision) -> bool {
        self.tick.is_none_or(|t| t == d.tick)
            && self.mapping.as_ref().is_none_or(|m| *m == d.mapping)
            && self.action.is_none_or(|a| a == d.action)
            && self.reason.is_none_or(|r| r == d.reason)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("step {index}: {message}")]
pub struct ScenarioError {
    pub index: usize,
    pub message: String,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Runs every step in order against `twin`.
    pub fn run(&self, twin: &mut Twin) -> Result<(), ScenarioError> {
        for (index, step) in self.steps.iter().enumerate() {
            run_step(twin, step).map_err(|message| ScenarioError { index, message })?;
        }
        Ok(())
    }
}

fn show(v: &serde_json::Value) -> String {
    v.to_string()
}

fn run_step(twin: &mut Twin, step: &Step) -> Result<(), String> {
    let rt = |e: RuntimeError| e.to_string();
    match step {
        Step::Tick { count } => {
            for _ in 0..*count {
                twin.tick().map_err(rt)?;
            }
        }
        Step::AssetSet {
            gateway,
            property,
            value,
        } => twin
            .asset_set(gateway, property, value.clone())
            .map_err(rt)?,
        Step::AssetRaise {
            gateway,
            event,
            payload,
        } => twin
            .asset_raise(gateway, event, payload.clone())
            .map_err(rt)?,
        Step::ModelEdit {
            manager,
            operator,
            model,
            args,
        } => {
            twin.engine_mut()
                .apply_operator(manager, operator, model, args)
                .map_err(|e| e.to_string())?;
        }
        Step::SetMode {
            manager,
            model,
            mode,
        } => {
            twin.engine_mut()
                .set_mode(manager, model, *mode)
                .map_err(|e| e.to_string())?;
        }
        Step::ServiceOff { service } => twin
            .engine_mut()
            .set_service_enabled(service, false)
            .map_err(|e| e.to_string())?,
        Step::ServiceOn { service } => twin
            .engine_mut()
            .set_service_enabled(service, true)
            .map_err(|e| e.to_string())?,
        Step::EnableMapping { mapping } => twin
            .engine_mut()
            .set_mapping_enabled(mapping, true)
            .map_err(|e| e.to_string())?,
        Step::Invoke {
            gateway,
            function,
            args,
        } => {
            let req = ServiceRequest::InvokeFunction {
                gateway: gateway.clone(),
                function: function.clone(),
                args: args.clone(),
            };
            twin.engine_mut()
                .operator_request(req)
                .map_err(|e| e.to_string())?;
        }
        Step::ExpectModel { property, value } => {
            let actual = twin.engine().models().value(property).cloned();
            if actual.as_ref() != Some(value) {
                let got = actual.map_or("nothing".to_owned(), |v| {
                    show(&serde_json::to_value(v).unwrap_or_default())
                });
                return Err(format!(
                    "expected {property} = {}, got {got}",
                    show(&serde_json::to_value(value).unwrap_or_default())
                ));
            }
        }
        Step::ExpectDecision { pattern } => {
            if !twin.decisions().iter().any(|d| pattern.matches(d)) {
                return Err(format!(
                    "no decision matches {}",
                    show(&serde_json::to_value(pattern).unwrap_or_default())
                ));
            }
        }
        Step::ExpectRecordCount { selector, count } => {
            let actual = twin.engine().data().map_or(0, |d| d.count(selector));
            if actual != *count {
                return Err(format!(
                    "expected {count} record(s) matching {}, got {actual}",
                    show(&serde_json::to_value(selector).unwrap_or_default())
                ));
            }
        }
    }
    Ok(())
}
