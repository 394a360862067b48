use serde::{Deserialize, Serialize};

use super::{Service, ServiceContext, ServiceRequest};
use crate::refs::PropertyRef;
use crate::value::Value;

/// Built-in service selected by name in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum BuiltinSpec {
    KpiMonitor(KpiParams),
    ThresholdGuard(ThresholdParams),
}

impl BuiltinSpec {
    pub fn instantiate(&self) -> Box<dyn Service> {
        match self {
            BuiltinSpec::KpiMonitor(p) => Box::new(KpiMonitor::new(p.clone())),
            BuiltinSpec::ThresholdGuard(p) => Box::new(ThresholdGuard::new(p.clone())),
        }
    }

    pub fn model_refs(&self) -> Vec<&PropertyRef> {
        match self {
            BuiltinSpec::KpiMonitor(p) => vec![&p.property],
            BuiltinSpec::ThresholdGuard(p) => vec![&p.property],
        }
    }

    /// `(gateway, function)` pairs the service invokes.
    pub fn functions(&self) -> Vec<(&str, &str)> {
        match self {
            BuiltinSpec::KpiMonitor(_) => vec![],
            BuiltinSpec::ThresholdGuard(p) => vec![(p.gateway.as_str(), p.function.as_str())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiParams {
    pub window: u64,
    pub property: PropertyRef,
}

/// Samples a model property every tick and ingests the mean of each full
/// window as a processed record.
#[derive(Debug)]
pub struct KpiMonitor {
    params: KpiParams,
    window: Vec<f64>,
}

impl KpiMonitor {
    pub fn new(params: KpiParams) -> Self {
        Self {
            params,
            window: Vec::new(),
        }
    }
}

impl Service for KpiMonitor {
    fn on_tick(&mut self, ctx: &mut ServiceContext<'_>) {
        let read = ctx.request(ServiceRequest::ReadModel {
            property: self.params.property.clone(),
        });
        let Some(x) = read
            .ok()
            .and_then(|r| r.into_value())
            .and_then(|v| v.as_f64())
        else {
            return;
        };
        self.window.push(x);
        if (self.window.len() as u64) < self.params.window.max(1) {
            return;
        }
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.window.clear();
        let link = Some(self.params.property.element_ref());
        if let Err(e) = ctx.request(ServiceRequest::IngestProcessed {
            value: Value::Real(mean),
            link,
        }) {
            log::warn!("{}: {e}", ctx.service_id());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub property: PropertyRef,
    pub bound: f64,
    pub gateway: String,
    pub function: String,
}

/// Invokes a gateway function once each time a model property rises above
/// a bound. Re-arms when the property drops below the bound again.
#[derive(Debug)]
pub struct ThresholdGuard {
    params: ThresholdParams,
    armed: bool,
}

impl ThresholdGuard {
    pub fn new(params: ThresholdParams) -> Self {
        Self {
            params,
            armed: true,
        }
    }
}

impl Service for ThresholdGuard {
    fn on_tick(&mut self, ctx: &mut ServiceContext<'_>) {
        let read = ctx.request(ServiceRequest::ReadModel {
            property: self.params.property.clone(),
        });
        let Some(x) = read
            .ok()
            .and_then(|r| r.into_value())
            .and_then(|v| v.as_f64())
        else {
            return;
        };
        if x < self.params.bound {
            self.armed = true;
        } else if x > self.params.bound && self.armed {
            self.armed = false;
            let req = ServiceRequest::InvokeFunction {
                gateway: self.params.gateway.clone(),
                function: self.params.function.clone(),
                args: vec![],
            };
            if let Err(e) = ctx.request(req) {
                log::warn!("{}: {e}", ctx.service_id());
            }
        }
    }
}
