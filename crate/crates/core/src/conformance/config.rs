use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::PropertyKind;
use crate::engine::{Mapping, Schedule, Trigger};
use crate::gateway::{ElementKind, GatewayDescriptor, KindTag};
use crate::models::{ElementSpec, Mode, ModelManager, ModelingLanguage};
use crate::refs::PropertyRef;
use crate::services::{BuiltinSpec, Capability, Hook, ServiceDescriptor, ServiceGrant};

/// Everything a twin consists of, as loaded from one configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinConfiguration {
    #[serde(default)]
    pub gateways: Vec<GatewayDescriptor>,
    #[serde(default)]
    pub languages: Vec<ModelingLanguage>,
    #[serde(default)]
    pub managers: Vec<ModelManager>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub mappings: Vec<Mapping>,
    #[serde(default)]
    pub services: Vec<ServiceConfig>,
    #[serde(default)]
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    pub language: String,
    /// A model without a manager cannot be changed and fails the audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manager: Option<String>,
    #[serde(default)]
    pub track_last_update: bool,
    #[serde(default = "offline")]
    pub mode: Mode,
    #[serde(default)]
    pub elements: Vec<ElementSpec>,
}

fn offline() -> Mode {
    Mode::Offline
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant: Option<ServiceGrant>,
    #[serde(default)]
    pub hooks: Vec<Hook>,
    #[serde(flatten)]
    pub builtin: BuiltinSpec,
}

impl ServiceConfig {
    pub fn descriptor(&self) -> ServiceDescriptor {
        ServiceDescriptor {
            id: self.id.clone(),
            grant: self.grant.clone(),
            hooks: self.hooks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Journal file, relative to the configuration file. In-memory if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal: Option<PathBuf>,
    #[serde(default = "yes")]
    pub link_records: bool,
    #[serde(default = "mandatory")]
    pub required_metadata: Vec<PropertyKind>,
}

fn yes() -> bool {
    true
}

fn mandatory() -> Vec<PropertyKind> {
    vec![PropertyKind::Origin, PropertyKind::Timeliness]
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            journal: None,
            link_records: true,
            required_metadata: mandatory(),
        }
    }
}

impl TwinConfiguration {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configurations always encode")
    }

    pub fn gateway(&self, id: &str) -> Option<&GatewayDescriptor> {
        self.gateways.iter().find(|g| g.id == id)
    }

    pub fn model(&self, id: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.id == id)
    }

    fn language(&self, id: &str) -> Option<&ModelingLanguage> {
        self.languages.iter().find(|l| l.id == id)
    }

    fn gateway_element(&self, gateway: &str, name: &str, tag: KindTag) -> bool {
        self.gateway(gateway)
            .and_then(|g| g.element(name))
            .is_some_and(|d| d.tag() == tag)
    }

    /// Whether a model property is declared by its model's language and
    /// its element exists.
    pub fn resolves_property(&self, r: &PropertyRef) -> bool {
        let Some(model) = self.model(&r.model) else {
            return false;
        };
        let Some(el) = model.elements.iter().find(|e| e.id == r.element) else {
            return false;
        };
        self.language(&model.language)
            .and_then(|l| l.property_decls(&el.kind))
            .is_some_and(|d| d.contains_key(&r.property))
    }

    /// Every dangling or duplicate reference, as human-readable findings.
    /// Empty means the configuration is referentially closed.
    pub fn closure_findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn dupes<'a>(what: &str, ids: impl Iterator<Item = &'a str>, out: &mut Vec<String>) {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    out.push(format!("duplicate {what} {id}"));
                }
            }
        }
        dupes(
            "gateway",
            self.gateways.iter().map(|g| g.id.as_str()),
            &mut out,
        );
        dupes(
            "language",
            self.languages.iter().map(|l| l.id.as_str()),
            &mut out,
        );
        dupes(
            "manager",
            self.managers.iter().map(|m| m.id.as_str()),
            &mut out,
        );
        dupes("model", self.models.iter().map(|m| m.id.as_str()), &mut out);
        dupes(
            "mapping",
            self.mappings.iter().map(|m| m.id.as_str()),
            &mut out,
        );
        dupes(
            "service",
            self.services.iter().map(|s| s.id.as_str()),
            &mut out,
        );

        let manager = |id: &str| self.managers.iter().any(|m| m.id == id);
        for mgr in &self.managers {
            for d in &mgr.delegations {
                if !manager(&d.target) {
                    out.push(format!(
                        "manager {} delegates to unknown manager {}",
                        mgr.id, d.target
                    ));
                }
            }
        }
        for m in &self.models {
            match self.language(&m.language) {
                None => out.push(format!(
                    "model {} uses unknown language {}",
                    m.id, m.language
                )),
                Some(l) => {
                    for e in m.elements.iter().filter(|e| !l.declares_kind(&e.kind)) {
                        out.push(format!(
                            "model {} element {} has unknown kind {}",
                            m.id, e.id, e.kind
                        ));
                    }
                }
            }
            if let Some(mgr) = &m.manager {
                if !manager(mgr) {
                    out.push(format!("model {} names unknown manager {mgr}", m.id));
                }
            }
        }
        for map in &self.mappings {
            if !self.resolves_property(&map.model) {
                out.push(format!(
                    "mapping {} model side {} does not resolve",
                    map.id, map.model
                ));
            }
            if !self.gateway_element(
                &map.gateway.gateway,
                &map.gateway.property,
                KindTag::Property,
            ) {
                out.push(format!(
                    "mapping {} gateway side {} does not resolve",
                    map.id, map.gateway
                ));
            }
            if let Schedule::OnTrigger(t) = &map.schedule {
                let ok = match t {
                    Trigger::OnGatewayChange { gateway, property } => {
                        self.gateway_element(gateway, property, KindTag::Property)
                    }
                    Trigger::OnGatewayEvent { gateway, event } => {
                        self.gateway_element(gateway, event, KindTag::Event)
                    }
                    Trigger::OnModelChange(r) => self.resolves_property(r),
                };
                if !ok {
                    out.push(format!("mapping {} trigger does not resolve", map.id));
                }
            }
        }
        for s in &self.services {
            for cap in s.grant.iter().flat_map(|g| &g.capabilities) {
                let Some(target) = cap.target() else { continue };
                let ok = match cap {
                    Capability::ReadModel(_) | Capability::WriteModel(_) => {
                        self.model(target).is_some()
                    }
                    _ => self.gateway(target).is_some(),
                };
                if !ok {
                    out.push(format!(
                        "service {} grant names unknown target {target}",
                        s.id
                    ));
                }
            }
            for h in &s.hooks {
                if let Hook::OnEvent { gateway, event } = h {
                    if !self.gateway_element(gateway, event, KindTag::Event) {
                        out.push(format!(
                            "service {} hooks unknown event {gateway}.{event}",
                            s.id
                        ));
                    }
                }
            }
            for r in s.builtin.model_refs() {
                if !self.resolves_property(r) {
                    out.push(format!("service {} reads unknown property {r}", s.id));
                }
            }
            for (g, f) in s.builtin.functions() {
                if !self.gateway_element(g, f, KindTag::Function) {
                    out.push(format!("service {} invokes unknown function {g}.{f}", s.id));
                }
            }
        }
        out
    }

    /// Whether a gateway property is declared read-write.
    pub fn writable(&self, gateway: &str, property: &str) -> bool {
        self.gateway(gateway)
            .and_then(|g| g.element(property))
            .is_some_and(|d| {
                matches!(
                    d.kind,
                    ElementKind::Property {
                        access: crate::gateway::Access::ReadWrite,
                        ..
                    }
                )
            })
    }
}
