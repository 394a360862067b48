//! Static classification and audit of twin configurations.
//!
//! Classification follows the data-flow taxonomy: no automated flow from
//! the actual system makes a digital model, an automated flow from it a
//! digital shadow, and an additional automated flow back to it a digital
//! twin. "Automated flow" means an enabled mapping; function invocations
//! by services do not count. A configuration whose only flows go from the
//! twin to the asset has no flow from the asset and is a digital model.
//!
//! The audit checks seven conclusions about a twin's architecture:
//!
//! | rule | satisfied when |
//! |------|----------------|
//! | C1 | every gateway has a gateway endpoint (`tcp://` or `sim://`) and at least one element |
//! | C2 | at least one model exists and the data manager is enabled |
//! | C3 | every model has a responsible manager |
//! | C4 | records are linked to models and origin and timeliness are mandatory |
//! | C5 | every gateway used by a mapping is read by one, and every written property is read-write |
//! | C6 | every service has an explicit grant |
//! | C7 | every reference resolves and every touchpoint is a gateway element or a service |

mod config;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ModelConfig, ServiceConfig, TwinConfiguration};

use crate::data::PropertyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    DigitalModel,
    DigitalShadow,
    DigitalTwin,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::DigitalModel => "digital model",
            Verdict::DigitalShadow => "digital shadow",
            Verdict::DigitalTwin => "digital twin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Enabled mappings that carry the flows behind the verdict.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unresolved reference: {}", .0.join("; "))]
pub struct UnresolvedReference(pub Vec<String>);

pub fn classify(config: &TwinConfiguration) -> Result<Classification, UnresolvedReference> {
    let findings = config.closure_findings();
    if !findings.is_empty() {
        return Err(UnresolvedReference(findings));
    }
    let enabled: Vec<_> = config.mappings.iter().filter(|m| m.enabled).collect();
    let inbound = enabled.iter().any(|m| m.direction.reads_asset());
    let outbound = enabled.iter().any(|m| m.direction.writes_asset());
    let verdict = if inbound && outbound {
        Verdict::DigitalTwin
    } else if inbound {
        Verdict::DigitalShadow
    } else {
        Verdict::DigitalModel
    };
    let evidence = match verdict {
        Verdict::DigitalModel => Vec::new(),
        Verdict::DigitalShadow => enabled
            .iter()
            .filter(|m| m.direction.reads_asset())
            .map(|m| m.id.clone())
            .collect(),
        Verdict::DigitalTwin => enabled.iter().map(|m| m.id.clone()).collect(),
    };
    Ok(Classification { verdict, evidence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Conclusion {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
}

impl Conclusion {
    pub const ALL: [Conclusion; 7] = [
        Conclusion::C1,
        Conclusion::C2,
        Conclusion::C3,
        Conclusion::C4,
        Conclusion::C5,
        Conclusion::C6,
        Conclusion::C7,
    ];

    pub fn summary(self) -> &'static str {
        match self {
            Conclusion::C1 => "interfaces to obtain data from the actual system",
            Conclusion::C2 => "digital objects on data and model level",
            Conclusion::C3 => "models are managed and synchronized",
            Conclusion::C4 => "data is qualified and related to models",
            Conclusion::C5 => "gateways are read and, where needed, written",
            Conclusion::C6 => "added-value services are gated",
            Conclusion::C7 => "well-defined boundaries to the environment",
        }
    }
}

impl fmt::Display for Conclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Satisfied,
    Violated,
    NotApplicable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Satisfied => "satisfied",
            Status::Violated => "violated",
            Status::NotApplicable => "not applicable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConclusionResult {
    pub conclusion: Conclusion,
    pub status: Status,
    pub findings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub results: Vec<ConclusionResult>,
}

impl ConformanceReport {
    pub fn status(&self, c: Conclusion) -> Status {
        self.results
            .iter()
            .find(|r| r.conclusion == c)
            .map_or(Status::NotApplicable, |r| r.status)
    }

    pub fn violated(&self) -> Vec<Conclusion> {
        self.results
            .iter()
            .filter(|r| r.status == Status::Violated)
            .map(|r| r.conclusion)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.violated().is_empty()
    }
}

fn verdict(problems: Vec<String>, ok: String) -> (Status, Vec<String>) {
    if problems.is_empty() {
        (Status::Satisfied, vec![ok])
    } else {
        (Status::Violated, problems)
    }
}

/// Audits a configuration. Unlike [`classify`], dangling references are
/// reported as a C7 violation rather than an error, so the report always
/// has all seven rows.
pub fn audit(config: &TwinConfiguration) -> ConformanceReport {
    let results = Conclusion::ALL
        .into_iter()
        .map(|c| {
            let (status, findings) = match c {
                Conclusion::C1 => c1(config),
                Conclusion::C2 => c2(config),
                Conclusion::C3 => c3(config),
                Conclusion::C4 => c4(config),
                Conclusion::C5 => c5(config),
                Conclusion::C6 => c6(config),
                Conclusion::C7 => c7(config),
            };
            ConclusionResult {
                conclusion: c,
                status,
                findings,
            }
        })
        .collect();
    ConformanceReport { results }
}

fn c1(config: &TwinConfiguration) -> (Status, Vec<String>) {
    if config.gateways.is_empty() {
        return (Status::NotApplicable, vec!["no gateways".into()]);
    }
    let mut problems = Vec::new();
    for g in &config.gateways {
        if !(g.endpoint.starts_with("tcp://") || g.endpoint.starts_with("sim://")) {
            problems.push(format!(
                "gateway {} reaches its asset through {}, not a gateway endpoint",
                g.id, g.endpoint
            ));
        }
        if g.elements.is_empty() {
            problems.push(format!("gateway {} exposes no elements", g.id));
        }
    }
    verdict(problems, format!("{} gateway(s)", config.gateways.len()))
}

fn c2(config: &TwinConfiguration) -> (Status, Vec<String>) {
    let mut problems = Vec::new();
    if config.models.is_empty() {
        problems.push("no models".into());
    }
    if !config.data.enabled {
        problems.push("data manager disabled".into());
    }
    verdict(
        problems,
        format!("{} model(s), data manager enabled", config.models.len()),
    )
}

fn c3(config: &TwinConfiguration) -> (Status, Vec<String>) {
    if config.models.is_empty() {
        return (Status::NotApplicable, vec!["no models".into()]);
    }
    let problems = config
        .models
        .iter()
        .filter(|m| m.manager.is_none())
        .map(|m| format!("model {} has no responsible manager", m.id))
        .collect();
    verdict(
        problems,
        format!("{} model(s) managed", config.models.len()),
    )
}

fn c4(config: &TwinConfiguration) -> (Status, Vec<String>) {
    let d = &config.data;
    if !d.enabled {
        return (Status::NotApplicable, vec!["data manager disabled".into()]);
    }
    let mut problems = Vec::new();
    if !d.link_records {
        problems.push("records are not linked to models".into());
    }
    for k in [PropertyKind::Origin, PropertyKind::Timeliness] {
        if !d.required_metadata.contains(&k) {
            problems.push(format!("{k:?} is not mandatory"));
        }
    }
    verdict(
        problems,
        "linked records with mandatory origin and timeliness".into(),
    )
}

fn c5(config: &TwinConfiguration) -> (Status, Vec<String>) {
    let used: std::collections::BTreeSet<&str> = config
        .mappings
        .iter()
        .map(|m| m.gateway.gateway.as_str())
        .filter(|g| config.gateway(g).is_some())
        .collect();
    if used.is_empty() {
        return (Status::NotApplicable, vec!["no gateway is mapped".into()]);
    }
    let mut problems = Vec::new();
    for g in &used {
        let on_g = || {
            config
                .mappings
                .iter()
                .filter(move |m| m.gateway.gateway == *g)
        };
        if !on_g().any(|m| m.direction.reads_asset()) {
            problems.push(format!("gateway {g} is never read"));
        }
        for m in on_g().filter(|m| m.direction.writes_asset()) {
            if config
                .gateway(g)
                .and_then(|d| d.element(&m.gateway.property))
                .is_some()
                && !config.writable(g, &m.gateway.property)
            {
                problems.push(format!("mapping {} writes read-only {}", m.id, m.gateway));
            }
        }
    }
    verdict(
        problems,
        format!("{} gateway(s) read and written as mapped", used.len()),
    )
}

fn c6(config: &TwinConfiguration) -> (Status, Vec<String>) {
    if config.services.is_empty() {
        return (Status::NotApplicable, vec!["no services".into()]);
    }
    let problems = config
        .services
        .iter()
        .filter(|s| s.grant.is_none())
        .map(|s| format!("service {} has no grant", s.id))
        .collect();
    verdict(
        problems,
        format!("{} service(s) gated", config.services.len()),
    )
}

fn c7(config: &TwinConfiguration) -> (Status, Vec<String>) {
    verdict(config.closure_findings(), "all references resolve".into())
}
