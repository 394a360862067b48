//! Models, modeling languages and the managers that own them.
//!
//! The registry hands out shared references only. A model changes through
//! [`ModelRegistry::apply_operator`], [`ModelRegistry::set_mode`] or
//! [`ModelRegistry::restore`] and through nothing else.

mod language;
mod operator;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use language::{
    CmpOp, IntegrityRule, ModelingLanguage, Operand, Predicate, PropertyDecl, RemoteLookup,
    RuleCheck,
};
pub use operator::{builtin, Arg, OperatorDef, OperatorStep, BUILTIN_OPERATORS};

use crate::data::PropertyKind;
use crate::refs::{PropertyRef, Tick};
use crate::value::Value;

/// Model property holding the mode.
pub const MODE_PROPERTY: &str = "mode";
/// Model property holding the tick of the latest committed change.
pub const LAST_UPDATE_PROPERTY: &str = "last_update";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
}

impl Mode {
    fn as_value(self) -> Value {
        Value::text(self.to_string())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        })
    }
}

/// Who committed a property value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Writer {
    Operator,
    Service(String),
    Sync { gateway: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteStamp {
    pub tick: Tick,
    pub by: Writer,
}

impl WriteStamp {
    pub fn new(tick: Tick, by: Writer) -> Self {
        Self { tick, by }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProperty {
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<PropertyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written: Option<WriteStamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelElement {
    pub id: String,
    pub kind: String,
    pub properties: BTreeMap<String, ModelProperty>,
}

impl ModelElement {
    pub fn value(&self, property: &str) -> Option<&Value> {
        self.properties.get(property).map(|p| &p.value)
    }
}

/// Initial content of an element, as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub properties: BTreeMap<String, Value>,
}

impl ElementSpec {
    pub fn new(
        id: impl Into<String>,
        kind: impl Into<String>,
        properties: impl IntoIterator<Item = (&'static str, Value)>,
    ) -> Self {
        Self {
            id: id.into(),
            kind: kind.into(),
            properties: properties
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: String,
    pub language: String,
    pub manager: String,
    pub elements: BTreeMap<String, ModelElement>,
    pub properties: BTreeMap<String, ModelProperty>,
}

impl Model {
    pub fn mode(&self) -> Mode {
        match self
            .properties
            .get(MODE_PROPERTY)
            .and_then(|p| p.value.as_text())
        {
            Some("online") => Mode::Online,
            _ => Mode::Offline,
        }
    }

    pub fn tracks_last_update(&self) -> bool {
        self.properties.contains_key(LAST_UPDATE_PROPERTY)
    }

    pub fn last_update(&self) -> Option<Tick> {
        match self.properties.get(LAST_UPDATE_PROPERTY)?.value {
            Value::Int(t) => Some(t as Tick),
            _ => None,
        }
    }

    pub fn property(&self, element: &str, property: &str) -> Option<&ModelProperty> {
        self.elements.get(element)?.properties.get(property)
    }

    pub fn value(&self, element: &str, property: &str) -> Option<&Value> {
        self.property(element, property).map(|p| &p.value)
    }

    /// Hex SHA-256 over the canonical encoding. Maps are ordered, so equal
    /// models have equal digests.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("models always encode");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// A delegation is taken when the operator and the model both match; an
/// absent list matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delegation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operators: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    pub target: String,
}

impl Delegation {
    pub fn to(target: impl Into<String>) -> Self {
        Self {
            operators: None,
            models: None,
            target: target.into(),
        }
    }

    fn matches(&self, operator: &str, model: &str) -> bool {
        self.operators
            .as_ref()
            .is_none_or(|o| o.iter().any(|x| x == operator))
            && self
                .models
                .as_ref()
                .is_none_or(|m| m.iter().any(|x| x == model))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManager {
    pub id: String,
    #[serde(default)]
    pub delegations: Vec<Delegation>,
}

impl ModelManager {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            delegations: Vec::new(),
        }
    }

    pub fn delegating(mut self, d: Delegation) -> Self {
        self.delegations.push(d);
        self
    }

    pub fn peers(&self) -> BTreeSet<&str> {
        self.delegations.iter().map(|d| d.target.as_str()).collect()
    }
}

/// Model content without identity or mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub language: String,
    pub elements: BTreeMap<String, ModelElement>,
    pub properties: BTreeMap<String, ModelProperty>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorOutcome {
    pub model: String,
    pub operator: String,
    /// Managers traversed, requester first, owner last. Empty when the
    /// requester owns the model.
    pub chain: Vec<String>,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("language {0} is already registered")]
    DuplicateLanguage(String),
    #[error("ill-formed language {0}")]
    IllFormedLanguage(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("model {0} already exists")]
    DuplicateModel(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown manager {0}")]
    UnknownManager(String),
    #[error("manager {0} already exists")]
    DuplicateManager(String),
    #[error("manager {manager} is not responsible for {model} and has no delegation path")]
    NotResponsible { manager: String, model: String },
    #[error("operator {operator} is not available for language {language}")]
    UnknownOperator { operator: String, language: String },
    #[error("argument mismatch: {0}")]
    ArgumentMismatch(String),
    #[error("integrity violation in {model}: {}", rules.join(", "))]
    IntegrityViolation { model: String, rules: Vec<String> },
    #[error("delegation cycle: {}", .0.join(" -> "))]
    DelegationCycle(Vec<String>),
    #[error("operator step failed: {0}")]
    InvalidStep(String),
    #[error("non-conforming content: {0}")]
    NonConforming(String),
}

/// Languages, managers and models of one twin. All mutation is serialized
/// by `&mut self`.
#[derive(Debug, Default, Clone)]
pub struct ModelRegistry {
    languages: BTreeMap<String, ModelingLanguage>,
    managers: BTreeMap<String, ModelManager>,
    models: BTreeMap<String, Model>,
    restored: u64,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_language(&mut self, lang: ModelingLanguage) -> Result<(), ModelError> {
        if self.languages.contains_key(&lang.id) {
            return Err(ModelError::DuplicateLanguage(lang.id));
        }
        lang.validate()?;
        self.languages.insert(lang.id.clone(), lang);
        Ok(())
    }

    pub fn add_manager(&mut self, manager: ModelManager) -> Result<(), ModelError> {
        if self.managers.contains_key(&manager.id) {
            return Err(ModelError::DuplicateManager(manager.id));
        }
        self.managers.insert(manager.id.clone(), manager);
        Ok(())
    }

    pub fn language(&self, id: &str) -> Option<&ModelingLanguage> {
        self.languages.get(id)
    }

    pub fn languages(&self) -> impl Iterator<Item = &ModelingLanguage> {
        self.languages.values()
    }

    pub fn manager(&self, id: &str) -> Option<&ModelManager> {
        self.managers.get(id)
    }

    pub fn managers(&self) -> impl Iterator<Item = &ModelManager> {
        self.managers.values()
    }

    pub fn model(&self, id: &str) -> Option<&Model> {
        self.models.get(id)
    }

    pub fn models(&self) -> impl Iterator<Item = &Model> {
        self.models.values()
    }

    pub fn managed_by<'a>(&'a self, manager: &'a str) -> impl Iterator<Item = &'a Model> + 'a {
        self.models.values().filter(move |m| m.manager == manager)
    }

    pub fn value(&self, r: &PropertyRef) -> Option<&Value> {
        self.models.get(&r.model)?.value(&r.element, &r.property)
    }

    /// Creates an Offline model owned by `manager`.
    pub fn create_model(
        &mut self,
        manager: &str,
        model_id: &str,
        language: &str,
        elements: Vec<ElementSpec>,
        track_last_update: bool,
    ) -> Result<&Model, ModelError> {
        if !self.managers.contains_key(manager) {
            return Err(ModelError::UnknownManager(manager.to_owned()));
        }
        let lang = self
            .languages
            .get(language)
            .ok_or_else(|| ModelError::UnknownLanguage(language.to_owned()))?;
        if self.models.contains_key(model_id) {
            return Err(ModelError::DuplicateModel(model_id.to_owned()));
        }
        let mut built = BTreeMap::new();
        for spec in elements {
            if built.contains_key(&spec.id) {
                return Err(ModelError::NonConforming(format!(
                    "duplicate element {}",
                    spec.id
                )));
            }
            let el = operator::build_element(lang, &spec.id, &spec.kind, spec.properties, None)?;
            built.insert(spec.id, el);
        }
        let mut properties = BTreeMap::new();
        properties.insert(
            MODE_PROPERTY.to_owned(),
            ModelProperty {
                value: Mode::Offline.as_value(),
                qualifier: None,
                written: None,
            },
        );
        if track_last_update {
            properties.insert(
                LAST_UPDATE_PROPERTY.to_owned(),
                ModelProperty {
                    value: Value::Int(0),
                    qualifier: Some(PropertyKind::LastUpdate),
                    written: None,
                },
            );
        }
        let model = Model {
            id: model_id.to_owned(),
            language: language.to_owned(),
            manager: manager.to_owned(),
            elements: built,
            properties,
        };
        self.check_integrity(&model)?;
        Ok(self.models.entry(model_id.to_owned()).or_insert(model))
    }

    fn check_integrity(&self, candidate: &Model) -> Result<(), ModelError> {
        let lang = &self.languages[&candidate.language];
        let lookup = |r: &PropertyRef| -> Option<Value> {
            let m = if r.model == candidate.id {
                Some(candidate)
            } else {
                self.models.get(&r.model)
            }?;
            // inter-model rules stay within one manager
            if m.manager != candidate.manager {
                return None;
            }
            m.value(&r.element, &r.property).cloned()
        };
        let violated = lang.violated_rules(candidate, &lookup);
        if violated.is_empty() {
            Ok(())
        } else {
            Err(ModelError::IntegrityViolation {
                model: candidate.id.clone(),
                rules: violated,
            })
        }
    }

    /// Resolves which manager acts for `requester` on `model`. Returns the
    /// delegation chain, empty for direct ownership.
    pub fn resolve(
        &self,
        requester: &str,
        operator: &str,
        model: &str,
    ) -> Result<Vec<String>, ModelError> {
        let owner = &self
            .models
            .get(model)
            .ok_or_else(|| ModelError::UnknownModel(model.to_owned()))?
            .manager;
        if !self.managers.contains_key(requester) {
            return Err(ModelError::UnknownManager(requester.to_owned()));
        }
        if requester == owner {
            return Ok(Vec::new());
        }
        let mut path = vec![requester.to_owned()];
        let mut visited = BTreeSet::from([requester.to_owned()]);
        if self.search(operator, model, owner, &mut path, &mut visited)? {
            Ok(path)
        } else {
            Err(ModelError::NotResponsible {
                manager: requester.to_owned(),
                model: model.to_owned(),
            })
        }
    }

    fn search(
        &self,
        operator: &str,
        model: &str,
        owner: &str,
        path: &mut Vec<String>,
        visited: &mut BTreeSet<String>,
    ) -> Result<bool, ModelError> {
        let current = path.last().expect("path starts with the requester");
        let mgr = self
            .managers
            .get(current)
            .ok_or_else(|| ModelError::UnknownManager(current.clone()))?;
        for d in mgr
            .delegations
            .iter()
            .filter(|d| d.matches(operator, model))
        {
            path.push(d.target.clone());
            if !visited.insert(d.target.clone()) {
                return Err(ModelError::DelegationCycle(path.clone()));
            }
            if d.target == owner || self.search(operator, model, owner, path, visited)? {
                return Ok(true);
            }
            path.pop();
        }
        Ok(false)
    }

    /// Applies an operator as one transaction: either every step commits
    /// and all integrity rules hold afterwards, or nothing changes.
    pub fn apply_operator(
        &mut self,
        manager: &str,
        operator: &str,
        model_id: &str,
        args: &BTreeMap<String, Value>,
        stamp: &WriteStamp,
    ) -> Result<OperatorOutcome, ModelError> {
        let chain = self.resolve(manager, operator, model_id)?;
        let model = &self.models[model_id];
        let lang = &self.languages[&model.language];
        let op = operator::resolve(lang, operator).ok_or_else(|| ModelError::UnknownOperator {
            operator: operator.to_owned(),
            language: lang.id.clone(),
        })?;
        op.check_args(args)?;
        let mut candidate = model.clone();
        operator::run_steps(lang, &op, args, &mut candidate.elements, stamp)?;
        if let Some(p) = candidate.properties.get_mut(LAST_UPDATE_PROPERTY) {
            p.value = Value::Int(stamp.tick as i64);
            p.written = Some(stamp.clone());
        }
        self.check_integrity(&candidate)?;
        self.models.insert(model_id.to_owned(), candidate);
        Ok(OperatorOutcome {
            model: model_id.to_owned(),
            operator: operator.to_owned(),
            chain,
            tick: stamp.tick,
        })
    }

    /// Stores `mode`. Returns whether it changed.
    pub fn set_mode(
        &mut self,
        manager: &str,
        model_id: &str,
        mode: Mode,
    ) -> Result<bool, ModelError> {
        self.resolve(manager, "set_mode", model_id)?;
        let model = self
            .models
            .get_mut(model_id)
            .expect("resolve checked the model");
        if model.mode() == mode {
            return Ok(false);
        }
        let slot = model
            .properties
            .get_mut(MODE_PROPERTY)
            .expect("every model carries a mode");
        slot.value = mode.as_value();
        Ok(true)
    }

    pub fn snapshot(&self, model_id: &str) -> Result<ModelSnapshot, ModelError> {
        let m = self
            .models
            .get(model_id)
            .ok_or_else(|| ModelError::UnknownModel(model_id.to_owned()))?;
        let mut properties = m.properties.clone();
        properties.remove(MODE_PROPERTY);
        Ok(ModelSnapshot {
            language: m.language.clone(),
            elements: m.elements.clone(),
            properties,
        })
    }

    /// Materializes a snapshot as a new Offline model named `restored-<n>`.
    pub fn restore(
        &mut self,
        manager: &str,
        snapshot: &ModelSnapshot,
    ) -> Result<&Model, ModelError> {
        if !self.managers.contains_key(manager) {
            return Err(ModelError::UnknownManager(manager.to_owned()));
        }
        let lang = self
            .languages
            .get(&snapshot.language)
            .ok_or_else(|| ModelError::UnknownLanguage(snapshot.language.clone()))?;
        for el in snapshot.elements.values() {
            let values = el
                .properties
                .iter()
                .map(|(k, p)| (k.clone(), p.value.clone()))
                .collect();
            operator::build_element(lang, &el.id, &el.kind, values, None)?;
        }
        let id = loop {
            self.restored += 1;
            let id = format!("restored-{}", self.restored);
            if !self.models.contains_key(&id) {
                break id;
            }
        };
        let mut properties = snapshot.properties.clone();
        properties.insert(
            MODE_PROPERTY.to_owned(),
            ModelProperty {
                value: Mode::Offline.as_value(),
                qualifier: None,
                written: None,
            },
        );
        let model = Model {
            id: id.clone(),
            language: snapshot.language.clone(),
            manager: manager.to_owned(),
            elements: snapshot.elements.clone(),
            properties,
        };
        self.check_integrity(&model)?;
        Ok(self.models.entry(id).or_insert(model))
    }
}
