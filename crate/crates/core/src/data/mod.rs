//! The data manager: an append-only store of qualified data records.
//!
//! Every record carries metadata ([`DataProperty`]); origin and timeliness
//! are mandatory. Records are immutable once ingested except for a
//! set-once link to a model element. With a journal attached, every
//! operation is appended to the file before it becomes visible.

mod journal;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refs::{ModelElementRef, Tick};
use crate::value::Value;

pub use journal::{replay, Journal, JournalEntry, Replayed};

pub type RecordId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timeliness {
    Live,
    Historical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Processing {
    Raw,
    Processed,
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Observed on the asset behind the named gateway.
    ActualSystem(String),
    /// Produced by the named service.
    Service(String),
    Operator,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::ActualSystem(g) => write!(f, "actual-system:{g}"),
            Origin::Service(s) => write!(f, "service:{s}"),
            Origin::Operator => write!(f, "operator"),
        }
    }
}

/// The kind of a qualifying property, shared by data records and models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Timeliness,
    Processing,
    Origin,
    Uncertainty,
    Precision,
    LastUpdate,
}

/// A typed metadata entry qualifying a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataProperty {
    Timeliness(Timeliness),
    Processing(Processing),
    Origin(Origin),
    /// Non-negative.
    Uncertainty(f64),
    /// Strictly positive.
    Precision(f64),
    LastUpdate(Tick),
}

impl DataProperty {
    pub fn kind(&self) -> PropertyKind {
        match self {
            DataProperty::Timeliness(_) => PropertyKind::Timeliness,
            DataProperty::Processing(_) => PropertyKind::Processing,
            DataProperty::Origin(_) => PropertyKind::Origin,
            DataProperty::Uncertainty(_) => PropertyKind::Uncertainty,
            DataProperty::Precision(_) => PropertyKind::Precision,
            DataProperty::LastUpdate(_) => PropertyKind::LastUpdate,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        match *self {
            DataProperty::Uncertainty(u) if !(u.is_finite() && u >= 0.0) => Err(
                DataError::SchemaViolation(format!("uncertainty must be finite and >= 0, got {u}")),
            ),
            DataProperty::Precision(p) if !(p.is_finite() && p > 0.0) => Err(
                DataError::SchemaViolation(format!("precision must be finite and > 0, got {p}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub id: RecordId,
    pub value: Value,
    /// Sorted by kind, one entry per kind.
    pub properties: Vec<DataProperty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_link: Option<ModelElementRef>,
}

impl DataRecord {
    pub fn property(&self, kind: PropertyKind) -> Option<&DataProperty> {
        self.properties.iter().find(|p| p.kind() == kind)
    }

    pub fn origin(&self) -> Option<&Origin> {
        match self.property(PropertyKind::Origin) {
            Some(DataProperty::Origin(o)) => Some(o),
            _ => None,
        }
    }

    pub fn timeliness(&self) -> Option<Timeliness> {
        match self.property(PropertyKind::Timeliness) {
            Some(DataProperty::Timeliness(t)) => Some(*t),
            _ => None,
        }
    }

    pub fn processing(&self) -> Option<Processing> {
        match self.property(PropertyKind::Processing) {
            Some(DataProperty::Processing(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn last_update(&self) -> Option<Tick> {
        match self.property(PropertyKind::LastUpdate) {
            Some(DataProperty::LastUpdate(t)) => Some(*t),
            _ => None,
        }
    }
}

/// Origin criterion of a [`Selector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginFilter {
    AnyActualSystem,
    AnyService,
    Exact(Origin),
}

impl OriginFilter {
    pub fn matches(&self, origin: &Origin) -> bool {
        match self {
            OriginFilter::AnyActualSystem => matches!(origin, Origin::ActualSystem(_)),
            OriginFilter::AnyService => matches!(origin, Origin::Service(_)),
            OriginFilter::Exact(o) => o == origin,
        }
    }
}

/// Conjunction of optional filters; the empty selector matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<OriginFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeliness: Option<Timeliness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing: Option<Processing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<ModelElementRef>,
    /// Inclusive range over the record's last-update tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticks: Option<(Tick, Tick)>,
}

impl Selector {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, r: &DataRecord) -> bool {
        if let Some(f) = &self.origin {
            if !r.origin().is_some_and(|o| f.matches(o)) {
                return false;
            }
        }
        if self.timeliness.is_some() && r.timeliness() != self.timeliness {
            return false;
        }
        if self.processing.is_some() && r.processing() != self.processing {
            return false;
        }
        if self.link.is_some() && r.model_link != self.link {
            return false;
        }
        if let Some((lo, hi)) = self.ticks {
            if !r.last_update().is_some_and(|t| lo <= t && t <= hi) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing mandatory property {0:?}")]
    MissingMandatoryProperty(PropertyKind),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("no such record {0}")]
    NoSuchRecord(RecordId),
    #[error("dangling model reference {0}")]
    DanglingModelRef(ModelElementRef),
    #[error("record {id} already linked to {existing}")]
    AlreadyLinkedDifferently {
        id: RecordId,
        existing: ModelElementRef,
    },
    #[error("corrupt journal at line {line}: {detail}")]
    CorruptJournal { line: usize, detail: String },
}

/// Kinds every record must carry.
pub const MANDATORY: [PropertyKind; 2] = [PropertyKind::Origin, PropertyKind::Timeliness];

#[derive(Debug, Default)]
pub struct DataManager {
    records: Vec<DataRecord>,
    journal: Option<Journal>,
    required: BTreeSet<PropertyKind>,
}

impl DataManager {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            journal: None,
            required: MANDATORY.into_iter().collect(),
        }
    }

    /// Replays the journal at `path` (creating it if absent), drops a torn
    /// tail, and keeps appending to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let (journal, records) = Journal::open(path.as_ref())?;
        Ok(Self {
            records,
            journal: Some(journal),
            required: MANDATORY.into_iter().collect(),
        })
    }

    /// Adds kinds that must be present on every ingested record, beyond
    /// origin and timeliness.
    pub fn require(&mut self, kinds: impl IntoIterator<Item = PropertyKind>) {
        self.required.extend(kinds);
    }

    pub fn required(&self) -> &BTreeSet<PropertyKind> {
        &self.required
    }

    pub fn ingest(
        &mut self,
        value: Value,
        properties: Vec<DataProperty>,
        model_link: Option<ModelElementRef>,
    ) -> Result<RecordId, DataError> {
        if !value.is_finite() {
            return Err(DataError::SchemaViolation(
                "record value is not finite".into(),
            ));
        }
        let mut properties = properties;
        properties.sort_by_key(DataProperty::kind);
        for w in properties.windows(2) {
            if w[0].kind() == w[1].kind() {
                return Err(DataError::SchemaViolation(format!(
                    "duplicate property {:?}",
                    w[0].kind()
                )));
            }
        }
        for p in &properties {
            p.validate()?;
        }
        if let Some(k) = self
            .required
            .iter()
            .find(|k| !properties.iter().any(|p| p.kind() == **k))
        {
            return Err(DataError::MissingMandatoryProperty(*k));
        }
        let record = DataRecord {
            id: self.records.len() as RecordId + 1,
            value,
            properties,
            model_link,
        };
        if let Some(j) = &mut self.journal {
            j.append(&JournalEntry::Ingest {
                record: record.clone(),
            })?;
        }
        let id = record.id;
        self.records.push(record);
        Ok(id)
    }

    /// Records matching `selector`, in id order. Returns a snapshot.
    pub fn query(&self, selector: &Selector) -> Vec<DataRecord> {
        self.records
            .iter()
            .filter(|r| selector.matches(r))
            .cloned()
            .collect()
    }

    pub fn count(&self, selector: &Selector) -> usize {
        self.records.iter().filter(|r| selector.matches(r)).count()
    }

    /// Links a record to a model element. `resolves` decides whether the
    /// element exists; linking twice to the same element is a no-op.
    pub fn link_to_model(
        &mut self,
        id: RecordId,
        target: ModelElementRef,
        resolves: impl FnOnce(&ModelElementRef) -> bool,
    ) -> Result<(), DataError> {
        let idx = self.index(id)?;
        if !resolves(&target) {
            return Err(DataError::DanglingModelRef(target));
        }
        match &self.records[idx].model_link {
            Some(existing) if *existing == target => return Ok(()),
            Some(existing) => {
                return Err(DataError::AlreadyLinkedDifferently {
                    id,
                    existing: existing.clone(),
                });
            }
            None => {}
        }
        if let Some(j) = &mut self.journal {
            j.append(&JournalEntry::Link {
                id,
                link: target.clone(),
            })?;
        }
        self.records[idx].model_link = Some(target);
        Ok(())
    }

    fn index(&self, id: RecordId) -> Result<usize, DataError> {
        let idx = (id as usize)
            .checked_sub(1)
            .ok_or(DataError::NoSuchRecord(id))?;
        if idx < self.records.len() {
            Ok(idx)
        } else {
            Err(DataError::NoSuchRecord(id))
        }
    }

    pub fn get(&self, id: RecordId) -> Option<&DataRecord> {
        self.index(id).ok().map(|i| &self.records[i])
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(Journal::path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn live_from(gw: &str, tick: Tick) -> Vec<DataProperty> {
        vec![
            DataProperty::Origin(Origin::ActualSystem(gw.into())),
            DataProperty::Timeliness(Timeliness::Live),
            DataProperty::LastUpdate(tick),
        ]
    }

    #[test]
    fn first_id_is_one() {
        let mut dm = DataManager::in_memory();
        let id = dm
            .ingest(
                Value::Real(1.5),
                live_from("tank01", 7),
                Some(ModelElementRef::new("m", "level")),
            )
            .unwrap();
        assert_eq!(id, 1);
        assert_eq!(dm.get(1).unwrap().last_update(), Some(7));
    }

    #[test]
    fn mandatory_and_schema_checks() {
        let mut dm = DataManager::in_memory();
        let err = dm
            .ingest(
                Value::Int(1),
                vec![DataProperty::Timeliness(Timeliness::Live)],
                None,
            )
            .unwrap_err();
        assert!(matches!(
            err,
            DataError::MissingMandatoryProperty(PropertyKind::Origin)
        ));
        let mut props = live_from("g", 1);
        props.push(DataProperty::Uncertainty(-0.1));
        assert!(matches!(
            dm.ingest(Value::Int(1), props, None),
            Err(DataError::SchemaViolation(_))
        ));
        let mut props = live_from("g", 1);
        props.push(DataProperty::Precision(0.0));
        assert!(matches!(
            dm.ingest(Value::Int(1), props, None),
            Err(DataError::SchemaViolation(_))
        ));
        let mut props = live_from("g", 1);
        props.push(DataProperty::Timeliness(Timeliness::Historical));
        assert!(matches!(
            dm.ingest(Value::Int(1), props, None),
            Err(DataError::SchemaViolation(_))
        ));
        assert!(dm.is_empty());
    }

    #[test]
    fn hundred_ingests_follow_call_order() {
        let mut dm = DataManager::in_memory();
        let mut expected = 0;
        for i in 0..100 {
            expected += 1;
            assert_eq!(
                dm.ingest(Value::Int(i), live_from("g", i as u64), None)
                    .unwrap(),
                expected
            );
        }
        let ids: Vec<_> = dm.query(&Selector::all()).iter().map(|r| r.id).collect();
        assert_eq!(ids, (1..=100).collect::<Vec<_>>());
    }

    #[test]
    fn origin_filter_on_foreign_origin_is_empty() {
        let mut dm = DataManager::in_memory();
        dm.ingest(Value::Int(1), live_from("tank01", 1), None)
            .unwrap();
        let sel = Selector {
            origin: Some(OriginFilter::Exact(Origin::Service("kpi".into()))),
            ..Default::default()
        };
        assert!(dm.query(&sel).is_empty());
    }

    #[test]
    fn link_rules() {
        let mut dm = DataManager::in_memory();
        dm.ingest(Value::Int(1), live_from("g", 1), None).unwrap();
        let level = ModelElementRef::new("m", "level");
        let valve = ModelElementRef::new("m", "valve");
        dm.link_to_model(1, level.clone(), |_| true).unwrap();
        dm.link_to_model(1, level.clone(), |_| true).unwrap();
        assert_eq!(dm.get(1).unwrap().model_link, Some(level));
        assert!(matches!(
            dm.link_to_model(1, valve.clone(), |_| true),
            Err(DataError::AlreadyLinkedDifferently { .. })
        ));
        assert!(matches!(
            dm.link_to_model(2, valve.clone(), |_| true),
            Err(DataError::NoSuchRecord(2))
        ));
        dm.ingest(Value::Int(2), live_from("g", 2), None).unwrap();
        assert!(matches!(
            dm.link_to_model(2, valve, |_| false),
            Err(DataError::DanglingModelRef(_))
        ));
    }
}
