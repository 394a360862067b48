use proptest::prelude::*;
use twin_core::data::{
    DataError, DataManager, DataProperty, DataRecord, Origin, OriginFilter, Processing,
    PropertyKind, Selector, Timeliness,
};
use twin_core::refs::ModelElementRef;
use twin_core::value::Value;

fn props(
    origin: Origin,
    t: Timeliness,
    p: Option<Processing>,
    tick: Option<u64>,
) -> Vec<DataProperty> {
    let mut v = vec![DataProperty::Origin(origin), DataProperty::Timeliness(t)];
    v.extend(p.map(DataProperty::Processing));
    v.extend(tick.map(DataProperty::LastUpdate));
    v
}

fn live(tick: u64) -> Vec<DataProperty> {
    props(
        Origin::ActualSystem("tank01".into()),
        Timeliness::Live,
        Some(Processing::Raw),
        Some(tick),
    )
}

fn tank() -> ModelElementRef {
    ModelElementRef::new("plant", "tank")
}

fn origin_strategy() -> impl Strategy<Value = Origin> {
    prop_oneof![
        prop_oneof![Just("g1"), Just("g2")].prop_map(|g| Origin::ActualSystem(g.into())),
        prop_oneof![Just("s1"), Just("s2")].prop_map(|s| Origin::Service(s.into())),
        Just(Origin::Operator),
    ]
}

fn record_strategy(
) -> impl Strategy<Value = (Origin, Timeliness, Option<Processing>, Option<u64>, bool)> {
    (
        origin_strategy(),
        prop_oneof![Just(Timeliness::Live), Just(Timeliness::Historical)],
        proptest::option::of(prop_oneof![
            Just(Processing::Raw),
            Just(Processing::Processed)
        ]),
        proptest::option::of(0u64..20),
        any::<bool>(),
    )
}

fn selector_strategy() -> impl Strategy<Value = Selector> {
    (
        proptest::option::of(prop_oneof![
            Just(OriginFilter::AnyActualSystem),
            Just(OriginFilter::AnyService),
            origin_strategy().prop_map(OriginFilter::Exact),
        ]),
        proptest::option::of(prop_oneof![
            Just(Timeliness::Live),
            Just(Timeliness::Historical)
        ]),
        proptest::option::of(prop_oneof![
            Just(Processing::Raw),
            Just(Processing::Processed)
        ]),
        proptest::option::of(Just(tank())),
        proptest::option::of((0u64..20, 0u64..20)),
    )
        .prop_map(|(origin, timeliness, processing, link, ticks)| Selector {
            origin,
            timeliness,
            processing,
            link,
            ticks,
        })
}

/// Straightforward restatement of the selector semantics.
fn oracle_matches(s: &Selector, r: &DataRecord) -> bool {
    let origin_ok = match (&s.origin, r.origin()) {
        (None, _) => true,
        (Some(OriginFilter::AnyActualSystem), Some(Origin::ActualSystem(_))) => true,
        (Some(OriginFilter::AnyService), Some(Origin::Service(_))) => true,
        (Some(OriginFilter::Exact(o)), Some(actual)) => o == actual,
        _ => false,
    };
    let ticks_ok = match s.ticks {
        None => true,
        Some((lo, hi)) => matches!(r.last_update(), Some(t) if t >= lo && t <= hi),
    };
    origin_ok
        && s.timeliness.is_none_or(|t| r.timeliness() == Some(t))
        && s.processing.is_none_or(|p| r.processing() == Some(p))
        && s.link
            .as_ref()
            .is_none_or(|l| r.model_link.as_ref() == Some(l))
        && ticks_ok
}

proptest! {
    #[test]
    fn query_agrees_with_linear_scan(
        recs in proptest::collection::vec(record_strategy(), 0..40),
        sel in selector_strategy(),
    ) {
        let mut dm = DataManager::in_memory();
        for (o, t, p, tick, linked) in recs {
            let link = linked.then(tank);
            dm.ingest(Value::Real(1.0), props(o, t, p, tick), link).unwrap();
        }
        let expected: Vec<_> = dm.records().iter().filter(|r| oracle_matches(&sel, r)).cloned().collect();
        prop_assert_eq!(dm.query(&sel), expected.clone());
        prop_assert_eq!(dm.count(&sel), expected.len());
        prop_assert!(expected.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn journal_replay_reproduces_queries(
        recs in proptest::collection::vec(record_strategy(), 0..25),
        sel in selector_strategy(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.ndjson");
        let before = {
            let mut dm = DataManager::open(&path).unwrap();
            for (o, t, p, tick, linked) in recs {
                let id = dm.ingest(Value::Real(tick.unwrap_or(0) as f64), props(o, t, p, tick), None).unwrap();
                if linked {
                    dm.link_to_model(id, tank(), |_| true).unwrap();
                }
            }
            dm.query(&sel)
        };
        let reopened = DataManager::open(&path).unwrap();
        prop_assert_eq!(reopened.query(&sel), before);
    }
}

#[test]
fn ids_are_dense_and_increasing() {
    let mut dm = DataManager::in_memory();
    let ids: Vec<u64> = (0..100)
        .map(|i| dm.ingest(Value::Int(i), live(i as u64), None).unwrap())
        .collect();
    assert_eq!(ids, (1..=100).collect::<Vec<u64>>());
    assert_eq!(dm.len(), 100);
}

#[test]
fn mandatory_properties_are_enforced() {
    let mut dm = DataManager::in_memory();
    let no_origin = vec![DataProperty::Timeliness(Timeliness::Live)];
    assert!(matches!(
        dm.ingest(Value::Real(1.0), no_origin, None),
        Err(DataError::MissingMandatoryProperty(PropertyKind::Origin))
    ));
    let no_timeliness = vec![DataProperty::Origin(Origin::Operator)];
    assert!(matches!(
        dm.ingest(Value::Real(1.0), no_timeliness, None),
        Err(DataError::MissingMandatoryProperty(
            PropertyKind::Timeliness
        ))
    ));
    dm.require([PropertyKind::LastUpdate]);
    let missing = props(Origin::Operator, Timeliness::Live, None, None);
    assert!(matches!(
        dm.ingest(Value::Real(1.0), missing, None),
        Err(DataError::MissingMandatoryProperty(
            PropertyKind::LastUpdate
        ))
    ));
    assert!(dm.is_empty());
}

#[test]
fn malformed_records_are_schema_violations() {
    let mut dm = DataManager::in_memory();
    let mut dup = live(1);
    dup.push(DataProperty::Timeliness(Timeliness::Historical));
    assert!(matches!(
        dm.ingest(Value::Real(1.0), dup, None),
        Err(DataError::SchemaViolation(_))
    ));
    let mut neg = live(1);
    neg.push(DataProperty::Uncertainty(-0.1));
    assert!(matches!(
        dm.ingest(Value::Real(1.0), neg, None),
        Err(DataError::SchemaViolation(_))
    ));
    let mut zero = live(1);
    zero.push(DataProperty::Precision(0.0));
    assert!(matches!(
        dm.ingest(Value::Real(1.0), zero, None),
        Err(DataError::SchemaViolation(_))
    ));
    assert!(matches!(
        dm.ingest(Value::Real(f64::NAN), live(1), None),
        Err(DataError::SchemaViolation(_))
    ));
    assert!(dm.is_empty());
}

#[test]
fn linking_is_set_once() {
    let mut dm = DataManager::in_memory();
    let id = dm.ingest(Value::Real(1.0), live(1), None).unwrap();
    dm.link_to_model(id, tank(), |_| true).unwrap();
    dm.link_to_model(id, tank(), |_| true).unwrap();
    assert_eq!(dm.get(id).unwrap().model_link, Some(tank()));
    let valve = ModelElementRef::new("plant", "valve");
    assert!(matches!(
        dm.link_to_model(id, valve, |_| true),
        Err(DataError::AlreadyLinkedDifferently { existing, .. }) if existing == tank()
    ));
}

#[test]
fn dangling_and_unknown_links_are_rejected() {
    let mut dm = DataManager::in_memory();
    let id = dm.ingest(Value::Real(1.0), live(1), None).unwrap();
    assert!(matches!(
        dm.link_to_model(id, tank(), |_| false),
        Err(DataError::DanglingModelRef(_))
    ));
    assert_eq!(dm.get(id).unwrap().model_link, None);
    assert!(matches!(
        dm.link_to_model(7, tank(), |_| true),
        Err(DataError::NoSuchRecord(7))
    ));
    assert!(matches!(
        dm.link_to_model(0, tank(), |_| true),
        Err(DataError::NoSuchRecord(0))
    ));
}

#[test]
fn empty_journal_opens_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.ndjson");
    std::fs::write(&path, "").unwrap();
    assert!(DataManager::open(&path).unwrap().is_empty());
    let absent = dir.path().join("new.ndjson");
    assert!(DataManager::open(&absent).unwrap().is_empty());
    assert!(absent.exists());
}

#[test]
fn garbage_before_valid_entries_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.ndjson");
    {
        let mut dm = DataManager::open(&path).unwrap();
        dm.ingest(Value::Real(1.0), live(1), None).unwrap();
    }
    let good = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("not json\n{good}")).unwrap();
    assert!(matches!(
        DataManager::open(&path),
        Err(DataError::CorruptJournal { line: 1, .. })
    ));
}

#[test]
fn torn_tail_is_dropped_and_appends_continue() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.ndjson");
    {
        let mut dm = DataManager::open(&path).unwrap();
        dm.ingest(Value::Real(1.0), live(1), None).unwrap();
        dm.ingest(Value::Real(2.0), live(2), None).unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let mut dm = DataManager::open(&path).unwrap();
    assert_eq!(dm.len(), 1);
    assert_eq!(dm.ingest(Value::Real(3.0), live(3), None).unwrap(), 2);
    drop(dm);
    let dm = DataManager::open(&path).unwrap();
    let values: Vec<_> = dm.records().iter().map(|r| r.value.clone()).collect();
    assert_eq!(values, [Value::Real(1.0), Value::Real(3.0)]);
}

#[test]
fn floats_survive_the_journal_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.ndjson");
    let xs = [
        0.1 + 0.2,
        1e-300,
        -123456.789012345,
        f64::MAX,
        f64::MIN_POSITIVE,
    ];
    {
        let mut dm = DataManager::open(&path).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let mut p = live(i as u64);
            p.push(DataProperty::Uncertainty(0.05));
            dm.ingest(Value::Real(*x), p, None).unwrap();
        }
    }
    let dm = DataManager::open(&path).unwrap();
    let back: Vec<f64> = dm
        .records()
        .iter()
        .map(|r| r.value.as_f64().unwrap())
        .collect();
    assert_eq!(
        back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}
