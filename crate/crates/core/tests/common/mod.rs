//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use twin_core::data::DataManager;
use twin_core::engine::{Direction, Engine, GatewayPropertyRef, Mapping, Schedule};
use twin_core::gateway::sim::{build_model, AssetServer, EchoModel, TankModel};
use twin_core::gateway::GatewayDescriptor;
use twin_core::models::{
    CmpOp, ElementSpec, IntegrityRule, Mode, ModelManager, ModelRegistry, ModelingLanguage,
    Operand, Predicate, PropertyDecl, RuleCheck,
};
use twin_core::refs::PropertyRef;
use twin_core::value::{Value, ValueSchema};

pub const MODEL: &str = "plant";
pub const MANAGER: &str = "ops";
pub const GATEWAY: &str = "tank01";

/// A tank asset with a stopped clock, advanced only by explicit steps.
pub fn tank_asset(params: &[(&str, &str)]) -> AssetServer {
    let params: BTreeMap<String, String> = params
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let model = build_model("tank", &params, 0).expect("valid tank parameters");
    AssetServer::spawn("127.0.0.1:0", model, 100).expect("asset binds")
}

pub fn echo_asset() -> AssetServer {
    AssetServer::spawn("127.0.0.1:0", Box::new(EchoModel::default()), 100).expect("asset binds")
}

pub fn tank_descriptor(server: &AssetServer) -> GatewayDescriptor {
    GatewayDescriptor {
        id: GATEWAY.into(),
        endpoint: server.endpoint(),
        elements: TankModel::catalog_decls(),
    }
}

pub fn echo_descriptor(server: &AssetServer) -> GatewayDescriptor {
    GatewayDescriptor {
        id: "echo01".into(),
        endpoint: server.endpoint(),
        elements: EchoModel::catalog_decls(),
    }
}

/// Tank{level, capacity} and Valve{opening}, with `level <= capacity`.
pub fn tank_language() -> ModelingLanguage {
    let real = || PropertyDecl::new(ValueSchema::Real);
    ModelingLanguage {
        id: "tank-structure".into(),
        kinds: vec!["Tank".into(), "Valve".into()],
        properties: BTreeMap::from([
            (
                "Tank".into(),
                BTreeMap::from([("level".into(), real()), ("capacity".into(), real())]),
            ),
            ("Valve".into(), BTreeMap::from([("opening".into(), real())])),
        ]),
        rules: vec![IntegrityRule {
            name: "level_within_capacity".into(),
            check: RuleCheck::ForAll {
                kind: "Tank".into(),
                predicate: Predicate::Compare {
                    left: Operand::Property("level".into()),
                    op: CmpOp::Le,
                    right: Operand::Property("capacity".into()),
                },
            },
        }],
        operators: vec![],
    }
}

/// One online model `plant` owned by `ops`, with a tank of the given
/// capacity and a closed valve.
pub fn registry(capacity: f64, track_last_update: bool) -> ModelRegistry {
    let mut r = ModelRegistry::new();
    r.register_language(tank_language()).unwrap();
    r.add_manager(ModelManager::new(MANAGER)).unwrap();
    let elements = vec![
        ElementSpec::new(
            "tank",
            "Tank",
            [
                ("level", Value::Real(0.0)),
                ("capacity", Value::Real(capacity)),
            ],
        ),
        ElementSpec::new("valve", "Valve", [("opening", Value::Real(0.0))]),
    ];
    r.create_model(
        MANAGER,
        MODEL,
        "tank-structure",
        elements,
        track_last_update,
    )
    .unwrap();
    r.set_mode(MANAGER, MODEL, Mode::Online).unwrap();
    r
}

pub fn engine_with(server: &AssetServer, capacity: f64, track_last_update: bool) -> Engine {
    let mut e = Engine::new(
        registry(capacity, track_last_update),
        Some(DataManager::in_memory()),
    );
    e.add_gateway(tank_descriptor(server)).unwrap();
    e
}

pub fn level() -> PropertyRef {
    PropertyRef::new(MODEL, "tank", "level")
}

pub fn opening() -> PropertyRef {
    PropertyRef::new(MODEL, "valve", "opening")
}

pub fn mapping(
    id: &str,
    model: PropertyRef,
    asset_property: &str,
    direction: Direction,
    schedule: Schedule,
) -> Mapping {
    Mapping::new(
        id,
        model,
        GatewayPropertyRef::new(GATEWAY, asset_property),
        direction,
        schedule,
    )
}

pub fn set_args(element: &str, property: &str, value: Value) -> BTreeMap<String, Value> {
    BTreeMap::from([
        ("element".to_owned(), Value::text(element)),
        ("property".to_owned(), Value::text(property)),
        ("value".to_owned(), value),
    ])
}

pub fn real(v: Option<&Value>) -> f64 {
    v.and_then(Value::as_f64).expect("a numeric value")
}
pub mod golden;
