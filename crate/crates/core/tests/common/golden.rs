//! Recorded protocol sessions against both simulated assets, compared
//! byte for byte with the files under `tests/golden/`. Set
//! `UPDATE_GOLDENS=1` to rewrite them.

use std::path::PathBuf;

use twin_core::gateway::sim::AssetServer;
use twin_core::gateway::{GatewayDescriptor, GatewayHandle, Transcript};
use twin_core::value::Value;

use super::{echo_asset, echo_descriptor, tank_asset, tank_descriptor};

type Script = fn(&mut GatewayHandle);

pub const SESSIONS: [&str; 6] = ["handshake", "read", "write", "observe", "event", "invoke"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub asset: &'static str,
    pub session: &'static str,
    pub transcript: String,
}

fn tank_script(session: &str) -> Script {
    match session {
        "handshake" => |_| {},
        "read" => |h| {
            h.read_property("level").unwrap();
            h.read_property("valve").unwrap();
        },
        "write" => |h| {
            h.write_property("valve", Value::Real(0.5)).unwrap();
            h.read_property("valve").unwrap();
        },
        "observe" => |h| {
            let _s = h.observe_property("level").unwrap();
            h.write_property("valve", Value::Real(1.0)).unwrap();
            h.sim_step(3).unwrap();
        },
        "event" => |h| {
            let _s = h.subscribe_event("overflow").unwrap();
            h.sim_set("level", Value::Real(7.5)).unwrap();
            h.write_property("valve", Value::Real(1.0)).unwrap();
            h.sim_step(2).unwrap();
        },
        "invoke" => |h| {
            h.sim_set("level", Value::Real(4.0)).unwrap();
            h.invoke_function("flush", vec![]).unwrap();
            h.read_property("level").unwrap();
        },
        other => panic!("no tank session {other}"),
    }
}

fn echo_script(session: &str) -> Script {
    match session {
        "handshake" => |_| {},
        "read" => |h| {
            h.read_property("message").unwrap();
            h.read_property("count").unwrap();
        },
        "write" => |h| {
            h.write_property("message", Value::text("hello")).unwrap();
            h.read_property("message").unwrap();
        },
        "observe" => |h| {
            let _s = h.observe_property("count").unwrap();
            h.write_property("message", Value::text("a")).unwrap();
            h.write_property("message", Value::text("b")).unwrap();
        },
        "event" => |h| {
            let _s = h.subscribe_event("echoed").unwrap();
            h.write_property("message", Value::text("ping")).unwrap();
            h.sim_raise("echoed", Value::text("manual")).unwrap();
        },
        "invoke" => |h| {
            h.invoke_function("echo", vec![Value::text("hi")]).unwrap();
            assert!(h.invoke_function("fault", vec![]).is_err());
        },
        other => panic!("no echo session {other}"),
    }
}

fn record(descriptor: GatewayDescriptor, script: Script) -> String {
    let t = Transcript::new();
    let mut h = GatewayHandle::connect_recorded(descriptor, t.clone()).unwrap();
    script(&mut h);
    // every push caused by the script arrives before this answer
    h.ping().unwrap();
    t.render()
}

/// Records all sessions, each against a fresh asset.
pub fn record_all() -> Vec<Case> {
    let mut cases = Vec::new();
    for session in SESSIONS {
        let tank: AssetServer = tank_asset(&[("inflow", "5")]);
        cases.push(Case {
            asset: "tank",
            session,
            transcript: record(tank_descriptor(&tank), tank_script(session)),
        });
        let echo = echo_asset();
        cases.push(Case {
            asset: "echo",
            session,
            transcript: record(echo_descriptor(&echo), echo_script(session)),
        });
    }
    cases
}

pub fn path(asset: &str, session: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(asset)
        .join(format!("{session}.txt"))
}

pub fn check(case: &Case) -> Result<(), String> {
    let p = path(case.asset, case.session);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| e.to_string())?;
        return std::fs::write(&p, &case.transcript).map_err(|e| e.to_string());
    }
    let expected = std::fs::read_to_string(&p)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDENS=1)", p.display()))?;
    if expected == case.transcript {
        Ok(())
    } else {
        Err(format!(
            "{}/{} differs from {}:\n{}",
            case.asset,
            case.session,
            p.display(),
            case.transcript
        ))
    }
}
