//! Table and JSON output.

use std::io::{self, Write};

use clap::ValueEnum;
use serde::Serialize;

use twin_core::conformance::{Classification, ConformanceReport};
use twin_core::data::DataRecord;
use twin_core::runtime::{InspectView, Twin};
use twin_core::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

fn json_line(out: &mut impl Write, v: &impl Serialize) -> io::Result<()> {
    let s = serde_json::to_string(v).map_err(io::Error::other)?;
    writeln!(out, "{s}")
}

/// Lowercase name of a unit enum variant as it appears in JSON.
fn tag(v: &impl Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

pub fn classification(out: &mut impl Write, f: Format, c: &Classification) -> io::Result<()> {
    match f {
        Format::Json => json_line(out, c),
        Format::Table => {
            writeln!(out, "{}", c.verdict)?;
            for m in &c.evidence {
                writeln!(out, "  via {m}")?;
            }
            Ok(())
        }
    }
}

pub fn report(out: &mut impl Write, f: Format, r: &ConformanceReport) -> io::Result<()> {
    match f {
        Format::Json => json_line(out, r),
        Format::Table => {
            for row in &r.results {
                writeln!(
                    out,
                    "{:<3} {:<15} {}",
                    row.conclusion.to_string(),
                    row.status.to_string(),
                    row.conclusion.summary()
                )?;
                for finding in &row.findings {
                    writeln!(out, "      {finding}")?;
                }
            }
            Ok(())
        }
    }
}

pub fn inspect(out: &mut impl Write, f: Format, v: &InspectView) -> io::Result<()> {
    if f == Format::Json {
        return json_line(out, v);
    }
    writeln!(out, "tick {}", v.tick)?;
    writeln!(out, "gateways:")?;
    for g in &v.gateways {
        let state = if g.connected {
            "connected"
        } else {
            "not connected"
        };
        writeln!(out, "  {} {} ({state})", g.id, g.endpoint)?;
    }
    writeln!(out, "models:")?;
    for m in &v.models {
        let manager = m.manager.as_deref().unwrap_or("-");
        writeln!(
            out,
            "  {} [{}] manager={} {}",
            m.id, m.language, manager, m.mode
        )?;
        for (el, props) in &m.elements {
            for (p, value) in props {
                writeln!(out, "    {el}.{p} = {value}")?;
            }
        }
    }
    writeln!(out, "mappings:")?;
    for m in &v.mappings {
        let off = if m.enabled { "" } else { " (disabled)" };
        writeln!(
            out,
            "  {} {} {} {}{off}",
            m.id,
            m.model,
            tag(&m.direction),
            m.gateway
        )?;
    }
    writeln!(out, "services:")?;
    for s in &v.services {
        writeln!(
            out,
            "  {} {}",
            s.id,
            if s.enabled { "enabled" } else { "disabled" }
        )?;
    }
    Ok(())
}

pub fn value(out: &mut impl Write, f: Format, v: &Value) -> io::Result<()> {
    match f {
        Format::Json => json_line(out, v),
        Format::Table => writeln!(out, "{v}"),
    }
}

/// JSON output is one object per line, in record id order.
pub fn records(out: &mut impl Write, f: Format, records: &[DataRecord]) -> io::Result<()> {
    for r in records {
        match f {
            Format::Json => json_line(out, r)?,
            Format::Table => {
                let origin = r.origin().map_or("-".to_owned(), |o| o.to_string());
                let timeliness = r.timeliness().map_or("-".to_owned(), |t| tag(&t));
                let processing = r.processing().map_or("-".to_owned(), |p| tag(&p));
                let link = r
                    .model_link
                    .as_ref()
                    .map_or("-".to_owned(), |l| l.to_string());
                let at = r.last_update().map_or("-".to_owned(), |t| t.to_string());
                writeln!(
                    out,
                    "{:>5} {:>5} {:<24} {:<10} {:<9} {:<24} {}",
                    r.id, at, origin, timeliness, processing, link, r.value
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    ticks: u64,
    decisions: usize,
    records: usize,
}

pub fn summary(out: &mut impl Write, f: Format, twin: &Twin) -> io::Result<()> {
    let s = Summary {
        ticks: twin.current_tick(),
        decisions: twin.decisions().len(),
        records: twin.engine().data().map_or(0, |d| d.len()),
    };
    match f {
        Format::Json => json_line(out, &s),
        Format::Table => writeln!(
            out,
            "ran {} tick(s): {} decision(s), {} record(s)",
            s.ticks, s.decisions, s.records
        ),
    }
}
