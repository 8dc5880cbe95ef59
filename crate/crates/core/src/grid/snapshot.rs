//! Plain-text case snapshot.
//!
//! ```text
//! # gridbp case snapshot v1
//! name IEEE 14 Bus Test Case
//! base_mva 100
//! bus <id> <angle_rad> <injection_mw> [<scheduled_mw>]
//! line <id> <from> <to> <susceptance_pu> <flow_mw>
//! merged <line_id> <circuits>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a snapshot
//! re-reads to a bit-identical case.

use std::fmt::Write as _;
use std::path::Path;

use super::{Bus, GridCase, GridError, Line, MergedCircuits};

const HEADER: &str = "# gridbp case snapshot v1";

pub fn write_snapshot(case: &GridCase) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "name {}", case.name()).unwrap();
    writeln!(out, "base_mva {}", case.base_mva()).unwrap();
    for bus in case.buses() {
        write!(out, "bus {} {} {}", bus.id, bus.angle, bus.injection_true).unwrap();
        if let Some(s) = bus.scheduled_injection {
            write!(out, " {s}").unwrap();
        }
        out.push('\n');
    }
    for line in case.lines() {
        writeln!(
            out,
            "line {} {} {} {} {}",
            line.id, line.from_bus, line.to_bus, line.susceptance, line.flow_true
        )
        .unwrap();
    }
    for m in case.merged_circuits() {
        writeln!(out, "merged {} {}", m.line_id, m.circuits).unwrap();
    }
    out
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_snapshot(&text)
}

pub fn parse_snapshot(text: &str) -> Result<GridCase, GridError> {
    let mut name = String::new();
    let mut base_mva = None;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut merged = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let bad = |what: &str| GridError::Parse {
            line: lineno,
            message: format!("invalid {what}: {raw:?}"),
        };
        let (tag, rest) = raw.split_once(' ').unwrap_or((raw, ""));
        let fields: Vec<&str> = rest.split_whitespace().collect();
        match tag {
            "name" => name = rest.trim().to_string(),
            "base_mva" => base_mva = Some(rest.trim().parse().map_err(|_| bad("base_mva"))?),
            "bus" => {
                if fields.len() != 3 && fields.len() != 4 {
                    return Err(bad("bus record"));
                }
                buses.push(Bus {
                    id: fields[0].parse().map_err(|_| bad("bus id"))?,
                    angle: fields[1].parse().map_err(|_| bad("bus angle"))?,
                    injection_true: fields[2].parse().map_err(|_| bad("bus injection"))?,
                    scheduled_injection: match fields.get(3) {
                        Some(s) => Some(s.parse().map_err(|_| bad("scheduled injection"))?),
                        None => None,
                    },
                });
            }
            "line" => {
                if fields.len() != 5 {
                    return Err(bad("line record"));
                }
                lines.push(Line {
                    id: fields[0].parse().map_err(|_| bad("line id"))?,
                    from_bus: fields[1].parse().map_err(|_| bad("from bus"))?,
                    to_bus: fields[2].parse().map_err(|_| bad("to bus"))?,
                    susceptance: fields[3].parse().map_err(|_| bad("susceptance"))?,
                    flow_true: fields[4].parse().map_err(|_| bad("flow"))?,
                });
            }
            "merged" => {
                if fields.len() != 2 {
                    return Err(bad("merged record"));
                }
                merged.push(MergedCircuits {
                    line_id: fields[0].parse().map_err(|_| bad("line id"))?,
                    circuits: fields[1].parse().map_err(|_| bad("circuit count"))?,
                });
            }
            _ => return Err(bad("record tag")),
        }
    }
    let base_mva = base_mva.ok_or(GridError::Parse {
        line: 0,
        message: "missing base_mva record".into(),
    })?;
    Ok(GridCase::new(name, base_mva, buses, lines)?.with_merged(merged))
}
