//! IEEE Common Data Format reader (fixed-column bus and branch cards).

use std::collections::HashMap;
use std::path::Path;

use super::{Bus, BusId, GridCase, GridError, Line, LineId, MergedCircuits};

/// What to do with several branches joining the same pair of buses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParallelLines {
    /// One flow variable per branch card.
    #[default]
    Keep,
    /// One line per bus pair; susceptances summed in the first card's orientation.
    Merge,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ImportOptions {
    pub parallel: ParallelLines,
}

pub fn import_cdf(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
    import_cdf_with(path, ImportOptions::default())
}

pub fn import_cdf_with(path: impl AsRef<Path>, opts: ImportOptions) -> Result<GridCase, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_cdf(&text, &stem, opts)
}

/// 1-based inclusive column slice, tolerant of short lines.
fn cols(line: &str, first: usize, last: usize) -> &str {
    let start = (first - 1).min(line.len());
    let end = last.min(line.len());
    line.get(start..end).unwrap_or("").trim()
}

fn field<T: std::str::FromStr>(
    line: &str,
    lineno: usize,
    first: usize,
    last: usize,
    what: &str,
) -> Result<T, GridError> {
    let raw = cols(line, first, last);
    raw.parse().map_err(|_| GridError::Parse {
        line: lineno,
        message: format!("invalid {what} {raw:?} in columns {first}-{last}"),
    })
}

fn optional_f64(line: &str, first: usize, last: usize) -> f64 {
    cols(line, first, last).parse().unwrap_or(0.0)
}

pub fn parse_cdf(text: &str, fallback_name: &str, opts: ImportOptions) -> Result<GridCase, GridError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let title = lines.first().ok_or(GridError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let base_mva: f64 = field(title, 1, 32, 37, "MVA base")?;
    let name = match cols(title, 46, 73) {
        "" => fallback_name.to_string(),
        s => s.to_string(),
    };

    let section = |tag: &str| -> Result<usize, GridError> {
        lines
            .iter()
            .position(|l| l.starts_with(tag))
            .ok_or_else(|| GridError::Parse {
                line: lines.len(),
                message: format!("missing {tag:?} section"),
            })
    };

    let mut buses = Vec::new();
    let bus_start = section("BUS DATA FOLLOWS")?;
    let mut idx = bus_start + 1;
    loop {
        let line = lines.get(idx).ok_or(GridError::Parse {
            line: idx + 1,
            message: "unterminated bus section".into(),
        })?;
        if line.trim_start().starts_with("-999") {
            break;
        }
        let lineno = idx + 1;
        let id: BusId = field(line, lineno, 1, 4, "bus number")?;
        let angle_deg: f64 = field(line, lineno, 34, 40, "voltage angle")?;
        let load = optional_f64(line, 41, 49);
        let gen = optional_f64(line, 60, 67);
        buses.push(Bus {
            id,
            angle: angle_deg.to_radians(),
            injection_true: 0.0,
            scheduled_injection: Some(gen - load),
        });
        idx += 1;
    }

    let branch_start = section("BRANCH DATA FOLLOWS")?;
    let mut lines_out: Vec<Line> = Vec::new();
    let mut by_pair: HashMap<(BusId, BusId), usize> = HashMap::new();
    let mut circuits: Vec<usize> = Vec::new();
    idx = branch_start + 1;
    let mut next_id: LineId = 1;
    loop {
        let line = lines.get(idx).ok_or(GridError::Parse {
            line: idx + 1,
            message: "unterminated branch section".into(),
        })?;
        if line.trim_start().starts_with("-999") {
            break;
        }
        let lineno = idx + 1;
        let from: BusId = field(line, lineno, 1, 4, "tap bus number")?;
        let to: BusId = field(line, lineno, 6, 9, "z bus number")?;
        let reactance: f64 = field(line, lineno, 30, 40, "branch reactance")?;
        let line_id = next_id;
        next_id += 1;
        if reactance == 0.0 {
            return Err(GridError::ZeroReactance { line_id });
        }
        let susceptance = 1.0 / reactance;
        let key = (from.min(to), from.max(to));
        match (opts.parallel, by_pair.get(&key)) {
            (ParallelLines::Merge, Some(&existing)) => {
                lines_out[existing].susceptance += susceptance;
                circuits[existing] += 1;
            }
            _ => {
                by_pair.insert(key, lines_out.len());
                circuits.push(1);
                lines_out.push(Line {
                    id: line_id,
                    from_bus: from,
                    to_bus: to,
                    susceptance,
                    flow_true: 0.0,
                });
            }
        }
        idx += 1;
    }

    let merged = lines_out
        .iter()
        .zip(&circuits)
        .filter(|(_, &c)| c > 1)
        .map(|(l, &c)| MergedCircuits {
            line_id: l.id,
            circuits: c,
        })
        .collect();
    Ok(GridCase::new(name, base_mva, buses, lines_out)?.with_merged(merged))
}
