//! IEEE benchmark cases shipped with the crate, plus name/path resolution.
//!
//! The bundled files are IEEE Common Data Format conversions of the MATPOWER
//! copies of the IEEE 14/30/57/118/300-bus systems (see
//! `scripts/matpower_to_cdf.py`).

use std::path::{Path, PathBuf};

use crate::grid::{import_cdf_with, parse_cdf, GridCase, GridError, ImportOptions};

const BUNDLED: &[(&str, &str)] = &[
    ("ieee14", include_str!("../data/ieee14.cdf")),
    ("ieee30", include_str!("../data/ieee30.cdf")),
    ("ieee57", include_str!("../data/ieee57.cdf")),
    ("ieee118", include_str!("../data/ieee118.cdf")),
    ("ieee300", include_str!("../data/ieee300.cdf")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, t)| *t)
}

/// Imports a bundled case by name (`ieee14`, ..., `ieee300`).
pub fn bundled(name: &str, opts: ImportOptions) -> Option<Result<GridCase, GridError>> {
    bundled_text(name).map(|text| parse_cdf(text, name, opts))
}

/// Loads a bundled case and derives its DC state. Panics on unknown names;
/// meant for tests and examples.
pub fn ieee(name: &str) -> GridCase {
    bundled(name, ImportOptions::default())
        .unwrap_or_else(|| panic!("no bundled case {name}"))
        .expect("bundled case parses")
        .derive_dc_state()
}

/// Resolves `spec` as an existing file path, then `<case_dir>/<spec>.cdf`,
/// then a bundled case name.
pub fn resolve(spec: &str, case_dir: Option<&Path>, opts: ImportOptions) -> Result<GridCase, GridError> {
    let direct = PathBuf::from(spec);
    if direct.is_file() {
        return import_cdf_with(direct, opts);
    }
    if let Some(dir) = case_dir {
        let candidate = dir.join(format!("{spec}.cdf"));
        if candidate.is_file() {
            return import_cdf_with(candidate, opts);
        }
    }
    bundled(spec, opts).unwrap_or_else(|| {
        Err(GridError::Io {
            path: spec.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such case file or bundled case"),
        })
    })
}
