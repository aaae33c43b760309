//! CSV/JSON artifact writing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use kpzkp::Error;

use crate::commands::{Cell, Outcome};

/// Library errors that come from bad parameters rather than failed numerics.
pub fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Domain(_) | Error::Size(_) | Error::Stencil(_) | Error::Ordering(_) | Error::Range(_) | Error::Contour(_))
}

fn cell(c: &Cell) -> String {
    match c {
        // 17 significant digits round-trip every f64.
        Cell::Num(v) => format!("{v:.16e}"),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::Text(s) => s.clone(),
    }
}

pub fn csv(outcome: &Outcome) -> String {
    let mut s = outcome.header.join(",");
    s.push('\n');
    for row in &outcome.rows {
        s.push_str(&row.iter().map(cell).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Write both artifacts through temporary names, renaming only once both are complete.
pub fn write_artifacts(dir: &Path, stem: &str, outcome: &Outcome) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let csv_tmp = dir.join(format!(".{stem}.csv.tmp"));
    let json_tmp = dir.join(format!(".{stem}.json.tmp"));
    let json = serde_json::to_string_pretty(&outcome.report).map_err(io::Error::other)? + "\n";
    let result = fs::write(&csv_tmp, csv(outcome))
        .and_then(|_| fs::write(&json_tmp, json))
        .and_then(|_| fs::rename(&csv_tmp, &csv_path))
        .and_then(|_| fs::rename(&json_tmp, &json_path));
    if let Err(e) = result {
        let _ = fs::remove_file(&csv_tmp);
        let _ = fs::remove_file(&json_tmp);
        let _ = fs::remove_file(&csv_path);
        return Err(e);
    }
    Ok((csv_path, json_path))
}
