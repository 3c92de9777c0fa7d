//! CSV and JSON artifacts.
//!
//! Every CSV file starts with a `#schema=<tag>` line followed by the header
//! row, so readers can reject files from an incompatible version.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub const STEADY_SCHEMA: &str = "fadingmem.steady.v1";
pub const FAILURES_SCHEMA: &str = "fadingmem.failures.v1";
pub const TRAJECTORY_SCHEMA: &str = "fadingmem.trajectory.v1";
pub const TRAJECTORY_SUMMARY_SCHEMA: &str = "fadingmem.trajectory_summary.v1";
pub const FLUID_SCHEMA: &str = "fadingmem.fluid.v1";
pub const ETA_STATES_SCHEMA: &str = "fadingmem.eta_states.v1";
pub const ETA_FIELD_SCHEMA: &str = "fadingmem.eta_field.v1";
pub const LIMITS_SCHEMA: &str = "fadingmem.limits.v1";
pub const SNAPSHOT_SCHEMA: &str = "fadingmem.snapshot.v1";

/// Serializes `rows` as CSV with a schema line.
pub fn csv_bytes<R: Serialize>(schema: &str, rows: &[R]) -> Result<Vec<u8>, CliError> {
    let mut out = format!("#schema={schema}\n").into_bytes();
    {
        let mut writer = csv::Writer::from_writer(&mut out);
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    Ok(out)
}

pub fn write_csv<R: Serialize>(path: &Path, schema: &str, rows: &[R]) -> Result<(), CliError> {
    write_bytes(path, &csv_bytes(schema, rows)?)
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_bytes(path, &text)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}
