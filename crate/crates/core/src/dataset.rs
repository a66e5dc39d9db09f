//! Line-oriented dataset files.
//!
//! One JSON object per line:
//! `{"atoms": [{"x": [..], "w": ..}, ...], "label": ..}`.
//! Blank lines are skipped; every other line must decode to a valid measure.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Atom, ParticleMeasure};

/// An input paired with its target value.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<I> {
    pub input: I,
    pub label: f64,
}

impl<I> Labeled<I> {
    pub fn new(input: I, label: f64) -> Self {
        Self { input, label }
    }
}

pub type Record = Labeled<ParticleMeasure>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRepr {
    atoms: Vec<Atom>,
    label: f64,
}

pub fn encode_record(record: &Record) -> Result<String> {
    let repr = RecordRepr {
        atoms: record.input.atoms().to_vec(),
        label: record.label,
    };
    Ok(serde_json::to_string(&repr)?)
}

pub fn decode_record(line: &str) -> std::result::Result<Record, String> {
    let repr: RecordRepr = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !repr.label.is_finite() {
        return Err("label must be finite".into());
    }
    let measure = ParticleMeasure::new(repr.atoms).map_err(|e| e.to_string())?;
    Ok(Labeled::new(measure, repr.label))
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<Record>> {
    let mut out: Vec<Record> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = decode_record(&line).map_err(|message| Error::Dataset { line: line_no, message })?;
        if let Some(first) = out.first() {
            if first.input.dim() != record.input.dim() {
                return Err(Error::Dataset {
                    line: line_no,
                    message: format!(
                        "record dimension {} differs from dataset dimension {}",
                        record.input.dim(),
                        first.input.dim()
                    ),
                });
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut writer: W, records: &[Record]) -> Result<()> {
    for r in records {
        writeln!(writer, "{}", encode_record(r)?)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    read_records(fs::File::open(path)?)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let file = fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), records)
}
