//! Cohort persistence: one JSON object per line, transparently
//! gzip-compressed when the path ends in `.gz`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use vlrisk_core::cohort::PatientRecord;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(if is_gz(path) {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    })
}

fn reader(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    })
}

/// Write one record per line; an empty cohort yields an empty file.
pub fn save_cohort(cohort: &[PatientRecord], path: &Path) -> Result<()> {
    let mut out = writer(path)?;
    for record in cohort {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load a cohort; parse failures name the offending line (and serde
/// names the missing field).
pub fn load_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    let buf = BufReader::new(reader(path)?);
    let mut cohort = Vec::new();
    for (idx, line) in buf.lines().enumerate() {
        let line = line.with_context(|| format!("reading {} line {}", path.display(), idx + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        cohort.push(record);
    }
    Ok(cohort)
}
