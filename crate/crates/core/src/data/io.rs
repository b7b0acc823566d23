use super::{DataError, Dataset, Trajectory};
use crate::json;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use crate::json::fmt_f64;

/// One trajectory per line. Blank lines are skipped.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut dims = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: n,
            reason: e.to_string(),
        })?;
        let d = *dims.get_or_insert_with(|| traj.dims().unwrap_or(super::Dims { d_x: 0, d_v: 0, k: 0 }));
        traj.validate(d).map_err(|e| DataError::Malformed {
            line: n,
            reason: e.to_string(),
        })?;
        if trajectories.iter().any(|t| t.entity_id == traj.entity_id) {
            return Err(DataError::Malformed {
                line: n,
                reason: format!("duplicate entity id `{}`", traj.entity_id),
            });
        }
        trajectories.push(traj);
    }
    Ok(Dataset { trajectories })
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> Result<(), DataError> {
    for t in &dataset.trajectories {
        json::write_compact(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_dataset(File::open(path)?)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

/// SHA-256 of the canonical serialisation, hex encoded.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).expect("writing to memory cannot fail");
    hex::encode(Sha256::digest(&buf))
}
