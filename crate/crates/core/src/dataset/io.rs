//! JSON-lines dataset files: one header object, then one transition per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, Tier, Transition, TransitionSet};
use crate::envs::make_env;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "orl-impute/transitions/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub env_id: String,
    pub tier: Tier,
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_transitions: usize,
    pub provenance: Provenance,
}

pub fn write_dataset<W: Write>(data: &TransitionSet, mut out: W) -> Result<()> {
    let (state_dim, action_dim) = data
        .transitions
        .first()
        .map(|t| (t.state.len(), t.action.len()))
        .map_or_else(
            || make_env(&data.env_id).map(|s| (s.state_dim, s.action_dim)),
            Ok,
        )?;
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        env_id: data.env_id.clone(),
        tier: data.tier,
        state_dim,
        action_dim,
        n_transitions: data.len(),
        provenance: data.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for t in &data.transitions {
        serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(data: &TransitionSet, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_dataset(data, BufWriter::new(file))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<TransitionSet> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or_else(|| Error::Parse {
        record: None,
        detail: "empty file".into(),
    })??;
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        record: None,
        detail: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Parse {
            record: None,
            detail: format!("unsupported format `{}`", header.format),
        });
    }
    let spec = make_env(&header.env_id).map_err(|e| Error::validation(e.to_string()))?;
    if header.state_dim != spec.state_dim || header.action_dim != spec.action_dim {
        return Err(Error::validation(format!(
            "header declares dims {}/{} but `{}` has {}/{}",
            header.state_dim, header.action_dim, spec.env_id, spec.state_dim, spec.action_dim
        )));
    }

    let mut transitions = Vec::with_capacity(header.n_transitions);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            record: Some(i),
            detail: e.to_string(),
        })?;
        transitions.push(t);
    }
    if transitions.len() != header.n_transitions {
        return Err(Error::Parse {
            record: Some(transitions.len()),
            detail: format!(
                "file is truncated: header declares {} records, found {}",
                header.n_transitions,
                transitions.len()
            ),
        });
    }
    let data = TransitionSet {
        env_id: header.env_id,
        tier: header.tier,
        transitions,
        provenance: header.provenance,
    };
    data.validate_against(&spec)?;
    Ok(data)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TransitionSet> {
    let file = File::open(path.as_ref())?;
    read_dataset(BufReader::new(file))
}
