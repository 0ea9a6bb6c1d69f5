//! JSON-lines checkpoint envelope shared by reward-model and agent checkpoints:
//! a header object on the first line, then one line per named network with its
//! layer sizes and flat parameter vector (see [`MlpParams::flatten`]).

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub net: String,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn new(net: impl Into<String>, params: &MlpParams) -> Self {
        Self {
            net: net.into(),
            layer_sizes: params.layer_sizes.clone(),
            params: params.flatten(),
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        MlpParams::from_flat(&self.layer_sizes, &self.params)
    }
}

pub fn write_envelope<W: Write, H: Serialize>(mut out: W, header: &H, nets: &[NetRecord]) -> Result<()> {
    serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for n in nets {
        serde_json::to_writer(&mut out, n).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_envelope<R: BufRead, H: DeserializeOwned>(input: R) -> Result<(H, Vec<NetRecord>)> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Parse {
        record: None,
        detail: "empty checkpoint".into(),
    })??;
    let header: H = serde_json::from_str(&first).map_err(|e| Error::Parse {
        record: None,
        detail: e.to_string(),
    })?;
    let mut nets = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        nets.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            record: Some(i),
            detail: e.to_string(),
        })?);
    }
    Ok((header, nets))
}

/// Finds the network called `name` and rebuilds its parameters.
pub fn take_net(nets: &[NetRecord], name: &str) -> Result<MlpParams> {
    nets.iter()
        .find(|n| n.net == name)
        .ok_or_else(|| Error::validation(format!("checkpoint has no network `{name}`")))?
        .to_params()
}

pub fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Parse {
            record: None,
            detail: format!("expected checkpoint format `{expected}`, found `{found}`"),
        });
    }
    Ok(())
}
