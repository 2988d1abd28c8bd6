//! Checkpoint layout:
//!
//! ```text
//! SPNP-TOY-SCORE 1\n
//! {"dim":2,"hidden":[64,64],"activation":"tanh","convention":"VE","schedule":{...},"parameters":4546}\n
//! <parameters × f64 little-endian>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpScoreNet, ToyError};
use crate::priors::{Convention, ScoreFunction};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const CHECKPOINT_MAGIC: &str = "SPNP-TOY-SCORE 1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    hidden: Vec<usize>,
    activation: String,
    convention: Convention,
    schedule: ScheduleSpec,
    parameters: usize,
}

fn err(e: impl std::fmt::Display) -> ToyError {
    ToyError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(net: &MlpScoreNet, mut out: W) -> Result<(), ToyError> {
    let header = Header {
        dim: net.dim(),
        hidden: net.hidden().to_vec(),
        activation: "tanh".into(),
        convention: net.convention(),
        schedule: net.noise_schedule().to_spec(),
        parameters: net.parameter_count(),
    };
    writeln!(out, "{CHECKPOINT_MAGIC}").map_err(err)?;
    writeln!(out, "{}", serde_json::to_string(&header).map_err(err)?).map_err(err)?;
    let mut bytes = Vec::with_capacity(8 * net.params().len());
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&bytes).map_err(err)?;
    out.flush().map_err(err)
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<MlpScoreNet, ToyError> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    r.read_line(&mut line).map_err(err)?;
    if line.trim_end_matches('\n') != CHECKPOINT_MAGIC {
        return Err(err(format!("bad magic line {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line).map_err(err)?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(err)?;
    if header.activation != "tanh" {
        return Err(err(format!("unsupported activation {}", header.activation)));
    }
    let schedule = NoiseSchedule::from_spec(&header.schedule)?;
    let net = MlpScoreNet::zeroed(header.dim, &header.hidden, schedule)?;
    if net.convention() != header.convention {
        return Err(err(format!(
            "header says {} but the schedule gives {}",
            header.convention,
            net.convention()
        )));
    }
    if header.parameters != net.parameter_count() {
        return Err(err(format!(
            "{} parameters declared, architecture has {}",
            header.parameters,
            net.parameter_count()
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(err)?;
    if bytes.len() != 8 * header.parameters {
        return Err(err(format!(
            "expected {} parameter bytes, found {}",
            8 * header.parameters,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(net.with_params(params)?)
}

pub fn save_checkpoint(net: &MlpScoreNet, path: impl AsRef<Path>) -> Result<(), ToyError> {
    let f = std::fs::File::create(path.as_ref()).map_err(|e| err(format!("{}: {e}", path.as_ref().display())))?;
    write_checkpoint(net, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpScoreNet, ToyError> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| err(format!("{}: {e}", path.as_ref().display())))?;
    read_checkpoint(f)
}
