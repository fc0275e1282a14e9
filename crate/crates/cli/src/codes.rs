//! JSON file of latent codes, written by `sample` and read back for replay.

use std::path::Path;

use lfs_core::LatentCode;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
pub struct CodeFile {
    pub k: usize,
    pub codes: Vec<Vec<f32>>,
}

impl CodeFile {
    pub fn from_codes(k: usize, codes: &[LatentCode<f32>]) -> Self {
        CodeFile {
            k,
            codes: codes.iter().map(|c| c.values().to_vec()).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult {
        let text = serde_json::to_string_pretty(self).expect("codes serialize");
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read code file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("malformed code file {}: {e}", path.display())))
    }

    /// Codes checked against the model's code length.
    pub fn into_codes(self, expected_k: usize) -> CliResult<Vec<LatentCode<f32>>> {
        self.codes.into_iter().map(|v| to_code(v, expected_k)).collect()
    }
}

pub fn to_code(values: Vec<f32>, expected_k: usize) -> CliResult<LatentCode<f32>> {
    if values.len() != expected_k {
        return Err(CliError::Usage(format!(
            "code has length {}, but the model expects k = {expected_k}",
            values.len()
        )));
    }
    Ok(LatentCode::new(values)?)
}

pub fn parse_code_arg(s: &str, expected_k: usize) -> CliResult<LatentCode<f32>> {
    let values = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f32>()
                .map_err(|_| CliError::Usage(format!("cannot parse code entry {p:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    to_code(values, expected_k)
}
