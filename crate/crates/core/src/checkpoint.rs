//! Self-describing JSON checkpoints: configuration, data normalization, and
//! every parameter tensor under its layout name. Loading rebuilds the
//! expected layout from the stored configuration and fails loudly on any
//! name or shape mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataflow::Norm;
use crate::error::{io_err, FcError, Result};
use crate::model::{ModelDims, ModelState, Variant};
use crate::numerics::Tensor;

const FORMAT_TAG: &str = "flowcast-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    dims: ModelDims,
    variant: Variant,
    seed: u64,
    data_norm: Option<Norm>,
    params: Vec<ParamEntry>,
}

/// Writes `state` as a JSON checkpoint.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT_TAG.to_string(),
        dims: state.dims,
        variant: state.variant,
        seed: state.seed,
        data_norm: state.data_norm,
        params: state
            .names
            .iter()
            .zip(&state.params)
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| FcError::Checkpoint(format!("serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| io_err(path, e))
}

/// Loads a checkpoint, verifying the format tag and that the stored
/// parameters exactly match the layout implied by the stored configuration.
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| {
        FcError::Checkpoint(format!("{} is not a valid checkpoint: {e}", path.display()))
    })?;
    if file.format != FORMAT_TAG {
        return Err(FcError::Checkpoint(format!(
            "unsupported checkpoint format `{}` (expected `{FORMAT_TAG}`)",
            file.format
        )));
    }
    let mut state = ModelState::init(file.dims, file.variant, file.seed)?;
    if file.params.len() != state.names.len() {
        return Err(FcError::Checkpoint(format!(
            "checkpoint holds {} parameters but the configuration implies {}",
            file.params.len(),
            state.names.len()
        )));
    }
    for (i, (entry, expected)) in file.params.iter().zip(&state.names).enumerate() {
        if &entry.name != expected {
            return Err(FcError::Checkpoint(format!(
                "parameter {i}: checkpoint names it `{}` but the layout expects `{expected}`",
                entry.name
            )));
        }
        let t = &state.params[i];
        if entry.rows != t.rows || entry.cols != t.cols {
            return Err(FcError::Checkpoint(format!(
                "parameter `{}`: stored shape {}×{} does not match expected {}×{}",
                entry.name, entry.rows, entry.cols, t.rows, t.cols
            )));
        }
        if entry.data.len() != entry.rows * entry.cols {
            return Err(FcError::Checkpoint(format!(
                "parameter `{}`: {} values for a {}×{} shape",
                entry.name,
                entry.data.len(),
                entry.rows,
                entry.cols
            )));
        }
        if entry.data.iter().any(|v| !v.is_finite()) {
            return Err(FcError::Checkpoint(format!(
                "parameter `{}` contains non-finite values",
                entry.name
            )));
        }
        state.params[i] = Tensor::from_vec(entry.rows, entry.cols, entry.data.clone()).with_grad();
    }
    state.data_norm = file.data_norm;
    state.rebuild_index();
    Ok(state)
}
