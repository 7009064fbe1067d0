//! Data file schema: a simulated data set bundled with the model that
//! produced it.
//!
//! ```json
//! {
//!   "model": { "f": [[...]], "u": [...], "q": [[...]], "h": [[...]],
//!              "d": [...], "r": [[...]], "m0": [...], "p0": [[...]],
//!              "steps": 100 },
//!   "states": [[...], ...],
//!   "measurements": [[...], ...],
//!   "seed": 1
//! }
//! ```
//!
//! Matrices are nested row arrays; per-step parameter sequences are arrays
//! of those. Writing is deterministic, so identical inputs produce
//! byte-identical files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use parkas::kernel::Vector;
use parkas::ssm::{Lgssm, SimResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataFile {
    pub model: Lgssm,
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
    pub seed: u64,
}

impl DataFile {
    pub fn new(model: Lgssm, sim: SimResult) -> Self {
        Self {
            model,
            states: sim.states,
            measurements: sim.measurements,
            seed: sim.seed,
        }
    }
}

pub fn save(path: &Path, data: &DataFile) -> Result<()> {
    let text = serde_json::to_string_pretty(data).context("serializing data file")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DataFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let data: DataFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    data.model
        .validate()
        .with_context(|| format!("invalid model in {}", path.display()))?;
    let n = data.model.n();
    if data.measurements.len() != n || data.states.len() != n {
        bail!(
            "data in {} has {} measurement rows for a model with {} steps",
            path.display(),
            data.measurements.len(),
            n
        );
    }
    let ny = data.model.meas_dim();
    if data.measurements.iter().any(|y| y.dim() != ny) {
        bail!("measurement row dimension mismatch in {}", path.display());
    }
    Ok(data)
}
