//! The subcommands.

mod gen;
mod inspect;
mod run;
mod sweep;

pub use gen::{gen, GenOutput, META_FILE, TENSOR_FILE, TRUTH_FILE};
pub use inspect::inspect;
pub use run::{run, RunOutcome, CHECKPOINT_FILE, MODEL_FILE, REPORT_FILE};
pub use sweep::{sweep, SWEEP_FILE};

use std::path::Path;

use octen::cp::KruskalModel;
use octen::synth::SynthSpec;
use octen::tensor::DenseTensor;

use crate::config::Settings;
use crate::error::{CliError, Result};

/// A tensor to stream and, when known, the model that generated it.
pub struct Dataset {
    pub tensor: DenseTensor,
    pub truth: Option<KruskalModel>,
}

/// Loads `input`, or generates synthetic data from `dims`, `rank` and the
/// noise settings with the given seed.
pub fn dataset(s: &Settings, seed: u64) -> Result<Dataset> {
    let (tensor, generated) = match &s.input {
        Some(path) => (octen::io::load_tensor(path).map_err(|e| located(path, e))?, None),
        None => {
            let dims = s
                .dims
                .clone()
                .ok_or_else(|| CliError::Config("missing setting `dims` (or `input`)".into()))?;
            let (x, truth) = synth_spec(s, dims, seed)?.generate()?;
            (x, Some(truth))
        }
    };
    let truth = match &s.truth {
        Some(path) => Some(octen::io::load_kruskal(path).map_err(|e| located(path, e))?),
        None => generated,
    };
    if let Some(t) = &truth {
        if t.dims() != tensor.dims() {
            return Err(CliError::Config(format!(
                "ground truth has extents {:?} but the tensor has {:?}",
                t.dims(),
                tensor.dims()
            )));
        }
    }
    Ok(Dataset { tensor, truth })
}

fn synth_spec(s: &Settings, dims: Vec<usize>, seed: u64) -> Result<SynthSpec> {
    let spec = SynthSpec::new(dims, s.rank()?, seed).with_noise(s.noise_mu, s.noise_sigma);
    spec.validate()?;
    Ok(spec)
}

/// Attaches the file name to I/O and parse failures.
fn located(path: &Path, e: octen::Error) -> CliError {
    match e {
        octen::Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        octen::Error::Parse(msg) => octen::Error::Parse(format!("{}: {msg}", path.display())).into(),
        e => e.into(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn dims_label(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}
