use std::io::Write;
use std::path::PathBuf;

use super::{create_dir, located, synth_spec};
use crate::config::Settings;
use crate::error::{CliError, Result};

pub const TENSOR_FILE: &str = "tensor.oct";
pub const TRUTH_FILE: &str = "truth.kruskal";
/// Doubles as a settings file for `run --config`.
pub const META_FILE: &str = "meta.conf";

pub struct GenOutput {
    pub tensor: PathBuf,
    pub truth: PathBuf,
    pub meta: PathBuf,
}

/// Writes a synthetic tensor, its generator and a metadata file to `out`.
pub fn gen(s: &Settings) -> Result<GenOutput> {
    let dims = s
        .dims
        .clone()
        .ok_or_else(|| CliError::Config("missing setting `dims`".into()))?;
    let out = s.out()?;
    let spec = synth_spec(s, dims.clone(), s.seed)?;
    let (x, truth) = spec.generate()?;
    create_dir(out)?;

    let paths = GenOutput {
        tensor: out.join(TENSOR_FILE),
        truth: out.join(TRUTH_FILE),
        meta: out.join(META_FILE),
    };
    octen::io::save_dense(&x, &paths.tensor).map_err(|e| located(&paths.tensor, e))?;
    octen::io::save_kruskal(&truth, &paths.truth).map_err(|e| located(&paths.truth, e))?;

    let meta = format!(
        "# synthetic tensor\ndims={}\nrank={}\nseed={}\nnoise_mu={}\nnoise_sigma={}\ninput={TENSOR_FILE}\ntruth={TRUTH_FILE}\n",
        super::dims_label(&dims),
        spec.rank,
        spec.seed,
        spec.noise_mu,
        spec.noise_sigma,
    );
    std::fs::File::create(&paths.meta)
        .and_then(|mut f| f.write_all(meta.as_bytes()))
        .map_err(CliError::io(&paths.meta))?;
    log::info!("wrote {} ({} entries)", paths.tensor.display(), x.data().len());
    Ok(paths)
}
