//! One module per subcommand, plus the loaders they share.

mod evaluate;
mod explain;
mod generate;
mod ingest;
mod replay;
mod train;
mod verify;

use std::path::{Path, PathBuf};

use gradfaith::models::{load_params, ModelParams};
use gradfaith::phantom::{load_dataset, Dataset, DatasetSplit};

use crate::cli::Command;
use crate::error::{CliError, CliResult};
use crate::splitfile;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => generate::run(&a),
        Command::Ingest(a) => ingest::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Explain(a) => explain::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Verify(a) => verify::run(&a),
        Command::Replay(a) => replay::run(&a),
    }
}

/// `path` with `suffix` appended to its file name.
pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) => create_dir(dir),
        None => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_dataset(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).map_err(CliError::file(path))
}

/// The given split file, or the one written next to the dataset.
pub(crate) fn read_split(data: &Path, split: Option<&Path>, dataset: &Dataset) -> CliResult<(PathBuf, DatasetSplit)> {
    let path = split
        .map(Path::to_path_buf)
        .unwrap_or_else(|| splitfile::default_split_path(data));
    let parsed = splitfile::read(&path, dataset)?;
    Ok((path, parsed))
}

pub(crate) fn read_checkpoint(path: &Path, capture: Option<&str>) -> CliResult<ModelParams> {
    let params = load_params(path).map_err(CliError::file(path))?;
    match capture {
        Some(layer) => recapture(params, layer),
        None => Ok(params),
    }
}

/// The same weights reading Grad-CAM from another layer.
pub(crate) fn recapture(params: ModelParams, layer: &str) -> CliResult<ModelParams> {
    let config = params.config().clone().with_capture(layer).map_err(|e| {
        let layers: Vec<String> = params
            .config()
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.name.clone().unwrap_or_else(|| format!("{}{i}", l.kind.label())))
            .collect();
        CliError::Usage(format!("{e}; layers are {}", layers.join(", ")))
    })?;
    Ok(ModelParams::from_tensors(
        &config,
        params.seed(),
        params.layers().to_vec(),
    )?)
}

/// Rejects a model whose input does not match the dataset's images.
pub(crate) fn check_input(params: &ModelParams, dataset: &Dataset, what: &Path) -> CliResult<()> {
    let [_, h, w] = params.config().input_shape;
    if (h, w) != (dataset.height(), dataset.width()) {
        return Err(CliError::Usage(format!(
            "{} expects {h}×{w} images but the dataset holds {}×{}",
            what.display(),
            dataset.height(),
            dataset.width()
        )));
    }
    Ok(())
}

pub(crate) fn ratios(values: &[f64]) -> CliResult<[f64; 3]> {
    values
        .try_into()
        .map_err(|_| CliError::Usage(format!("expected 3 split ratios, got {}", values.len())))
}
