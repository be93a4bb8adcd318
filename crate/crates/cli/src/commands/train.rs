use std::path::{Path, PathBuf};

use gradfaith::models::{save_params, ModelConfig, PRESETS};
use gradfaith::phantom::Dataset;
use gradfaith::training::{train, train_ensemble, TrainConfig, TrainRecord};

use super::{create_dir, read_dataset, read_split, write_text};
use crate::cli::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub fn checkpoint_name(preset: &str, seed: u64) -> String {
    format!("{preset}-seed{seed}.gfck")
}

pub fn record_name(preset: &str, seed: u64) -> String {
    format!("{preset}-seed{seed}.train.csv")
}

/// `epoch,train_loss,val_accuracy` with 6 decimals; validation accuracy is
/// empty when there is no validation split.
pub fn render_record(record: &TrainRecord) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy\n");
    for (i, loss) in record.train_loss.iter().enumerate() {
        let val = record
            .val_accuracy
            .get(i)
            .copied()
            .flatten()
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{loss:.6},{val}\n", i + 1));
    }
    out
}

/// The preset sized to the dataset's images, with an optional capture
/// layer override.
pub(crate) fn model_config(preset: &str, capture: Option<&str>, dataset: &Dataset) -> CliResult<ModelConfig> {
    if !PRESETS.contains(&preset) {
        return Err(CliError::Usage(format!(
            "unknown model preset {preset:?}; available presets: {}",
            PRESETS.join(", ")
        )));
    }
    let mut config = ModelConfig::preset(preset, dataset.height())?;
    config.input_shape = [1, dataset.height(), dataset.width()];
    config.validate()?;
    match capture {
        Some(layer) => Ok(config.with_capture(layer)?),
        None => Ok(config),
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let dataset = read_dataset(&args.data)?;
    let (split_path, split) = read_split(&args.data, args.split.as_deref(), &dataset)?;
    let model = model_config(&args.model, args.capture.as_deref(), &dataset)?;
    if args.seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    for (i, s) in args.seeds.iter().enumerate() {
        if args.seeds[..i].contains(s) {
            return Err(CliError::Usage(format!("seed {s} is listed twice")));
        }
    }
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        momentum: args.momentum,
        seed: args.seeds[0],
        shuffle: args.shuffle,
    };
    config.validate()?;

    let outputs: Vec<(u64, PathBuf, PathBuf)> = args
        .seeds
        .iter()
        .map(|&s| {
            (
                s,
                args.out.join(checkpoint_name(&model.preset, s)),
                args.out.join(record_name(&model.preset, s)),
            )
        })
        .collect();
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("train", args.out.join("train.manifest"));
    let mut resolved = args.clone();
    resolved.split = Some(split_path);
    resolved.capture = Some(model.capture_layer.clone());
    manifest.args(&resolved);
    manifest.set("config.optimizer", "sgd with heavy-ball momentum");
    manifest.set("config.loss", "softmax cross-entropy, mean over batch");
    manifest.set(
        "config.hyperparameters",
        "artifact choices (not taken from a published setup)",
    );
    manifest.set("config.center", "per-pixel mean of the training split, held fixed");
    manifest.set(
        "config.model",
        serde_json::to_string(&model).expect("config serializes"),
    );
    for (_, ckpt, record) in &outputs {
        manifest.output(ckpt);
        manifest.output(record);
    }
    manifest.write()?;

    let runs = if args.seeds.len() >= 2 {
        train_ensemble(&model, &config, &dataset, &split, &args.seeds)?
    } else {
        vec![train(&model, &config, &dataset, &split)?]
    };
    for ((seed, ckpt, record_path), (params, record)) in outputs.iter().zip(&runs) {
        save_params(params, ckpt).map_err(CliError::file(ckpt))?;
        write_text(record_path, &render_record(record))?;
        print_summary(*seed, ckpt, record);
    }
    manifest.finish()
}

fn print_summary(seed: u64, ckpt: &Path, record: &TrainRecord) {
    let loss = record.train_loss.last().copied().unwrap_or(f64::NAN);
    let val = match record.val_accuracy.last().copied().flatten() {
        Some(v) => format!("{v:.4}"),
        None => "-".into(),
    };
    println!(
        "seed {seed}: {} epochs, final train loss {loss:.4}, val accuracy {val}, {:.1}s -> {}",
        record.final_epoch,
        record.wall_seconds,
        ckpt.display()
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_csv_layout() {
        let r = TrainRecord {
            train_loss: vec![1.0986, 0.5],
            val_accuracy: vec![Some(0.5), None],
            wall_seconds: 0.0,
            final_epoch: 2,
        };
        assert_eq!(
            render_record(&r),
            "epoch,train_loss,val_accuracy\n1,1.098600,0.500000\n2,0.500000,\n"
        );
        assert_eq!(checkpoint_name("cnn-a", 3), "cnn-a-seed3.gfck");
    }
}
