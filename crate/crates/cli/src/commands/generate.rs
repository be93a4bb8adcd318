use gradfaith::phantom::{generate, save_dataset, split, Dataset, Label, PhantomConfig};

use super::{create_parent, ratios, with_suffix};
use crate::cli::GenerateArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::splitfile;

pub fn run(args: &GenerateArgs) -> CliResult<()> {
    let config = PhantomConfig {
        size: args.size,
        per_class: args.per_class,
        noise: args.noise,
        contrast: args.contrast,
        ..PhantomConfig::default()
    };
    config.validate()?;
    let ratios = ratios(&args.ratios)?;
    let split_path = splitfile::default_split_path(&args.out);

    create_parent(&args.out)?;
    let mut manifest = RunManifest::new("generate", with_suffix(&args.out, ".manifest"));
    manifest.args(args);
    manifest.fields("config.phantom.", &config);
    manifest.output(&args.out);
    manifest.output(&split_path);
    manifest.write()?;

    let dataset = generate(&config, args.seed)?;
    let parts = split(&dataset, ratios, args.seed)?;
    save_dataset(&dataset, &args.out).map_err(CliError::file(&args.out))?;
    splitfile::write(&split_path, &dataset, &parts)?;
    print_counts(&dataset, &parts);
    manifest.finish()
}

pub(super) fn print_counts(dataset: &Dataset, parts: &gradfaith::phantom::DatasetSplit) {
    let counts = dataset.class_counts();
    let by_class: Vec<String> = Label::ALL
        .iter()
        .map(|l| format!("{}={}", l.name(), counts[l.index()]))
        .collect();
    println!(
        "{} samples ({}×{}): {}",
        dataset.len(),
        dataset.height(),
        dataset.width(),
        by_class.join(" ")
    );
    println!(
        "split: train={} val={} test={}",
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
}
