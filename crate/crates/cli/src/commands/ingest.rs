use gradfaith::phantom::{load_grayscale_dir, save_dataset, split};

use super::generate::print_counts;
use super::{create_parent, ratios, with_suffix};
use crate::cli::IngestArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::splitfile;

/// Rejected manifest lines are reported on stderr; the accepted samples are
/// still written.
pub fn run(args: &IngestArgs) -> CliResult<()> {
    let ratios = ratios(&args.ratios)?;
    let split_path = splitfile::default_split_path(&args.out);

    create_parent(&args.out)?;
    let mut manifest = RunManifest::new("ingest", with_suffix(&args.out, ".manifest"));
    manifest.args(args);
    manifest.output(&args.out);
    manifest.output(&split_path);
    manifest.write()?;

    let report =
        load_grayscale_dir(&args.dir, (args.size, args.size), &args.labels).map_err(CliError::file(&args.labels))?;
    for e in &report.errors {
        eprintln!("{}: rejected {e}", args.labels.display());
    }
    let dataset = report.dataset;
    let parts = split(&dataset, ratios, args.seed)?;
    save_dataset(&dataset, &args.out).map_err(CliError::file(&args.out))?;
    splitfile::write(&split_path, &dataset, &parts)?;
    print_counts(&dataset, &parts);
    if !report.errors.is_empty() {
        println!("{} manifest line(s) rejected", report.errors.len());
    }
    manifest.finish()
}
