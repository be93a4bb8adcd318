use std::path::PathBuf;

use gradfaith::faithfulness::binarize;
use gradfaith::gradcam::{explain, explain_predicted};

use super::{check_input, create_dir, read_checkpoint, read_dataset};
use crate::cli::ExplainArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::render::{first_channel, gray_levels, mask_levels, overlay, save_pgm, save_ppm};

/// The four images written per sample id.
pub fn output_paths(dir: &std::path::Path, id: u64) -> [PathBuf; 4] {
    [
        dir.join(format!("{id}_input.pgm")),
        dir.join(format!("{id}_heatmap.pgm")),
        dir.join(format!("{id}_overlay.ppm")),
        dir.join(format!("{id}_binary.pgm")),
    ]
}

fn target_class(spec: &str, classes: usize) -> CliResult<Option<usize>> {
    if spec.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match spec.parse::<usize>() {
        Ok(c) if c < classes => Ok(Some(c)),
        _ => Err(CliError::Usage(format!(
            "--class must be auto or a class index below {classes}, got {spec:?}"
        ))),
    }
}

pub fn run(args: &ExplainArgs) -> CliResult<()> {
    let params = read_checkpoint(&args.ckpt, args.capture.as_deref())?;
    let dataset = read_dataset(&args.data)?;
    check_input(&params, &dataset, &args.ckpt)?;
    let class = target_class(&args.class, params.config().num_classes)?;
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Usage(format!("--tau must lie in (0,1), got {}", args.tau)));
    }
    let samples = args
        .ids
        .iter()
        .map(|&id| {
            dataset
                .get(id)
                .ok_or_else(|| CliError::Usage(format!("sample id {id} not found in {}", args.data.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;

    create_dir(&args.out_dir)?;
    let mut manifest = RunManifest::new("explain", args.out_dir.join("explain.manifest"));
    let mut resolved = args.clone();
    resolved.capture = Some(params.config().capture_layer.clone());
    manifest.args(&resolved);
    manifest.set(
        "config.overlay",
        "red = (1-beta)*gray + beta*heat, green = blue = (1-beta)*gray, beta = 0.5",
    );
    for &id in &args.ids {
        for p in output_paths(&args.out_dir, id) {
            manifest.output(&p);
        }
    }
    manifest.write()?;

    for sample in samples {
        let (target, heatmap) = match class {
            Some(c) => (c, explain(&params, &sample.image, c, args.score_mode)?),
            None => explain_predicted(&params, &sample.image, args.score_mode)?,
        };
        let (h, w, gray) = first_channel(&sample.image)?;
        let heat = heatmap.normalized.data();
        let [input, heat_path, overlay_path, binary] = output_paths(&args.out_dir, sample.id);
        save_pgm(&input, w, h, &gray_levels(gray))?;
        save_pgm(&heat_path, w, h, &gray_levels(heat))?;
        save_ppm(&overlay_path, w, h, &overlay(gray, heat))?;
        save_pgm(&binary, w, h, &mask_levels(&binarize(&heatmap, args.tau)?))?;
        println!(
            "id {}: label {}, target class {} ({}), capture {}",
            sample.id,
            sample.label,
            target,
            gradfaith::phantom::Label::from_index(target)
                .map(|l| l.name())
                .unwrap_or("?"),
            heatmap.capture_layer
        );
    }
    manifest.finish()
}
