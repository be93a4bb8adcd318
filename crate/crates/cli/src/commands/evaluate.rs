use std::collections::BTreeMap;
use std::path::PathBuf;

use gradfaith::faithfulness::{
    classification_metrics, consistency, faith_mean, loc_acc, ConfusionMatrix, EvalConfig, MaskFill,
};
use gradfaith::gradcam::{explain, Heatmap};
use gradfaith::models::ModelParams;
use gradfaith::phantom::{Dataset, Sample};
use gradfaith::training::{measure_inference_ms, predictions};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use super::{check_input, create_parent, read_checkpoint, read_dataset, read_split, write_text};
use crate::cli::{EvaluateArgs, FillArg};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::report::{confusion_path, render_confusion, render_csv, render_json, render_table, ReportRow, RowDetail};

/// Everything computed for one checkpoint except timing and consistency.
struct Audit {
    confusion: ConfusionMatrix,
    heatmaps: Vec<Heatmap>,
    row: ReportRow,
    zero_division: bool,
}

fn model_name(params: &ModelParams) -> String {
    format!("{}-seed{}", params.config().preset, params.seed())
}

fn audit(
    params: &ModelParams,
    dataset: &Dataset,
    test: &[u64],
    samples: &[&Sample],
    args: &EvaluateArgs,
    eval: &EvalConfig,
) -> gradfaith::Result<Audit> {
    let preds = predictions(params, dataset, test)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let confusion = ConfusionMatrix::from_predictions(&preds, &labels, params.config().num_classes)?;
    let metrics = classification_metrics(&confusion);
    let heatmaps = samples
        .iter()
        .map(|s| explain(params, &s.image, s.label.index(), args.score_mode))
        .collect::<gradfaith::Result<Vec<_>>>()?;
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    let eligible = masks.iter().filter(|m| !m.is_empty()).count();
    let loc = if eligible > 0 {
        Some(loc_acc(&heatmaps, &masks, eval.tau)?.value)
    } else {
        None
    };
    let faith = faith_mean(params, samples, &heatmaps, eval)?;
    let m = metrics.macro_avg;
    Ok(Audit {
        confusion,
        heatmaps,
        zero_division: metrics.zero_division,
        row: ReportRow {
            model: model_name(params),
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            accuracy: metrics.accuracy,
            time_ms: 0.0,
            loc_acc: loc,
            faith,
            consist: None,
            eligible_mask_count: eligible,
        },
    })
}

fn settings(args: &EvaluateArgs, eval: &EvalConfig, split: &std::path::Path, test_count: usize) -> Map<String, Value> {
    let fill = match eval.fill {
        MaskFill::Multiplicative => json!("multiplicative: x * (1 - L)"),
        MaskFill::DatasetMean(m) => json!(format!("dataset mean: x * (1 - L) + {m} * L")),
    };
    let mut s = Map::new();
    s.insert("split_file".into(), json!(split.display().to_string()));
    s.insert("evaluated_split".into(), json!("test"));
    s.insert("evaluated_samples".into(), json!(test_count));
    s.insert("tau".into(), json!(eval.tau));
    s.insert("heatmap_score_mode".into(), json!(args.score_mode.name()));
    s.insert("faith_score_mode".into(), json!(eval.score_mode.name()));
    s.insert("faith_fill".into(), fill);
    s.insert("heatmap_target".into(), json!("true label"));
    s.insert("binarization".into(), json!("normalized heatmap >= tau"));
    s.insert("consist_reference_index".into(), json!(eval.reference));
    s.insert(
        "consist_grouping".into(),
        json!("by preset; reference run excluded from its own mean"),
    );
    s.insert(
        "metric_averaging".into(),
        json!("macro (unweighted mean of one-vs-rest class metrics)"),
    );
    s.insert("zero_denominator".into(), json!("reported as 0"));
    s.insert(
        "time_ms".into(),
        json!("median single-image forward, at least 20 repetitions"),
    );
    s.insert("numbers".into(), json!("6 significant digits"));
    s
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let dataset = read_dataset(&args.data)?;
    let (split_path, split) = read_split(&args.data, args.split.as_deref(), &dataset)?;
    if split.test.is_empty() {
        return Err(CliError::Usage(format!(
            "{} has an empty test split",
            split_path.display()
        )));
    }
    let models = args
        .ckpts
        .iter()
        .map(|p| {
            let params = read_checkpoint(p, args.capture.as_deref())?;
            check_input(&params, &dataset, p)?;
            Ok(params)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let names: Vec<String> = models.iter().map(model_name).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(CliError::Usage(format!("two checkpoints are both named {n}")));
        }
    }
    let eval = EvalConfig {
        tau: args.tau,
        reference: args.reference,
        score_mode: args.faith_mode,
        fill: match args.fill {
            FillArg::Multiplicative => MaskFill::Multiplicative,
            FillArg::Mean => MaskFill::DatasetMean(dataset.mean_intensity()),
        },
    };
    eval.validate()?;

    // Consistency groups: presets in order of first appearance.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let preset = &m.config().preset;
        match groups.iter_mut().find(|(p, _)| p == preset) {
            Some((_, members)) => members.push(i),
            None => groups.push((preset.clone(), vec![i])),
        }
    }
    for (preset, members) in &groups {
        if members.len() >= 2 && args.reference >= members.len() {
            return Err(CliError::Usage(format!(
                "--ref {} is out of range for the {} {preset} checkpoints",
                args.reference,
                members.len()
            )));
        }
    }

    let json_path = args.json.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let confusion_paths: Vec<PathBuf> = names.iter().map(|n| confusion_path(&args.out, n)).collect();
    create_parent(&args.out)?;
    create_parent(&json_path)?;
    let mut manifest = RunManifest::new("evaluate", super::with_suffix(&args.out, ".manifest"));
    let mut resolved = args.clone();
    resolved.split = Some(split_path.clone());
    resolved.json = Some(json_path.clone());
    manifest.args(&resolved);
    manifest.fields("config.eval.", &eval);
    let info = settings(args, &eval, &split_path, split.test.len());
    for (k, v) in &info {
        manifest.set(
            &format!("config.{k}"),
            v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()),
        );
    }
    manifest.output(&args.out);
    manifest.output(&json_path);
    for p in &confusion_paths {
        manifest.output(p);
    }
    manifest.write()?;

    let samples = dataset.select(&split.test)?;
    let mut audits = models
        .par_iter()
        .map(|m| audit(m, &dataset, &split.test, &samples, args, &eval))
        .collect::<gradfaith::Result<Vec<_>>>()?;
    // Timed one model at a time so the measurements do not compete.
    for (a, m) in audits.iter_mut().zip(&models) {
        a.row.time_ms = measure_inference_ms(m, &dataset, &split.test)?;
    }

    let mut consist_by_preset = BTreeMap::new();
    for (preset, members) in &groups {
        let value = if members.len() >= 2 {
            let runs: Vec<Vec<Heatmap>> = members.iter().map(|&i| audits[i].heatmaps.clone()).collect();
            Some(consistency(&runs, args.reference, args.tau)?)
        } else {
            None
        };
        for &i in members {
            audits[i].row.consist = value;
        }
        consist_by_preset.insert(preset.clone(), value);
    }

    let rows: Vec<ReportRow> = audits.iter().map(|a| a.row.clone()).collect();
    let details: Vec<RowDetail> = audits
        .iter()
        .zip(&models)
        .zip(args.ckpts.iter().zip(&confusion_paths))
        .map(|((a, m), (ckpt, cpath))| RowDetail {
            preset: m.config().preset.clone(),
            seed: m.seed(),
            checkpoint: ckpt.clone(),
            confusion: a.confusion.clone(),
            confusion_file: cpath.clone(),
            zero_division: a.zero_division,
        })
        .collect();
    write_text(&args.out, &render_csv(&rows))?;
    write_text(&json_path, &render_json(&rows, &details, &consist_by_preset, info))?;
    for (a, p) in audits.iter().zip(&confusion_paths) {
        write_text(p, &render_confusion(&a.confusion))?;
    }
    print!("{}", render_table(&rows));
    println!("report: {} and {}", args.out.display(), json_path.display());
    manifest.finish()
}
