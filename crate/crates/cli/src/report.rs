//! The evaluation report: a fixed-column CSV with 4-decimal numbers, its
//! JSON mirror with 6 significant digits, per-model confusion matrices, and
//! a plain-text table for the terminal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gradfaith::faithfulness::ConfusionMatrix;
use gradfaith::phantom::Label;
use serde_json::{json, Map, Value};

/// Report columns, in order.
pub const COLUMNS: [&str; 12] = [
    "model",
    "sensitivity",
    "specificity",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "time_ms",
    "loc_acc",
    "faith",
    "consist",
    "eligible_mask_count",
];

/// One audited checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// `<preset>-seed<k>`.
    pub model: String,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Median single-image forward time.
    pub time_ms: f64,
    /// `None` when no test sample has a nonempty mask.
    pub loc_acc: Option<f64>,
    pub faith: f64,
    /// `None` when the model's preset has fewer than two checkpoints.
    pub consist: Option<f64>,
    pub eligible_mask_count: usize,
}

impl ReportRow {
    fn numbers(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("sensitivity", Some(self.sensitivity)),
            ("specificity", Some(self.specificity)),
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("f1", Some(self.f1)),
            ("accuracy", Some(self.accuracy)),
            ("time_ms", Some(self.time_ms)),
            ("loc_acc", self.loc_acc),
            ("faith", self.faith.into()),
            ("consist", self.consist),
        ]
    }
}

fn fixed4(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Rounds to 6 significant digits.
pub fn six_significant(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn json_number(v: Option<f64>) -> Value {
    v.map(|v| json!(six_significant(v))).unwrap_or(Value::Null)
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        let mut fields = vec![row.model.clone()];
        fields.extend(row.numbers().iter().map(|&(_, v)| fixed4(v)));
        fields.push(row.eligible_mask_count.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// The 12 report fields of a row as a JSON object.
pub fn row_json(row: &ReportRow) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("model".into(), json!(row.model));
    for (k, v) in row.numbers() {
        obj.insert(k.into(), json_number(v));
    }
    obj.insert("eligible_mask_count".into(), json!(row.eligible_mask_count));
    obj
}

/// Extra per-model detail carried only by the JSON mirror.
#[derive(Clone, Debug)]
pub struct RowDetail {
    pub preset: String,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub confusion: ConfusionMatrix,
    pub confusion_file: PathBuf,
    pub zero_division: bool,
}

pub fn render_json(
    rows: &[ReportRow],
    details: &[RowDetail],
    consist_by_preset: &BTreeMap<String, Option<f64>>,
    settings: Map<String, Value>,
) -> String {
    let rows: Vec<Value> = rows
        .iter()
        .zip(details)
        .map(|(row, d)| {
            let mut obj = row_json(row);
            obj.insert("preset".into(), json!(d.preset));
            obj.insert("seed".into(), json!(d.seed));
            obj.insert("checkpoint".into(), json!(d.checkpoint.display().to_string()));
            obj.insert("confusion_matrix".into(), json!(d.confusion.rows().collect::<Vec<_>>()));
            obj.insert("confusion_file".into(), json!(d.confusion_file.display().to_string()));
            obj.insert("zero_division".into(), json!(d.zero_division));
            // Faith averages over every test sample; the correctly classified
            // subset is counted so the two readings can be told apart.
            obj.insert("faith_samples".into(), json!(d.confusion.total()));
            obj.insert("correctly_classified_samples".into(), json!(d.confusion.trace()));
            Value::Object(obj)
        })
        .collect();
    let consist: Map<String, Value> = consist_by_preset
        .iter()
        .map(|(k, v)| (k.clone(), json_number(*v)))
        .collect();
    let doc = json!({
        "columns": COLUMNS,
        "rows": rows,
        "consist_by_preset": consist,
        "settings": settings,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
    text.push('\n');
    text
}

/// `report.csv` + `cnn-a-seed1` → `report.cnn-a-seed1.confusion.csv`.
pub fn confusion_path(report: &Path, model: &str) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.with_file_name(format!("{stem}.{model}.confusion.csv"))
}

/// Rows are true classes and columns predicted classes, both headed by
/// class name.
pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let names: Vec<&str> = Label::ALL.iter().map(|l| l.name()).collect();
    let mut out = format!("true\\predicted,{}\n", names.join(","));
    for (i, row) in cm.rows().enumerate() {
        let name = names.get(i).copied().unwrap_or("?");
        let counts: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{name},{}\n", counts.join(",")));
    }
    out
}

/// Aligned plain-text table of the CSV fields.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = [
        "model", "sens", "spec", "prec", "recall", "f1", "acc", "ms", "loc_acc", "faith", "consist", "masks",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.model.clone()];
            cells.extend(
                r.numbers()
                    .iter()
                    .map(|&(_, v)| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())),
            );
            cells.push(r.eligible_mask_count.to_string());
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<String>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    for cells in body {
        out.push_str(&line(cells));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(consist: Option<f64>) -> ReportRow {
        ReportRow {
            model: "cnn-a-seed1".into(),
            sensitivity: 0.88,
            specificity: 0.91,
            precision: 0.87,
            recall: 0.88,
            f1: 0.86,
            accuracy: 0.89,
            time_ms: 25.0,
            loc_acc: Some(0.123456789),
            faith: -0.000049,
            consist,
            eligible_mask_count: 40,
        }
    }

    #[test]
    fn csv_has_the_twelve_columns_and_four_decimals() {
        let csv = render_csv(&[row(None)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[1], "0.8800");
        assert_eq!(fields[8], "0.1235");
        assert_eq!(fields[9], "-0.0000");
        assert_eq!(fields[10], "");
        assert_eq!(fields[11], "40");
    }

    #[test]
    fn json_uses_null_for_missing_values() {
        let obj = row_json(&row(None));
        assert_eq!(obj["consist"], Value::Null);
        assert_eq!(obj["loc_acc"], json!(0.123457));
        assert_eq!(row_json(&row(Some(0.5)))["consist"], json!(0.5));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(six_significant(1234.56789), 1234.57);
        assert_eq!(six_significant(0.000123456789), 0.000123457);
        assert_eq!(six_significant(0.0), 0.0);
    }

    #[test]
    fn confusion_csv_is_headed_by_class_names() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 0, 5, 0, 0, 5]).unwrap();
        assert_eq!(
            render_confusion(&cm),
            "true\\predicted,normal,benign,malignant\nnormal,5,0,0\nbenign,0,0,5\nmalignant,0,0,5\n"
        );
        assert_eq!(
            confusion_path(Path::new("out/report.csv"), "cnn-a-seed1"),
            Path::new("out/report.cnn-a-seed1.confusion.csv")
        );
    }
}
