//! The split CSV written next to a dataset: `id,label,split` rows with
//! `split` one of `train`, `val`, `test`.

use std::path::{Path, PathBuf};

use gradfaith::phantom::{Dataset, DatasetSplit};

use crate::error::{CliError, CliResult};

pub const HEADER: &str = "id,label,split";

/// `data.gfds` → `data.split.csv`.
pub fn default_split_path(data: &Path) -> PathBuf {
    data.with_extension("split.csv")
}

pub fn render(dataset: &Dataset, split: &DatasetSplit) -> CliResult<String> {
    let mut rows: Vec<(u64, &str)> = Vec::with_capacity(split.len());
    for (part, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        rows.extend(ids.iter().map(|&id| (id, part)));
    }
    rows.sort_unstable();
    let mut out = format!("{HEADER}\n");
    for (id, part) in rows {
        let sample = dataset
            .get(id)
            .ok_or_else(|| CliError::Usage(format!("split references unknown id {id}")))?;
        out.push_str(&format!("{id},{},{part}\n", sample.label.name()));
    }
    Ok(out)
}

pub fn write(path: &Path, dataset: &Dataset, split: &DatasetSplit) -> CliResult<()> {
    std::fs::write(path, render(dataset, split)?).map_err(|e| CliError::io(path, e))
}

/// Reads a split file and checks every id against `dataset`.
pub fn read(path: &Path, dataset: &Dataset) -> CliResult<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let err = |line: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut split = DatasetSplit::default();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(err(1, format!("expected header `{HEADER}`"))),
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, label, part] = fields[..] else {
            return Err(err(i + 1, "expected 3 fields".into()));
        };
        let id: u64 = id.parse().map_err(|_| err(i + 1, format!("bad id {id:?}")))?;
        let sample = dataset
            .get(id)
            .ok_or_else(|| err(i + 1, format!("id {id} is not in the dataset")))?;
        if sample.label.name() != label {
            return Err(err(
                i + 1,
                format!("id {id} is labelled {label}, dataset says {}", sample.label),
            ));
        }
        match part {
            "train" => split.train.push(id),
            "val" => split.val.push(id),
            "test" => split.test.push(id),
            other => return Err(err(i + 1, format!("unknown split {other:?}"))),
        }
    }
    for ids in [&mut split.train, &mut split.val, &mut split.test] {
        ids.sort_unstable();
    }
    let mut all: Vec<u64> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .copied()
        .collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(err(0, "an id appears more than once".into()));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradfaith::phantom::{generate, split, PhantomConfig, DEFAULT_RATIOS};

    #[test]
    fn round_trip() {
        let d = generate(
            &PhantomConfig {
                per_class: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let s = split(&d, DEFAULT_RATIOS, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write(&p, &d, &s).unwrap();
        assert_eq!(read(&p, &d).unwrap(), s);
        assert_eq!(
            default_split_path(Path::new("a/data.gfds")),
            Path::new("a/data.split.csv")
        );
    }

    #[test]
    fn rejects_bad_rows() {
        let d = generate(
            &PhantomConfig {
                per_class: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        for body in [
            "0,normal,train\n",
            "id,label,split\n0,benign,train\n",
            "id,label,split\n99,normal,val\n",
        ] {
            std::fs::write(&p, body).unwrap();
            assert!(matches!(read(&p, &d), Err(CliError::Parse { .. })), "{body}");
        }
    }
}
