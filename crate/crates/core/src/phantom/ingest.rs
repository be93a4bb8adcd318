use std::fmt;
use std::path::Path;

use super::{Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::faithfulness::BinaryMask;
use crate::pnm::{self, PnmKind};
use crate::tensor::Tensor;

/// A manifest line that could not be turned into a sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestError {
    /// 1-based manifest line number.
    pub line: usize,
    pub file: String,
    pub message: String,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.file, self.message)
    }
}

/// Accepted samples plus every rejected line.
#[derive(Clone, Debug)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub errors: Vec<IngestError>,
}

fn read_gray(path: &Path, (height, width): (usize, usize)) -> Result<pnm::PnmImage> {
    let img = pnm::read(path)?;
    if img.kind != PnmKind::Gray {
        return Err(Error::input("expected a grayscale P5 image"));
    }
    if (img.height, img.width) != (height, width) {
        return Err(Error::input(format!(
            "image is {}×{}, expected {height}×{width}",
            img.height, img.width
        )));
    }
    Ok(img)
}

fn ingest_line(dir: &Path, fields: &[&str], id: u64, size: (usize, usize)) -> Result<Sample> {
    let label = Label::parse(fields[1]).ok_or_else(|| {
        Error::input(format!(
            "unknown label {:?} (expected 0, 1, 2 or a class name)",
            fields[1]
        ))
    })?;
    let img = read_gray(&dir.join(fields[0]), size)?;
    let mask = match fields.get(2).filter(|m| !m.is_empty()) {
        Some(m) => {
            let raw = read_gray(&dir.join(m), size).map_err(|e| Error::input(format!("mask {m}: {e}")))?;
            BinaryMask::new(size.0, size.1, raw.samples.iter().map(|&s| s > 0).collect())?
        }
        None => BinaryMask::empty(size.0, size.1),
    };
    Ok(Sample {
        id,
        label,
        image: Tensor::new([1, size.0, size.1], img.to_unit())?,
        mask,
    })
}

/// Loads PGM images listed in a manifest of `filename,label[,maskfile]`
/// lines (paths relative to `dir`; blank lines and `#` comments skipped).
///
/// Pixels are divided by maxval. Nonzero mask pixels mark the lesion; a
/// missing mask gives an empty one, which excludes the sample from
/// localization scoring. Each sample's id is its manifest line number.
/// Per-line problems are collected into the report rather than aborting.
pub fn load_grayscale_dir(dir: &Path, size: (usize, usize), manifest: &Path) -> Result<IngestReport> {
    let text = std::fs::read_to_string(manifest)?;
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let file = fields[0].to_string();
        let result = if !(2..=3).contains(&fields.len()) || fields[0].is_empty() {
            Err(Error::input("expected `filename,label[,maskfile]`"))
        } else {
            ingest_line(dir, &fields, (i + 1) as u64, size)
        };
        match result {
            Ok(s) => samples.push(s),
            Err(e) => errors.push(IngestError {
                line: i + 1,
                file,
                message: e.to_string(),
            }),
        }
    }
    Ok(IngestReport {
        dataset: Dataset::new(size.0, size.1, samples)?,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collects_per_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        pnm::write_pgm(&p.join("a.pgm"), 2, 2, &[255; 4]).unwrap();
        pnm::write_pgm(&p.join("m.pgm"), 2, 2, &[0, 255, 0, 0]).unwrap();
        pnm::write_pgm(&p.join("small.pgm"), 1, 1, &[0]).unwrap();
        std::fs::write(p.join("bad.pgm"), b"P2\n2 2\n255\n").unwrap();
        std::fs::write(
            p.join("manifest.csv"),
            "# comment\na.pgm,1,m.pgm\na.pgm,3\nsmall.pgm,0\nbad.pgm,0\nmissing.pgm,normal\na.pgm,normal\n",
        )
        .unwrap();
        let report = load_grayscale_dir(p, (2, 2), &p.join("manifest.csv")).unwrap();
        assert_eq!(report.dataset.len(), 2);
        let first = report.dataset.get(2).unwrap();
        assert_eq!(first.label, Label::Benign);
        assert!(first.image.data().iter().all(|&v| v == 1.0));
        assert_eq!(first.mask.count(), 1);
        assert!(report.dataset.get(7).unwrap().mask.is_empty());
        let lines: Vec<usize> = report.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
        assert!(report.errors[0].message.contains("unknown label"));
    }
}
