//! JSON-lines datasets, one [`Sample`] per line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{from_json_str, read_text, write_atomic};
use crate::sample::Sample;

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Schema errors are reported as `/<line index>/<field>`, counting non-empty
/// lines from zero.
pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    parse_dataset(&read_text(path)?)
}

pub fn parse_dataset(text: &str) -> Result<Vec<Sample>> {
    let prefix = |i: usize, e: Error| match e {
        Error::Schema { pointer, message } => Error::Schema {
            pointer: format!("/{i}{pointer}"),
            message,
        },
        other => other,
    };
    let samples = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let s: Sample = from_json_str(line).map_err(|e| prefix(i, e))?;
            s.validate().map_err(|e| prefix(i, e))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = samples.first() {
        if let Some(i) = samples.iter().position(|s| s.dim() != first.dim()) {
            return Err(Error::Schema {
                pointer: format!("/{i}/tokens"),
                message: format!("dim {} differs from {}", samples[i].dim(), first.dim()),
            });
        }
    }
    Ok(samples)
}

/// Largest per-class sample count.
pub fn shots_in(samples: &[Sample]) -> usize {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_insert(0usize) += 1;
    }
    counts.into_values().max().unwrap_or(0)
}

/// Keeps samples whose label is in `classes`, relabelled to their position there.
pub fn select_classes(samples: &[Sample], classes: &[usize]) -> Vec<Sample> {
    samples
        .iter()
        .filter_map(|s| {
            classes
                .iter()
                .position(|&c| c == s.label)
                .map(|label| Sample { label, ..s.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::sample::Split;

    fn sample(label: usize) -> Sample {
        let m = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.6, 0.8, 0.0]]).unwrap();
        Sample::new(m, label, Split::Train).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data = vec![sample(0), sample(2)];
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn schema_errors_carry_line_and_field() {
        let good = serde_json::to_string(&sample(0)).unwrap();
        let bad = good.replace("\"train\"", "\"valid\"");
        match parse_dataset(&format!("{good}\n{bad}\n")) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/1/split"),
            other => panic!("unexpected {other:?}"),
        }
        let skewed = good.replacen("1.0", "2.0", 1);
        match parse_dataset(&skewed) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/0/tokens/0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_selection_relabels() {
        let data = vec![sample(0), sample(1), sample(2), sample(1)];
        let picked = select_classes(&data, &[2, 1]);
        assert_eq!(
            picked.iter().map(|s| s.label).collect::<Vec<_>>(),
            [1, 0, 1]
        );
        assert_eq!(shots_in(&data), 2);
    }
}
