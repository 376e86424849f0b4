//! CSV persistence.
//!
//! ```text
//! # classes=4                      (optional; inferred from labels when absent)
//! id,given_label,true_label,f0,...,f{d-1}
//! 0,2,2,1.2345678901234567e0,...
//! ```
//!
//! `given_label = -1` encodes an unlabeled sample. Reals are written with 17
//! significant digits so that a save/load round trip is exact.

use std::collections::HashSet;
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

const CLASSES_PREFIX: &str = "# classes=";

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn to_csv_string(dataset: &Dataset) -> Result<String> {
    let mut out = format!("{CLASSES_PREFIX}{}\n", dataset.classes());
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "given_label".into(), "true_label".into()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_write_err)?;
    for s in dataset.samples() {
        let mut rec = Vec::with_capacity(3 + s.features.len());
        rec.push(s.id.to_string());
        rec.push(s.given_label.map_or("-1".to_string(), |l| l.to_string()));
        rec.push(s.true_label.to_string());
        rec.extend(s.features.iter().map(|x| format!("{x:.16e}")));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv buffer: {e}")))?;
    out.push_str(&String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(out)
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv write: {e}"))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut body = text;
    let mut line_offset = 0;
    let mut declared_classes = None;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix(CLASSES_PREFIX) {
            let m: usize = rest.trim().parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad class count `{rest}`"),
            })?;
            declared_classes = Some(m);
            body = text.split_once('\n').map_or("", |(_, b)| b);
            line_offset = 1;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| Error::Parse {
            line: line_offset + 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Format {
                line: line_offset + 1,
                message: "missing header row".into(),
            })
        }
    };
    let header_line = line_offset + 1;
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 3 || fields[..3] != ["id", "given_label", "true_label"] {
        return Err(Error::Format {
            line: header_line,
            message: "header must start with id,given_label,true_label".into(),
        });
    }
    let dim = fields.len() - 3;
    for (j, f) in fields[3..].iter().enumerate() {
        if *f != format!("f{j}") {
            return Err(Error::Format {
                line: header_line,
                message: format!("feature column {j} is named `{f}`, expected `f{j}`"),
            });
        }
    }

    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    let mut max_label = 0usize;
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: line_offset + e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = line_offset + rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != dim + 3 {
            return Err(Error::Format {
                line,
                message: format!("expected {} fields, found {}", dim + 3, rec.len()),
            });
        }
        let parse_err = |what: &str, v: &str| Error::Parse {
            line,
            message: format!("bad {what} `{v}`"),
        };
        let id: u64 = rec[0].trim().parse().map_err(|_| parse_err("id", &rec[0]))?;
        if !ids.insert(id) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id {id}"),
            });
        }
        let given: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err("given_label", &rec[1]))?;
        let given_label = match given {
            -1 => None,
            g if g >= 0 => Some(g as usize),
            _ => return Err(parse_err("given_label", &rec[1])),
        };
        let true_label: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| parse_err("true_label", &rec[2]))?;
        let features = (3..rec.len())
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err("feature", &rec[j]))
            })
            .collect::<Result<Vec<f64>>>()?;
        max_label = max_label.max(true_label).max(given_label.unwrap_or(0));
        if let Some(m) = declared_classes {
            if true_label >= m || given_label.is_some_and(|g| g >= m) {
                return Err(Error::Parse {
                    line,
                    message: format!("label outside declared {m} classes"),
                });
            }
        }
        samples.push(Sample {
            id,
            features,
            given_label,
            true_label,
        });
    }
    let classes = declared_classes.unwrap_or(max_label + 1);
    Dataset::new(samples, classes, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let samples = vec![
            Sample {
                id: 3,
                features: vec![0.1, -2.5e-300, std::f64::consts::PI],
                given_label: Some(1),
                true_label: 1,
            },
            Sample {
                id: 7,
                features: vec![1.0 / 3.0, 0.0, -1e10],
                given_label: None,
                true_label: 0,
            },
            Sample {
                id: 9,
                features: vec![f64::MIN_POSITIVE, 5.0, 6.0],
                given_label: Some(2),
                true_label: 0,
            },
        ];
        Dataset::new(samples, 4, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = small();
        let back = parse_csv(&to_csv_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&small(), &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), small());
    }

    #[test]
    fn minus_one_is_unlabeled_and_classes_inferred() {
        let d = parse_csv("id,given_label,true_label,f0\n0,-1,2,0.5\n1,0,0,1.5\n").unwrap();
        assert_eq!(d.samples()[0].given_label, None);
        assert_eq!(d.classes(), 3);
        assert_eq!(d.dim(), 1);
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = "# classes=2\nid,given_label,true_label,f0,f1,f2\n0,1,1,1,2,3\n1,0,0,1,2\n";
        match parse_csv(text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_value_reports_its_line() {
        let text = "id,given_label,true_label,f0\n0,1,1,1.0\n1,x,0,2.0\n";
        match parse_csv(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(
            parse_csv("id,label,true_label,f0\n"),
            Err(Error::Format { line: 1, .. })
        ));
    }
}
