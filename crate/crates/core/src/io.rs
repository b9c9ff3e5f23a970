//! CSV interchange formats shared by the command-line stages.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use crate::annotation::{AnnotationMatrix, LabelVocabulary};
use crate::error::{Error, Result};

pub const MATRIX_HEADER: [&str; 4] = ["file_id", "label", "annotator_id", "value"];

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let found: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != expected {
        return Err(Error::Malformed {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn records<R: Read>(
    reader: &mut csv::Reader<R>,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    reader.records().map(move |row| {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(Error::Malformed {
                line,
                message: format!("expected {width} fields, found {}", row.len()),
            });
        }
        Ok((line, row))
    })
}

fn parse_binary(line: u64, field: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Malformed {
            line,
            message: format!("value must be 0 or 1, found `{other}`"),
        }),
    }
}

/// Reads the long-form `file_id,label,annotator_id,value` matrix.
///
/// Without a vocabulary, labels are indexed in order of first appearance.
/// Every file seen gets a full row per label; absent triples stay missing.
pub fn read_matrix_csv<R: Read>(source: R, vocab: Option<&LabelVocabulary>) -> Result<AnnotationMatrix> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &MATRIX_HEADER)?;
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    let mut label_order: Vec<String> = Vec::new();
    for row in records(&mut rdr, 4) {
        let (line, row) = row?;
        let (file_id, label, annotator) = (&row[0], &row[1], &row[2]);
        if file_id.is_empty() || label.is_empty() || annotator.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty field".into(),
            });
        }
        let value = parse_binary(line, &row[3])?;
        match vocab {
            Some(v) if !v.contains(label) => return Err(Error::UnknownLabel(label.to_string())),
            None if !label_order.iter().any(|l| l == label) => label_order.push(label.to_string()),
            _ => {}
        }
        if !seen.insert((file_id.to_string(), label.to_string(), annotator.to_string())) {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate cell ({file_id}, {label}, {annotator})"),
            });
        }
        cells.push((file_id.to_string(), label.to_string(), annotator.to_string(), value));
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => LabelVocabulary::new(label_order)?,
    };
    AnnotationMatrix::from_cells(vocab, cells)
}

/// Writes every stored cell, items in matrix order and annotators in column
/// order.
pub fn write_matrix_csv<W: Write>(out: W, matrix: &AnnotationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MATRIX_HEADER)?;
    for (i, r) in matrix.iter_cells() {
        let item = &matrix.items()[i];
        w.write_record([
            item.file_id.as_str(),
            item.label.as_str(),
            matrix.annotators()[r.annotator].as_str(),
            if r.value { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `annotator_id,theta`.
pub fn read_competence_csv<R: Read>(source: R) -> Result<HashMap<String, f64>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &["annotator_id", "theta"])?;
    let mut out = HashMap::new();
    for row in records(&mut rdr, 2) {
        let (line, row) = row?;
        let theta: f64 = row[1].parse().map_err(|_| Error::Malformed {
            line,
            message: format!("invalid competence `{}`", &row[1]),
        })?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Malformed {
                line,
                message: format!("competence {theta} outside [0, 1]"),
            });
        }
        if out.insert(row[0].to_string(), theta).is_some() {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate annotator `{}`", &row[0]),
            });
        }
    }
    Ok(out)
}

/// Reads `file_id,label,value` planted truth.
pub fn read_truth_csv<R: Read>(source: R) -> Result<HashMap<(String, String), bool>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &["file_id", "label", "value"])?;
    let mut out = HashMap::new();
    for row in records(&mut rdr, 3) {
        let (line, row) = row?;
        let value = parse_binary(line, &row[2])?;
        if out.insert((row[0].to_string(), row[1].to_string()), value).is_some() {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate truth for ({}, {})", &row[0], &row[1]),
            });
        }
    }
    Ok(out)
}
