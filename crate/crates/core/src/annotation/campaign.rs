use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use crate::annotation::LabelVocabulary;
use crate::error::{Error, Result};

pub const CAMPAIGN_HEADER: [&str; 3] = ["file_id", "annotator_id", "labels"];

/// One annotator's answer for one file: the set of labels they selected.
///
/// Selected labels are explicit positives; every other vocabulary label is an
/// implicit negative for this file and annotator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CampaignRecord {
    pub file_id: String,
    pub annotator_id: String,
    pub selected: BTreeSet<String>,
}

/// Parses the `file_id,annotator_id,labels` campaign CSV.
///
/// The labels field is a `;`-separated list of vocabulary names and may be
/// empty. Errors carry the 1-based line number of the offending row.
pub fn parse_campaign<R: Read>(source: R, vocab: &LabelVocabulary) -> Result<Vec<CampaignRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let header = reader.headers()?.clone();
    let header_fields: Vec<&str> = header.iter().map(str::trim).collect();
    if header_fields != CAMPAIGN_HEADER {
        return Err(Error::Malformed {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                CAMPAIGN_HEADER.join(","),
                header_fields.join(",")
            ),
        });
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(Error::Malformed {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let file_id = row[0].trim();
        let annotator_id = row[1].trim();
        if file_id.is_empty() || annotator_id.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty file_id or annotator_id".to_string(),
            });
        }

        let mut selected = BTreeSet::new();
        for label in row[2].split(';').map(str::trim).filter(|l| !l.is_empty()) {
            if !vocab.contains(label) {
                return Err(Error::UnknownLabel(label.to_string()));
            }
            selected.insert(label.to_string());
        }

        if !seen.insert((file_id.to_string(), annotator_id.to_string())) {
            return Err(Error::DuplicateRecord {
                line,
                file_id: file_id.to_string(),
                annotator_id: annotator_id.to_string(),
            });
        }
        records.push(CampaignRecord {
            file_id: file_id.to_string(),
            annotator_id: annotator_id.to_string(),
            selected,
        });
    }
    Ok(records)
}

/// Writes records as campaign CSV, labels in vocabulary order.
pub fn write_campaign<W: Write>(out: W, records: &[CampaignRecord], vocab: &LabelVocabulary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAMPAIGN_HEADER)?;
    for r in records {
        let labels: Vec<&str> = vocab.iter().filter(|l| r.selected.contains(*l)).collect();
        w.write_record([r.file_id.as_str(), r.annotator_id.as_str(), &labels.join(";")])?;
    }
    w.flush()?;
    Ok(())
}
