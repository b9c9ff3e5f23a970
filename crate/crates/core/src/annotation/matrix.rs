use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{CampaignRecord, LabelVocabulary};
use crate::error::{Error, Result};

/// A `(file, label)` pair: the unit every annotator answers yes or no for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId {
    pub file_id: String,
    pub label: String,
}

impl ItemId {
    pub fn new(file_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            file_id: file_id.into(),
            label: label.into(),
        }
    }
}

/// A stored cell: annotator column index and the binary answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub annotator: usize,
    pub value: bool,
}

/// Sparse items × annotators table of binary answers.
///
/// Rows are `(file, label)` items ordered by file id then label index; columns
/// are annotators. A cell absent from a row is missing (the annotator was not
/// assigned that file). Each row keeps its responses sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    vocab: LabelVocabulary,
    items: Vec<ItemId>,
    annotators: Vec<String>,
    rows: Vec<Vec<Response>>,
}

impl AnnotationMatrix {
    /// Builds a matrix from explicit rows. Items are reordered to the canonical
    /// `(file_id, label index)` order together with their rows.
    pub fn from_rows(
        vocab: LabelVocabulary,
        items: Vec<ItemId>,
        annotators: Vec<String>,
        rows: Vec<Vec<Response>>,
    ) -> Result<Self> {
        if items.len() != rows.len() {
            return Err(Error::InvalidMatrix(format!(
                "{} items but {} rows",
                items.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::with_capacity(annotators.len());
        for id in &annotators {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidMatrix(format!("duplicate annotator `{id}`")));
            }
        }

        let mut keyed = Vec::with_capacity(items.len());
        for (item, mut row) in items.into_iter().zip(rows) {
            let label_idx = vocab.require(&item.label)?;
            row.sort_by_key(|r| r.annotator);
            for pair in row.windows(2) {
                if pair[0].annotator == pair[1].annotator {
                    return Err(Error::InvalidMatrix(format!(
                        "item ({}, {}) has two cells for annotator `{}`",
                        item.file_id, item.label, annotators[pair[0].annotator]
                    )));
                }
            }
            if let Some(last) = row.last() {
                if last.annotator >= annotators.len() {
                    return Err(Error::InvalidMatrix(format!(
                        "annotator column {} out of range",
                        last.annotator
                    )));
                }
            }
            keyed.push(((item.file_id.clone(), label_idx), item, row));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in keyed.windows(2) {
            if pair[0].0 == pair[1].0 {
                let item = &pair[0].1;
                return Err(Error::InvalidMatrix(format!(
                    "duplicate item ({}, {})",
                    item.file_id, item.label
                )));
            }
        }

        let (items, rows) = keyed.into_iter().map(|(_, item, row)| (item, row)).unzip();
        Ok(Self {
            vocab,
            items,
            annotators,
            rows,
        })
    }

    /// Builds a full `files × vocab` grid from `(file, label, annotator, value)`
    /// cells. Annotator columns are sorted by id.
    pub fn from_cells<I>(vocab: LabelVocabulary, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, String, bool)>,
    {
        let mut files = BTreeSet::new();
        let mut annotators = BTreeSet::new();
        let mut stored = Vec::new();
        for (file_id, label, annotator, value) in cells {
            let label_idx = vocab.require(&label)?;
            files.insert(file_id.clone());
            annotators.insert(annotator.clone());
            stored.push((file_id, label_idx, annotator, value));
        }
        let annotators: Vec<String> = annotators.into_iter().collect();
        let column: HashMap<&str, usize> = annotators
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect();
        let file_pos: HashMap<&str, usize> = files
            .iter()
            .enumerate()
            .map(|(f, id)| (id.as_str(), f))
            .collect();

        let width = vocab.len();
        let mut rows = vec![Vec::new(); files.len() * width];
        for (file_id, label_idx, annotator, value) in &stored {
            let row = file_pos[file_id.as_str()] * width + label_idx;
            rows[row].push(Response {
                annotator: column[annotator.as_str()],
                value: *value,
            });
        }
        let items = grid_items(files.iter(), &vocab);
        Self::from_rows(vocab, items, annotators, rows)
    }

    pub fn vocab(&self) -> &LabelVocabulary {
        &self.vocab
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn row(&self, item: usize) -> &[Response] {
        &self.rows[item]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Response]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Number of responses `m_u` stored for an item.
    pub fn responses(&self, item: usize) -> usize {
        self.rows[item].len()
    }

    pub fn cell(&self, item: usize, annotator: usize) -> Option<bool> {
        let row = &self.rows[item];
        row.binary_search_by_key(&annotator, |r| r.annotator)
            .ok()
            .map(|k| row[k].value)
    }

    pub fn num_cells(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn annotator_index(&self, id: &str) -> Option<usize> {
        self.annotators.iter().position(|a| a == id)
    }

    /// Number of stored cells in each annotator column.
    pub fn responses_per_annotator(&self) -> Vec<usize> {
        let mut counts = vec![0; self.annotators.len()];
        for row in &self.rows {
            for r in row {
                counts[r.annotator] += 1;
            }
        }
        counts
    }

    /// Distinct file ids in item order.
    pub fn files(&self) -> Vec<&str> {
        let mut files: Vec<&str> = Vec::new();
        for item in &self.items {
            if files.last() != Some(&item.file_id.as_str()) {
                files.push(&item.file_id);
            }
        }
        files
    }

    /// Iterates stored cells as `(item index, response)`.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, Response)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |r| (i, *r)))
    }

    /// Keeps only the annotator columns named in `keep`; rows are retained even
    /// if they lose all their responses.
    pub fn filter_annotators<I, S>(&self, keep: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let index: HashMap<&str, usize> = self
            .annotators
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect();
        let mut retained = vec![false; self.annotators.len()];
        for id in keep {
            let id = id.as_ref();
            let j = *index
                .get(id)
                .ok_or_else(|| Error::UnknownAnnotator(id.to_string()))?;
            retained[j] = true;
        }
        Ok(self.retain_columns(&retained))
    }

    pub(crate) fn retain_columns(&self, retained: &[bool]) -> Self {
        let mut remap = vec![usize::MAX; self.annotators.len()];
        let mut annotators = Vec::new();
        for (j, id) in self.annotators.iter().enumerate() {
            if retained[j] {
                remap[j] = annotators.len();
                annotators.push(id.clone());
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .filter(|r| retained[r.annotator])
                    .map(|r| Response {
                        annotator: remap[r.annotator],
                        value: r.value,
                    })
                    .collect()
            })
            .collect();
        Self {
            vocab: self.vocab.clone(),
            items: self.items.clone(),
            annotators,
            rows,
        }
    }

    /// Keeps only the items of one class.
    pub fn subset_by_label(&self, label: &str) -> Result<Self> {
        self.vocab.require(label)?;
        let (items, rows) = self
            .items
            .iter()
            .zip(&self.rows)
            .filter(|(item, _)| item.label == label)
            .map(|(item, row)| (item.clone(), row.clone()))
            .unzip();
        Ok(Self {
            vocab: self.vocab.clone(),
            items,
            annotators: self.annotators.clone(),
            rows,
        })
    }

    /// Reassembles one record per `(file, annotator)` pair that has any stored
    /// cell, with the positively answered labels as the selection.
    pub fn collapse_to_records(&self) -> Vec<CampaignRecord> {
        let mut grouped: BTreeMap<(&str, &str), BTreeSet<String>> = BTreeMap::new();
        for (i, r) in self.iter_cells() {
            let item = &self.items[i];
            let selected = grouped
                .entry((item.file_id.as_str(), self.annotators[r.annotator].as_str()))
                .or_default();
            if r.value {
                selected.insert(item.label.clone());
            }
        }
        grouped
            .into_iter()
            .map(|((file_id, annotator_id), selected)| CampaignRecord {
                file_id: file_id.to_string(),
                annotator_id: annotator_id.to_string(),
                selected,
            })
            .collect()
    }
}

fn grid_items<'a>(files: impl Iterator<Item = &'a String>, vocab: &LabelVocabulary) -> Vec<ItemId> {
    files
        .flat_map(|f| vocab.iter().map(move |l| ItemId::new(f.clone(), l)))
        .collect()
}

/// Expands single-pass multi-label records into the binary item matrix.
///
/// Every file appearing in `records` yields one item per vocabulary label. A
/// selected label is a 1 for that annotator, an unselected one a 0, and a file
/// the annotator has no record for leaves all its cells missing.
pub fn expand_to_items(records: &[CampaignRecord], vocab: &LabelVocabulary) -> Result<AnnotationMatrix> {
    let mut seen = HashSet::with_capacity(records.len());
    let mut cells = Vec::with_capacity(records.len() * vocab.len());
    for record in records {
        if !seen.insert((record.file_id.as_str(), record.annotator_id.as_str())) {
            return Err(Error::InvalidMatrix(format!(
                "duplicate record for file `{}` and annotator `{}`",
                record.file_id, record.annotator_id
            )));
        }
        for label in &record.selected {
            vocab.require(label)?;
        }
        for label in vocab.iter() {
            cells.push((
                record.file_id.clone(),
                label.to_string(),
                record.annotator_id.clone(),
                record.selected.contains(label),
            ));
        }
    }
    AnnotationMatrix::from_cells(vocab.clone(), cells)
}
