//! Union and majority-vote baselines and the label statistics used to compare
//! aggregation methods.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::annotation::{AnnotationMatrix, LabelVocabulary};
use crate::error::{Error, Result};
pub use crate::mace::GroundTruthEstimate;

fn vote<F>(matrix: &AnnotationMatrix, method: &str, rule: F) -> GroundTruthEstimate
where
    F: Fn(usize, usize) -> (bool, f64),
{
    let (decisions, confidence) = matrix
        .rows()
        .map(|row| {
            let positives = row.iter().filter(|r| r.value).count();
            rule(positives, row.len())
        })
        .unzip();
    GroundTruthEstimate {
        method: method.to_string(),
        items: matrix.items().to_vec(),
        decisions,
        confidence,
        kept: vec![true; matrix.num_items()],
    }
}

/// Positive if any annotator answered 1. Confidence is the positive fraction
/// of the responses (0 for rows without responses).
pub fn union_vote(matrix: &AnnotationMatrix) -> GroundTruthEstimate {
    vote(matrix, "union", |positives, responses| {
        if responses == 0 {
            (false, 0.0)
        } else {
            (positives > 0, positives as f64 / responses as f64)
        }
    })
}

/// Positive on a strict majority of the responses; ties and empty rows are 0.
/// Confidence is `max(p, 1 - p)` for positive fraction `p`.
pub fn majority_vote(matrix: &AnnotationMatrix) -> GroundTruthEstimate {
    vote(matrix, "majority", |positives, responses| {
        if responses == 0 {
            return (false, 0.5);
        }
        let p = positives as f64 / responses as f64;
        (2 * positives > responses, p.max(1.0 - p))
    })
}

/// Positive label counts of one aggregation method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStatistics {
    pub method: String,
    /// Files assigned each label, in vocabulary order.
    pub per_label_counts: Vec<(String, usize)>,
    /// Labels assigned to each file, in file order.
    pub labels_per_file: Vec<(String, usize)>,
    pub mean_labels_per_file: f64,
}

impl LabelStatistics {
    pub fn count_for(&self, label: &str) -> Option<usize> {
        self.per_label_counts
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, c)| c)
    }

    /// Number of files carrying exactly `k` labels, for `k = 0..=max_labels`.
    pub fn histogram(&self, max_labels: usize) -> Vec<usize> {
        let mut bins = vec![0; max_labels + 1];
        for &(_, k) in &self.labels_per_file {
            bins[k.min(max_labels)] += 1;
        }
        bins
    }
}

/// Counts kept positive decisions per label and per file.
///
/// The estimate must cover the complete `file × vocabulary` grid.
pub fn label_statistics(estimate: &GroundTruthEstimate, vocab: &LabelVocabulary) -> Result<LabelStatistics> {
    let mut files: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut per_file: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_label = vec![0usize; vocab.len()];

    for (i, item) in estimate.items.iter().enumerate() {
        let l = vocab.require(&item.label)?;
        let seen = files
            .entry(item.file_id.as_str())
            .or_insert_with(|| vec![false; vocab.len()]);
        if seen[l] {
            return Err(Error::InvalidMatrix(format!(
                "item ({}, {}) appears twice",
                item.file_id, item.label
            )));
        }
        seen[l] = true;
        let positive = estimate.decisions[i] && estimate.kept[i];
        *per_file.entry(item.file_id.as_str()).or_default() += positive as usize;
        per_label[l] += positive as usize;
    }
    for (file_id, seen) in &files {
        if let Some(l) = seen.iter().position(|&s| !s) {
            return Err(Error::IncompleteGrid {
                file_id: file_id.to_string(),
                label: vocab.labels()[l].clone(),
            });
        }
    }

    let total: usize = per_label.iter().sum();
    let mean = if files.is_empty() {
        0.0
    } else {
        total as f64 / files.len() as f64
    };
    Ok(LabelStatistics {
        method: estimate.method.clone(),
        per_label_counts: vocab.labels().iter().cloned().zip(per_label).collect(),
        labels_per_file: per_file.into_iter().map(|(f, c)| (f.to_string(), c)).collect(),
        mean_labels_per_file: mean,
    })
}

/// Writes a `label,<method>...` table with rows sorted by the union count
/// (or the first method when union is absent), descending, ties in
/// vocabulary order.
pub fn write_statistics_csv<W: Write>(out: W, stats: &[LabelStatistics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string()];
    header.extend(stats.iter().map(|s| s.method.clone()));
    w.write_record(&header)?;

    if let Some(reference) = stats.iter().find(|s| s.method == "union").or(stats.first()) {
        let mut order: Vec<usize> = (0..reference.per_label_counts.len()).collect();
        order.sort_by(|&a, &b| reference.per_label_counts[b].1.cmp(&reference.per_label_counts[a].1));
        for l in order {
            let label = &reference.per_label_counts[l].0;
            let mut record = vec![label.clone()];
            record.extend(stats.iter().map(|s| s.count_for(label).unwrap_or(0).to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct HistogramSeries {
    mean_labels_per_file: f64,
    /// `counts[k]` files carry exactly `k` labels.
    counts: Vec<usize>,
}

/// Labels-per-file histograms keyed by method, as pretty JSON.
pub fn write_histogram_json<W: Write>(out: W, stats: &[LabelStatistics], vocab_size: usize) -> Result<()> {
    let series: BTreeMap<&str, HistogramSeries> = stats
        .iter()
        .map(|s| {
            (
                s.method.as_str(),
                HistogramSeries {
                    mean_labels_per_file: s.mean_labels_per_file,
                    counts: s.histogram(vocab_size),
                },
            )
        })
        .collect();
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &series)?;
    writeln!(out)?;
    Ok(())
}

/// Fraction of kept items whose decision matches the reference truth, over
/// items present in `truth`.
pub fn accuracy(estimate: &GroundTruthEstimate, truth: &HashMap<(String, String), bool>) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, item) in estimate.items.iter().enumerate() {
        if !estimate.kept[i] {
            continue;
        }
        if let Some(&t) = truth.get(&(item.file_id.clone(), item.label.clone())) {
            total += 1;
            hits += (estimate.decisions[i] == t) as usize;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
