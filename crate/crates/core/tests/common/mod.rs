#![allow(dead_code)]

use annoreli::annotation::{AnnotationMatrix, ItemId, LabelVocabulary, Response};
use annoreli::simulate::{AnnotatorProfile, CampaignSpec};
use rand::Rng;
use std::collections::BTreeMap;

/// Random single-label matrix with sparse, uneven coverage.
pub fn random_matrix<R: Rng>(rng: &mut R, items: usize, annotators: usize, density: f64) -> AnnotationMatrix {
    let p1: f64 = rng.gen_range(0.1..0.9);
    let rows = (0..items)
        .map(|_| {
            let mut row = Vec::new();
            for annotator in 0..annotators {
                if rng.gen_bool(density) {
                    row.push(Response {
                        annotator,
                        value: rng.gen_bool(p1),
                    });
                }
            }
            row
        })
        .collect();
    AnnotationMatrix::from_rows(
        LabelVocabulary::new(["x"]).unwrap(),
        (0..items).map(|i| ItemId::new(format!("f{i:03}"), "x")).collect(),
        (0..annotators).map(|j| format!("a{j:02}")).collect(),
        rows,
    )
    .unwrap()
}

/// Alpha by enumerating every ordered pair of responses within each unit.
pub fn pairwise_alpha(matrix: &AnnotationMatrix) -> Option<f64> {
    let mut o = [[0.0f64; 2]; 2];
    for row in matrix.rows() {
        let m = row.len();
        if m < 2 {
            continue;
        }
        for (p, a) in row.iter().enumerate() {
            for (q, b) in row.iter().enumerate() {
                if p != q {
                    o[a.value as usize][b.value as usize] += 1.0 / (m as f64 - 1.0);
                }
            }
        }
    }
    let n0 = o[0][0] + o[0][1];
    let n1 = o[1][0] + o[1][1];
    let n = n0 + n1;
    if n <= 1.0 || n0 == 0.0 || n1 == 0.0 {
        return None;
    }
    let d_o = (o[0][1] + o[1][0]) / n;
    let d_e = 2.0 * n0 * n1 / (n * (n - 1.0));
    Some(1.0 - d_o / d_e)
}

/// 15 annotators at 0.9 competence and 5 at 0.1 over 500 single-label files,
/// 125 files each, so items average 5 responses.
pub fn planted_spec(seed: u64) -> CampaignSpec {
    let mut annotators: Vec<AnnotatorProfile> = (0..15)
        .map(|j| AnnotatorProfile::new(format!("good{j:02}"), 0.9))
        .collect();
    annotators.extend((0..5).map(|j| AnnotatorProfile::new(format!("spam{j:02}"), 0.1)));
    CampaignSpec {
        num_files: 500,
        vocab: LabelVocabulary::new(["x"]).unwrap(),
        files_per_annotator: 125,
        annotators,
        truth_prevalence: BTreeMap::new(),
        seed,
    }
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
