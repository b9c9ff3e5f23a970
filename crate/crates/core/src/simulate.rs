//! Forward simulation of the MACE generative story.
//!
//! Truth is drawn per `(file, label)` item from the label's prevalence. Each
//! annotator is assigned a uniform random subset of files; for every assigned
//! item it spams with probability `1 - θ_j` (drawing from `ξ_j`) and otherwise
//! copies the truth.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationMatrix, ItemId, LabelVocabulary, Response};
use crate::error::{Error, Result};

/// Label set of the urban acoustic scenes annotation campaign.
pub const SCENE_LABELS: [&str; 10] = [
    "birds_singing",
    "dog_barking",
    "adults_talking",
    "children_voices",
    "traffic_noise",
    "music",
    "footsteps",
    "siren",
    "announcement_speech",
    "announcement_jingle",
];

fn uniform_spam() -> [f64; 2] {
    [0.5, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    /// Probability of copying the truth, `θ_j`.
    pub competence: f64,
    /// Label distribution when spamming, `ξ_j = [P(0), P(1)]`.
    #[serde(default = "uniform_spam")]
    pub spam_dist: [f64; 2],
}

impl AnnotatorProfile {
    pub fn new(id: impl Into<String>, competence: f64) -> Self {
        Self {
            id: id.into(),
            competence,
            spam_dist: uniform_spam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub num_files: usize,
    pub vocab: LabelVocabulary,
    pub files_per_annotator: usize,
    pub annotators: Vec<AnnotatorProfile>,
    /// Probability a file truly carries each label; unlisted labels use 0.5.
    #[serde(default)]
    pub truth_prevalence: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl CampaignSpec {
    pub fn num_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn prevalence(&self, label: &str) -> f64 {
        self.truth_prevalence.get(label).copied().unwrap_or(0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_files == 0 {
            return Err(Error::InvalidConfig("num_files must be positive".into()));
        }
        if self.vocab.is_empty() {
            return Err(Error::InvalidConfig("vocabulary is empty".into()));
        }
        if self.annotators.is_empty() {
            return Err(Error::InvalidConfig("no annotators".into()));
        }
        if self.files_per_annotator == 0 {
            return Err(Error::InvalidConfig("files_per_annotator must be positive".into()));
        }
        if self.files_per_annotator > self.num_files {
            return Err(Error::InfeasibleAssignment {
                files_per_annotator: self.files_per_annotator,
                num_files: self.num_files,
            });
        }
        let mut ids = HashSet::new();
        for a in &self.annotators {
            if !ids.insert(a.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate annotator `{}`", a.id)));
            }
            if !(0.0..=1.0).contains(&a.competence) {
                return Err(Error::InvalidConfig(format!(
                    "competence of `{}` outside [0, 1]",
                    a.id
                )));
            }
            let [p0, p1] = a.spam_dist;
            if p0 < 0.0 || p1 < 0.0 || (p0 + p1 - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "spam distribution of `{}` is not normalized",
                    a.id
                )));
            }
        }
        for (label, &p) in &self.truth_prevalence {
            self.vocab.require(label)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "prevalence of `{label}` outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Zero-padded so lexicographic order equals numeric order.
    pub fn file_id(&self, index: usize) -> String {
        let width = (self.num_files.saturating_sub(1)).to_string().len().max(4);
        format!("file{index:0width$}")
    }
}

/// Generated annotations together with the latent states that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCampaign {
    pub matrix: AnnotationMatrix,
    /// Planted truth per matrix item.
    pub truth: Vec<bool>,
    /// Realized spam indicator per stored cell, aligned with matrix rows.
    pub spam_events: Vec<Vec<bool>>,
}

impl SyntheticCampaign {
    /// Writes `file_id,label,value`.
    pub fn write_truth_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["file_id", "label", "value"])?;
        for (item, &t) in self.matrix.items().iter().zip(&self.truth) {
            w.write_record([item.file_id.as_str(), item.label.as_str(), if t { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Realized spam fraction per annotator column.
    pub fn spam_rates(&self) -> Vec<(usize, f64)> {
        let m = self.matrix.num_annotators();
        let mut spam = vec![0usize; m];
        let mut total = vec![0usize; m];
        for (i, events) in self.spam_events.iter().enumerate() {
            for (r, &s) in self.matrix.row(i).iter().zip(events) {
                total[r.annotator] += 1;
                spam[r.annotator] += s as usize;
            }
        }
        total
            .into_iter()
            .zip(spam)
            .map(|(t, s)| (t, if t == 0 { 0.0 } else { s as f64 / t as f64 }))
            .collect()
    }
}

/// Draws a campaign from `spec`. Fully determined by `spec.seed`.
pub fn generate_campaign(spec: &CampaignSpec) -> Result<SyntheticCampaign> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.vocab.len();
    let num_items = spec.num_files * width;

    let prevalence: Vec<f64> = spec.vocab.iter().map(|l| spec.prevalence(l)).collect();
    let truth: Vec<bool> = (0..num_items)
        .map(|i| rng.gen::<f64>() < prevalence[i % width])
        .collect();

    let mut rows: Vec<Vec<Response>> = vec![Vec::new(); num_items];
    let mut spam_events: Vec<Vec<bool>> = vec![Vec::new(); num_items];
    for (j, profile) in spec.annotators.iter().enumerate() {
        let mut files = sample(&mut rng, spec.num_files, spec.files_per_annotator).into_vec();
        files.sort_unstable();
        for f in files {
            for l in 0..width {
                let i = f * width + l;
                let spam = rng.gen::<f64>() < 1.0 - profile.competence;
                let value = if spam {
                    rng.gen::<f64>() < profile.spam_dist[1]
                } else {
                    truth[i]
                };
                rows[i].push(Response { annotator: j, value });
                spam_events[i].push(spam);
            }
        }
    }

    let items: Vec<ItemId> = (0..spec.num_files)
        .flat_map(|f| spec.vocab.iter().map(move |l| ItemId::new(spec.file_id(f), l)))
        .collect();
    let annotators = spec.annotators.iter().map(|a| a.id.clone()).collect();
    let matrix = AnnotationMatrix::from_rows(spec.vocab.clone(), items, annotators, rows)?;
    Ok(SyntheticCampaign {
        matrix,
        truth,
        spam_events,
    })
}

/// Parameters of a pure random-annotator population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpammerPreset {
    pub num_annotators: usize,
    pub files_per_annotator: usize,
    pub num_files: usize,
    pub vocab: LabelVocabulary,
    pub seed: u64,
}

impl Default for SpammerPreset {
    fn default() -> Self {
        Self {
            num_annotators: 150,
            files_per_annotator: 130,
            num_files: 3930,
            vocab: LabelVocabulary::new(SCENE_LABELS).expect("static labels are valid"),
            seed: 0,
        }
    }
}

impl SpammerPreset {
    pub fn spec(&self) -> CampaignSpec {
        CampaignSpec {
            num_files: self.num_files,
            vocab: self.vocab.clone(),
            files_per_annotator: self.files_per_annotator,
            annotators: (0..self.num_annotators)
                .map(|j| AnnotatorProfile::new(format!("spammer{j:03}"), 0.0))
                .collect(),
            truth_prevalence: BTreeMap::new(),
            seed: self.seed,
        }
    }
}

/// Annotators that never look at the truth and answer each label with a fair
/// coin.
pub fn generate_spammers(preset: &SpammerPreset) -> Result<SyntheticCampaign> {
    generate_campaign(&preset.spec())
}
