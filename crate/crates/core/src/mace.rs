//! MACE: multi-annotator competence estimation.
//!
//! Each annotator `j` either copies the true label of item `i` or, with
//! probability `1 - θ_j`, "spams" by drawing a label from a personal
//! distribution `ξ_j`. Marginalizing the spam indicator gives
//!
//! ```text
//! P(A_ij = a | T_i = t) = θ_j [a = t] + (1 - θ_j) ξ_j(a)
//! ```
//!
//! and the parameters are fitted by EM with the truth `T_i` and spam
//! indicators `S_ij` as latent variables. The truth prior is uniform.
//! Fractional counts are smoothed by `δ` in the M-step, which makes each
//! iteration a MAP step under symmetric Beta/Dirichlet priors; the traced
//! objective includes that log-prior so it is monotone.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationMatrix, ItemId};
use crate::error::{Error, Result};

const LN_HALF: f64 = -std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaceConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Relative objective improvement below which a run stops.
    pub tolerance: f64,
    /// Pseudo-count added to every fractional count in the M-step.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for MaceConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 50,
            tolerance: 1e-6,
            smoothing: 0.1,
            seed: 0,
        }
    }
}

impl MaceConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !self.smoothing.is_finite() || self.smoothing < 0.0 {
            return Err(Error::InvalidConfig("smoothing must be non-negative".into()));
        }
        Ok(())
    }
}

/// `P(A = a | T = t)` for one annotator with the spam indicator marginalized.
pub fn observation_likelihood(theta: f64, xi: [f64; 2], a: bool, t: bool) -> f64 {
    let copy = if a == t { theta } else { 0.0 };
    copy + (1.0 - theta) * xi[a as usize]
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Per-annotator `ln P(A = a | T = t)`, indexed `[a][t]`.
fn log_tables(theta: &[f64], xi: &[[f64; 2]]) -> Vec<[[f64; 2]; 2]> {
    theta
        .iter()
        .zip(xi)
        .map(|(&th, &x)| {
            let mut table = [[0.0; 2]; 2];
            for (a, row) in table.iter_mut().enumerate() {
                for (t, v) in row.iter_mut().enumerate() {
                    *v = observation_likelihood(th, x, a == 1, t == 1).ln();
                }
            }
            table
        })
        .collect()
}

/// Unnormalized log posterior `ln P(T_i = t) + Σ_j ln P(A_ij | t)`.
fn item_log_weights(matrix: &AnnotationMatrix, item: usize, tables: &[[[f64; 2]; 2]]) -> [f64; 2] {
    let mut lw = [LN_HALF; 2];
    for r in matrix.row(item) {
        let table = &tables[r.annotator][r.value as usize];
        lw[0] += table[0];
        lw[1] += table[1];
    }
    lw
}

/// Marginal log-likelihood `Σ_i ln Σ_t P(t) Π_j P(A_ij | t)` under a uniform
/// truth prior. Items without responses contribute nothing.
pub fn log_likelihood(matrix: &AnnotationMatrix, theta: &[f64], xi: &[[f64; 2]]) -> f64 {
    let tables = log_tables(theta, xi);
    (0..matrix.num_items())
        .filter(|&i| matrix.responses(i) > 0)
        .map(|i| {
            let lw = item_log_weights(matrix, i, &tables);
            log_sum_exp2(lw[0], lw[1])
        })
        .sum()
}

struct Expectations {
    log_likelihood: f64,
    posteriors: Vec<[f64; 2]>,
    /// Σ_i r_ij per annotator.
    spam_total: Vec<f64>,
    /// Σ_i r_ij [A_ij = a] per annotator.
    spam_by_value: Vec<[f64; 2]>,
    /// r_ij aligned with each matrix row, only filled on request.
    per_cell: Option<Vec<Vec<f64>>>,
}

fn e_step(matrix: &AnnotationMatrix, theta: &[f64], xi: &[[f64; 2]], keep_cells: bool) -> Expectations {
    let tables = log_tables(theta, xi);
    let m = theta.len();
    let mut ex = Expectations {
        log_likelihood: 0.0,
        posteriors: Vec::with_capacity(matrix.num_items()),
        spam_total: vec![0.0; m],
        spam_by_value: vec![[0.0; 2]; m],
        per_cell: keep_cells.then(|| Vec::with_capacity(matrix.num_items())),
    };

    for i in 0..matrix.num_items() {
        let row = matrix.row(i);
        if row.is_empty() {
            ex.posteriors.push([0.5, 0.5]);
            if let Some(cells) = ex.per_cell.as_mut() {
                cells.push(Vec::new());
            }
            continue;
        }
        let lw = item_log_weights(matrix, i, &tables);
        let norm = log_sum_exp2(lw[0], lw[1]);
        ex.log_likelihood += norm;
        let post = [(lw[0] - norm).exp(), (lw[1] - norm).exp()];
        ex.posteriors.push(post);

        let mut cell_spam = keep_cells.then(|| Vec::with_capacity(row.len()));
        for r in row {
            let j = r.annotator;
            let a = r.value as usize;
            let spam_mass = (1.0 - theta[j]) * xi[j][a];
            let mut spam = 0.0;
            for (t, &w) in post.iter().enumerate() {
                let total = observation_likelihood(theta[j], xi[j], r.value, t == 1);
                if total > 0.0 && w > 0.0 {
                    spam += w * spam_mass / total;
                }
            }
            ex.spam_total[j] += spam;
            ex.spam_by_value[j][a] += spam;
            if let Some(cells) = cell_spam.as_mut() {
                cells.push(spam);
            }
        }
        if let (Some(cells), Some(row_spam)) = (ex.per_cell.as_mut(), cell_spam) {
            cells.push(row_spam);
        }
    }
    ex
}

fn m_step(
    ex: &Expectations,
    responses: &[usize],
    smoothing: f64,
    theta: &mut [f64],
    xi: &mut [[f64; 2]],
) {
    for j in 0..theta.len() {
        let denominator = responses[j] as f64 + 2.0 * smoothing;
        if denominator > 0.0 {
            theta[j] = 1.0 - (ex.spam_total[j] + smoothing) / denominator;
        }
        let counts = [
            ex.spam_by_value[j][0] + smoothing,
            ex.spam_by_value[j][1] + smoothing,
        ];
        let total = counts[0] + counts[1];
        if total > 0.0 {
            xi[j] = [counts[0] / total, counts[1] / total];
        }
    }
}

/// Log-density of the symmetric smoothing prior, up to a constant.
fn log_prior(theta: &[f64], xi: &[[f64; 2]], smoothing: f64) -> f64 {
    if smoothing == 0.0 {
        return 0.0;
    }
    theta
        .iter()
        .zip(xi)
        .map(|(&t, x)| smoothing * (t.ln() + (1.0 - t).ln() + x[0].ln() + x[1].ln()))
        .sum()
}

fn initial_parameters(num_annotators: usize, seed: u64, restart: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut theta = Vec::with_capacity(num_annotators);
    let mut xi = Vec::with_capacity(num_annotators);
    for _ in 0..num_annotators {
        theta.push(rng.gen_range(0.4..0.9));
        let raw: [f64; 2] = [rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)];
        let sum = raw[0] + raw[1];
        xi.push([raw[0] / sum, raw[1] / sum]);
    }
    (theta, xi)
}

/// Trace of one EM run from one random initialization.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub restart: usize,
    pub theta: Vec<f64>,
    pub xi: Vec<[f64; 2]>,
    /// Marginal log-likelihood at the initial parameters and after each
    /// M-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Log-likelihood plus smoothing log-prior, the quantity EM ascends.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    posteriors: Vec<[f64; 2]>,
    expected_spam: Vec<Vec<f64>>,
}

impl EmRun {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}

fn check_fit_input(matrix: &AnnotationMatrix) -> Result<()> {
    if matrix.num_cells() == 0 {
        return Err(Error::Numerical("cannot fit MACE on a matrix with no cells".into()));
    }
    Ok(())
}

/// Runs EM from the initialization of restart `restart`.
pub fn em_run(matrix: &AnnotationMatrix, config: &MaceConfig, restart: usize) -> Result<EmRun> {
    config.validate()?;
    check_fit_input(matrix)?;
    let responses = matrix.responses_per_annotator();
    let (mut theta, mut xi) = initial_parameters(matrix.num_annotators(), config.seed, restart);

    let mut ex = e_step(matrix, &theta, &xi, false);
    let mut ll_trace = vec![ex.log_likelihood];
    let mut objective_trace = vec![ex.log_likelihood + log_prior(&theta, &xi, config.smoothing)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        m_step(&ex, &responses, config.smoothing, &mut theta, &mut xi);
        iterations += 1;
        ex = e_step(matrix, &theta, &xi, false);
        let objective = ex.log_likelihood + log_prior(&theta, &xi, config.smoothing);
        let previous = *objective_trace.last().unwrap();
        ll_trace.push(ex.log_likelihood);
        objective_trace.push(objective);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "EM objective became {objective} at iteration {iterations} of restart {restart}"
            )));
        }
        if objective - previous < config.tolerance * previous.abs() {
            converged = true;
            break;
        }
    }

    let final_ex = e_step(matrix, &theta, &xi, true);
    Ok(EmRun {
        restart,
        theta,
        xi,
        log_likelihood_trace: ll_trace,
        objective_trace,
        iterations,
        converged,
        posteriors: final_ex.posteriors,
        expected_spam: final_ex.per_cell.expect("requested per-cell responsibilities"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Fitted MACE parameters and truth posteriors, indexed like the matrix they
/// were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct MaceModel {
    pub annotators: Vec<String>,
    pub items: Vec<ItemId>,
    pub theta: Vec<f64>,
    pub xi: Vec<[f64; 2]>,
    pub posteriors: Vec<[f64; 2]>,
    /// Posterior expectation of the spam indicator per stored cell, as
    /// `(annotator column, E[S_ij])` in row order.
    pub expected_spam: Vec<Vec<(usize, f64)>>,
    pub log_likelihood: f64,
    pub best_restart: usize,
    pub iterations: usize,
    pub runs: Vec<RunSummary>,
    pub config: MaceConfig,
}

impl MaceModel {
    pub fn competence(&self) -> impl Iterator<Item = (&str, f64)> {
        self.annotators.iter().map(String::as_str).zip(self.theta.iter().copied())
    }

    /// Writes `annotator_id,theta`.
    pub fn write_competence_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["annotator_id", "theta"])?;
        for (id, theta) in self.competence() {
            w.write_record([id, &theta.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn document<'a>(&'a self, estimate: &'a GroundTruthEstimate) -> ModelDocument<'a> {
        ModelDocument {
            annotators: self
                .annotators
                .iter()
                .zip(&self.theta)
                .zip(&self.xi)
                .map(|((id, &theta), &xi)| AnnotatorEntry { id, theta, xi })
                .collect(),
            items: self
                .items
                .iter()
                .enumerate()
                .map(|(i, item)| ItemEntry {
                    file: &item.file_id,
                    label: &item.label,
                    posterior: self.posteriors[i],
                    decision: estimate.decisions[i] as u8,
                    confidence: estimate.confidence[i],
                    kept: estimate.kept[i],
                })
                .collect(),
            run: RunMetadata {
                seed: self.config.seed,
                restarts: self.config.restarts,
                max_iterations: self.config.max_iterations,
                tolerance: self.config.tolerance,
                smoothing: self.config.smoothing,
                best_restart: self.best_restart,
                iterations: self.iterations,
                log_likelihood: self.log_likelihood,
                runs: &self.runs,
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnnotatorEntry<'a> {
    pub id: &'a str,
    pub theta: f64,
    pub xi: [f64; 2],
}

#[derive(Debug, Serialize)]
pub struct ItemEntry<'a> {
    pub file: &'a str,
    pub label: &'a str,
    pub posterior: [f64; 2],
    pub decision: u8,
    pub confidence: f64,
    pub kept: bool,
}

#[derive(Debug, Serialize)]
pub struct RunMetadata<'a> {
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub smoothing: f64,
    pub best_restart: usize,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub runs: &'a [RunSummary],
}

/// JSON form of a fitted model together with its predicted labels.
#[derive(Debug, Serialize)]
pub struct ModelDocument<'a> {
    pub annotators: Vec<AnnotatorEntry<'a>>,
    pub items: Vec<ItemEntry<'a>>,
    pub run: RunMetadata<'a>,
}

/// Fits MACE with `config.restarts` independent EM runs and keeps the one
/// with the highest final log-likelihood (ties go to the lowest restart).
pub fn em_fit(matrix: &AnnotationMatrix, config: &MaceConfig) -> Result<MaceModel> {
    config.validate()?;
    check_fit_input(matrix)?;
    let runs: Vec<EmRun> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| em_run(matrix, config, restart))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.final_log_likelihood() > runs[best].final_log_likelihood() {
            best = k;
        }
    }
    let summaries = runs
        .iter()
        .map(|r| RunSummary {
            restart: r.restart,
            iterations: r.iterations,
            converged: r.converged,
            log_likelihood: r.final_log_likelihood(),
        })
        .collect();
    let winner = runs.into_iter().nth(best).expect("at least one restart");
    let expected_spam = winner
        .expected_spam
        .iter()
        .enumerate()
        .map(|(i, spam)| {
            matrix
                .row(i)
                .iter()
                .zip(spam)
                .map(|(r, &s)| (r.annotator, s))
                .collect()
        })
        .collect();

    Ok(MaceModel {
        annotators: matrix.annotators().to_vec(),
        items: matrix.items().to_vec(),
        log_likelihood: winner.final_log_likelihood(),
        theta: winner.theta,
        xi: winner.xi,
        posteriors: winner.posteriors,
        expected_spam,
        best_restart: best,
        iterations: winner.iterations,
        runs: summaries,
        config: config.clone(),
    })
}

/// Per-item binary decisions with a confidence and a kept flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEstimate {
    pub method: String,
    pub items: Vec<ItemId>,
    pub decisions: Vec<bool>,
    pub confidence: Vec<f64>,
    pub kept: Vec<bool>,
}

impl GroundTruthEstimate {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items decided positive and kept.
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.decisions[i] && self.kept[i])
    }

    /// Writes `file_id,label,decision,confidence,kept`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["file_id", "label", "decision", "confidence", "kept"])?;
        for (i, item) in self.items.iter().enumerate() {
            w.write_record([
                item.file_id.as_str(),
                item.label.as_str(),
                if self.decisions[i] { "1" } else { "0" },
                &self.confidence[i].to_string(),
                if self.kept[i] { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for GroundTruthEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kept = self.kept.iter().filter(|&&k| k).count();
        write!(
            f,
            "{}: {} items, {} kept, {} positive",
            self.method,
            self.len(),
            kept,
            self.positives().count()
        )
    }
}

/// MAP decision per item; posterior ties go to 0.
pub fn predict(model: &MaceModel) -> GroundTruthEstimate {
    let decisions: Vec<bool> = model.posteriors.iter().map(|p| p[1] > p[0]).collect();
    let confidence = model.posteriors.iter().map(|p| p[0].max(p[1])).collect();
    GroundTruthEstimate {
        method: "mace".to_string(),
        items: model.items.clone(),
        kept: vec![true; decisions.len()],
        decisions,
        confidence,
    }
}

/// Keeps the `⌈keep_percent / 100 · N⌉` most confident items; earlier items
/// win confidence ties. Decisions and confidences are unchanged.
pub fn threshold_at(estimate: &GroundTruthEstimate, keep_percent: f64) -> Result<GroundTruthEstimate> {
    if !(keep_percent > 0.0 && keep_percent <= 100.0) {
        return Err(Error::InvalidConfig(format!(
            "keep percent {keep_percent} outside (0, 100]"
        )));
    }
    let n = estimate.len();
    let quota = keep_quota(n, keep_percent);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| estimate.confidence[b].total_cmp(&estimate.confidence[a]));
    let mut kept = vec![false; n];
    for &i in &order[..quota] {
        kept[i] = true;
    }
    Ok(GroundTruthEstimate {
        method: format!("{}@{}", estimate.method, keep_percent),
        items: estimate.items.clone(),
        decisions: estimate.decisions.clone(),
        confidence: estimate.confidence.clone(),
        kept,
    })
}

fn keep_quota(n: usize, keep_percent: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // The slack absorbs representation error such as 90 * 10 / 100 landing
    // just above 9.
    let exact = keep_percent * n as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, n)
}
