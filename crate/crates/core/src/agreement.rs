//! Krippendorff's nominal alpha over binary annotation matrices with missing
//! data.
//!
//! Every item is a unit `u` with `m_u` responses. Units with at least two
//! responses contribute to a symmetric 2×2 coincidence table, each ordered
//! pair of responses from distinct annotators weighted `1 / (m_u - 1)`.
//! Alpha is then `1 - D_o / D_e`, observed over expected disagreement.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::annotation::AnnotationMatrix;
use crate::error::{Error, Result};

/// Observed coincidences between the two categories `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoincidenceMatrix {
    /// `o[c][k]`: weighted count of ordered `c-k` response pairs.
    pub o: [[f64; 2]; 2],
    pub n_c: [f64; 2],
    pub n: f64,
    /// Units with at least two responses.
    pub units_used: usize,
    /// Units with fewer than two responses, left out of the table.
    pub excluded_units: usize,
}

impl CoincidenceMatrix {
    pub fn diagonal(&self) -> f64 {
        self.o[0][0] + self.o[1][1]
    }

    /// `D_o = (n - Σ o_cc) / n`, defined for `n > 0`.
    pub fn observed_disagreement(&self) -> Option<f64> {
        (self.n > 0.0).then(|| (self.n - self.diagonal()) / self.n)
    }

    /// `D_e = (n² - Σ n_c²) / (n (n - 1))`, defined for `n > 1`.
    pub fn expected_disagreement(&self) -> Option<f64> {
        (self.n > 1.0).then(|| {
            (self.n * self.n - self.sum_sq_marginals()) / (self.n * (self.n - 1.0))
        })
    }

    fn sum_sq_marginals(&self) -> f64 {
        self.n_c[0] * self.n_c[0] + self.n_c[1] * self.n_c[1]
    }
}

/// Accumulates the coincidence table from per-unit category tallies.
///
/// A unit holding `k_c` responses of category `c` adds `k_c (k_c - 1) / (m_u - 1)`
/// to `o_cc` and `k_c k_d / (m_u - 1)` to `o_cd` for `c ≠ d`, which equals
/// enumerating all ordered annotator pairs.
pub fn coincidences(matrix: &AnnotationMatrix) -> CoincidenceMatrix {
    let mut c = CoincidenceMatrix::default();
    for row in matrix.rows() {
        let m = row.len();
        if m < 2 {
            c.excluded_units += 1;
            continue;
        }
        c.units_used += 1;
        let ones = row.iter().filter(|r| r.value).count() as f64;
        let zeros = m as f64 - ones;
        let w = 1.0 / (m as f64 - 1.0);
        c.o[0][0] += zeros * (zeros - 1.0) * w;
        c.o[1][1] += ones * (ones - 1.0) * w;
        let cross = zeros * ones * w;
        c.o[0][1] += cross;
        c.o[1][0] += cross;
    }
    c.n_c = [c.o[0][0] + c.o[0][1], c.o[1][0] + c.o[1][1]];
    c.n = c.n_c[0] + c.n_c[1];
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndefinedReason {
    /// Fewer than two pairable values (`n ≤ 1`).
    NoPairableValues,
    /// Every pairable value falls in one category, so `D_e = 0`.
    SingleCategory,
    /// Fewer than two annotators survived a filter.
    TooFewAnnotators,
}

impl UndefinedReason {
    pub fn as_str(self) -> &'static str {
        match self {
            UndefinedReason::NoPairableValues => "no_pairable_values",
            UndefinedReason::SingleCategory => "single_category",
            UndefinedReason::TooFewAnnotators => "too_few_annotators",
        }
    }
}

impl fmt::Display for UndefinedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Alpha is an in-band value: sweeps and sparse classes legitimately produce
/// undefined results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Alpha {
    pub fn value(self) -> Option<f64> {
        match self {
            Alpha::Defined(a) => Some(a),
            Alpha::Undefined(_) => None,
        }
    }

    pub fn reason(self) -> Option<UndefinedReason> {
        match self {
            Alpha::Defined(_) => None,
            Alpha::Undefined(r) => Some(r),
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Alpha::Defined(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Overall,
    Label(String),
}

impl Scope {
    pub fn name(&self) -> &str {
        match self {
            Scope::Overall => "overall",
            Scope::Label(l) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaReport {
    pub scope: Scope,
    pub alpha: Alpha,
    pub d_o: Option<f64>,
    pub d_e: Option<f64>,
    pub coincidence: CoincidenceMatrix,
}

/// Flat serialized form of an [`AlphaReport`].
#[derive(Debug, Serialize)]
pub struct AlphaRecord<'a> {
    pub scope: &'a str,
    pub alpha: Option<f64>,
    pub reason: Option<&'static str>,
    pub d_o: Option<f64>,
    pub d_e: Option<f64>,
    pub n: f64,
    pub units_used: usize,
    pub excluded_units: usize,
}

impl AlphaReport {
    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn record(&self) -> AlphaRecord<'_> {
        AlphaRecord {
            scope: self.scope.name(),
            alpha: self.alpha.value(),
            reason: self.alpha.reason().map(UndefinedReason::as_str),
            d_o: self.d_o,
            d_e: self.d_e,
            n: self.coincidence.n,
            units_used: self.coincidence.units_used,
            excluded_units: self.coincidence.excluded_units,
        }
    }

    fn undefined(coincidence: CoincidenceMatrix, reason: UndefinedReason) -> Self {
        Self {
            scope: Scope::Overall,
            alpha: Alpha::Undefined(reason),
            d_o: coincidence.observed_disagreement(),
            d_e: coincidence.expected_disagreement(),
            coincidence,
        }
    }
}

impl Serialize for AlphaReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.record().serialize(serializer)
    }
}

/// Nominal alpha in closed form, `1 - (n - 1)(n - Σ o_cc) / (n² - Σ n_c²)`.
///
/// The report scope defaults to [`Scope::Overall`].
pub fn nominal_alpha(c: &CoincidenceMatrix) -> AlphaReport {
    if c.n <= 1.0 {
        return AlphaReport::undefined(*c, UndefinedReason::NoPairableValues);
    }
    let denominator = c.n * c.n - c.sum_sq_marginals();
    if denominator <= 0.0 {
        return AlphaReport::undefined(*c, UndefinedReason::SingleCategory);
    }
    let alpha = 1.0 - (c.n - 1.0) * (c.n - c.diagonal()) / denominator;
    AlphaReport {
        scope: Scope::Overall,
        alpha: Alpha::Defined(alpha),
        d_o: c.observed_disagreement(),
        d_e: c.expected_disagreement(),
        coincidence: *c,
    }
}

/// Alpha for a whole matrix, pooling coincidences over all items.
pub fn matrix_alpha(matrix: &AnnotationMatrix) -> AlphaReport {
    nominal_alpha(&coincidences(matrix))
}

/// One report per vocabulary label in vocabulary order, then the pooled
/// overall report.
pub fn alpha_by_class(matrix: &AnnotationMatrix) -> Vec<AlphaReport> {
    let mut reports: Vec<AlphaReport> = matrix
        .vocab()
        .labels()
        .par_iter()
        .map(|label| {
            let sub = matrix.subset_by_label(label).expect("label in vocabulary");
            matrix_alpha(&sub).with_scope(Scope::Label(label.clone()))
        })
        .collect();
    reports.push(matrix_alpha(matrix));
    reports
}

/// Alpha at one competence threshold of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub annotators_kept: usize,
    pub report: AlphaReport,
}

/// Overall alpha after dropping annotators whose competence is below each
/// threshold in turn.
pub fn alpha_threshold_sweep(
    matrix: &AnnotationMatrix,
    competences: &HashMap<String, f64>,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    let theta: Vec<f64> = matrix
        .annotators()
        .iter()
        .map(|id| {
            competences
                .get(id)
                .copied()
                .ok_or_else(|| Error::MissingCompetence(id.clone()))
        })
        .collect::<Result<_>>()?;
    if thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::InvalidConfig("threshold is NaN".into()));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("thresholds must be ascending".into()));
    }

    Ok(thresholds
        .par_iter()
        .map(|&threshold| {
            let retained: Vec<bool> = theta.iter().map(|&t| t >= threshold).collect();
            let kept = retained.iter().filter(|&&k| k).count();
            let filtered = matrix.retain_columns(&retained);
            let c = coincidences(&filtered);
            let report = if kept < 2 {
                AlphaReport::undefined(c, UndefinedReason::TooFewAnnotators)
            } else {
                nominal_alpha(&c)
            };
            SweepPoint {
                threshold,
                annotators_kept: kept,
                report,
            }
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `scope,alpha,reason,d_o,d_e,n,units_used,excluded_units` rows.
pub fn write_reports_csv<W: Write>(out: W, reports: &[AlphaReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "alpha", "reason", "d_o", "d_e", "n", "units_used", "excluded_units"])?;
    for r in reports {
        let rec = r.record();
        w.write_record([
            rec.scope.to_string(),
            fmt_opt(rec.alpha),
            rec.reason.unwrap_or_default().to_string(),
            fmt_opt(rec.d_o),
            fmt_opt(rec.d_e),
            rec.n.to_string(),
            rec.units_used.to_string(),
            rec.excluded_units.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `threshold,annotators_kept,alpha,reason,d_o,d_e,n,units_used` rows.
pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "annotators_kept", "alpha", "reason", "d_o", "d_e", "n", "units_used"])?;
    for p in points {
        let rec = p.report.record();
        w.write_record([
            p.threshold.to_string(),
            p.annotators_kept.to_string(),
            fmt_opt(rec.alpha),
            rec.reason.unwrap_or_default().to_string(),
            fmt_opt(rec.d_o),
            fmt_opt(rec.d_e),
            rec.n.to_string(),
            rec.units_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Class-wise alpha for several annotator subsets side by side: one row per
/// scope, one column per subset, and a closing row with the annotator counts.
pub fn write_subset_table_csv<W: Write>(
    out: W,
    columns: &[(String, usize, Vec<AlphaReport>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scope".to_string()];
    header.extend(columns.iter().map(|(name, _, _)| name.clone()));
    w.write_record(&header)?;
    let rows = columns.first().map_or(0, |(_, _, reports)| reports.len());
    for r in 0..rows {
        let mut record = vec![columns[0].2[r].scope.name().to_string()];
        record.extend(columns.iter().map(|(_, _, reports)| fmt_opt(reports[r].alpha.value())));
        w.write_record(&record)?;
    }
    let mut counts = vec!["annotators".to_string()];
    counts.extend(columns.iter().map(|(_, kept, _)| kept.to_string()));
    w.write_record(&counts)?;
    w.flush()?;
    Ok(())
}
