//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use annoreli::aggregate::{accuracy, majority_vote, union_vote};
use annoreli::agreement::{coincidences, matrix_alpha, nominal_alpha, Alpha, UndefinedReason};
use annoreli::annotation::{AnnotationMatrix, ItemId, LabelVocabulary, Response};
use annoreli::mace::{em_fit, em_run, log_likelihood, predict, threshold_at, MaceConfig};
use annoreli::simulate::{generate_campaign, generate_spammers, SpammerPreset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{pairwise_alpha, planted_spec, random_matrix, spearman};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_label(rows: &[&[bool]]) -> AnnotationMatrix {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    AnnotationMatrix::from_rows(
        LabelVocabulary::new(["x"]).unwrap(),
        (0..rows.len()).map(|i| ItemId::new(format!("u{i}"), "x")).collect(),
        (0..width).map(|j| format!("c{j}")).collect(),
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(annotator, &value)| Response { annotator, value }).collect())
            .collect(),
    )
    .unwrap()
}

fn hand_oracle() -> Outcome {
    let m = single_label(&[&[true, true], &[true, false], &[false, false], &[false, false]]);
    let start = Instant::now();
    let report = matrix_alpha(&m);
    let elapsed = start.elapsed();
    let expected = 16.0 / 30.0;
    let closed = report.alpha.value().unwrap_or(f64::NAN);
    let ratio = 1.0 - report.d_o.unwrap_or(f64::NAN) / report.d_e.unwrap_or(f64::NAN);
    let pass = (closed - expected).abs() <= 1e-9
        && (ratio - expected).abs() <= 1e-9
        && elapsed < Duration::from_millis(1);
    outcome(
        pass,
        format!("closed form {closed:.12}, 1-Do/De {ratio:.12}, expected {expected:.12}, {elapsed:?}"),
    )
}

fn extremes() -> Outcome {
    let perfect = single_label(&[&[true, true, true], &[false, false], &[true, true], &[false, false, false]]);
    let perfect_alpha = matrix_alpha(&perfect).alpha;
    let single = single_label(&[&[true, true], &[true, true, true]]);
    let single_alpha = matrix_alpha(&single).alpha;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..50 {
        let items = rng.gen_range(5..60);
        let annotators = rng.gen_range(2..8);
        let m = random_matrix(&mut rng, items, annotators, 0.7);
        let report = nominal_alpha(&coincidences(&m));
        if let (Alpha::Defined(a), Some(d_o), Some(d_e)) = (report.alpha, report.d_o, report.d_e) {
            worst = worst.max((a - (1.0 - d_o / d_e)).abs());
            worst = worst.max((a - pairwise_alpha(&m).unwrap_or(f64::NAN)).abs());
            compared += 1;
        }
    }
    let pass = perfect_alpha == Alpha::Defined(1.0)
        && single_alpha == Alpha::Undefined(UndefinedReason::SingleCategory)
        && compared == 50
        && worst <= 1e-12;
    outcome(
        pass,
        format!("perfect {perfect_alpha:?}, single {single_alpha:?}, {compared}/50 compared, max gap {worst:.2e}"),
    )
}

fn spammer_reproduction() -> Outcome {
    let start = Instant::now();
    let campaign = match generate_spammers(&SpammerPreset::default()) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let alpha = matrix_alpha(&campaign.matrix).alpha.value().unwrap_or(f64::NAN);
    let records = campaign.matrix.collapse_to_records();
    let elapsed = start.elapsed();
    let vocab_size = campaign.matrix.vocab().len() as f64;
    let mean = records.iter().map(|r| r.selected.len() as f64).sum::<f64>() / records.len() as f64;
    let sigma = (vocab_size * 0.25 / records.len() as f64).sqrt();
    let pass = alpha > -0.02
        && alpha < 0.02
        && (mean - 5.0).abs() <= 3.0 * sigma
        && campaign.matrix.num_annotators() == 150
        && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "alpha {alpha:.5}, mean labels per file {mean:.4} (3 sigma = {:.4}), {} records, {elapsed:?}",
            3.0 * sigma,
            records.len()
        ),
    )
}

/// Log of the probability of the observed matrix summed over every joint
/// truth assignment.
fn enumerated_log_likelihood(m: &AnnotationMatrix, theta: &[f64], xi: &[[f64; 2]]) -> f64 {
    let n = m.num_items();
    let p = |j: usize, a: bool, t: bool| {
        let spam = (1.0 - theta[j]) * xi[j][a as usize];
        if a == t {
            theta[j] + spam
        } else {
            spam
        }
    };
    let mut total = 0.0;
    for assignment in 0u32..(1 << n) {
        let mut joint = 1.0;
        for i in 0..n {
            let t = assignment >> i & 1 == 1;
            joint *= 0.5;
            for r in m.row(i) {
                joint *= p(r.annotator, r.value, t);
            }
        }
        total += joint;
    }
    // Items without responses contribute a factor of 1/2 per truth value,
    // summing to 1 in the marginal.
    total.ln()
}

fn likelihood_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let items = rng.gen_range(1..=12);
        let annotators = rng.gen_range(1..=5);
        let m = random_matrix(&mut rng, items, annotators, 0.6);
        let theta: Vec<f64> = (0..annotators).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xi: Vec<[f64; 2]> = (0..annotators)
            .map(|_| {
                let p: f64 = rng.gen_range(0.01..0.99);
                [p, 1.0 - p]
            })
            .collect();
        let got = log_likelihood(&m, &theta, &xi);
        let want = enumerated_log_likelihood(&m, &theta, &xi);
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= 1e-9, format!("20 matrices, max gap {worst:.2e}"))
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_objective: f64 = 0.0;
    let mut worst_unsmoothed: f64 = 0.0;
    for seed in 0..100u64 {
        let items = rng.gen_range(20..120);
        let annotators = rng.gen_range(3..12);
        let m = random_matrix(&mut rng, items, annotators, 0.5);
        if m.num_cells() == 0 {
            continue;
        }
        let config = MaceConfig::with_seed(seed);
        let run = em_run(&m, &config, 0).unwrap();
        for w in run.objective_trace.windows(2) {
            worst_objective = worst_objective.max(w[0] - w[1]);
        }
        let unsmoothed = MaceConfig { smoothing: 0.0, ..config };
        let run = em_run(&m, &unsmoothed, 0).unwrap();
        for w in run.log_likelihood_trace.windows(2) {
            worst_unsmoothed = worst_unsmoothed.max(w[0] - w[1]);
        }
    }
    let pass = worst_objective <= 1e-9 && worst_unsmoothed <= 1e-9;
    outcome(
        pass,
        format!(
            "100 runs, largest decrease: smoothed objective {worst_objective:.2e}, unsmoothed log-likelihood {worst_unsmoothed:.2e}"
        ),
    )
}

struct Planted {
    matrix: AnnotationMatrix,
    planted: Vec<f64>,
    estimated: Vec<f64>,
    mace_accuracy: f64,
    majority_accuracy: f64,
    elapsed: Duration,
}

fn planted_fit() -> Planted {
    let spec = planted_spec(6);
    let start = Instant::now();
    let campaign = generate_campaign(&spec).unwrap();
    let model = em_fit(&campaign.matrix, &MaceConfig::with_seed(6)).unwrap();
    let mace = predict(&model);
    let majority = majority_vote(&campaign.matrix);
    let elapsed = start.elapsed();
    let truth: HashMap<(String, String), bool> = campaign
        .matrix
        .items()
        .iter()
        .zip(&campaign.truth)
        .map(|(item, &t)| ((item.file_id.clone(), item.label.clone()), t))
        .collect();
    let planted = campaign
        .matrix
        .annotators()
        .iter()
        .map(|id| spec.annotators.iter().find(|a| &a.id == id).unwrap().competence)
        .collect();
    Planted {
        mace_accuracy: accuracy(&mace, &truth).unwrap(),
        majority_accuracy: accuracy(&majority, &truth).unwrap(),
        matrix: campaign.matrix,
        planted,
        estimated: model.theta,
        elapsed,
    }
}

fn spammer_split(p: &Planted) -> (f64, f64) {
    let mut max_spammer = f64::NEG_INFINITY;
    let mut min_good = f64::INFINITY;
    for (&t, &e) in p.planted.iter().zip(&p.estimated) {
        if t < 0.5 {
            max_spammer = max_spammer.max(e);
        } else {
            min_good = min_good.min(e);
        }
    }
    (max_spammer, min_good)
}

fn competence_recovery(p: &Planted) -> Outcome {
    let (max_spammer, min_good) = spammer_split(p);
    let rho = spearman(&p.planted, &p.estimated);
    let separated = max_spammer < min_good;
    let pass = separated
        && rho >= 0.8
        && p.mace_accuracy >= p.majority_accuracy
        && p.elapsed < Duration::from_secs(30);
    let responses = p.matrix.num_cells() as f64 / p.matrix.num_items() as f64;
    outcome(
        pass,
        format!(
            "separated {separated} (spammer max {max_spammer:.3} < competent min {min_good:.3}), \
             spearman {rho:.4} (need 0.8), accuracy mace {:.3} vs majority {:.3}, \
             {responses:.2} responses per item, {:?}",
            p.mace_accuracy, p.majority_accuracy, p.elapsed
        ),
    )
}

fn inclusion_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = Vec::new();
    for k in 0..50u64 {
        let items = rng.gen_range(10..80);
        let annotators = rng.gen_range(2..9);
        let density = rng.gen_range(0.2..0.9);
        let m = random_matrix(&mut rng, items, annotators, density);
        if m.num_cells() == 0 {
            continue;
        }
        let union = union_vote(&m);
        let majority = majority_vote(&m);
        let mace = predict(&em_fit(&m, &MaceConfig::with_seed(k)).unwrap());
        let mace90 = threshold_at(&mace, 90.0).unwrap();
        for i in 0..m.num_items() {
            let maj = majority.decisions[i];
            let mac = mace.decisions[i];
            let m90 = mace90.decisions[i] && mace90.kept[i];
            if (maj && !union.decisions[i]) || (mac && !union.decisions[i]) || (m90 && !mac) {
                violations.push((k, i));
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("50 matrices, {} violations {:?}", violations.len(), violations.iter().take(5).collect::<Vec<_>>()),
    )
}

fn filtering_effect(p: &Planted) -> Outcome {
    let (max_spammer, min_good) = spammer_split(p);
    let threshold = (max_spammer + min_good) / 2.0;
    let keep: Vec<&String> = p
        .matrix
        .annotators()
        .iter()
        .zip(&p.estimated)
        .filter(|(_, &e)| e >= threshold)
        .map(|(id, _)| id)
        .collect();
    let filtered = p.matrix.filter_annotators(keep.iter().copied()).unwrap();
    let before = matrix_alpha(&p.matrix).alpha.value().unwrap_or(f64::NAN);
    let after = matrix_alpha(&filtered).alpha.value().unwrap_or(f64::NAN);
    let spammers_left = keep.iter().filter(|id| id.starts_with("spam")).count();
    outcome(
        spammers_left == 0 && after > before,
        format!(
            "threshold {threshold:.3}, kept {} annotators ({spammers_left} spammers), alpha {before:.4} -> {after:.4}",
            keep.len()
        ),
    )
}

fn run_cli(bin: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Files of `dir` with their contents; manifests lose the wall-clock field.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("duration_ms");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_annoreli"));
    let work = tempfile::tempdir().unwrap();
    let root = work.path();
    let spec = root.join("spec.json");
    fs::write(&spec, serde_json::to_string(&planted_spec(9)).unwrap()).unwrap();
    fs::write(root.join("vocab.txt"), "x\n").unwrap();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();

    // Each command writes into `<name>-<round>`; later commands read the
    // first round's outputs so both rounds see identical inputs.
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["simulate".into(), "--spec".into(), p("spec.json"), "--seed".into(), "9".into()]),
        ("expand", vec!["expand".into(), "--campaign".into(), p("simulate-0/campaign.csv"), "--vocab".into(), p("vocab.txt")]),
        ("alpha", vec!["alpha".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--by-class".into()]),
        ("mace", vec!["mace".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--seed".into(), "3".into(), "--keep-percent".into(), "90".into()]),
        ("sweep", vec!["alpha".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--competence".into(), p("mace-0/competence.csv"), "--thresholds".into(), "0,0.5,0.8".into()]),
        ("union", vec!["aggregate".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--method".into(), "union".into()]),
        ("majority", vec!["aggregate".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--method".into(), "majority".into()]),
        ("mace90", vec!["aggregate".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--method".into(), "mace@90".into(), "--seed".into(), "3".into()]),
        ("filter", vec!["filter".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--competence".into(), p("mace-0/competence.csv"), "--min-competence".into(), "0.5".into()]),
        ("report", vec!["report".into(), "--matrix".into(), p("expand-0/matrix.csv"), "--truth".into(), p("simulate-0/truth.csv"), "--seed".into(), "3".into()]),
    ];

    let mut differing = Vec::new();
    for (name, args) in &commands {
        for round in 0..2 {
            let out = p(&format!("{name}-{round}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out", &out]);
            if let Err(e) = run_cli(&bin, &full) {
                return outcome(false, e);
            }
        }
        let first = snapshot(&root.join(format!("{name}-0")));
        let second = snapshot(&root.join(format!("{name}-1")));
        if first.is_empty() || first != second {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty(),
        format!("{} command runs repeated, differing: {differing:?}", commands.len()),
    )
}

fn main() -> ExitCode {
    let planted = planted_fit();
    let results = [
        ("1 alpha hand oracle", hand_oracle()),
        ("2 alpha extremes", extremes()),
        ("3 spammer reproduction", spammer_reproduction()),
        ("4 likelihood oracle", likelihood_oracle()),
        ("5 EM monotonicity", monotonicity()),
        ("6 competence recovery", competence_recovery(&planted)),
        ("7 inclusion chain", inclusion_chain()),
        ("8 filtering effect", filtering_effect(&planted)),
        ("9 CLI determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!("{} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += !r.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
