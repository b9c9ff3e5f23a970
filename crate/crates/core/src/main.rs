use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use annoreli::aggregate::{
    accuracy, label_statistics, majority_vote, union_vote, write_histogram_json,
    write_statistics_csv, GroundTruthEstimate, LabelStatistics,
};
use annoreli::agreement::{
    alpha_by_class, alpha_threshold_sweep, matrix_alpha, write_reports_csv, write_subset_table_csv,
    write_sweep_csv, AlphaReport,
};
use annoreli::annotation::{expand_to_items, parse_campaign, write_campaign, AnnotationMatrix, LabelVocabulary, CAMPAIGN_HEADER};
use annoreli::io::{read_competence_csv, read_matrix_csv, read_truth_csv, write_matrix_csv};
use annoreli::mace::{em_fit, predict, threshold_at, MaceConfig, MaceModel};
use annoreli::manifest::{FileDigest, RunManifest};
use annoreli::simulate::{generate_campaign, CampaignSpec, SpammerPreset};

#[derive(Parser)]
#[command(name = "annoreli", version, about = "Annotator reliability analysis for multi-label annotations")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed for stochastic commands (required by mace, simulate, report and
    /// MACE-based aggregation).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Serialization of the alpha report; both are written when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a campaign CSV into the long-form binary item matrix.
    Expand {
        #[arg(long)]
        campaign: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Krippendorff's nominal alpha, per class and along competence thresholds.
    Alpha {
        #[command(flatten)]
        input: MatrixInput,
        /// Also report one alpha per label.
        #[arg(long)]
        by_class: bool,
        /// Competence CSV (`annotator_id,theta`) for a threshold sweep.
        #[arg(long, requires = "thresholds")]
        competence: Option<PathBuf>,
        /// Comma-separated ascending thresholds.
        #[arg(long, value_delimiter = ',', requires = "competence")]
        thresholds: Vec<f64>,
    },
    /// Fit MACE and emit competences and predicted labels.
    Mace {
        #[command(flatten)]
        input: MatrixInput,
        #[command(flatten)]
        mace: MaceFlags,
        /// Keep only the given percentage of most confident predictions.
        #[arg(long)]
        keep_percent: Option<f64>,
    },
    /// Aggregate labels with one method and emit label statistics.
    Aggregate {
        #[command(flatten)]
        input: MatrixInput,
        /// union, majority, mace or mace@P.
        #[arg(long)]
        method: String,
        #[command(flatten)]
        mace: MaceFlags,
    },
    /// Drop annotators or classes from a matrix.
    Filter {
        #[command(flatten)]
        input: MatrixInput,
        /// Comma-separated annotator ids to keep.
        #[arg(long, value_delimiter = ',', conflicts_with = "competence")]
        keep: Option<Vec<String>>,
        /// Competence CSV; keeps annotators with theta >= --min-competence.
        #[arg(long, requires = "min_competence")]
        competence: Option<PathBuf>,
        #[arg(long)]
        min_competence: Option<f64>,
        /// Keep only items of this label.
        #[arg(long)]
        label: Option<String>,
    },
    /// Generate a synthetic campaign with planted truth.
    Simulate {
        /// JSON campaign specification.
        #[arg(long, conflicts_with = "spammers_preset", required_unless_present = "spammers_preset")]
        spec: Option<PathBuf>,
        /// Random annotators: 150 annotators, 130 of 3930 files each, 10 labels.
        #[arg(long)]
        spammers_preset: bool,
    },
    /// Produce the full analysis bundle for a matrix.
    Report {
        #[command(flatten)]
        input: MatrixInput,
        /// Competence CSV; MACE estimates are used when omitted.
        #[arg(long)]
        competence: Option<PathBuf>,
        /// Planted truth CSV (`file_id,label,value`) for recovery accuracy.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Competence thresholds of the alpha subset table.
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.8")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 90.0)]
        keep_percent: f64,
        #[command(flatten)]
        mace: MaceFlags,
    },
}

#[derive(Args)]
struct MatrixInput {
    /// Long-form matrix CSV, or a campaign CSV together with --vocab.
    #[arg(long)]
    matrix: PathBuf,
    /// Label vocabulary, one label per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct MaceFlags {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.1)]
    smoothing: f64,
}

impl MaceFlags {
    fn config(&self, seed: u64) -> MaceConfig {
        MaceConfig {
            restarts: self.restarts,
            max_iterations: self.iterations,
            tolerance: self.tolerance,
            smoothing: self.smoothing,
            seed,
        }
    }
}

/// Collects outputs and input digests for the manifest.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn new(out: &Path, command: &str, seed: Option<u64>, config: serde_json::Value) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest::new(command, seed, config),
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = FileDigest::of(path, path.display().to_string())
            .with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.push(digest);
        Ok(())
    }

    fn write<F>(&mut self, name: &str, body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> annoreli::Result<()>,
    {
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        drop(w);
        self.manifest.outputs.push(FileDigest::of(&path, name)?);
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.manifest.duration_ms = self.started.elapsed().as_millis() as u64;
        self.manifest.write(&self.out.join("manifest.json"))?;
        Ok(())
    }
}

fn require_seed(seed: Option<u64>, command: &str) -> anyhow::Result<u64> {
    seed.ok_or_else(|| anyhow!(annoreli::Error::InvalidConfig(format!("`{command}` requires --seed"))))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_vocab(path: &Path) -> anyhow::Result<LabelVocabulary> {
    LabelVocabulary::from_reader(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_matrix(input: &MatrixInput, run: &mut Run) -> anyhow::Result<AnnotationMatrix> {
    run.input(&input.matrix)?;
    let vocab = match &input.vocab {
        Some(path) => {
            run.input(path)?;
            Some(load_vocab(path)?)
        }
        None => None,
    };
    let mut reader = open(&input.matrix)?;
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let is_campaign = header.trim().split(',').map(str::trim).eq(CAMPAIGN_HEADER);
    let reader = open(&input.matrix)?;
    let context = || format!("reading {}", input.matrix.display());
    if is_campaign {
        let vocab = vocab.ok_or_else(|| {
            anyhow!(annoreli::Error::InvalidConfig(
                "campaign input requires --vocab".into()
            ))
        })?;
        let records = parse_campaign(reader, &vocab).with_context(context)?;
        Ok(expand_to_items(&records, &vocab)?)
    } else {
        Ok(read_matrix_csv(reader, vocab.as_ref()).with_context(context)?)
    }
}

fn load_competence(path: &Path, run: &mut Run) -> anyhow::Result<HashMap<String, f64>> {
    run.input(path)?;
    read_competence_csv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_model(run: &mut Run, model: &MaceModel, estimate: &GroundTruthEstimate) -> anyhow::Result<()> {
    run.write_json("model.json", &model.document(estimate))?;
    run.write("competence.csv", |w| model.write_competence_csv(w))?;
    run.write("labels.csv", |w| estimate.write_csv(w))
}

fn estimate_for(
    method: &str,
    matrix: &AnnotationMatrix,
    config: Option<&MaceConfig>,
) -> anyhow::Result<(GroundTruthEstimate, Option<MaceModel>)> {
    match method {
        "union" => Ok((union_vote(matrix), None)),
        "majority" => Ok((majority_vote(matrix), None)),
        m if m == "mace" || m.starts_with("mace@") => {
            let config = config.expect("MACE methods carry a config");
            let model = em_fit(matrix, config)?;
            let estimate = predict(&model);
            let estimate = match m.strip_prefix("mace@") {
                Some(p) => {
                    let percent: f64 = p
                        .parse()
                        .map_err(|_| annoreli::Error::InvalidConfig(format!("bad method `{m}`")))?;
                    threshold_at(&estimate, percent)?
                }
                None => estimate,
            };
            Ok((estimate, Some(model)))
        }
        other => Err(annoreli::Error::InvalidConfig(format!(
            "unknown method `{other}` (expected union, majority, mace or mace@P)"
        ))
        .into()),
    }
}

fn write_alpha(run: &mut Run, format: Option<Format>, stem: &str, reports: &[AlphaReport]) -> anyhow::Result<()> {
    if format != Some(Format::Csv) {
        run.write_json(&format!("{stem}.json"), &reports)?;
    }
    if format != Some(Format::Json) {
        run.write(&format!("{stem}.csv"), |w| write_reports_csv(w, reports))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Expand { campaign, vocab } => {
            let mut run = Run::new(&cli.out, "expand", None, json!({}))?;
            run.input(campaign)?;
            run.input(vocab)?;
            let vocab_set = load_vocab(vocab)?;
            let records = parse_campaign(open(campaign)?, &vocab_set)
                .with_context(|| format!("reading {}", campaign.display()))?;
            let matrix = expand_to_items(&records, &vocab_set)?;
            run.manifest.config = json!({
                "files": matrix.files().len(),
                "labels": vocab_set.len(),
                "annotators": matrix.num_annotators(),
                "items": matrix.num_items(),
                "cells": matrix.num_cells(),
            });
            run.write("matrix.csv", |w| write_matrix_csv(w, &matrix))?;
            eprintln!(
                "expanded {} records into {} items x {} annotators",
                records.len(),
                matrix.num_items(),
                matrix.num_annotators()
            );
            run.finish()
        }

        Command::Alpha {
            input,
            by_class,
            competence,
            thresholds,
        } => {
            let mut run = Run::new(
                &cli.out,
                "alpha",
                None,
                json!({ "by_class": by_class, "thresholds": thresholds }),
            )?;
            let matrix = load_matrix(input, &mut run)?;
            let reports = if *by_class {
                alpha_by_class(&matrix)
            } else {
                vec![matrix_alpha(&matrix)]
            };
            write_alpha(&mut run, cli.format, "alpha", &reports)?;
            if let Some(path) = competence {
                let competences = load_competence(path, &mut run)?;
                let sweep = alpha_threshold_sweep(&matrix, &competences, thresholds)?;
                if cli.format != Some(Format::Csv) {
                    run.write_json("sweep.json", &sweep)?;
                }
                if cli.format != Some(Format::Json) {
                    run.write("sweep.csv", |w| write_sweep_csv(w, &sweep))?;
                }
            }
            run.finish()
        }

        Command::Mace {
            input,
            mace,
            keep_percent,
        } => {
            let seed = require_seed(cli.seed, "mace")?;
            let config = mace.config(seed);
            let mut run = Run::new(
                &cli.out,
                "mace",
                Some(seed),
                json!({ "mace": config, "keep_percent": keep_percent }),
            )?;
            let matrix = load_matrix(input, &mut run)?;
            let model = em_fit(&matrix, &config)?;
            let mut estimate = predict(&model);
            if let Some(p) = keep_percent {
                estimate = threshold_at(&estimate, *p)?;
            }
            write_model(&mut run, &model, &estimate)?;
            eprintln!("{estimate}; log-likelihood {:.6}", model.log_likelihood);
            run.finish()
        }

        Command::Aggregate { input, method, mace } => {
            let is_mace = method.starts_with("mace");
            let seed = if is_mace {
                Some(require_seed(cli.seed, "aggregate --method mace")?)
            } else {
                None
            };
            let config = seed.map(|s| mace.config(s));
            let mut run = Run::new(
                &cli.out,
                "aggregate",
                seed,
                json!({ "method": method, "mace": config }),
            )?;
            let matrix = load_matrix(input, &mut run)?;
            let (estimate, _) = estimate_for(method, &matrix, config.as_ref())?;
            let stats = label_statistics(&estimate, matrix.vocab())?;
            run.write("labels.csv", |w| estimate.write_csv(w))?;
            run.write("stats.csv", |w| write_statistics_csv(w, std::slice::from_ref(&stats)))?;
            run.write("histogram.json", |w| {
                write_histogram_json(w, std::slice::from_ref(&stats), matrix.vocab().len())
            })?;
            eprintln!("{estimate}; mean labels per file {:.4}", stats.mean_labels_per_file);
            run.finish()
        }

        Command::Filter {
            input,
            keep,
            competence,
            min_competence,
            label,
        } => {
            let mut run = Run::new(
                &cli.out,
                "filter",
                None,
                json!({ "keep": keep, "min_competence": min_competence, "label": label }),
            )?;
            let mut matrix = load_matrix(input, &mut run)?;
            if let Some(ids) = keep {
                matrix = matrix.filter_annotators(ids)?;
            } else if let Some(path) = competence {
                let threshold = min_competence.expect("clap enforces --min-competence");
                let competences = load_competence(path, &mut run)?;
                let mut kept = Vec::new();
                for id in matrix.annotators() {
                    let theta = competences
                        .get(id)
                        .ok_or_else(|| annoreli::Error::MissingCompetence(id.clone()))?;
                    if *theta >= threshold {
                        kept.push(id.clone());
                    }
                }
                matrix = matrix.filter_annotators(&kept)?;
            }
            if let Some(label) = label {
                matrix = matrix.subset_by_label(label)?;
            }
            run.write("matrix.csv", |w| write_matrix_csv(w, &matrix))?;
            eprintln!("{} items x {} annotators", matrix.num_items(), matrix.num_annotators());
            run.finish()
        }

        Command::Simulate { spec, spammers_preset } => {
            let seed = require_seed(cli.seed, "simulate")?;
            let mut inputs = Vec::new();
            let spec = if *spammers_preset {
                SpammerPreset {
                    seed,
                    ..SpammerPreset::default()
                }
                .spec()
            } else {
                let path = spec.as_ref().expect("clap enforces --spec");
                inputs.push(path.clone());
                let mut spec: CampaignSpec = serde_json::from_reader(open(path)?)
                    .map_err(annoreli::Error::from)
                    .with_context(|| format!("reading {}", path.display()))?;
                spec.seed = seed;
                spec
            };
            let mut run = Run::new(&cli.out, "simulate", Some(seed), serde_json::to_value(&spec)?)?;
            for path in &inputs {
                run.input(path)?;
            }
            let campaign = generate_campaign(&spec)?;
            let records = campaign.matrix.collapse_to_records();
            run.write("campaign.csv", |w| write_campaign(w, &records, &spec.vocab))?;
            run.write("vocab.txt", |w| {
                for label in spec.vocab.iter() {
                    writeln!(w, "{label}")?;
                }
                Ok(())
            })?;
            run.write("truth.csv", |w| campaign.write_truth_csv(w))?;
            eprintln!(
                "simulated {} items x {} annotators, {} cells",
                campaign.matrix.num_items(),
                campaign.matrix.num_annotators(),
                campaign.matrix.num_cells()
            );
            run.finish()
        }

        Command::Report {
            input,
            competence,
            truth,
            thresholds,
            keep_percent,
            mace,
        } => {
            let seed = require_seed(cli.seed, "report")?;
            let config = mace.config(seed);
            let mut run = Run::new(
                &cli.out,
                "report",
                Some(seed),
                json!({ "mace": config, "thresholds": thresholds, "keep_percent": keep_percent }),
            )?;
            let matrix = load_matrix(input, &mut run)?;
            report(&mut run, &matrix, competence.as_deref(), truth.as_deref(), thresholds, *keep_percent, &config)?;
            run.finish()
        }
    }
}

fn report(
    run: &mut Run,
    matrix: &AnnotationMatrix,
    competence: Option<&Path>,
    truth: Option<&Path>,
    thresholds: &[f64],
    keep_percent: f64,
    config: &MaceConfig,
) -> anyhow::Result<()> {
    let vocab = matrix.vocab();
    let model = em_fit(matrix, config)?;
    let mace = predict(&model);
    let mace_at = threshold_at(&mace, keep_percent)?;
    let estimates = [union_vote(matrix), majority_vote(matrix), mace, mace_at];
    let stats: Vec<LabelStatistics> = estimates
        .iter()
        .map(|e| label_statistics(e, vocab))
        .collect::<annoreli::Result<_>>()?;
    run.write("label_stats.csv", |w| write_statistics_csv(w, &stats))?;
    run.write("labels_per_file.json", |w| write_histogram_json(w, &stats, vocab.len()))?;

    let competences: HashMap<String, f64> = match competence {
        Some(path) => load_competence(path, run)?,
        None => model.competence().map(|(id, t)| (id.to_string(), t)).collect(),
    };
    run.write("competence.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["annotator_id", "theta"])?;
        for id in matrix.annotators() {
            let theta = competences
                .get(id)
                .ok_or_else(|| annoreli::Error::MissingCompetence(id.clone()))?;
            csv.write_record([id.as_str(), &theta.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let mut columns = vec![("all".to_string(), matrix.num_annotators(), alpha_by_class(matrix))];
    for &t in thresholds {
        let mut kept = Vec::new();
        for id in matrix.annotators() {
            if competences[id] >= t {
                kept.push(id.as_str());
            }
        }
        let filtered = matrix.filter_annotators(&kept)?;
        columns.push((format!("theta>={t}"), kept.len(), alpha_by_class(&filtered)));
    }
    run.write("alpha_subsets.csv", |w| write_subset_table_csv(w, &columns))?;

    let mut sweep_thresholds: Vec<f64> = matrix.annotators().iter().map(|id| competences[id]).collect();
    sweep_thresholds.push(0.0);
    sweep_thresholds.sort_by(f64::total_cmp);
    sweep_thresholds.dedup();
    let sweep = alpha_threshold_sweep(matrix, &competences, &sweep_thresholds)?;
    run.write("alpha_sweep.csv", |w| write_sweep_csv(w, &sweep))?;

    if let Some(path) = truth {
        run.input(path)?;
        let truth = read_truth_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let recovery: serde_json::Map<String, serde_json::Value> = estimates
            .iter()
            .map(|e| (e.method.clone(), json!(accuracy(e, &truth))))
            .collect();
        run.write_json("recovery.json", &recovery)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<annoreli::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
