//! Benchmark orchestration and rendering.
//!
//! A run directory looks like:
//!
//! ```text
//! <run>/report.json  metrics.csv  boxplot.csv  table.txt
//! <run>/<backbone>/case<k>/scores.csv  det.csv  model.pdsv
//! ```
//!
//! Every file is written atomically. Nothing in a run directory depends on
//! wall-clock time or scheduling, so repeating an invocation reproduces the
//! same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{BackboneId, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fsutil::write_string_atomic;
use crate::manifest::{parse_manifest, DatasetManifest};
use crate::metrics::{self, CaseMetrics};
use crate::protocol::{
    self, build_cases, split_bonafide, BonafideSplit, CaseDefinition, CaseRun, RunSettings,
};
use crate::reference;
use crate::svm::ScoreSet;

pub const METRICS_HEADER: &str = "backbone,case,d_eer,bpcer_at_5,bpcer_at_10";
pub const BOXPLOT_HEADER: &str = "backbone,case1,case2,case3,case4,mean";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no embedding file for {backbone}: expected {}", path.display())]
    MissingEmbeddingFile { backbone: BackboneId, path: PathBuf },
    #[error("{}: file declares backbone {found}, expected {expected}", path.display())]
    BackboneMismatch {
        path: PathBuf,
        expected: BackboneId,
        found: BackboneId,
    },
    #[error("metrics CSV line {line}: {message}")]
    BadMetricsCsv { line: usize, message: String },
    #[error("{}: {message}", path.display())]
    BadScores { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    BadReportFile { path: PathBuf, message: String },
    #[error("no scores found under {}", .0.display())]
    EmptyRunDir(PathBuf),
    #[error("report has {found} entries, expected {expected}")]
    Incomplete { expected: usize, found: usize },
    #[error("no backbones requested")]
    NoBackbones,
}

impl ReportError {
    pub fn is_input_error(&self) -> bool {
        !matches!(self, ReportError::Incomplete { .. })
    }
}

/// One rendered table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub backbone: BackboneId,
    pub case_id: u8,
    pub d_eer: f64,
    pub bpcer_at_5: f64,
    pub bpcer_at_10: f64,
}

impl MetricsRow {
    pub fn from_metrics(backbone: BackboneId, case_id: u8, m: &CaseMetrics) -> Self {
        MetricsRow {
            backbone,
            case_id,
            d_eer: m.d_eer,
            bpcer_at_5: m.bpcer_at_apcer5,
            bpcer_at_10: m.bpcer_at_apcer10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneAverage {
    pub backbone: BackboneId,
    pub cases: Vec<u8>,
    pub mean_d_eer: f64,
}

/// Per-run training summary, kept so class imbalance and convergence are
/// visible next to the numbers they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub backbone: BackboneId,
    pub case_id: u8,
    pub train_bona_fide: usize,
    pub train_attacks: usize,
    pub test_bona_fide: usize,
    pub test_attacks: usize,
    pub svm_passes: usize,
    pub converged: bool,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub manifest_path: PathBuf,
    pub embeddings_dir: PathBuf,
    pub backbones: Vec<BackboneId>,
    pub seed: u64,
    pub bonafide_ratio: f64,
    pub settings: RunSettings,
    pub manifest_sha256: String,
    /// Keyed by backbone slug.
    pub embedding_sha256: BTreeMap<String, String>,
    pub log: Vec<RunLogEntry>,
}

impl RunMetadata {
    /// Configuration that reproduces this run.
    pub fn replay_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            manifest_path: self.manifest_path.clone(),
            embeddings_dir: self.embeddings_dir.clone(),
            backbones: self.backbones.clone(),
            settings: self.settings,
            bonafide_ratio: self.bonafide_ratio,
            seed: self.seed,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<MetricsRow>,
    pub averages: Vec<BackboneAverage>,
    pub metadata: Option<RunMetadata>,
}

fn table_rank(b: BackboneId) -> usize {
    BackboneId::TABLE_ORDER
        .iter()
        .position(|&x| x == b)
        .expect("every backbone has a table slot")
}

impl BenchmarkReport {
    /// Rows are put in table order; averages are recomputed from them.
    pub fn from_rows(mut rows: Vec<MetricsRow>, metadata: Option<RunMetadata>) -> Self {
        rows.sort_by_key(|r| (table_rank(r.backbone), r.case_id));
        let mut averages: Vec<BackboneAverage> = Vec::new();
        for r in &rows {
            match averages.last_mut() {
                Some(a) if a.backbone == r.backbone => a.cases.push(r.case_id),
                _ => averages.push(BackboneAverage {
                    backbone: r.backbone,
                    cases: vec![r.case_id],
                    mean_d_eer: 0.0,
                }),
            }
        }
        for a in &mut averages {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.backbone == a.backbone)
                .map(|r| r.d_eer)
                .collect();
            a.mean_d_eer = metrics::average_deer(&values).expect("at least one row per average");
        }
        BenchmarkReport {
            rows,
            averages,
            metadata,
        }
    }

    /// Checks the report holds exactly four cases for each of `backbones`.
    pub fn validate_complete(&self, backbones: &[BackboneId]) -> Result<(), ReportError> {
        let expected = backbones.len() * 4;
        let complete = self.rows.len() == expected
            && backbones.iter().all(|&b| {
                let mut cases: Vec<u8> = self
                    .rows
                    .iter()
                    .filter(|r| r.backbone == b)
                    .map(|r| r.case_id)
                    .collect();
                cases.sort_unstable();
                cases == [1, 2, 3, 4]
            });
        if complete {
            Ok(())
        } else {
            Err(ReportError::Incomplete {
                expected,
                found: self.rows.len(),
            })
        }
    }

    pub fn average(&self, backbone: BackboneId) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.backbone == backbone)
            .map(|a| a.mean_d_eer)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.backbone.slug(),
                r.case_id,
                r.d_eer,
                r.bpcer_at_5,
                r.bpcer_at_10
            );
        }
        out
    }

    pub fn parse_metrics_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == METRICS_HEADER => {}
            _ => {
                return Err(ReportError::BadMetricsCsv {
                    line: 1,
                    message: format!("header must be `{METRICS_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| ReportError::BadMetricsCsv {
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", fields.len())));
            }
            let backbone: BackboneId = fields[0].parse().map_err(|e| bad(format!("{e}")))?;
            let case_id: u8 = fields[1]
                .parse()
                .ok()
                .filter(|c| (1..=4).contains(c))
                .ok_or_else(|| bad(format!("bad case `{}`", fields[1])))?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("bad number `{s}`")))
            };
            rows.push(MetricsRow {
                backbone,
                case_id,
                d_eer: num(fields[2])?,
                bpcer_at_5: num(fields[3])?,
                bpcer_at_10: num(fields[4])?,
            });
        }
        Ok(BenchmarkReport::from_rows(rows, None))
    }

    /// One row per backbone and case, two decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>4} {:>8} {:>15} {:>16}",
            "PAD algorithm", "Case", "D-EER", "BPCER@APCER=5%", "BPCER@APCER=10%"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>4} {:>8.2} {:>15.2} {:>16.2}",
                r.backbone.display_name(),
                r.case_id,
                r.d_eer,
                r.bpcer_at_5,
                r.bpcer_at_10
            );
        }
        out
    }

    /// Table, averages, notes and conventions. With `compare_published`,
    /// averages are checked against the published figures.
    pub fn render_summary(&self, compare_published: bool) -> String {
        let mut out = self.render_table();
        if !self.averages.is_empty() {
            out.push_str("\nAverage D-EER over cases\n");
            for a in &self.averages {
                let _ = writeln!(
                    out,
                    "{:<16} {:>8.2}  (cases {})",
                    a.backbone.display_name(),
                    a.mean_d_eer,
                    a.cases
                        .iter()
                        .map(u8::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                );
            }
        }
        let notes = self.annotations(compare_published);
        if !notes.is_empty() {
            out.push_str("\nNotes\n");
            for n in notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out.push_str(
            "\nConventions: bona fide iff score >= threshold; D-EER is the mean of APCER and \
             BPCER at the threshold minimizing |APCER - BPCER| (lowest threshold on ties, no \
             interpolation).\n",
        );
        if let Some(m) = &self.metadata {
            let _ = writeln!(
                out,
                "Run: seed {}, bona fide train ratio {}, SVM C {}, tol {}, max passes {}, \
                 standardize {}",
                m.seed,
                m.bonafide_ratio,
                m.settings.svm.c,
                m.settings.svm.tol,
                m.settings.svm.max_iter,
                m.settings.standardize
            );
            let unconverged: Vec<String> = m
                .log
                .iter()
                .filter(|e| !e.converged)
                .map(|e| format!("{} case {}", e.backbone.display_name(), e.case_id))
                .collect();
            if !unconverged.is_empty() {
                let _ = writeln!(
                    out,
                    "SVM hit the pass limit before tol on: {}",
                    unconverged.join(", ")
                );
            }
        }
        out
    }

    /// Consistency warnings, and divergences from published averages when
    /// `compare_published` is set.
    pub fn annotations(&self, compare_published: bool) -> Vec<String> {
        let mut notes = Vec::new();
        for r in &self.rows {
            if r.bpcer_at_10 > r.bpcer_at_5 {
                notes.push(format!(
                    "{} case {}: BPCER@APCER=10% ({:.2}) exceeds BPCER@APCER=5% ({:.2}); \
                     not achievable from a single score distribution",
                    r.backbone.display_name(),
                    r.case_id,
                    r.bpcer_at_10,
                    r.bpcer_at_5
                ));
            }
        }
        if compare_published {
            for a in &self.averages {
                if let Some(stated) = reference::stated_average(a.backbone) {
                    if format!("{:.2}", a.mean_d_eer) != format!("{stated:.2}") {
                        notes.push(format!(
                            "{}: mean of per-case D-EER is {:.2}, published average is {:.2}",
                            a.backbone.display_name(),
                            a.mean_d_eer,
                            stated
                        ));
                    }
                }
            }
        }
        notes
    }

    /// Per backbone: four case D-EER values (blank where missing) and the mean.
    pub fn boxplot_csv(&self) -> String {
        let mut out = format!("{BOXPLOT_HEADER}\n");
        for a in &self.averages {
            let mut cells = vec![String::new(); 4];
            for r in self.rows.iter().filter(|r| r.backbone == a.backbone) {
                cells[(r.case_id - 1) as usize] = r.d_eer.to_string();
            }
            let _ = writeln!(
                out,
                "{},{},{}",
                a.backbone.slug(),
                cells.join(","),
                a.mean_d_eer
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub manifest_path: PathBuf,
    pub embeddings_dir: PathBuf,
    pub backbones: Vec<BackboneId>,
    pub settings: RunSettings,
    pub bonafide_ratio: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl BenchmarkConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, embeddings_dir: impl Into<PathBuf>) -> Self {
        BenchmarkConfig {
            manifest_path: manifest_path.into(),
            embeddings_dir: embeddings_dir.into(),
            backbones: BackboneId::ALL.to_vec(),
            settings: RunSettings::default(),
            bonafide_ratio: protocol::DEFAULT_BONAFIDE_RATIO,
            seed: protocol::DEFAULT_SEED,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub run: CaseRun,
    pub metrics: CaseMetrics,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub split: BonafideSplit,
    pub outcomes: Vec<CaseOutcome>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Train and score every (backbone, case) pair. Results come back in
/// `embeddings` order, then case order, whatever the execution mode.
pub fn evaluate_all(
    manifest: &DatasetManifest,
    embeddings: &[EmbeddingMatrix],
    split: &BonafideSplit,
    settings: &RunSettings,
    execution: Execution,
) -> Result<Vec<CaseOutcome>> {
    let cases = build_cases();
    let jobs: Vec<(&EmbeddingMatrix, &CaseDefinition)> = embeddings
        .iter()
        .flat_map(|m| cases.iter().map(move |c| (m, c)))
        .collect();
    execution.try_map(&jobs, |&(m, case)| -> Result<CaseOutcome> {
        let run = protocol::run_case(case, manifest, m, split, settings)?;
        let metrics = metrics::evaluate(&run.scores)?;
        Ok(CaseOutcome { run, metrics })
    })
}

fn log_entry(o: &CaseOutcome) -> RunLogEntry {
    let test_bf = o.run.scores.entries.iter().filter(|e| e.label.is_bona_fide()).count();
    RunLogEntry {
        backbone: o.run.backbone,
        case_id: o.run.case.case_id,
        train_bona_fide: o.run.train_balance.0,
        train_attacks: o.run.train_balance.1,
        test_bona_fide: test_bf,
        test_attacks: o.run.scores.len() - test_bf,
        svm_passes: o.run.model.iterations_used,
        converged: o.run.model.converged,
    }
}

/// Load inputs, run every case for every requested backbone, summarize.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    if cfg.backbones.is_empty() {
        return Err(ReportError::NoBackbones.into());
    }
    cfg.settings.svm.validate()?;
    let manifest_bytes =
        std::fs::read(&cfg.manifest_path).map_err(|e| Error::io(&cfg.manifest_path, e))?;
    let manifest_text = String::from_utf8(manifest_bytes).map_err(|e| {
        Error::io(
            &cfg.manifest_path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        )
    })?;
    let manifest = parse_manifest(&manifest_text)?;
    let split = split_bonafide(&manifest, cfg.bonafide_ratio, cfg.seed)?;

    let files: Vec<(BackboneId, PathBuf)> = cfg
        .backbones
        .iter()
        .map(|&b| (b, b.file_in(&cfg.embeddings_dir)))
        .collect();
    for (backbone, path) in &files {
        if !path.is_file() {
            return Err(ReportError::MissingEmbeddingFile {
                backbone: *backbone,
                path: path.clone(),
            }
            .into());
        }
    }
    let loaded = cfg
        .execution
        .try_map(&files, |(backbone, path)| -> Result<(EmbeddingMatrix, String)> {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let m = EmbeddingMatrix::from_bytes(&bytes)?;
            if m.backbone() != *backbone {
                return Err(ReportError::BackboneMismatch {
                    path: path.clone(),
                    expected: *backbone,
                    found: m.backbone(),
                }
                .into());
            }
            Ok((m, sha256_hex(&bytes)))
        })?;
    let (matrices, digests): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();

    let outcomes = evaluate_all(&manifest, &matrices, &split, &cfg.settings, cfg.execution)?;

    let metadata = RunMetadata {
        manifest_path: cfg.manifest_path.clone(),
        embeddings_dir: cfg.embeddings_dir.clone(),
        backbones: cfg.backbones.clone(),
        seed: cfg.seed,
        bonafide_ratio: cfg.bonafide_ratio,
        settings: cfg.settings,
        manifest_sha256: sha256_hex(manifest_text.as_bytes()),
        embedding_sha256: cfg
            .backbones
            .iter()
            .zip(digests)
            .map(|(b, d)| (b.slug().to_string(), d))
            .collect(),
        log: outcomes.iter().map(log_entry).collect(),
    };
    let rows = outcomes
        .iter()
        .map(|o| MetricsRow::from_metrics(o.run.backbone, o.run.case.case_id, &o.metrics))
        .collect();
    let report = BenchmarkReport::from_rows(rows, Some(metadata));
    report.validate_complete(&cfg.backbones)?;
    Ok(BenchmarkOutcome {
        report,
        split,
        outcomes,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    write_string_atomic(path, contents).map_err(|e| Error::io(path, e))
}

pub fn case_dir(run_dir: &Path, backbone: BackboneId, case_id: u8) -> PathBuf {
    run_dir.join(backbone.slug()).join(format!("case{case_id}"))
}

/// Write summary files (report.json, metrics.csv, boxplot.csv, table.txt).
pub fn write_report_files(report: &BenchmarkReport, run_dir: &Path) -> Result<()> {
    write(&run_dir.join("report.json"), &report.to_json())?;
    write(&run_dir.join("metrics.csv"), &report.metrics_csv())?;
    write(&run_dir.join("boxplot.csv"), &report.boxplot_csv())?;
    write(&run_dir.join("table.txt"), &report.render_summary(false))?;
    Ok(())
}

/// Write per-case scores, DET curves and models plus the summary files.
pub fn write_run(outcome: &BenchmarkOutcome, run_dir: &Path) -> Result<()> {
    for o in &outcome.outcomes {
        let dir = case_dir(run_dir, o.run.backbone, o.run.case.case_id);
        write(&dir.join("scores.csv"), &o.run.scores.to_csv())?;
        write(&dir.join("det.csv"), &o.metrics.det.to_csv())?;
        let model_path = dir.join("model.pdsv");
        o.run.model.save(&model_path)?;
    }
    write_report_files(&outcome.report, run_dir)
}

/// Scores found in a run directory, in table order.
pub fn load_run_scores(run_dir: &Path) -> Result<Vec<(BackboneId, u8, ScoreSet)>> {
    let mut found = Vec::new();
    for backbone in BackboneId::TABLE_ORDER {
        for case_id in 1..=4u8 {
            let path = case_dir(run_dir, backbone, case_id).join("scores.csv");
            if !path.is_file() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let scores = ScoreSet::from_csv(&text)
                .map_err(|message| ReportError::BadScores { path: path.clone(), message })?;
            found.push((backbone, case_id, scores));
        }
    }
    if found.is_empty() {
        return Err(ReportError::EmptyRunDir(run_dir.to_path_buf()).into());
    }
    Ok(found)
}

/// Metrics recomputed for one stored (backbone, case) score file.
pub type RecomputedCase = (BackboneId, u8, CaseMetrics);

/// Recompute metrics from stored scores. Metadata is carried over from
/// `report.json` when present.
pub fn recompute_run(
    run_dir: &Path,
    execution: Execution,
) -> Result<(BenchmarkReport, Vec<RecomputedCase>)> {
    let stored = load_run_scores(run_dir)?;
    let computed = execution.try_map(&stored, |(b, c, s)| -> Result<_> {
        Ok((*b, *c, metrics::evaluate(s)?))
    })?;
    let report_path = run_dir.join("report.json");
    let metadata = if report_path.is_file() {
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        BenchmarkReport::from_json(&text)
            .map_err(|e| ReportError::BadReportFile {
                path: report_path.clone(),
                message: e.to_string(),
            })?
            .metadata
    } else {
        None
    };
    let rows = computed
        .iter()
        .map(|(b, c, m)| MetricsRow::from_metrics(*b, *c, m))
        .collect();
    Ok((BenchmarkReport::from_rows(rows, metadata), computed))
}
