use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use padbench::embedding::{write_embeddings, BackboneId};
use padbench::error::ErrorClass;
use padbench::exec::Execution;
use padbench::manifest::{parse_manifest, CaptureDevice, DatasetManifest, PaiSpecies};
use padbench::protocol::{
    build_cases, split_bonafide, CasePartition, RunSettings, DEFAULT_BONAFIDE_RATIO, DEFAULT_SEED,
};
use padbench::report::{self, BenchmarkConfig, BenchmarkReport};
use padbench::svm::{ScoreSet, SvmConfig};
use padbench::synthetic::{self, SyntheticSpec};
use padbench::{metrics, reference, Error};

const ALL_BACKBONES: &str =
    "alexnet,googlenet,densenet201,resnet50,efficientnet_b0,nasnet,mobilenet_v2,vit";

#[derive(Parser)]
#[command(name = "padbench", version, about = "Leave-one-out PAI benchmark for fingerphoto PAD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print label and device counts of a manifest.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the four leave-one-out cases, with membership counts when a
    /// manifest is given.
    Cases {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BONAFIDE_RATIO)]
        bonafide_ratio: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Train and score every backbone on every case and write a run directory.
    Run(RunArgs),
    /// Recompute metrics from stored scores.
    Metrics {
        /// Run directory written by `run`.
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        run_dir: Option<PathBuf>,
        /// A single scores.csv file.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Where to write refreshed summary files (default: the run directory).
        #[arg(long, requires = "run_dir")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Render a report from metrics.csv, a run directory or the published table.
    Report {
        #[arg(long, group = "source")]
        metrics: Option<PathBuf>,
        #[arg(long, group = "source")]
        run_dir: Option<PathBuf>,
        /// Use the built-in published per-case table.
        #[arg(long, group = "source")]
        published: bool,
        /// Compare per-backbone averages with the published figures.
        #[arg(long)]
        compare_published: bool,
        /// Also write table.txt, metrics.csv and boxplot.csv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write a seeded Gaussian manifest and embedding files for testing.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_backbone, default_value = ALL_BACKBONES)]
        backbones: Vec<BackboneId>,
        #[arg(long, default_value_t = 200)]
        bona_fide: usize,
        #[arg(long, default_value_t = 100)]
        per_species: usize,
        /// Bona fide mean offset along the first axis, in standard deviations.
        #[arg(long, default_value_t = 4.0)]
        shift: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Width used for backbones whose file declares its own dimension.
        #[arg(long, default_value_t = 16)]
        free_dim: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset manifest (CSV).
    #[arg(long, required_unless_present = "replay")]
    manifest: Option<PathBuf>,
    /// Directory holding one `<backbone>.pdbe` file per backbone.
    #[arg(long, required_unless_present = "replay")]
    embeddings_dir: Option<PathBuf>,
    /// Runs are written to <out-dir>/runs/<run-id>.
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated backbone list.
    #[arg(long, value_delimiter = ',', value_parser = parse_backbone, default_value = ALL_BACKBONES)]
    backbones: Vec<BackboneId>,
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
    #[arg(long, default_value_t = 1e-4)]
    svm_tol: f64,
    #[arg(long, default_value_t = SvmConfig::default().max_iter)]
    svm_max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_BONAFIDE_RATIO)]
    bonafide_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Train on raw features instead of z-scored ones.
    #[arg(long)]
    no_standardize: bool,
    /// Run jobs one after another.
    #[arg(long)]
    sequential: bool,
    /// Name of the run directory under <out-dir>/runs (default: UTC timestamp).
    #[arg(long)]
    run_id: Option<String>,
    /// Re-run with the configuration recorded in a report.json.
    #[arg(long, conflicts_with_all = ["manifest", "embeddings_dir"])]
    replay: Option<PathBuf>,
    /// Compare per-backbone averages with the published figures.
    #[arg(long)]
    compare_published: bool,
}

fn parse_backbone(s: &str) -> Result<BackboneId, String> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = BackboneId::TABLE_ORDER.iter().map(|b| b.slug()).collect();
        format!("unknown backbone `{s}` (known: {})", known.join(", "))
    })
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Errors raised by the front end itself, before the library is involved.
enum CliError {
    Input(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    Ok(parse_manifest(&read_text(path)?).map_err(Error::from)?)
}

fn summarize(path: &Path) -> CliResult {
    let m = load_manifest(path)?;
    let c = m.summarize();
    println!("samples      {:>7}", c.total());
    println!("bona fide    {:>7}", c.bona_fide);
    println!("attacks      {:>7}", c.attacks());
    for s in PaiSpecies::ALL {
        println!("  {:<11}{:>7}", s.as_str(), c.species(s));
    }
    let mut devices: Vec<(String, usize)> = Vec::new();
    for r in &m {
        let name = r.device.as_str().to_string();
        match devices.iter_mut().find(|(d, _)| *d == name) {
            Some((_, n)) => *n += 1,
            None => devices.push((name, 1)),
        }
    }
    devices.sort_by_key(|(d, _)| {
        (
            !matches!(CaptureDevice::parse(d), CaptureDevice::IPhoneX | CaptureDevice::GalaxyS20),
            d.clone(),
        )
    });
    println!("devices");
    for (d, n) in devices {
        println!("  {d:<11}{n:>7}");
    }
    if c == reference::DATASET_COUNTS {
        println!(
            "note: species counts sum to {} attacks; the published attack total is {}",
            c.attacks(),
            reference::STATED_ATTACK_TOTAL
        );
    }
    Ok(())
}

fn cases(manifest: Option<&Path>, ratio: f64, seed: u64) -> CliResult {
    let loaded = manifest.map(load_manifest).transpose()?;
    let split = match &loaded {
        Some(m) => Some(split_bonafide(m, ratio, seed).map_err(Error::from)?),
        None => None,
    };
    for case in build_cases() {
        println!("{case}");
        if let (Some(m), Some(split)) = (&loaded, &split) {
            match CasePartition::build(&case, m, split) {
                Ok(p) => {
                    let bf = |v: &[&padbench::manifest::SampleRecord]| {
                        v.iter().filter(|r| r.label.is_bona_fide()).count()
                    };
                    println!(
                        "  train: {} bona fide + {} attacks; test: {} bona fide + {} {}",
                        bf(&p.train),
                        p.train.len() - bf(&p.train),
                        bf(&p.test),
                        p.test.len() - bf(&p.test),
                        case.test_species
                    );
                }
                Err(e) => println!("  unusable: {e}"),
            }
        }
    }
    Ok(())
}

fn fresh_run_dir(out_dir: &Path, run_id: Option<&str>) -> PathBuf {
    let runs = out_dir.join("runs");
    if let Some(id) = run_id {
        return runs.join(id);
    }
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let mut dir = runs.join(&stamp);
    let mut k = 1;
    while dir.exists() {
        dir = runs.join(format!("{stamp}-{k}"));
        k += 1;
    }
    dir
}

fn run(args: &RunArgs) -> CliResult {
    let cfg = match &args.replay {
        Some(path) => {
            let text = read_text(path)?;
            let stored = BenchmarkReport::from_json(&text).map_err(|e| {
                CliError::Input(format!("{}: not a report file: {e}", path.display()))
            })?;
            let meta = stored.metadata.ok_or_else(|| {
                CliError::Input(format!("{}: report has no run metadata", path.display()))
            })?;
            let mut cfg = meta.replay_config();
            cfg.execution = execution(args.sequential);
            cfg
        }
        None => {
            let mut cfg = BenchmarkConfig::new(
                args.manifest.clone().expect("required by clap"),
                args.embeddings_dir.clone().expect("required by clap"),
            );
            cfg.backbones = args.backbones.clone();
            cfg.settings = RunSettings {
                svm: SvmConfig {
                    c: args.svm_c,
                    tol: args.svm_tol,
                    max_iter: args.svm_max_iter,
                    seed: args.seed,
                },
                standardize: !args.no_standardize,
            };
            cfg.bonafide_ratio = args.bonafide_ratio;
            cfg.seed = args.seed;
            cfg.execution = execution(args.sequential);
            cfg
        }
    };
    let outcome = report::run_benchmark(&cfg)?;
    let dir = fresh_run_dir(&args.out_dir, args.run_id.as_deref());
    report::write_run(&outcome, &dir)?;
    print!("{}", outcome.report.render_summary(args.compare_published));
    println!("\nwrote {}", dir.display());
    Ok(())
}

fn recompute(
    run_dir: Option<&Path>,
    scores: Option<&Path>,
    out_dir: Option<&Path>,
    sequential: bool,
) -> CliResult {
    if let Some(path) = scores {
        let set = ScoreSet::from_csv(&read_text(path)?)
            .map_err(|m| CliError::Input(format!("{}: {m}", path.display())))?;
        let m = metrics::evaluate(&set).map_err(Error::from)?;
        println!("d_eer,eer_threshold,bpcer_at_5,bpcer_at_10");
        println!(
            "{:.2},{},{:.2},{:.2}",
            m.d_eer, m.eer_threshold, m.bpcer_at_apcer5, m.bpcer_at_apcer10
        );
        return Ok(());
    }
    let run_dir = run_dir.expect("required by clap");
    let (rep, computed) = report::recompute_run(run_dir, execution(sequential))?;
    let target = out_dir.unwrap_or(run_dir);
    for (b, case_id, m) in &computed {
        let path = report::case_dir(target, *b, *case_id).join("det.csv");
        padbench::fsutil::write_string_atomic(&path, &m.det.to_csv())
            .map_err(|e| Error::io(&path, e))?;
    }
    report::write_report_files(&rep, target)?;
    print!("{}", rep.render_table());
    Ok(())
}

fn render(
    metrics_csv: Option<&Path>,
    run_dir: Option<&Path>,
    published: bool,
    compare_published: bool,
    out_dir: Option<&Path>,
) -> CliResult {
    let rep = if published {
        BenchmarkReport::from_rows(reference::published_rows(), None)
    } else if let Some(path) = metrics_csv {
        BenchmarkReport::parse_metrics_csv(&read_text(path)?).map_err(Error::from)?
    } else if let Some(dir) = run_dir {
        let path = dir.join("report.json");
        BenchmarkReport::from_json(&read_text(&path)?)
            .map_err(|e| CliError::Input(format!("{}: not a report file: {e}", path.display())))?
    } else {
        return Err(CliError::Input(
            "one of --metrics, --run-dir or --published is required".into(),
        ));
    };
    let text = rep.render_summary(compare_published);
    print!("{text}");
    if let Some(dir) = out_dir {
        let write = |name: &str, body: &str| -> CliResult {
            let path = dir.join(name);
            padbench::fsutil::write_string_atomic(&path, body).map_err(|e| Error::io(&path, e).into())
        };
        write("table.txt", &text)?;
        write("metrics.csv", &rep.metrics_csv())?;
        write("boxplot.csv", &rep.boxplot_csv())?;
    }
    Ok(())
}

fn synth(
    out_dir: &Path,
    backbones: &[BackboneId],
    spec: &SyntheticSpec,
    free_dim: usize,
) -> CliResult {
    if free_dim == 0 {
        return Err(CliError::Input("--free-dim must be positive".into()));
    }
    let manifest = synthetic::manifest(spec);
    let manifest_path = out_dir.join("manifest.csv");
    padbench::fsutil::write_string_atomic(&manifest_path, &manifest.to_csv())
        .map_err(|e| Error::io(&manifest_path, e))?;
    let emb_dir = out_dir.join("embeddings");
    for &b in backbones {
        let m = synthetic::embeddings(&manifest, b, synthetic::dim_for(b, free_dim), spec)
            .map_err(Error::from)?;
        let path = b.file_in(&emb_dir);
        write_embeddings(&m, &path).map_err(Error::from)?;
        println!("{} ({} × {})", path.display(), m.rows(), m.dim());
    }
    println!("{}", manifest_path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Summarize { manifest } => summarize(&manifest),
        Command::Cases {
            manifest,
            bonafide_ratio,
            seed,
        } => cases(manifest.as_deref(), bonafide_ratio, seed),
        Command::Run(args) => run(&args),
        Command::Metrics {
            run_dir,
            scores,
            out_dir,
            sequential,
        } => recompute(run_dir.as_deref(), scores.as_deref(), out_dir.as_deref(), sequential),
        Command::Report {
            metrics,
            run_dir,
            published,
            compare_published,
            out_dir,
        } => render(
            metrics.as_deref(),
            run_dir.as_deref(),
            published,
            compare_published,
            out_dir.as_deref(),
        ),
        Command::Synth {
            out_dir,
            backbones,
            bona_fide,
            per_species,
            shift,
            seed,
            free_dim,
        } => synth(
            &out_dir,
            &backbones,
            &SyntheticSpec::balanced(bona_fide, per_species, shift, seed),
            free_dim,
        ),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e.class() {
                ErrorClass::InputValidation => ExitCode::from(2),
                ErrorClass::Runtime => ExitCode::from(3),
            }
        }
    }
}
