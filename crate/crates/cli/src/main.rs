//! `dfka`: run the data-free amalgamation pipeline stage by stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dfka::pipeline::artifacts::{load_prepared, method_tag, stage_evaluate, stage_fit_ood, stage_generate, stage_train_student, stage_train_teachers, RunDir};
use dfka::pipeline::{self, ExperimentConfig, Method, Record, RunReport};
use dfka::Error;

#[derive(Parser, Debug)]
#[command(name = "dfka", version, about = "Data-free knowledge amalgamation of text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the task, pre-train trunks, train and freeze one teacher per label subset
    TrainTeachers(Common),
    /// Pre-train the base language model and generate steered pseudo-data
    Generate(Common),
    /// Fit per-teacher confidence statistics on held-out pseudo-data
    FitOod(Common),
    /// Train the student of one method and record its test accuracy
    TrainStudent(Common),
    /// Score a trained student (or a baseline) on the test split
    Evaluate(Common),
    /// Run methods over seeds, reusing stage artifacts, and summarize
    Ablate(Common),
    /// Sweep the loss weight or the number of teachers
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; ablate and sweep accept a comma-separated list
    #[arg(long, value_name = "INT", value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Output directory; runs go to <out>/<config hash>/seed-<seed>
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Method to train or score; ablate runs every method when omitted
    #[arg(long, value_name = "NAME")]
    method: Option<String>,
    /// Block-loss weight in [0, 1]
    #[arg(long, value_name = "FLOAT")]
    lambda: Option<f64>,
    /// Steering strength of pseudo-data generation
    #[arg(long, value_name = "FLOAT")]
    gamma: Option<f64>,
    /// Number of teachers; the label space grows to keep classes per teacher
    #[arg(long, value_name = "INT", value_delimiter = ',')]
    k_teachers: Vec<usize>,
    /// Also write SVG charts of the summary
    #[arg(long)]
    emit_plots: bool,
    /// Log progress to stderr
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Quantity to sweep
    #[arg(long, value_enum, default_value_t = SweepOver::Lambda)]
    over: SweepOver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepOver {
    /// Block-loss weight over 0, 0.65 and 1
    Lambda,
    /// Heterogeneous teachers, K from --k-teachers (default 2,3,4)
    Teachers,
}

const LAMBDA_GRID: [f64; 3] = [0.0, 0.65, 1.0];
const TEACHER_GRID: [usize; 3] = [2, 3, 4];

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact(_) => 3,
        _ => 1,
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(l) = self.lambda {
            cfg.amalgam.lambda = l;
        }
        if let Some(g) = self.gamma {
            cfg.steer.gamma = g;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config of one stage: a single seed and at most one teacher count.
    fn stage_config(&self) -> Result<ExperimentConfig, Error> {
        let [seed] = self.seed[..] else {
            return Err(Error::Config("this command takes exactly one --seed".into()));
        };
        let mut cfg = pipeline::with_seed(&self.config()?, seed);
        match self.k_teachers[..] {
            [] => {}
            [k] => cfg = cfg.with_teachers(k)?,
            _ => return Err(Error::Config("this command takes at most one --k-teachers".into())),
        }
        Ok(cfg)
    }

    fn method(&self) -> Result<Option<Method>, Error> {
        self.method.as_deref().map(str::parse).transpose()
    }

    fn required_method(&self) -> Result<Method, Error> {
        self.method()?.ok_or_else(|| Error::Config("--method is required".into()))
    }
}

fn print_line(v: serde_json::Value) {
    println!("{v}");
}

fn write_report(report: &RunReport, dir: &Path, plots: bool) -> Result<(), Error> {
    report.write(dir)?;
    if plots {
        fs::write(dir.join("accuracy.svg"), report.accuracy_svg())?;
        if !report.auroc_summary().is_empty() {
            fs::write(dir.join("auroc.svg"), report.auroc_svg())?;
        }
    }
    print!("{}", report.table());
    Ok(())
}

/// Run every stage whose outputs are missing.
fn ensure_prepared(cfg: &ExperimentConfig, dir: &RunDir) -> Result<pipeline::Prepared, Error> {
    match load_prepared(cfg, dir) {
        Ok(p) => Ok(p),
        Err(Error::MissingArtifact(missing)) => {
            log::info!("{} missing; running earlier stages", missing.display());
            if !dir.task().join("task.json").exists() {
                stage_train_teachers(cfg, dir)?;
            }
            if !dir.root.join("pseudo.json").exists() || !dir.root.join("lm.json").exists() {
                stage_generate(cfg, dir)?;
            }
            stage_fit_ood(cfg, dir)?;
            load_prepared(cfg, dir)
        }
        Err(e) => Err(e),
    }
}

fn ablate(c: &Common) -> Result<(), Error> {
    let base = c.config()?;
    let methods = match c.method()? {
        Some(m) => vec![m],
        None => Method::ALL.to_vec(),
    };
    let mut cfg_k = base.clone();
    if let [k] = c.k_teachers[..] {
        cfg_k = base.with_teachers(k)?;
    }
    let mut report = RunReport::default();
    for &seed in &c.seed {
        let cfg = pipeline::with_seed(&cfg_k, seed);
        let p = ensure_prepared(&cfg, &RunDir::new(&c.out, &cfg))?;
        report.records.extend(pipeline::run_seed(&p, &methods)?);
    }
    let name = match c.method()? {
        Some(m) => format!("ablate-{}", method_tag(m, cfg_k.amalgam.lambda)),
        None => "ablate".into(),
    };
    write_report(&report, &c.out.join(cfg_k.artifact_key()).join(name), c.emit_plots)
}

fn sweep(s: &SweepArgs) -> Result<(), Error> {
    let c = &s.common;
    let cfg = c.config()?;
    let (report, name) = match s.over {
        SweepOver::Lambda => (pipeline::sweep_lambda(&cfg, &LAMBDA_GRID, &c.seed)?, "sweep-lambda"),
        SweepOver::Teachers => {
            let ks = if c.k_teachers.is_empty() { TEACHER_GRID.to_vec() } else { c.k_teachers.clone() };
            (pipeline::sweep_teachers(&cfg, &ks, &c.seed)?, "sweep-teachers")
        }
    };
    write_report(&report, &c.out.join(cfg.artifact_key()).join(name), c.emit_plots)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::TrainTeachers(c) => {
            let cfg = c.stage_config()?;
            let dir = RunDir::new(&c.out, &cfg);
            let t = stage_train_teachers(&cfg, &dir)?;
            print_line(json!({"command": "train-teachers", "run_dir": dir.root, "valid_accuracy": t.valid_accuracy}));
        }
        Command::Generate(c) => {
            let cfg = c.stage_config()?;
            let dir = RunDir::new(&c.out, &cfg);
            stage_generate(&cfg, &dir)?;
            print_line(json!({"command": "generate", "run_dir": dir.root}));
        }
        Command::FitOod(c) => {
            let cfg = c.stage_config()?;
            let dir = RunDir::new(&c.out, &cfg);
            let oods = stage_fit_ood(&cfg, &dir)?;
            print_line(json!({"command": "fit-ood", "run_dir": dir.root, "teachers": oods.len()}));
        }
        Command::TrainStudent(c) => {
            let cfg = c.stage_config()?;
            let r = stage_train_student(&cfg, &RunDir::new(&c.out, &cfg), c.required_method()?)?;
            println!("{}", RunReport { records: vec![Record::Method(r)], wall_clock: Vec::new() }.to_jsonl().trim_end());
        }
        Command::Evaluate(c) => {
            let cfg = c.stage_config()?;
            let r = stage_evaluate(&cfg, &RunDir::new(&c.out, &cfg), c.required_method()?)?;
            println!("{}", RunReport { records: vec![Record::Method(r)], wall_clock: Vec::new() }.to_jsonl().trim_end());
        }
        Command::Ablate(c) => ablate(c)?,
        Command::Sweep(s) => sweep(s)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = match &cli.command {
        Command::Sweep(s) => s.common.verbose,
        Command::TrainTeachers(c) | Command::Generate(c) | Command::FitOod(c) | Command::TrainStudent(c) | Command::Evaluate(c) | Command::Ablate(c) => {
            c.verbose
        }
    };
    env_logger::Builder::new().filter_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn }).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
