//! `hamlearn` command-line driver: data collection, training, closed-loop
//! tracking and the property suite.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hamlearn::config::{ExperimentConfig, ModelSource};
use hamlearn::geom::GeneralizedCoord;
use hamlearn::model::HamiltonianModel;
use hamlearn::sim::{collect_dataset, rms_position_error, run_closed_loop, write_log_csv, LogRow, LATERAL_DAMPING};
use hamlearn::train::{
    build_windows, fit, read_dataset, save_checkpoint, split_records, write_dataset, write_loss_csv, write_terms_csv,
    IterationRecord, TermSample, TrajectoryRecord, DATASET_FILE,
};
use hamlearn::verify::{format_report, run_default_suite};
use hamlearn::Error;

#[derive(Parser)]
#[command(
    name = "hamlearn",
    version,
    about = "Learn Hamiltonian dynamics from range scans and track with energy shaping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write a dataset.
    Collect(Common),
    /// Fit the model to a dataset.
    Train(Common),
    /// Run closed-loop stabilization or tracking.
    Track(Common),
    /// Run the property suite.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Verification(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } | Error::InvalidGains(_) | Error::Checkpoint(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

type Handler = fn(&ExperimentConfig, Option<&Path>) -> Result<(), Failure>;

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, cmd): (&Common, Handler) = match &cli.command {
        Command::Collect(c) => (c, cmd_collect),
        Command::Train(c) => (c, cmd_train),
        Command::Track(c) => (c, cmd_track),
        Command::Verify(c) => (c, cmd_verify),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cmd(&cfg, common.out.as_deref())
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.out.clone());
    fs::create_dir_all(&dir).map_err(io_failure(&dir))?;
    Ok(dir)
}

fn cmd_collect(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), Failure> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.dataset.clone());
    let env = cfg.env_map().map_err(|e| Failure::Config(e.to_string()))?;
    let records = collect_dataset(&cfg.plant.params(), &env, &cfg.collect)?;
    write_dataset(&dir, &records)?;
    let points: usize = records.iter().flat_map(|r| &r.scans).map(|s| s.points.len()).sum();
    let duration: f64 = records.iter().map(|r| r.times.last().unwrap_or(&0.0) - r.times.first().unwrap_or(&0.0)).sum();
    let collided = records.iter().filter(|r| r.collided_at.is_some()).count();
    println!("dataset      {}", dir.display());
    println!("trajectories {}", records.len());
    println!("points       {points}");
    println!("duration     {duration:.2} s");
    if collided > 0 {
        println!("truncated    {collided} (collision)");
    }
    Ok(())
}

fn held_out_poses(test: &[TrajectoryRecord], train: &[TrajectoryRecord]) -> Vec<GeneralizedCoord> {
    test.iter()
        .chain(train)
        .find_map(|r| r.truth.as_ref())
        .map(|t| t.iter().map(|s| s.pose()).collect())
        .unwrap_or_default()
}

fn print_terms(label: &str, step: usize, t: &TermSample) {
    let (m, d, g) = (t.m_inv, t.d, t.g);
    println!(
        "{label:<8} {step:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        m[(0, 0)],
        m[(1, 1)],
        m[(5, 5)],
        d[(0, 0)],
        d[(1, 1)],
        d[(5, 5)],
        g[(0, 0)],
        g[(0, 1)],
        g[(5, 0)],
        g[(5, 1)]
    );
}

fn cmd_train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), Failure> {
    let data_dir = &cfg.paths.dataset;
    if !data_dir.join(DATASET_FILE).is_file() {
        return Err(Failure::Config(format!("no dataset at {}", data_dir.display())));
    }
    let records = read_dataset(data_dir)?;
    let (train, test) = split_records(&records, cfg.train.test_fraction);
    let train_ws = build_windows(&train, cfg.train.window, &cfg.train.pairs)?;
    let test_ws = build_windows(&test, cfg.train.window, &cfg.train.pairs)?;
    let dir = output_dir(cfg, out)?;
    let mut model = cfg.model.build();
    let mut history: Vec<IterationRecord> = Vec::new();
    let every = (cfg.train.iterations / 20).max(1);
    let ckpt_every = cfg.train.checkpoint_every;
    println!("train windows {}, test windows {}", train_ws.len(), test_ws.len());
    let result = fit(&mut model, &train_ws, &test_ws, &cfg.train, &mut |rec, m| {
        history.push(*rec);
        if rec.iteration % every == 0 || rec.iteration == cfg.train.iterations {
            match rec.test_loss {
                Some(t) => println!("iter {:>5}  train {:.6e}  test {:.6e}", rec.iteration, rec.train_loss, t),
                None => println!("iter {:>5}  train {:.6e}", rec.iteration, rec.train_loss),
            }
        }
        if ckpt_every > 0 && rec.iteration > 0 && rec.iteration % ckpt_every == 0 {
            save_checkpoint(&dir.join(format!("checkpoint_{:05}.ckpt", rec.iteration)), m)?;
        }
        Ok(())
    });
    write_loss_csv(&dir.join("loss.csv"), &history)?;
    save_checkpoint(&dir.join("model.ckpt"), &model)?;
    let report = result?;
    println!("best iteration {} loss {:.6e}", report.best_iteration, report.best_train_loss);

    let poses = held_out_poses(&test, &train);
    if poses.is_empty() {
        println!("no ground-truth poses in the dataset; skipping the learned-term table");
        return Ok(());
    }
    let terms = write_terms_csv(&dir.join("terms.csv"), &model, &poses)?;
    println!(
        "{:<8} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "", "step", "Minv11", "Minv22", "Minv66", "D11", "D22", "D66", "g11", "g12", "g61", "g62"
    );
    let truth_model = cfg.plant.params().equivalent_model(LATERAL_DAMPING, cfg.model.arch.clone());
    print_terms("truth", 0, &TermSample::eval(&truth_model, &poses[0])?);
    let stride = (terms.len() / 10).max(1);
    for (k, t) in terms.iter().enumerate().step_by(stride) {
        print_terms("learned", k, t);
    }
    Ok(())
}

struct RunMetrics {
    rms: f64,
    final_pos: f64,
    final_chordal: f64,
    converged: bool,
}

fn metrics(log: &[LogRow], cfg: &ExperimentConfig) -> Result<RunMetrics, Failure> {
    let last = log.last().ok_or_else(|| Failure::Runtime("empty closed-loop log".into()))?;
    if log.iter().any(|r| !(r.pos_err.is_finite() && r.u.iter().all(|x| x.is_finite()))) {
        return Err(Failure::Runtime("closed loop diverged".into()));
    }
    Ok(RunMetrics {
        rms: rms_position_error(log),
        final_pos: last.pos_err,
        final_chordal: last.chordal,
        converged: last.pos_err < cfg.control.converged_pos && last.chordal < cfg.control.converged_chordal,
    })
}

fn cmd_track(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), Failure> {
    let model = cfg.load_model()?;
    let gains = cfg.control.gains()?;
    let plant = cfg.plant.params();
    let dir = output_dir(cfg, out)?;
    let label = match cfg.model.source {
        ModelSource::Nominal => "nominal",
        ModelSource::Truth => "truth",
        ModelSource::Checkpoint => "learned",
    };
    let mut runs: Vec<(&str, &HamiltonianModel)> = vec![(label, &model)];
    let nominal = cfg.model.build_nominal();
    if cfg.control.compare_nominal && cfg.model.source != ModelSource::Nominal {
        runs.push(("nominal", &nominal));
    }
    let mut table: Vec<(&str, usize, RunMetrics)> = Vec::new();
    for (name, m) in &runs {
        for (i, start) in cfg.control.start_states().into_iter().enumerate() {
            let log = run_closed_loop(m, &plant, start, &cfg.control.reference, &gains, &cfg.control.closed_loop)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            write_log_csv(&dir.join(format!("track_{name}_{i}.csv")), &log)?;
            table.push((name, i, metrics(&log, cfg)?));
        }
    }
    let path = dir.join("metrics.csv");
    let mut csv = String::from("model,start,rms_pos_err,final_pos_err,final_chordal_err,converged\n");
    println!(
        "{:<8} {:>5} {:>12} {:>12} {:>12} {:>9}",
        "model", "start", "rms_pos", "final_pos", "final_chord", "converged"
    );
    for (name, i, m) in &table {
        println!("{name:<8} {i:>5} {:>12.5} {:>12.5} {:>12.5} {:>9}", m.rms, m.final_pos, m.final_chordal, m.converged);
        csv += &format!("{name},{i},{},{},{},{}\n", m.rms, m.final_pos, m.final_chordal, m.converged);
    }
    fs::write(&path, csv).map_err(io_failure(&path))?;
    if let Some(bound) = cfg.control.rms_bound {
        let worst = table.iter().filter(|(n, _, _)| *n == label).map(|(_, _, m)| m.rms).fold(0.0, f64::max);
        if worst > bound {
            return Err(Failure::Verification(format!("RMS position error {worst:.5} exceeds bound {bound}")));
        }
    }
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), Failure> {
    let model = cfg.load_model()?;
    let results = run_default_suite(&model, &cfg.verify)?;
    print!("{}", format_report(&results));
    let dir = output_dir(cfg, out)?;
    let path = dir.join("verify.csv");
    let mut csv = String::from("check,measured,tolerance,samples,passed\n");
    for r in &results {
        csv += &format!("{},{},{},{},{}\n", r.name, r.measured, r.tolerance, r.samples, r.passed());
    }
    fs::write(&path, csv).map_err(io_failure(&path))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}
