//! Drives one experiment: lift construction, training with checkpoints,
//! metrics and mesh snapshots, then the test-time evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use bilayer_core::boundary::{edge_lift, train_g1, BoundaryLift, DistanceFactor, G1TrainingOptions};
use bilayer_core::energy::{EnergyConfig, NetworkDeformation};
use bilayer_core::evaluation::{test_metrics, TestMetrics};
use bilayer_core::geometry::PlateDomain;
use bilayer_core::network::{load_checkpoint, save_checkpoint, NetworkParameters};
use bilayer_core::trainer::{run_schedule, AdamState, MetricsRow, TrainHooks, TrainingRun};
use bilayer_core::Point;

use crate::config::{ConfigError, ExperimentConfig, LiftKind};
use crate::export::export_mesh;

pub const METRICS_FILE: &str = "metrics.csv";
pub const G1_FILE: &str = "g1.txt";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {message} (last good parameters in {})", checkpoint.display())]
    Numeric { message: String, checkpoint: PathBuf },
    #[error(transparent)]
    Core(#[from] bilayer_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numeric { .. } | RunError::Core(bilayer_core::Error::NumericFailure { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.txt"))
}

pub fn optimizer_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.opt.txt"))
}

/// Most recent step with both a parameter and an optimizer checkpoint.
pub fn latest_checkpoint(dir: &Path) -> Option<u64> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("ckpt_")?.strip_suffix(".txt")?.parse::<u64>().ok()
        })
        .filter(|&s| optimizer_path(dir, s).exists())
        .max()
}

fn save_state(dir: &Path, run: &TrainingRun) -> Result<PathBuf, RunError> {
    let path = checkpoint_path(dir, run.step);
    save_checkpoint(&path, &run.params, None)?;
    run.optimizer.save(&optimizer_path(dir, run.step))?;
    Ok(path)
}

/// Builds `g₁`/`g₂` for the configured domain, training or reloading g₁ as needed.
pub fn build_lift(cfg: &ExperimentConfig, domain: &PlateDomain, dir: Option<&Path>) -> Result<BoundaryLift, RunError> {
    if domain.is_free() || cfg.boundary.lift == LiftKind::Free {
        return Ok(BoundaryLift::free());
    }
    if !cfg.needs_trained_g1(domain) {
        return Ok(edge_lift(domain)?);
    }
    if let Some(path) = dir.map(|d| d.join(G1_FILE)).filter(|p| p.exists()) {
        let (net, role) = load_checkpoint(&path)?;
        if role.as_deref() != Some("g1") {
            return Err(bilayer_core::Error::Checkpoint {
                path,
                reason: "missing role=g1 tag".into(),
            }
            .into());
        }
        info!("reusing trained g1 from {}", path.display());
        return Ok(BoundaryLift {
            g1: DistanceFactor::Trained(net),
        });
    }
    let [a, b, c] = cfg.boundary.g1_target.ok_or_else(|| ConfigError {
        line: None,
        message: "[boundary] g1_target: required for a trained g1".into(),
    })?;
    let target = move |x: Point| a * x[0] + b * x[1] + c;
    let opts = G1TrainingOptions {
        arch: cfg.architecture().with_outputs(1),
        steps: cfg.boundary.g1_steps,
        learning_rate: cfg.schedule.learning_rate,
        seed: cfg.boundary.g1_seed,
        ..G1TrainingOptions::default()
    };
    info!("training g1 for {} steps", opts.steps);
    let (lift, report) = train_g1(domain, &target, &opts)?;
    info!("g1 residuals: {report:?}");
    if let (Some(dir), DistanceFactor::Trained(net)) = (dir, &lift.g1) {
        save_checkpoint(&dir.join(G1_FILE), net, Some("g1"))?;
    }
    Ok(lift)
}

struct RunHooks<'a> {
    dir: &'a Path,
    csv: BufWriter<File>,
    cfg: &'a ExperimentConfig,
    domain: &'a PlateDomain,
    lift: &'a BoundaryLift,
}

impl RunHooks<'_> {
    fn row_line(&self, row: &MetricsRow) -> String {
        let mut row = *row;
        if self.cfg.run.deterministic {
            row.elapsed_s = 0.0;
        }
        row.to_csv()
    }
}

impl TrainHooks for RunHooks<'_> {
    fn on_stage_start(&mut self, stage: bilayer_core::trainer::Stage, domain: &PlateDomain, run: &TrainingRun) {
        info!("step {}: entering {stage:?} on {:?} (|Ω| = {:.4})", run.step, domain.outer, domain.area());
    }

    fn on_metrics(&mut self, row: &MetricsRow) -> bilayer_core::Result<()> {
        let line = self.row_line(row);
        writeln!(self.csv, "{line}")?;
        self.csv.flush()?;
        Ok(())
    }

    fn after_step(&mut self, run: &TrainingRun) -> bilayer_core::Result<()> {
        let r = &self.cfg.run;
        if r.checkpoint_every > 0 && run.step.is_multiple_of(r.checkpoint_every) {
            save_checkpoint(&checkpoint_path(self.dir, run.step), &run.params, None)?;
            run.optimizer.save(&optimizer_path(self.dir, run.step))?;
        }
        if r.export_every > 0 && run.step.is_multiple_of(r.export_every) {
            let def = NetworkDeformation {
                params: &run.params,
                lift: self.lift,
            };
            export_mesh(&def, self.domain, r.export_resolution, &self.dir.join(format!("mesh_{}.obj", run.step)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub step: u64,
    pub params: NetworkParameters,
    pub metrics: Vec<MetricsRow>,
    pub test: TestMetrics,
}

fn parse_row(line: &str) -> Option<MetricsRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 5 {
        return None;
    }
    Some(MetricsRow {
        step: f[0].parse().ok()?,
        energy: f[1].parse().ok()?,
        defect: f[2].parse().ok()?,
        istar: f[3].parse().ok()?,
        elapsed_s: f[4].parse().ok()?,
    })
}

/// Training rows of a metrics file, skipping the header and `phase=test` lines.
pub fn read_metrics(path: &Path) -> std::io::Result<Vec<MetricsRow>> {
    Ok(fs::read_to_string(path)?.lines().skip(1).filter_map(parse_row).collect())
}

fn test_line(step: u64, t: &TestMetrics) -> String {
    let mut line = format!("phase=test,step={step},E={:?},C={:?}", t.energy, t.defect);
    if let Some(e) = t.l2_error {
        line.push_str(&format!(",e_L2={e:?}"));
    }
    if let Some(s) = t.shape {
        line.push_str(&format!(",shape={}", s.label()));
    }
    line.push_str(&format!(",samples={}", t.samples));
    line
}

pub fn configure_threads(cfg: &ExperimentConfig) {
    let threads = if cfg.run.deterministic { 1 } else { cfg.run.threads };
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
}

/// Runs (or resumes, when checkpoints exist in the output directory) an experiment.
pub fn run_experiment(cfg: &ExperimentConfig, output_root: &Path) -> Result<RunOutcome, RunError> {
    let domain = cfg.domain()?;
    let energy: EnergyConfig = cfg.energy_config()?;
    let schedule = cfg.schedule(&domain)?;
    let dir = cfg.output_dir(output_root);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(io_err(&dir))?;
    let lift = build_lift(cfg, &domain, Some(&dir))?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut run = match latest_checkpoint(&dir) {
        Some(step) => {
            let (params, _) = load_checkpoint(&checkpoint_path(&dir, step))?;
            let optimizer = AdamState::load(&optimizer_path(&dir, step))?;
            info!("resuming from step {step}");
            let kept: Vec<MetricsRow> = read_metrics(&metrics_path)
                .unwrap_or_default()
                .into_iter()
                .filter(|r| r.step <= step)
                .collect();
            let mut run = TrainingRun::resume(params, optimizer, step);
            run.set_elapsed_offset(kept.last().map_or(0.0, |r| r.elapsed_s));
            run.metrics = kept;
            run
        }
        None => TrainingRun::new(NetworkParameters::init(cfg.architecture(), cfg.network.seed), cfg.schedule.learning_rate),
    };

    {
        let mut csv = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
        writeln!(csv, "{}", MetricsRow::CSV_HEADER).map_err(io_err(&metrics_path))?;
        let mut hooks = RunHooks {
            dir: &dir,
            csv,
            cfg,
            domain: &domain,
            lift: &lift,
        };
        let existing = run.metrics.clone();
        for row in &existing {
            let line = hooks.row_line(row);
            writeln!(hooks.csv, "{line}").map_err(io_err(&metrics_path))?;
        }
        if let Err(e) = run_schedule(&mut run, &domain, &lift, &energy, &schedule, &mut hooks) {
            hooks.csv.flush().map_err(io_err(&metrics_path))?;
            return Err(match e {
                bilayer_core::Error::NumericFailure { context } => RunError::Numeric {
                    message: context,
                    checkpoint: save_state(&dir, &run)?,
                },
                other => other.into(),
            });
        }
        hooks.csv.flush().map_err(io_err(&metrics_path))?;
    }
    save_state(&dir, &run)?;

    let reference = cfg.reference(&domain)?;
    let def = NetworkDeformation {
        params: &run.params,
        lift: &lift,
    };
    let test = test_metrics(&def, &domain, &energy, reference.as_ref(), &cfg.thresholds(), cfg.evaluation.test_seed)?;
    let mut csv = OpenOptions::new().append(true).open(&metrics_path).map_err(io_err(&metrics_path))?;
    writeln!(csv, "{}", test_line(run.step, &test)).map_err(io_err(&metrics_path))?;
    info!("{}", test_line(run.step, &test));
    Ok(RunOutcome {
        dir,
        step: run.step,
        params: run.params,
        metrics: run.metrics,
        test,
    })
}

/// Writes the mesh of a checkpoint under `cfg` to `out`.
pub fn export_checkpoint(ckpt: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<(), RunError> {
    let domain = cfg.domain()?;
    let lift = build_lift(cfg, &domain, ckpt.parent())?;
    let (params, _) = load_checkpoint(ckpt)?;
    let def = NetworkDeformation { params: &params, lift: &lift };
    export_mesh(&def, &domain, cfg.run.export_resolution, out).map_err(io_err(out))
}

/// One-paragraph summary of a run directory.
pub fn summarize(dir: &Path) -> Result<String, RunError> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let rows: Vec<MetricsRow> = text.lines().skip(1).filter_map(parse_row).collect();
    let mut out = format!("{}: {} logged steps\n", dir.display(), rows.len());
    if let Some(last) = rows.last() {
        out.push_str(&format!(
            "last step {}: E {:.6} C {:.4e} I* {:.6} ({:.1} s)\n",
            last.step, last.energy, last.defect, last.istar, last.elapsed_s
        ));
    }
    for line in text.lines().filter(|l| l.starts_with("phase=test")) {
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}
