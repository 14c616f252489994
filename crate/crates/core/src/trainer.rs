//! Adam minimization of the Monte Carlo loss with nested-subdomain pre-training.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boundary::BoundaryLift;
use crate::energy::{mc_loss_gradient, EnergyConfig};
use crate::error::{Error, Result};
use crate::geometry::{PlateDomain, SubdomainChain};
use crate::network::NetworkParameters;
use crate::Point;

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Applies one update; `params` is untouched when `grad` is not finite.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(Error::NumericFailure {
                context: format!("gradient length {} vs {} parameters", grad.len(), params.len()),
            });
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                context: format!("non-finite gradient component {k} at optimizer step {}", self.t + 1),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Order-sensitive fingerprint of the moments.
    pub fn checksum(&self) -> u64 {
        self.m
            .iter()
            .chain(&self.v)
            .fold(self.t, |h, x| h.rotate_left(7) ^ x.to_bits().wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "adam {} {:?} {:?} {:?} {:?}", self.t, self.lr, self.beta1, self.beta2, self.eps)?;
        for (m, v) in self.m.iter().zip(&self.v) {
            writeln!(out, "{m:?} {v:?}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.len() != 6 || header[0] != "adam" {
            return Err(bad("bad optimizer header".into()));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let t = header[1].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let mut state = AdamState {
            m: vec![],
            v: vec![],
            t,
            lr: float(header[2])?,
            beta1: float(header[3])?,
            beta2: float(header[4])?,
            eps: float(header[5])?,
        };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(m), Some(v), None) => {
                    state.m.push(float(m)?);
                    state.v.push(float(v)?);
                }
                _ => return Err(bad(format!("bad moment line {line:?}"))),
            }
        }
        Ok(state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Pre-training on subdomain `i` (0-based).
    Pretrain(usize),
    Main,
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub chain: Option<SubdomainChain>,
    pub epoch_pre: u64,
    pub epochs: u64,
    /// Fixed batch size; otherwise `round(16 |Ωᵢ|)` on each (sub)domain.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub metrics_every: u64,
    /// Keep Adam moments across subdomain transitions.
    pub carry_moments: bool,
}

impl Schedule {
    pub fn direct(epochs: u64, seed: u64) -> Self {
        Schedule {
            chain: None,
            epoch_pre: 50_000,
            epochs,
            batch_size: None,
            seed,
            metrics_every: 1000,
            carry_moments: true,
        }
    }

    pub fn batch_size_for(&self, domain: &PlateDomain) -> usize {
        self.batch_size.unwrap_or_else(|| ((16.0 * domain.area()).round() as usize).max(1))
    }

    pub fn pretraining_steps(&self) -> u64 {
        self.chain.as_ref().map_or(0, |c| c.pretraining().len() as u64 * self.epoch_pre)
    }

    pub fn total_steps(&self) -> u64 {
        self.pretraining_steps() + self.epochs
    }

    fn stages<'a>(&'a self, full: &'a PlateDomain) -> Vec<(Stage, &'a PlateDomain, u64)> {
        let mut stages: Vec<_> = self
            .chain
            .iter()
            .flat_map(|c| c.pretraining().iter().enumerate())
            .map(|(i, d)| (Stage::Pretrain(i), d, self.epoch_pre))
            .collect();
        stages.push((Stage::Main, full, self.epochs));
        stages
    }
}

/// Generator for the batch of global step `step`; resumable without stored state.
pub fn batch_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub energy: f64,
    pub defect: f64,
    pub istar: f64,
    pub elapsed_s: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,E,C,Istar,elapsed_s";

    pub fn to_csv(&self) -> String {
        format!("{},{:?},{:?},{:?},{:.3}", self.step, self.energy, self.defect, self.istar, self.elapsed_s)
    }
}

/// Observation points of the training loop. All methods default to no-ops.
pub trait TrainHooks {
    fn on_stage_start(&mut self, _stage: Stage, _domain: &PlateDomain, _run: &TrainingRun) {}

    fn on_batch(&mut self, _stage: Stage, _step: u64, _batch: &[Point]) {}

    fn on_metrics(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    /// Called after every completed update, with `run.step` already advanced.
    fn after_step(&mut self, _run: &TrainingRun) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Mutable state of one training run.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub params: NetworkParameters,
    pub optimizer: AdamState,
    /// Completed updates across all stages.
    pub step: u64,
    pub metrics: Vec<MetricsRow>,
    started: Instant,
    elapsed_offset: f64,
}

impl TrainingRun {
    pub fn new(params: NetworkParameters, lr: f64) -> Self {
        let optimizer = AdamState::new(params.len(), lr);
        Self::resume(params, optimizer, 0)
    }

    pub fn resume(params: NetworkParameters, optimizer: AdamState, step: u64) -> Self {
        TrainingRun {
            params,
            optimizer,
            step,
            metrics: vec![],
            started: Instant::now(),
            elapsed_offset: 0.0,
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed_offset + self.started.elapsed().as_secs_f64()
    }

    pub fn set_elapsed_offset(&mut self, seconds: f64) {
        self.elapsed_offset = seconds;
    }
}

/// Runs `epochs` iterations of sample → loss → gradient → Adam on `domain`.
#[allow(clippy::too_many_arguments)]
pub fn train_on_domain(
    run: &mut TrainingRun,
    domain: &PlateDomain,
    lift: &BoundaryLift,
    cfg: &EnergyConfig,
    schedule: &Schedule,
    epochs: u64,
    stage: Stage,
    hooks: &mut dyn TrainHooks,
) -> Result<()> {
    let batch_size = schedule.batch_size_for(domain);
    let area = domain.area();
    for _ in 0..epochs {
        let step = run.step;
        let batch = domain.sample_interior(batch_size, &mut batch_rng(schedule.seed, step));
        hooks.on_batch(stage, step, &batch);
        let eval = mc_loss_gradient(&run.params, lift, &batch, cfg, area).map_err(|e| Error::NumericFailure {
            context: format!("step {step} ({stage:?}): {e}"),
        })?;
        run.optimizer.step(&mut run.params.theta, &eval.grad).map_err(|e| Error::NumericFailure {
            context: format!("step {step} ({stage:?}): {e}"),
        })?;
        run.step += 1;
        if schedule.metrics_every > 0 && run.step.is_multiple_of(schedule.metrics_every) {
            let row = MetricsRow {
                step: run.step,
                energy: eval.energy,
                defect: eval.defect_sq.sqrt(),
                istar: eval.istar,
                elapsed_s: run.elapsed(),
            };
            info!(
                "step {} {:?}: E {:.4} C {:.3e} I* {:.4}",
                row.step, stage, row.energy, row.defect, row.istar
            );
            hooks.on_metrics(&row)?;
            run.metrics.push(row);
        }
        hooks.after_step(run)?;
    }
    Ok(())
}

/// Pre-trains on Ω₁ … Ωₙ₋₁ for `epoch_pre` steps each, then trains on Ω.
///
/// Resumes from `run.step`: stages already completed are skipped and a partly
/// completed stage continues where it stopped.
pub fn run_schedule(
    run: &mut TrainingRun,
    full: &PlateDomain,
    lift: &BoundaryLift,
    cfg: &EnergyConfig,
    schedule: &Schedule,
    hooks: &mut dyn TrainHooks,
) -> Result<()> {
    if let Some(chain) = &schedule.chain {
        if chain.domains.last() != Some(full) {
            return Err(Error::InvalidConfig("subdomain chain does not end with the full domain".into()));
        }
    }
    let mut start = 0u64;
    for (index, (stage, domain, steps)) in schedule.stages(full).into_iter().enumerate() {
        let end = start + steps;
        if run.step < end {
            if run.step == start {
                if index > 0 && !schedule.carry_moments {
                    run.optimizer.reset();
                }
                hooks.on_stage_start(stage, domain, run);
            }
            let remaining = end - run.step.max(start);
            train_on_domain(run, domain, lift, cfg, schedule, remaining, stage, hooks)?;
        }
        start = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::edge_lift;
    use crate::geometry::standard_plate;
    use crate::network::Architecture;

    #[test]
    fn first_adam_step_has_unit_normalized_size() {
        let mut adam = AdamState::new(1, 1e-3);
        let mut p = [2.0];
        adam.step(&mut p, &[0.5]).unwrap();
        assert_eq!(adam.t, 1);
        let moved = 2.0 - p[0];
        assert!((moved - 1e-3).abs() < 1e-3 * 1e-7, "{moved}");
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = AdamState::new(3, 1e-3);
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut adam = AdamState::new(2, 1e-3);
        let mut p = [1.0, 1.0];
        assert!(adam.step(&mut p, &[0.1, f64::NAN]).is_err());
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut adam = AdamState::new(4, 1e-3);
        let mut p = [0.1, 0.2, 0.3, 0.4];
        adam.step(&mut p, &[0.3, -1.0, 1e-9, 7.0]).unwrap();
        let path = dir.path().join("opt.txt");
        adam.save(&path).unwrap();
        assert_eq!(AdamState::load(&path).unwrap(), adam);
    }

    fn small_setup() -> (NetworkParameters, BoundaryLift, EnergyConfig) {
        (
            NetworkParameters::init(Architecture::new(2, 6), 1),
            edge_lift(&standard_plate()).unwrap(),
            EnergyConfig::isotropic(1.0, 500.0).unwrap(),
        )
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (params, lift, cfg) = small_setup();
        let mut run = TrainingRun::new(params.clone(), 1e-3);
        let schedule = Schedule::direct(0, 3);
        train_on_domain(&mut run, &standard_plate(), &lift, &cfg, &schedule, 0, Stage::Main, &mut NoHooks).unwrap();
        assert_eq!(run.params, params);
        assert!(run.metrics.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (params, lift, cfg) = small_setup();
        let dom = standard_plate();
        let mut schedule = Schedule::direct(12, 5);
        schedule.batch_size = Some(40);
        schedule.metrics_every = 3;

        let mut a = TrainingRun::new(params.clone(), 1e-3);
        run_schedule(&mut a, &dom, &lift, &cfg, &schedule, &mut NoHooks).unwrap();
        let mut b = TrainingRun::new(params.clone(), 1e-3);
        run_schedule(&mut b, &dom, &lift, &cfg, &schedule, &mut NoHooks).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.len(), 4);
        assert!(a.metrics.iter().zip(&b.metrics).all(|(x, y)| x.energy.to_bits() == y.energy.to_bits()));
        assert!(a.metrics.windows(2).all(|w| w[0].step < w[1].step));

        let mut partial = Schedule::direct(7, 5);
        partial.batch_size = Some(40);
        let mut c = TrainingRun::new(params, 1e-3);
        run_schedule(&mut c, &dom, &lift, &cfg, &partial, &mut NoHooks).unwrap();
        let mut resumed = TrainingRun::resume(c.params.clone(), c.optimizer.clone(), c.step);
        run_schedule(&mut resumed, &dom, &lift, &cfg, &schedule, &mut NoHooks).unwrap();
        assert_eq!(resumed.params, a.params);
        assert_eq!(resumed.optimizer, a.optimizer);
    }

    struct StageLog {
        starts: Vec<(Stage, u64, u64)>,
        ends: Vec<u64>,
        last: Option<Stage>,
    }

    impl TrainHooks for StageLog {
        fn on_stage_start(&mut self, stage: Stage, _domain: &PlateDomain, run: &TrainingRun) {
            self.starts.push((stage, run.step, run.optimizer.checksum()));
        }

        fn on_batch(&mut self, stage: Stage, _step: u64, _batch: &[Point]) {
            self.last = Some(stage);
        }

        fn after_step(&mut self, run: &TrainingRun) -> Result<()> {
            self.ends.push(run.optimizer.checksum());
            Ok(())
        }
    }

    #[test]
    fn moments_carry_across_stages() {
        let (params, lift, cfg) = small_setup();
        let dom = standard_plate();
        let mut schedule = Schedule::direct(2, 5);
        schedule.chain = Some(dom.decompose(3).unwrap());
        schedule.epoch_pre = 3;
        schedule.batch_size = Some(16);
        let mut log = StageLog { starts: vec![], ends: vec![], last: None };
        let mut run = TrainingRun::new(params.clone(), 1e-3);
        run_schedule(&mut run, &dom, &lift, &cfg, &schedule, &mut log).unwrap();
        assert_eq!(run.step, 8);
        let stages: Vec<_> = log.starts.iter().map(|s| (s.0, s.1)).collect();
        assert_eq!(stages, vec![(Stage::Pretrain(0), 0), (Stage::Pretrain(1), 3), (Stage::Main, 6)]);
        assert_eq!(log.starts[1].2, log.ends[2]);
        assert_eq!(log.starts[2].2, log.ends[5]);
        assert_eq!(run.optimizer.t, 8);

        schedule.carry_moments = false;
        let mut run = TrainingRun::new(params, 1e-3);
        run_schedule(&mut run, &dom, &lift, &cfg, &schedule, &mut NoHooks).unwrap();
        assert_eq!(run.optimizer.t, 2);
    }

    #[test]
    fn default_batch_is_sixteen_per_unit_area() {
        let schedule = Schedule::direct(1, 0);
        assert_eq!(schedule.batch_size_for(&standard_plate()), 640);
        let chain = standard_plate().decompose(5).unwrap();
        assert_eq!(schedule.batch_size_for(&chain.domains[0]), 128);
    }
}
