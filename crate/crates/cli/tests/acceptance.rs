//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Long tiers are opt-in: `BILAYER_ACCEPTANCE_FULL=1` runs the three-seed
//! 2e5-step cylinder runs, `BILAYER_ACCEPTANCE_EXTENDED=1` the report-only
//! reproductions of the larger experiments.

use std::cell::RefCell;
use std::fs;
use std::process::ExitCode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bilayer_cli::oracle::oracle_suite;
use bilayer_cli::presets::preset;
use bilayer_cli::runner::{run_experiment, RunOutcome, METRICS_FILE};
use bilayer_core::autodiff::seed_input;
use bilayer_core::boundary::edge_lift;
use bilayer_core::energy::{density, estimate, grid_quadrature, mc_loss_gradient, EnergyConfig, NetworkDeformation};
use bilayer_core::evaluation::{ReferenceSolution, Shape};
use bilayer_core::geometry::{standard_plate, PlateDomain};
use bilayer_core::network::{forward, NetworkParameters};
use bilayer_core::trainer::{run_schedule, Stage, TrainHooks, TrainingRun};
use bilayer_core::Point;

type Outcome = Result<String, String>;

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cylinder_quadrature() -> Outcome {
    let dom = standard_plate();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for alpha in [1.0, 2.5, 5.0, 10.0] {
        let exact = 20.0 * alpha * alpha;
        let cfg = EnergyConfig::isotropic(alpha, 500.0).map_err(|e| e.to_string())?;
        let r = ReferenceSolution::cylinder(alpha, &dom).map_err(|e| e.to_string())?;
        let pts = dom.sample_interior(400_000, &mut rng);
        let mc = estimate(&r, &pts, &cfg, dom.area()).map_err(|e| e.to_string())?;
        let grid = grid_quadrature(&r, &dom, &cfg, 1000, 400).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max((mc.energy - exact).abs() / exact);
        worst.1 = worst.1.max((grid.energy - exact).abs() / exact);
        worst.2 = worst.2.max(mc.defect()).max(grid.defect());
    }
    verdict(
        worst.0 <= 5e-3 && worst.1 <= 1e-6 && worst.2 <= 1e-12,
        format!("MC rel {:.2e} (<= 5e-3), grid rel {:.2e} (<= 1e-6), C {:.2e} (<= 1e-12)", worst.0, worst.1, worst.2),
    )
}

fn proposition_oracles() -> Outcome {
    let report = oracle_suite().map_err(|e| e.to_string())?;
    let max_i = report.cases.iter().map(|c| c.penalized).fold(f64::MIN, f64::max);
    verdict(
        report.passed(),
        format!("{} cases, max rel dev {:.2e} (<= 1e-3), max I~ {:.4e} (< 0)", report.cases.len(), report.max_deviation(), max_i),
    )
}

/// Single-sample `e + βc²` evaluated without the tape or the traced backward pass.
fn point_loss(params: &NetworkParameters, theta: &[f64], lift: &bilayer_core::boundary::BoundaryLift, cfg: &EnergyConfig, x: Point) -> f64 {
    let y = forward(&params.arch, theta, seed_input::<f64>(x));
    let d = density(&lift.apply(&y, x), cfg);
    d.e + cfg.beta * d.c2
}

fn differentiation() -> Outcome {
    let dom = standard_plate();
    let lift = edge_lift(&dom).map_err(|e| e.to_string())?;
    let cfg = EnergyConfig::isotropic(1.0, 500.0).map_err(|e| e.to_string())?;
    let arch = preset("example1").unwrap().architecture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut grad_err, mut d1_err, mut d2_err) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100u64 {
        let params = NetworkParameters::init(arch, 1000 + case);
        let x = dom.sample_interior(1, &mut rng)[0];
        let eval = mc_loss_gradient(&params, &lift, &[x], &cfg, 1.0).map_err(|e| e.to_string())?;
        let mut theta = params.theta.clone();
        let scale = eval.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for k in 0..theta.len() {
            let h = 1e-4 * theta[k].abs().max(1.0);
            let t0 = theta[k];
            theta[k] = t0 + h;
            let fp = point_loss(&params, &theta, &lift, &cfg, x);
            theta[k] = t0 - h;
            let fm = point_loss(&params, &theta, &lift, &cfg, x);
            theta[k] = t0;
            let fd = (fp - fm) / (2.0 * h);
            grad_err = grad_err.max((eval.grad[k] - fd).abs() / scale);
        }

        let def = NetworkDeformation { params: &params, lift: &lift };
        let u = bilayer_core::energy::Deformation::jet(&def, x);
        let val = |p: Point| bilayer_core::energy::Deformation::jet(&def, p).map(|j| j.value);
        let shift = |dx: f64, dy: f64| val([x[0] + dx, x[1] + dy]);
        let h1 = 1e-6;
        let h2 = 2e-4;
        for c in 0..3 {
            let norm = |v: f64| v.abs().max(1.0);
            for (k, (dx, dy)) in [(h1, 0.0), (0.0, h1)].into_iter().enumerate() {
                let fd = (shift(dx, dy)[c] - shift(-dx, -dy)[c]) / (2.0 * h1);
                d1_err = d1_err.max((u[c].d1[k] - fd).abs() / norm(u[c].d1[k]));
            }
            let f0 = u[c].value;
            let fd11 = (shift(h2, 0.0)[c] - 2.0 * f0 + shift(-h2, 0.0)[c]) / (h2 * h2);
            let fd22 = (shift(0.0, h2)[c] - 2.0 * f0 + shift(0.0, -h2)[c]) / (h2 * h2);
            let fd12 = (shift(h2, h2)[c] - shift(h2, -h2)[c] - shift(-h2, h2)[c] + shift(-h2, -h2)[c]) / (4.0 * h2 * h2);
            for (p, fd) in [fd11, fd12, fd22].into_iter().enumerate() {
                d2_err = d2_err.max((u[c].d2[p] - fd).abs() / norm(u[c].d2[p]));
            }
        }
    }
    verdict(
        grad_err <= 1e-5 && d1_err <= 1e-6 && d2_err <= 1e-4,
        format!("grad rel {grad_err:.2e} (<= 1e-5), d1 {d1_err:.2e} (<= 1e-6), d2 {d2_err:.2e} (<= 1e-4)"),
    )
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (sxy, sxx) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    sxy / sxx
}

fn cylinder_run(name: &str, seed: u64, epochs: u64) -> Result<RunOutcome, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = preset("example1").unwrap();
    cfg.name = name.into();
    cfg.schedule.epochs = epochs;
    cfg.run.seed = seed;
    cfg.network.seed = seed;
    cfg.run.export_every = 0;
    cfg.run.checkpoint_every = 0;
    run_experiment(&cfg, root.path()).map_err(|e| e.to_string())
}

fn smoke_tier() -> Outcome {
    let out = cylinder_run("smoke", 0, 20_000)?;
    let rows = &out.metrics;
    let tail = &rows[rows.len() - rows.len() / 4..];
    let slope = least_squares_slope(&tail.iter().map(|r| (r.step as f64, r.energy)).collect::<Vec<_>>());
    let t = out.test;
    verdict(
        t.energy <= 30.0 && t.defect <= 0.2 && slope < 0.0,
        format!("E {:.3} (<= 30), C {:.3e} (<= 0.2), last-quartile dE/dstep {slope:.3e} (< 0)", t.energy, t.defect),
    )
}

fn full_tier() -> Outcome {
    let mut lines = Vec::new();
    let mut any = false;
    for seed in 0..3 {
        let t = cylinder_run(&format!("full{seed}"), seed, 200_000)?.test;
        let e_l2 = t.l2_error.unwrap_or(f64::NAN);
        let ok = t.shape == Some(Shape::Cylinder) && (19.5..=20.6).contains(&t.energy) && t.defect <= 5e-2 && e_l2 <= 8e-2;
        any |= ok;
        lines.push(format!("seed {seed}: E {:.3} C {:.3e} e_L2 {e_l2:.3e}", t.energy, t.defect));
    }
    verdict(any, lines.join("; "))
}

#[derive(Default)]
struct StageLog {
    steps: Vec<(Stage, u64, bool)>,
    domains: Vec<PlateDomain>,
}

struct Recorder<'a> {
    chain: &'a [PlateDomain],
    log: RefCell<StageLog>,
}

impl TrainHooks for Recorder<'_> {
    fn on_stage_start(&mut self, _stage: Stage, domain: &PlateDomain, _run: &TrainingRun) {
        self.log.borrow_mut().domains.push(domain.clone());
    }

    fn on_batch(&mut self, stage: Stage, step: u64, batch: &[Point]) {
        let dom = match stage {
            Stage::Pretrain(i) => &self.chain[i],
            Stage::Main => self.chain.last().unwrap(),
        };
        let inside = batch.iter().all(|&p| dom.contains(p));
        self.log.borrow_mut().steps.push((stage, step, inside));
    }
}

fn pretraining_mechanics() -> Outcome {
    let mut cfg = preset("example4-pretrained").unwrap();
    cfg.schedule.epoch_pre = 100;
    cfg.schedule.epochs = 20;
    let dom = cfg.domain().map_err(|e| e.to_string())?;
    let schedule = cfg.schedule(&dom).map_err(|e| e.to_string())?;
    let chain = schedule.chain.clone().ok_or("no subdomain chain")?;
    let lift = edge_lift(&dom).map_err(|e| e.to_string())?;
    let energy = cfg.energy_config().map_err(|e| e.to_string())?;
    let mut run = TrainingRun::new(NetworkParameters::init(cfg.architecture(), 0), 1e-3);
    let mut rec = Recorder {
        chain: &chain.domains,
        log: RefCell::default(),
    };
    run_schedule(&mut run, &dom, &lift, &energy, &schedule, &mut rec).map_err(|e| e.to_string())?;
    let log = rec.log.into_inner();
    let pre = log.steps.iter().filter(|s| matches!(s.0, Stage::Pretrain(_))).count();
    let ordered = log.steps.iter().enumerate().all(|(k, s)| {
        s.1 == k as u64
            && match s.0 {
                Stage::Pretrain(i) => k / 100 == i,
                Stage::Main => k >= 400,
            }
    });
    let inside = log.steps.iter().all(|s| s.2);
    let slabs = chain.domains.iter().enumerate().all(|(i, d)| {
        (d.outer.x1 - (-5.0 + 2.0 * (i + 1) as f64)).abs() < 1e-12 && d.outer.x0 == -5.0 && d.outer.y0 == -2.0 && d.outer.y1 == 2.0
    });
    let stages_seen = log.domains == chain.domains;

    let direct = preset("example4").unwrap();
    let mut pretrained = preset("example4-pretrained").unwrap();
    pretrained.schedule = direct.schedule.clone();
    pretrained.name = direct.name.clone();
    let only_schedule = pretrained == direct;

    verdict(
        pre == 400 && run.step == 420 && ordered && inside && slabs && stages_seen && only_schedule,
        format!(
            "{pre} pre-training steps (400), in-slab batches {inside}, nested slabs {slabs}, stage order {ordered}, configs differ only in schedule {only_schedule}"
        ),
    )
}

fn extended_reproductions() -> String {
    let cases: [(&str, f64); 7] = [
        ("example2", 125.01),
        ("example3-pretrained", 500.02),
        ("example4-pretrained", 2000.76),
        ("oshape", 278.36),
        ("corkscrew", 52.53),
        ("cigar", 20.45),
        ("helix", 1.90),
    ];
    let root = tempfile::tempdir().expect("tempdir");
    cases
        .iter()
        .map(|&(name, want)| {
            let mut cfg = preset(name).unwrap();
            cfg.run.export_every = 0;
            match run_experiment(&cfg, root.path()) {
                Ok(out) => {
                    let rel = (out.test.energy - want) / want;
                    format!("{name} E {:.3} vs {want} ({:+.1}%{})", out.test.energy, 100.0 * rel, if rel.abs() <= 0.05 { "" } else { ", outside 5%" })
                }
                Err(e) => format!("{name}: {e}"),
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn determinism() -> Outcome {
    let read = |tag: &str| -> Result<Vec<u8>, String> {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = preset("example1").unwrap();
        cfg.name = tag.into();
        cfg.schedule.epochs = 400;
        cfg.run.metrics_every = 50;
        cfg.run.export_every = 0;
        cfg.run.deterministic = true;
        let out = run_experiment(&cfg, root.path()).map_err(|e| e.to_string())?;
        fs::read(out.dir.join(METRICS_FILE)).map_err(|e| e.to_string())
    };
    let (a, b) = (read("a")?, read("b")?);
    verdict(a == b && !a.is_empty(), format!("{} bytes, identical {}", a.len(), a == b))
}

fn main() -> ExitCode {
    // Optional argument: run only criteria whose number starts with it.
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |n: &str| only.as_deref().is_none_or(|o| n.starts_with(o));
    let mut failed = false;
    let mut report = |label: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("criterion {label}: PASS  {detail}"),
        Err(detail) => {
            failed = true;
            println!("criterion {label}: FAIL  {detail}");
        }
    };
    if wanted("1") {
        report("1 (cylinder quadrature)", cylinder_quadrature());
    }
    if wanted("2") {
        report("2 (proposition oracles)", proposition_oracles());
    }
    if wanted("3") {
        report("3 (differentiation)", differentiation());
    }
    if wanted("4") {
        report("4 (Example 1 smoke tier)", smoke_tier());
        if env_flag("BILAYER_ACCEPTANCE_FULL") {
            report("4 (Example 1 full tier)", full_tier());
        } else {
            println!("criterion 4 (Example 1 full tier): SKIPPED  set BILAYER_ACCEPTANCE_FULL=1");
        }
    }
    if wanted("5") {
        report("5 (pre-training mechanics)", pretraining_mechanics());
    }
    if wanted("6") {
        if env_flag("BILAYER_ACCEPTANCE_EXTENDED") {
            println!("criterion 6 (extended, not gating): REPORT  {}", extended_reproductions());
        } else {
            println!("criterion 6 (extended, not gating): SKIPPED  set BILAYER_ACCEPTANCE_EXTENDED=1");
        }
    }
    if wanted("7") {
        report("7 (determinism)", determinism());
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
