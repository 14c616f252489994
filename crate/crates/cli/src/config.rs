//! TOML experiment configuration. See `docs/config.md` for the schema.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use bilayer_core::energy::{EnergyConfig, Formulation};
use bilayer_core::evaluation::{ReferenceSolution, ShapeThresholds};
use bilayer_core::geometry::{PlateDomain, Rect, Segment};
use bilayer_core::network::Architecture;
use bilayer_core::trainer::Schedule;
use bilayer_core::Point;

/// A configuration problem, anchored to a line of the source when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: DomainSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    pub energy: EnergySection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// `[x0, x1, y0, y1]`.
    pub outer: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole: Option<[f64; 4]>,
    /// Clamped segments as pairs of end points; empty for a free plate.
    #[serde(default)]
    pub clamp: Vec<[Point; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LiftKind {
    /// Free if nothing is clamped, squared distance for one full edge, trained otherwise.
    #[default]
    Auto,
    Edge,
    Trained,
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default)]
    pub lift: LiftKind,
    /// `[a, b, c]` for the target `a x₁ + b x₂ + c` of a trained g₁ on the free boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1_target: Option<[f64; 3]>,
    #[serde(default = "defaults::g1_steps")]
    pub g1_steps: usize,
    #[serde(default)]
    pub g1_seed: u64,
}

impl Default for BoundarySection {
    fn default() -> Self {
        BoundarySection {
            lift: LiftKind::Auto,
            g1_target: None,
            g1_steps: defaults::g1_steps(),
            g1_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FormulationName {
    #[default]
    Original,
    Reshaped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub z: [[f64; 2]; 2],
    pub beta: f64,
    #[serde(default)]
    pub formulation: FormulationName,
    #[serde(default)]
    pub normalize_normal: bool,
    #[serde(default)]
    pub source: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "defaults::blocks")]
    pub blocks: usize,
    #[serde(default = "defaults::width")]
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            blocks: defaults::blocks(),
            width: defaults::width(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Number `n` of nested subdomains; 0 skips pre-training.
    #[serde(default)]
    pub pretrain_subdomains: usize,
    #[serde(default = "defaults::epoch_pre")]
    pub epoch_pre: u64,
    #[serde(default = "defaults::epochs")]
    pub epochs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::yes")]
    pub carry_moments: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            pretrain_subdomains: 0,
            epoch_pre: defaults::epoch_pre(),
            epochs: defaults::epochs(),
            batch_size: None,
            learning_rate: defaults::learning_rate(),
            carry_moments: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Seed of the training batches.
    #[serde(default)]
    pub seed: u64,
    /// Relative to the output root unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default = "defaults::metrics_every")]
    pub metrics_every: u64,
    #[serde(default = "defaults::every_1e4")]
    pub checkpoint_every: u64,
    /// 0 disables mesh snapshots.
    #[serde(default = "defaults::every_1e4")]
    pub export_every: u64,
    #[serde(default = "defaults::export_resolution")]
    pub export_resolution: [usize; 2],
    /// 0 lets the thread pool decide.
    #[serde(default)]
    pub threads: usize,
    /// One thread and a zero wall-clock column, so reruns give identical files.
    #[serde(default)]
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            output_dir: None,
            metrics_every: defaults::metrics_every(),
            checkpoint_every: defaults::every_1e4(),
            export_every: defaults::every_1e4(),
            export_resolution: defaults::export_resolution(),
            threads: 0,
            deterministic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Curvature α of the cylinder used as reference solution, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_alpha: Option<f64>,
    #[serde(default = "defaults::test_seed")]
    pub test_seed: u64,
    #[serde(default = "defaults::max_l2_error")]
    pub max_l2_error: f64,
    #[serde(default = "defaults::max_energy_error")]
    pub max_energy_error: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            reference_alpha: None,
            test_seed: defaults::test_seed(),
            max_l2_error: defaults::max_l2_error(),
            max_energy_error: defaults::max_energy_error(),
        }
    }
}

mod defaults {
    pub fn g1_steps() -> usize {
        50_000
    }
    pub fn blocks() -> usize {
        5
    }
    pub fn width() -> usize {
        10
    }
    pub fn epoch_pre() -> u64 {
        50_000
    }
    pub fn epochs() -> u64 {
        1_000_000
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn yes() -> bool {
        true
    }
    pub fn metrics_every() -> u64 {
        1000
    }
    pub fn every_1e4() -> u64 {
        10_000
    }
    pub fn export_resolution() -> [usize; 2] {
        [101, 41]
    }
    pub fn test_seed() -> u64 {
        0x7e57
    }
    pub fn max_l2_error() -> f64 {
        0.15
    }
    pub fn max_energy_error() -> f64 {
        0.10
    }
}

/// Line (1-based) of `key = ...` inside `[section]`, if present.
pub fn key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn rect(r: &[f64; 4]) -> Rect {
    Rect::new(r[0], r[1], r[2], r[3])
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| ConfigError {
            line: e.span().map(|s| source[..s.start].matches('\n').count() + 1),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|(section, key, message)| ConfigError {
            line: key_line(source, section, key),
            message: format!("[{section}] {key}: {message}"),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&source).map_err(|e| ConfigError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let domain = self.domain().map_err(|e| ("domain", "outer", e.to_string()))?;
        self.energy_config().map_err(|e| ("energy", "beta", e.to_string()))?;
        let n = &self.network;
        if n.blocks == 0 || n.width == 0 {
            return Err(("network", if n.blocks == 0 { "blocks" } else { "width" }, "must be positive".into()));
        }
        let s = &self.schedule;
        if s.pretrain_subdomains == 1 {
            return Err(("schedule", "pretrain_subdomains", "needs at least 2 subdomains (0 disables)".into()));
        }
        if s.pretrain_subdomains >= 2 {
            domain
                .decompose(s.pretrain_subdomains)
                .map_err(|e| ("schedule", "pretrain_subdomains", e.to_string()))?;
            if s.epoch_pre == 0 {
                return Err(("schedule", "epoch_pre", "must be positive".into()));
            }
        }
        if s.batch_size == Some(0) {
            return Err(("schedule", "batch_size", "must be positive".into()));
        }
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            return Err(("schedule", "learning_rate", "must be positive".into()));
        }
        if self.run.export_resolution.iter().any(|&r| r < 2) {
            return Err(("run", "export_resolution", "needs at least 2 points per axis".into()));
        }
        if self.run.metrics_every == 0 {
            return Err(("run", "metrics_every", "must be positive".into()));
        }
        match (self.boundary.lift, domain.is_free()) {
            (LiftKind::Free, false) => return Err(("boundary", "lift", "free lift on a clamped domain".into())),
            (LiftKind::Edge | LiftKind::Trained, true) => {
                return Err(("boundary", "lift", "nothing is clamped; use \"free\" or \"auto\"".into()))
            }
            _ => {}
        }
        if self.boundary.lift == LiftKind::Edge {
            bilayer_core::boundary::edge_lift(&domain).map_err(|e| ("boundary", "lift", e.to_string()))?;
        }
        if self.needs_trained_g1(&domain) && self.boundary.g1_target.is_none() {
            return Err(("boundary", "g1_target", "required for a trained g1".into()));
        }
        if let Some(alpha) = self.evaluation.reference_alpha {
            ReferenceSolution::cylinder(alpha, &domain).map_err(|e| ("evaluation", "reference_alpha", e.to_string()))?;
        }
        Ok(())
    }

    pub fn needs_trained_g1(&self, domain: &PlateDomain) -> bool {
        match self.boundary.lift {
            LiftKind::Trained => true,
            LiftKind::Auto => !domain.is_free() && bilayer_core::boundary::edge_lift(domain).is_err(),
            _ => false,
        }
    }

    pub fn domain(&self) -> bilayer_core::Result<PlateDomain> {
        let d = &self.domain;
        PlateDomain::new(
            rect(&d.outer),
            d.hole.as_ref().map(rect),
            d.clamp.iter().map(|s| Segment::new(s[0], s[1])).collect(),
        )
    }

    pub fn energy_config(&self) -> bilayer_core::Result<EnergyConfig> {
        let e = &self.energy;
        let mut cfg = EnergyConfig::new(e.z, e.beta)?.with_formulation(match e.formulation {
            FormulationName::Original => Formulation::Original,
            FormulationName::Reshaped => Formulation::Reshaped,
        });
        cfg.source = e.source;
        cfg.normalize_normal = e.normalize_normal;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.network.blocks, self.network.width)
    }

    pub fn schedule(&self, domain: &PlateDomain) -> bilayer_core::Result<Schedule> {
        let s = &self.schedule;
        Ok(Schedule {
            chain: match s.pretrain_subdomains {
                0 => None,
                n => Some(domain.decompose(n)?),
            },
            epoch_pre: s.epoch_pre,
            epochs: s.epochs,
            batch_size: s.batch_size,
            seed: self.run.seed,
            metrics_every: self.run.metrics_every,
            carry_moments: s.carry_moments,
        })
    }

    pub fn reference(&self, domain: &PlateDomain) -> bilayer_core::Result<Option<ReferenceSolution>> {
        self.evaluation
            .reference_alpha
            .map(|a| ReferenceSolution::cylinder(a, domain))
            .transpose()
    }

    pub fn thresholds(&self) -> ShapeThresholds {
        ShapeThresholds {
            max_l2_error: self.evaluation.max_l2_error,
            max_energy_error: self.evaluation.max_energy_error,
        }
    }

    pub fn output_dir(&self, root: &Path) -> std::path::PathBuf {
        root.join(self.run.output_dir.clone().unwrap_or_else(|| self.name.clone()))
    }
}
