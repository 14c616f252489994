//! Built-in experiment configurations.

use crate::config::{
    BoundarySection, DomainSection, EnergySection, EvaluationSection, ExperimentConfig, LiftKind, NetworkSection,
    RunSection, ScheduleSection,
};

pub const NAMES: [&str; 11] = [
    "example1",
    "example2",
    "example3",
    "example3-pretrained",
    "example4",
    "example4-pretrained",
    "oshape",
    "oshape-corner",
    "corkscrew",
    "cigar",
    "helix",
];

const PLATE: [f64; 4] = [-5.0, 5.0, -2.0, 2.0];

fn left_edge() -> Vec<[[f64; 2]; 2]> {
    vec![[[-5.0, -2.0], [-5.0, 2.0]]]
}

fn isotropic(alpha: f64) -> [[f64; 2]; 2] {
    [[-alpha, 0.0], [0.0, -alpha]]
}

fn base(name: &str, domain: DomainSection, z: [[f64; 2]; 2], beta: f64, epochs: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        domain,
        boundary: BoundarySection::default(),
        energy: EnergySection {
            z,
            beta,
            formulation: Default::default(),
            normalize_normal: false,
            source: [0.0; 3],
        },
        network: NetworkSection::default(),
        schedule: ScheduleSection {
            epochs,
            ..ScheduleSection::default()
        },
        run: RunSection::default(),
        evaluation: EvaluationSection::default(),
    }
}

fn clamped_cylinder(name: &str, alpha: f64, beta: f64, epochs: u64, pretrain: bool) -> ExperimentConfig {
    let mut cfg = base(
        name,
        DomainSection {
            outer: PLATE,
            hole: None,
            clamp: left_edge(),
        },
        isotropic(alpha),
        beta,
        epochs,
    );
    cfg.evaluation.reference_alpha = Some(alpha);
    if pretrain {
        cfg.schedule.pretrain_subdomains = 5;
    }
    cfg
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "example1" => clamped_cylinder(name, 1.0, 500.0, 200_000, false),
        "example2" => clamped_cylinder(name, 2.5, 500.0, 1_000_000, false),
        "example3" => clamped_cylinder(name, 5.0, 1000.0, 2_000_000, false),
        "example3-pretrained" => clamped_cylinder(name, 5.0, 100.0, 500_000, true),
        "example4" => clamped_cylinder(name, 10.0, 1000.0, 3_000_000, false),
        "example4-pretrained" => clamped_cylinder(name, 10.0, 1000.0, 2_000_000, true),
        "oshape" => {
            let mut cfg = clamped_cylinder(name, 5.0, 1000.0, 1_000_000, true);
            cfg.domain.hole = Some([-10.0 / 3.0, 10.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0]);
            cfg
        }
        "oshape-corner" => {
            let mut cfg = base(
                name,
                DomainSection {
                    outer: PLATE,
                    hole: Some([-13.0 / 3.0, 13.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0]),
                    clamp: vec![[[-5.0, -2.0], [-5.0, -4.0 / 3.0]], [[-5.0, -2.0], [-13.0 / 3.0, -2.0]]],
                },
                isotropic(1.0),
                500.0,
                1_000_000,
            );
            cfg.boundary = BoundarySection {
                lift: LiftKind::Trained,
                g1_target: Some([1.0, 1.0, 19.0 / 3.0]),
                ..BoundarySection::default()
            };
            cfg.schedule.pretrain_subdomains = 5;
            cfg
        }
        "corkscrew" => base(
            name,
            DomainSection {
                outer: [-2.0, 2.0, -3.0, 3.0],
                hole: None,
                clamp: vec![[[-2.0, -3.0], [2.0, -3.0]]],
            },
            [[-3.0, 2.0], [2.0, -3.0]],
            500.0,
            200_000,
        ),
        "cigar" => base(
            name,
            DomainSection {
                outer: PLATE,
                hole: None,
                clamp: vec![],
            },
            [[3.0, -2.0], [-2.0, 3.0]],
            500.0,
            200_000,
        ),
        "helix" => base(
            name,
            DomainSection {
                outer: [-8.0, 8.0, -0.5, 0.5],
                hole: None,
                clamp: vec![],
            },
            [[-1.0, 1.5], [1.5, -1.0]],
            500.0,
            200_000,
        ),
        _ => return None,
    };
    Some(cfg)
}
