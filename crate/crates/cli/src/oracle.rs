//! Closed-form checks of the reshaped-energy witnesses by grid quadrature.

use std::fmt;

use bilayer_core::energy::{grid_quadrature, Prop1Witness, Prop2Witness};
use bilayer_core::geometry::standard_plate;

pub const TOLERANCE: f64 = 1e-3;
const GRID: [usize; 2] = [1000, 400];

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCase {
    pub label: String,
    pub energy: f64,
    pub energy_expected: f64,
    pub defect: f64,
    pub defect_expected: f64,
    /// `Ĩ = Ẽ + βC²`.
    pub penalized: f64,
    /// Upper bound on `Ĩ` that the case must respect (attained exactly by the
    /// first witness at β = 1, hence compared with the relative tolerance).
    pub penalized_bound: f64,
}

impl OracleCase {
    pub fn deviation(&self) -> f64 {
        let rel = |got: f64, want: f64| ((got - want) / want).abs();
        rel(self.energy, self.energy_expected).max(rel(self.defect, self.defect_expected))
    }

    pub fn passed(&self) -> bool {
        self.deviation() <= TOLERANCE
            && self.penalized < 0.0
            && self.penalized <= self.penalized_bound + TOLERANCE * self.penalized_bound.abs()
    }
}

impl fmt::Display for OracleCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<30} E~ {:>12.6} (want {:>12.6})  C {:>10.6} (want {:>10.6})  I~ {:>12.6} <= {:>10.3e}  dev {:.2e}  {}",
            self.label,
            self.energy,
            self.energy_expected,
            self.defect,
            self.defect_expected,
            self.penalized,
            self.penalized_bound,
            self.deviation(),
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn max_deviation(&self) -> f64 {
        self.cases.iter().map(OracleCase::deviation).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(OracleCase::passed)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for case in &self.cases {
            writeln!(f, "{case}")?;
        }
        write!(f, "max relative deviation {:.3e} (tolerance {TOLERANCE:e})", self.max_deviation())
    }
}

pub fn oracle_suite() -> bilayer_core::Result<OracleReport> {
    let dom = standard_plate();
    let area = dom.area();
    let mut cases = Vec::new();
    for beta in [1.0, 10.0, 100.0, 1000.0] {
        let w = Prop1Witness::new(beta);
        let cfg = w.config();
        let est = grid_quadrature(&w, &dom, &cfg, GRID[0], GRID[1])?;
        cases.push(OracleCase {
            label: format!("first witness b={beta}"),
            energy: est.energy,
            energy_expected: w.energy(area),
            defect: est.defect(),
            defect_expected: w.defect(area),
            penalized: est.penalized(beta),
            penalized_bound: -4.0 * area / (625.0 * beta),
        });
    }
    for (gamma, beta) in [(0.5, 16.0), (1.0, 9.0), (1.0, 100.0)] {
        let w = Prop2Witness::new(beta, gamma);
        let cfg = w.config();
        let est = grid_quadrature(&w, &dom, &cfg, GRID[0], GRID[1])?;
        cases.push(OracleCase {
            label: format!("second witness g={gamma} b={beta}"),
            energy: est.energy,
            energy_expected: w.energy(area),
            defect: est.defect(),
            defect_expected: w.defect(area),
            penalized: est.penalized(beta),
            penalized_bound: 0.0,
        });
    }
    Ok(OracleReport { cases })
}
