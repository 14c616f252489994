//! Bending energy, isometry defect and their Monte Carlo estimates.
//!
//! For a deformation `u: Ω → ℝ³` with `n = ∂₁u × ∂₂u` and `H_ij = n · ∂ᵢ∂ⱼu`:
//!
//! * formulation I:  `e = ½ |H + Z|² − f · u`
//! * formulation Ĩ:  `e = ½ |D²u|² + Σ H_ij Z_ij + ½ |Z|² − f · u`
//! * both:           `c² = |∇uᵀ∇u − Id₂|²`
//!
//! and the penalized loss is `|Ω|/N Σ (e + β c²)`.

use rayon::prelude::*;

use crate::autodiff::{seed_input, with_tape, Jet2, Real, Var};
use crate::boundary::{BoundaryLift, SurfaceJet};
use crate::error::{Error, Result};
use crate::geometry::PlateDomain;
use crate::network::{backward, forward, forward_traced, NetworkParameters, Trace};
use crate::Point;

pub type Mat2<T> = [[T; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Formulation {
    /// `E + β C²` with `E = ½ ∫ |H + Z|²`.
    #[default]
    Original,
    /// `Ẽ + β C²` with the energy rewritten through `|D²u|`.
    Reshaped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyConfig {
    /// Spontaneous curvature tensor, symmetric.
    pub z: Mat2<f64>,
    pub beta: f64,
    /// Constant body force.
    pub source: [f64; 3],
    pub formulation: Formulation,
    /// Use `n / |n|` in the second fundamental form instead of the raw cross product.
    pub normalize_normal: bool,
}

impl EnergyConfig {
    pub fn new(z: Mat2<f64>, beta: f64) -> Result<Self> {
        let cfg = EnergyConfig {
            z,
            beta,
            source: [0.0; 3],
            formulation: Formulation::Original,
            normalize_normal: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `Z = −α Id₂`.
    pub fn isotropic(alpha: f64, beta: f64) -> Result<Self> {
        Self::new([[-alpha, 0.0], [0.0, -alpha]], beta)
    }

    pub fn with_formulation(self, formulation: Formulation) -> Self {
        EnergyConfig { formulation, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("penalty beta must be positive, got {}", self.beta)));
        }
        if self.z[0][1] != self.z[1][0] {
            return Err(Error::InvalidConfig(format!("Z must be symmetric, got {:?}", self.z)));
        }
        if self.z.iter().flatten().chain(&self.source).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("Z and f must be finite".into()));
        }
        Ok(())
    }

    fn z_norm_sq(&self) -> f64 {
        self.z.iter().flatten().map(|z| z * z).sum()
    }
}

/// Densities of one sample point.
#[derive(Clone, Copy, Debug)]
pub struct PointEnergy<T> {
    pub e: T,
    pub c2: T,
    pub h: Mat2<T>,
}

fn column<T: Real>(u: &SurfaceJet<T>, k: usize) -> [T; 3] {
    [u[0].d1[k], u[1].d1[k], u[2].d1[k]]
}

fn second<T: Real>(u: &SurfaceJet<T>, p: usize) -> [T; 3] {
    [u[0].d2[p], u[1].d2[p], u[2].d2[p]]
}

fn dot3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    T::dot(a, b)
}

fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `n = ∂₁u × ∂₂u`, optionally normalized.
pub fn normal<T: Real>(u: &SurfaceJet<T>, normalize: bool) -> [T; 3] {
    let n = cross(&column(u, 0), &column(u, 1));
    if normalize {
        let inv = dot3(&n, &n).sqrt().recip();
        n.map(|c| c * inv)
    } else {
        n
    }
}

/// `H_ij = n · ∂ᵢ∂ⱼu`; symmetric by construction.
pub fn second_fundamental_form<T: Real>(u: &SurfaceJet<T>, normalize: bool) -> Mat2<T> {
    let n = normal(u, normalize);
    let h11 = dot3(&n, &second(u, 0));
    let h12 = dot3(&n, &second(u, 1));
    let h22 = dot3(&n, &second(u, 2));
    [[h11, h12], [h12, h22]]
}

/// `∇uᵀ∇u − Id₂`.
pub fn isometry_defect<T: Real>(u: &SurfaceJet<T>) -> Mat2<T> {
    let (a, b) = (column(u, 0), column(u, 1));
    let g12 = dot3(&a, &b);
    [[dot3(&a, &a).offset(-1.0), g12], [g12, dot3(&b, &b).offset(-1.0)]]
}

pub fn frobenius_sq<T: Real>(m: &Mat2<T>) -> T {
    let flat = [m[0][0], m[0][1], m[1][0], m[1][1]];
    T::dot(&flat, &flat)
}

pub fn density<T: Real>(u: &SurfaceJet<T>, cfg: &EnergyConfig) -> PointEnergy<T> {
    let h = second_fundamental_form(u, cfg.normalize_normal);
    let z = &cfg.z;
    let bending = match cfg.formulation {
        Formulation::Original => {
            let shifted = [
                [h[0][0].offset(z[0][0]), h[0][1].offset(z[0][1])],
                [h[1][0].offset(z[1][0]), h[1][1].offset(z[1][1])],
            ];
            frobenius_sq(&shifted).scale(0.5)
        }
        Formulation::Reshaped => {
            // |D²u|² counts the mixed derivative twice.
            let (u11, u12, u22) = (second(u, 0), second(u, 1), second(u, 2));
            let d2 = dot3(&u11, &u11) + dot3(&u12, &u12).scale(2.0) + dot3(&u22, &u22);
            let coupling = T::dot(
                &[h[0][0], h[0][1], h[1][0], h[1][1]],
                &[z[0][0], z[0][1], z[1][0], z[1][1]].map(T::constant),
            );
            (d2.scale(0.5) + coupling).offset(0.5 * cfg.z_norm_sq())
        }
    };
    let e = if cfg.source.iter().any(|&f| f != 0.0) {
        let value = [u[0].value, u[1].value, u[2].value];
        bending - dot3(&cfg.source.map(T::constant), &value)
    } else {
        bending
    };
    PointEnergy {
        e,
        c2: frobenius_sq(&isometry_defect(u)),
        h,
    }
}

/// A map `Ω → ℝ³` that can be evaluated with second derivatives.
pub trait Deformation: Sync {
    fn jet(&self, x: Point) -> SurfaceJet<f64>;
}

/// `û = g₁ ŷ + g₂` for fixed network parameters.
pub struct NetworkDeformation<'a> {
    pub params: &'a NetworkParameters,
    pub lift: &'a BoundaryLift,
}

impl Deformation for NetworkDeformation<'_> {
    fn jet(&self, x: Point) -> SurfaceJet<f64> {
        self.lift.apply(&self.params.forward(seed_input(x)), x)
    }
}

/// Monte Carlo or quadrature estimates at fixed parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyEstimate {
    /// `E` (or `Ẽ`).
    pub energy: f64,
    /// `C²`.
    pub defect_sq: f64,
}

impl EnergyEstimate {
    /// `C = ‖∇uᵀ∇u − Id₂‖_{L²}`.
    pub fn defect(&self) -> f64 {
        self.defect_sq.sqrt()
    }

    pub fn penalized(&self, beta: f64) -> f64 {
        self.energy + beta * self.defect_sq
    }
}

fn check_finite(pe: &PointEnergy<f64>, index: usize, x: Point) -> Result<()> {
    if pe.e.is_finite() && pe.c2.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure {
            context: format!("non-finite density (e = {}, c2 = {}) at sample {index} {x:?}", pe.e, pe.c2),
        })
    }
}

/// Weighted sum of densities; plain `|Ω|/N` weights give Monte Carlo.
fn weighted_estimate(def: &dyn Deformation, points: &[Point], weight: f64, cfg: &EnergyConfig) -> Result<EnergyEstimate> {
    const CHUNK: usize = 4096;
    let partial: Vec<Result<(f64, f64)>> = points
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let (mut e, mut c2) = (0.0, 0.0);
            for (i, &x) in chunk.iter().enumerate() {
                let pe = density(&def.jet(x), cfg);
                check_finite(&pe, ci * CHUNK + i, x)?;
                e += pe.e;
                c2 += pe.c2;
            }
            Ok((e, c2))
        })
        .collect();
    let (mut e, mut c2) = (0.0, 0.0);
    for p in partial {
        let (pe, pc) = p?;
        e += pe;
        c2 += pc;
    }
    Ok(EnergyEstimate {
        energy: weight * e,
        defect_sq: weight * c2,
    })
}

/// `|Ω|/N Σ` estimates of E and C² over `points`.
pub fn estimate(def: &dyn Deformation, points: &[Point], cfg: &EnergyConfig, area: f64) -> Result<EnergyEstimate> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty sample set".into()));
    }
    weighted_estimate(def, points, area / points.len() as f64, cfg)
}

/// Tensor-product midpoint rule over the outer rectangle, skipping hole cells.
pub fn grid_quadrature(def: &dyn Deformation, domain: &PlateDomain, cfg: &EnergyConfig, nx: usize, ny: usize) -> Result<EnergyEstimate> {
    let o = &domain.outer;
    let (hx, hy) = (o.width() / nx as f64, o.height() / ny as f64);
    let points: Vec<Point> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| [o.x0 + (i as f64 + 0.5) * hx, o.y0 + (j as f64 + 0.5) * hy]))
        .filter(|&p| domain.contains(p))
        .collect();
    weighted_estimate(def, &points, hx * hy, cfg)
}

/// Penalized Monte Carlo loss recorded on the caller's tape.
///
/// Returns `I*` as a tape node together with the plain estimates of E and C².
pub fn mc_loss<'t>(
    params: &NetworkParameters,
    theta: &[Var<'t>],
    lift: &BoundaryLift,
    batch: &[Point],
    cfg: &EnergyConfig,
    area: f64,
) -> Result<(Var<'t>, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let (sum, e, c2) = penalized_sum(params, theta, lift, batch, 0, cfg)?;
    let w = area / batch.len() as f64;
    Ok((sum.scale(w), w * e, w * c2))
}

fn penalized_sum<'t>(
    params: &NetworkParameters,
    theta: &[Var<'t>],
    lift: &BoundaryLift,
    points: &[Point],
    first_index: usize,
    cfg: &EnergyConfig,
) -> Result<(Var<'t>, f64, f64)> {
    let mut terms = Vec::with_capacity(points.len());
    let (mut e_sum, mut c2_sum) = (0.0, 0.0);
    for (i, &x) in points.iter().enumerate() {
        let yhat = forward(&params.arch, theta, seed_input(x));
        let u = lift.apply(&yhat, x);
        let pe = density(&u, cfg);
        let plain = PointEnergy {
            e: pe.e.value(),
            c2: pe.c2.value(),
            h: [[0.0; 2]; 2],
        };
        check_finite(&plain, first_index + i, x)?;
        e_sum += plain.e;
        c2_sum += plain.c2;
        terms.push(pe.e + pe.c2.scale(cfg.beta));
    }
    Ok((Var::sum(&terms), e_sum, c2_sum))
}

/// Loss value, batch estimates and parameter gradient for one optimizer step.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub istar: f64,
    pub energy: f64,
    pub defect_sq: f64,
    pub grad: Vec<f64>,
}

/// Samples per parallel work unit. Fixed so that the summation order, and therefore every
/// bit of the result, does not depend on the number of threads.
pub const SAMPLES_PER_TAPE: usize = 32;

/// Loss, energy and defect sums with the gradient of one chunk.
type ChunkSums = (f64, f64, f64, Vec<f64>);

/// `I*` and its gradient, with the batch split over independent tapes.
pub fn mc_loss_gradient(
    params: &NetworkParameters,
    lift: &BoundaryLift,
    batch: &[Point],
    cfg: &EnergyConfig,
    area: f64,
) -> Result<LossEvaluation> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let w = area / batch.len() as f64;
    let chunks: Vec<Result<ChunkSums>> = batch
        .par_chunks(SAMPLES_PER_TAPE)
        .enumerate()
        .map(|(ci, chunk)| {
            with_tape(|tape| {
                let mut trace = Trace::default();
                let mut grad = vec![0.0; params.len()];
                let (mut loss, mut e, mut c2) = (0.0, 0.0, 0.0);
                for (i, &x) in chunk.iter().enumerate() {
                    let y = forward_traced(&params.arch, &params.theta, seed_input(x), &mut trace);
                    tape.clear();
                    let leaves: Vec<Jet2<Var>> = y
                        .iter()
                        .map(|j| Jet2 {
                            value: tape.var(j.value),
                            d1: j.d1.map(|v| tape.var(v)),
                            d2: j.d2.map(|v| tape.var(v)),
                        })
                        .collect();
                    let pe = density(&lift.apply(&leaves, x), cfg);
                    let plain = PointEnergy {
                        e: pe.e.value(),
                        c2: pe.c2.value(),
                        h: [[0.0; 2]; 2],
                    };
                    check_finite(&plain, ci * SAMPLES_PER_TAPE + i, x)?;
                    let term = pe.e + pe.c2.scale(cfg.beta);
                    let flat: Vec<Var> = leaves.iter().flat_map(|j| [j.value, j.d1[0], j.d1[1], j.d2[0], j.d2[1], j.d2[2]]).collect();
                    let adj = tape.gradient(term, &flat);
                    let out_adj: Vec<Jet2<f64>> = adj
                        .chunks_exact(6)
                        .map(|a| Jet2 {
                            value: w * a[0],
                            d1: [w * a[1], w * a[2]],
                            d2: [w * a[3], w * a[4], w * a[5]],
                        })
                        .collect();
                    backward(&params.arch, &params.theta, &trace, &out_adj, &mut grad);
                    loss += term.value();
                    e += plain.e;
                    c2 += plain.c2;
                }
                Ok((loss, e, c2, grad))
            })
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    let (mut loss, mut e, mut c2) = (0.0, 0.0, 0.0);
    for chunk in chunks {
        let (l, ce, cc, g) = chunk?;
        loss += l;
        e += ce;
        c2 += cc;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let istar = w * loss;
    if !istar.is_finite() {
        return Err(Error::NumericFailure {
            context: format!("loss evaluated to {istar}"),
        });
    }
    Ok(LossEvaluation {
        istar,
        energy: w * e,
        defect_sq: w * c2,
        grad,
    })
}

/// `ũ = [sin x₁, (1 + 1/(5β)) x₂, cos x₁]` with `Z = diag(1, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct Prop1Witness {
    pub beta: f64,
}

/// `ũ = [b⁻¹ sin(b x₁), (1 + b⁻²) x₂, b⁻¹ cos(b x₁)]`, `b = β^γ`, `Z = diag(b, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct Prop2Witness {
    pub beta: f64,
    pub gamma: f64,
}

/// `[a⁻¹ sin(a x₁), s x₂, a⁻¹ cos(a x₁)]`.
fn stretched_wave(a: f64, s: f64, x: Point) -> SurfaceJet<f64> {
    let [x1, x2] = seed_input::<f64>(x);
    let phase = x1.scale(a);
    [phase.sin().scale(1.0 / a), x2.scale(s), phase.cos().scale(1.0 / a)]
}

impl Prop1Witness {
    pub fn new(beta: f64) -> Self {
        if beta < 1.0 {
            log::warn!("energy-gap bound of the first witness assumes beta >= 1, got {beta}");
        }
        Prop1Witness { beta }
    }

    pub fn config(&self) -> EnergyConfig {
        EnergyConfig::new([[1.0, 0.0], [0.0, 0.0]], self.beta)
            .expect("positive beta")
            .with_formulation(Formulation::Reshaped)
    }

    /// `Ẽ[ũ] = −|Ω| / (5β)`.
    pub fn energy(&self, area: f64) -> f64 {
        -area / (5.0 * self.beta)
    }

    /// `C[ũ] = (10β + 1) / (25β²) · √|Ω|`.
    pub fn defect(&self, area: f64) -> f64 {
        (10.0 * self.beta + 1.0) / (25.0 * self.beta * self.beta) * area.sqrt()
    }
}

impl Deformation for Prop1Witness {
    fn jet(&self, x: Point) -> SurfaceJet<f64> {
        stretched_wave(1.0, 1.0 + 1.0 / (5.0 * self.beta), x)
    }
}

impl Prop2Witness {
    pub fn new(beta: f64, gamma: f64) -> Self {
        let w = Prop2Witness { beta, gamma };
        if !w.admissible() {
            log::warn!("second witness outside its regime: gamma = {gamma}, beta = {beta}");
        }
        w
    }

    /// `γ > 1/4` and `β ≥ 9^{1/(4γ−1)}`.
    pub fn admissible(&self) -> bool {
        self.gamma > 0.25 && self.beta >= 9f64.powf(1.0 / (4.0 * self.gamma - 1.0))
    }

    fn frequency(&self) -> f64 {
        self.beta.powf(self.gamma)
    }

    pub fn config(&self) -> EnergyConfig {
        EnergyConfig::new([[self.frequency(), 0.0], [0.0, 0.0]], self.beta)
            .expect("positive beta")
            .with_formulation(Formulation::Reshaped)
    }

    /// `Ẽ[ũ] = −|Ω|`.
    pub fn energy(&self, area: f64) -> f64 {
        -area
    }

    /// `C[ũ] = β^{−2γ} (2 + β^{−2γ}) √|Ω|`.
    pub fn defect(&self, area: f64) -> f64 {
        let s = self.beta.powf(-2.0 * self.gamma);
        s * (2.0 + s) * area.sqrt()
    }
}

impl Deformation for Prop2Witness {
    fn jet(&self, x: Point) -> SurfaceJet<f64> {
        let b = self.frequency();
        stretched_wave(b, 1.0 + 1.0 / (b * b), x)
    }
}
