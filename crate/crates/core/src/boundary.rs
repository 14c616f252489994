//! Exact clamped boundary conditions through `û = g₁ ŷ + g₂`.
//!
//! `g₁` vanishes together with its gradient on Γ_D, and `g₂` is the flat
//! embedding `(x₁, x₂, 0)`, so `û = g₂` and `∇û = ∇g₂` on Γ_D for any ŷ.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{seed_input, Jet2, Real};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPart, PlateDomain};
use crate::network::{backward, forward_traced, Architecture, NetworkParameters, Trace};
use crate::trainer::AdamState;
use crate::Point;

/// The deformation as three scalar jets, one per spatial component.
pub type SurfaceJet<T> = [Jet2<T>; 3];

/// Distance-like factor multiplying the network output.
#[derive(Clone, Debug, PartialEq)]
pub enum DistanceFactor {
    /// No clamp: `û = ŷ`.
    Free,
    /// `(x_axis − offset)²` for a clamp along the full line `x_axis = offset`.
    SquaredDistance { axis: usize, offset: f64 },
    /// A frozen scalar network fitted on the boundary.
    Trained(NetworkParameters),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLift {
    pub g1: DistanceFactor,
}

impl BoundaryLift {
    pub fn free() -> Self {
        BoundaryLift { g1: DistanceFactor::Free }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.g1, DistanceFactor::Free)
    }

    pub fn g1_jet(&self, x: Point) -> Jet2<f64> {
        match &self.g1 {
            DistanceFactor::Free => Jet2::constant(1.0),
            DistanceFactor::SquaredDistance { axis, offset } => {
                let d = Jet2::<f64>::coordinate(x[*axis] - offset, *axis);
                d * d
            }
            DistanceFactor::Trained(net) => net.forward(seed_input(x))[0],
        }
    }

    /// The flat embedding `(x₁, x₂, 0)`.
    pub fn g2_jet(&self, x: Point) -> SurfaceJet<f64> {
        let [a, b] = seed_input(x);
        [a, b, Jet2::constant(0.0)]
    }

    /// `g₁ ŷ + g₂` with derivatives propagated by the product rule.
    pub fn apply<T: Real>(&self, yhat: &[Jet2<T>], x: Point) -> SurfaceJet<T> {
        if self.is_free() {
            return [yhat[0], yhat[1], yhat[2]];
        }
        let g1 = Jet2::<T>::lift_constant(&self.g1_jet(x));
        let g2 = self.g2_jet(x);
        [0, 1, 2].map(|c| g1 * yhat[c] + Jet2::lift_constant(&g2[c]))
    }
}

/// `g₁ = (x_k − c)²` for a domain clamped along one full straight edge.
pub fn edge_lift(domain: &PlateDomain) -> Result<BoundaryLift> {
    if domain.is_free() {
        return Ok(BoundaryLift::free());
    }
    let unsupported = || Error::UnsupportedLift("clamp is not one full straight edge; train g1 instead".into());
    let [seg] = domain.clamp.as_slice() else {
        return Err(unsupported());
    };
    let edge = domain
        .outer
        .edges()
        .into_iter()
        .find(|e| (e.start[0] - seg.start[0]).abs() < 1e-12 && (e.start[1] - seg.start[1]).abs() < 1e-12 && (e.end[0] - seg.end[0]).abs() < 1e-12 && (e.end[1] - seg.end[1]).abs() < 1e-12)
        .ok_or_else(unsupported)?;
    let axis = 1 - edge.varying_axis().ok_or_else(unsupported)?;
    Ok(BoundaryLift {
        g1: DistanceFactor::SquaredDistance {
            axis,
            offset: edge.start[axis],
        },
    })
}

#[derive(Clone, Debug)]
pub struct G1TrainingOptions {
    pub arch: Architecture,
    pub steps: usize,
    pub clamped_batch: usize,
    pub free_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for G1TrainingOptions {
    fn default() -> Self {
        G1TrainingOptions {
            arch: Architecture::default().with_outputs(1),
            steps: 50_000,
            clamped_batch: 64,
            free_batch: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Residuals of a trained g₁ measured on fresh boundary samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct G1Report {
    pub max_value_on_clamp: f64,
    pub max_gradient_on_clamp: f64,
    pub relative_residual: f64,
}

impl G1Report {
    pub const VALUE_TOL: f64 = 1e-2;
    pub const RESIDUAL_TOL: f64 = 5e-2;

    pub fn meets_targets(&self) -> bool {
        self.max_value_on_clamp <= Self::VALUE_TOL
            && self.max_gradient_on_clamp <= Self::VALUE_TOL
            && self.relative_residual <= Self::RESIDUAL_TOL
    }
}

pub fn measure_g1(net: &NetworkParameters, domain: &PlateDomain, target: &dyn Fn(Point) -> f64, seed: u64) -> Result<G1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clamped = domain.sample_boundary(BoundaryPart::Clamped, 2000, &mut rng)?;
    let free = domain.sample_boundary(BoundaryPart::Free, 4000, &mut rng)?;
    let mut max_value: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for &x in &clamped {
        let g = net.forward(seed_input(x))[0];
        max_value = max_value.max(g.value.abs());
        max_grad = max_grad.max(g.d1[0].hypot(g.d1[1]));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &x in &free {
        let d = target(x);
        num += (net.eval(x)[0] - d).powi(2);
        den += d * d;
    }
    Ok(G1Report {
        max_value_on_clamp: max_value,
        max_gradient_on_clamp: max_grad,
        relative_residual: (num / den).sqrt(),
    })
}

/// Fits a scalar network with `g₁ = ∇g₁ = 0` on Γ_D and `g₁ = d` on ∂Ω ∖ Γ_D.
///
/// Unmet residual targets only produce a warning; the caller decides.
pub fn train_g1(
    domain: &PlateDomain,
    target: &(dyn Fn(Point) -> f64 + Sync),
    opts: &G1TrainingOptions,
) -> Result<(BoundaryLift, G1Report)> {
    if domain.is_free() {
        return Err(Error::UnsupportedLift("no clamped boundary to fit g1 on".into()));
    }
    let arch = opts.arch.with_outputs(1);
    let mut net = NetworkParameters::init(arch, opts.seed);
    let mut adam = AdamState::new(net.len(), opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    for step in 0..opts.steps {
        let clamped = domain.sample_boundary(BoundaryPart::Clamped, opts.clamped_batch, &mut rng)?;
        let free = domain.sample_boundary(BoundaryPart::Free, opts.free_batch, &mut rng)?;
        let targets: Vec<f64> = free.iter().map(|&x| target(x)).collect();
        let (loss, grad) = g1_loss_gradient(&net, &clamped, &free, &targets);
        if !loss.is_finite() {
            return Err(Error::NumericFailure {
                context: format!("g1 training step {step}: loss evaluated to {loss}"),
            });
        }
        adam.step(&mut net.theta, &grad)?;
        if step % 10_000 == 0 {
            info!("g1 step {step}: loss {loss:.3e}");
        }
    }
    let report = measure_g1(&net, domain, target, opts.seed.wrapping_add(1))?;
    if !report.meets_targets() {
        warn!(
            "g1 residual targets unmet after {} steps: |g1| {:.2e}, |grad g1| {:.2e}, rel. residual {:.2e}",
            opts.steps, report.max_value_on_clamp, report.max_gradient_on_clamp, report.relative_residual
        );
    }
    Ok((
        BoundaryLift {
            g1: DistanceFactor::Trained(net),
        },
        report,
    ))
}

/// Value and gradient of the g₁ fitting loss, by the traced reverse pass.
fn g1_loss_gradient(net: &NetworkParameters, clamped: &[Point], free: &[Point], targets: &[f64]) -> (f64, Vec<f64>) {
    let mut trace = Trace::default();
    let mut grad = vec![0.0; net.len()];
    let mut loss = 0.0;
    let wc = 1.0 / clamped.len() as f64;
    for &x in clamped {
        let g = forward_traced(&net.arch, &net.theta, seed_input(x), &mut trace)[0];
        loss += wc * (g.value * g.value + g.d1[0] * g.d1[0] + g.d1[1] * g.d1[1]);
        let adj = Jet2 {
            value: 2.0 * wc * g.value,
            d1: [2.0 * wc * g.d1[0], 2.0 * wc * g.d1[1]],
            d2: [0.0; 3],
        };
        backward(&net.arch, &net.theta, &trace, &[adj], &mut grad);
    }
    let wf = 1.0 / free.len() as f64;
    for (&x, &d) in free.iter().zip(targets) {
        let g = forward_traced(&net.arch, &net.theta, seed_input(x), &mut trace)[0];
        let r = g.value - d;
        loss += wf * r * r;
        let adj = Jet2 {
            value: 2.0 * wf * r,
            d1: [0.0; 2],
            d2: [0.0; 3],
        };
        backward(&net.arch, &net.theta, &trace, &[adj], &mut grad);
    }
    (loss, grad)
}
