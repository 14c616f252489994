//! Residual tanh multilayer perceptron `ŷ(x; θ): ℝ² → ℝᵏ`.
//!
//! Layout: input layer (2 → m, tanh), `l` residual blocks of two activated
//! m → m layers whose output is added back onto the block input, and a linear
//! output layer m → k. All parameters live in one flat vector.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Jet2, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub blocks: usize,
    pub width: usize,
    pub outputs: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            blocks: 5,
            width: 10,
            outputs: 3,
        }
    }
}

const INPUTS: usize = 2;

/// Offsets of one dense layer inside θ (weights row-major, out × in).
#[derive(Clone, Copy, Debug)]
struct Dense {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Architecture {
    pub fn new(blocks: usize, width: usize) -> Self {
        Architecture {
            blocks,
            width,
            outputs: 3,
        }
    }

    pub fn with_outputs(self, outputs: usize) -> Self {
        Architecture { outputs, ..self }
    }

    fn layers(&self) -> Vec<Dense> {
        let m = self.width;
        let mut shapes = vec![(INPUTS, m)];
        shapes.extend(std::iter::repeat_n((m, m), 2 * self.blocks));
        shapes.push((m, self.outputs));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let layer = Dense {
                    weights: offset,
                    bias: offset + fan_in * fan_out,
                    fan_in,
                    fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                layer
            })
            .collect()
    }

    /// Number of entries of θ, biases included.
    pub fn parameter_count(&self) -> usize {
        let (l, m, k) = (self.blocks, self.width, self.outputs);
        (INPUTS + 1) * m + l * 2 * (m + 1) * m + (m + 1) * k
    }

    /// Number of weights, biases excluded.
    pub fn weight_count(&self) -> usize {
        let (l, m, k) = (self.blocks, self.width, self.outputs);
        INPUTS * m + 2 * l * m * m + k * m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters {
    pub arch: Architecture,
    pub theta: Vec<f64>,
    pub seed: u64,
}

impl NetworkParameters {
    pub fn zeros(arch: Architecture) -> Self {
        NetworkParameters {
            arch,
            theta: vec![0.0; arch.parameter_count()],
            seed: 0,
        }
    }

    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; arch.parameter_count()];
        for layer in arch.layers() {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut theta[layer.weights..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        NetworkParameters { arch, theta, seed }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn forward(&self, x: [Jet2<f64>; 2]) -> Vec<Jet2<f64>> {
        forward(&self.arch, &self.theta, x)
    }

    /// Plain values of ŷ at `x`, without derivatives.
    pub fn eval(&self, x: [f64; 2]) -> Vec<f64> {
        let layers = self.arch.layers();
        let mut h = dense_values(&self.theta, &layers[0], &x);
        h.iter_mut().for_each(|v| *v = v.tanh());
        for block in layers[1..layers.len() - 1].chunks(2) {
            let mut inner = dense_values(&self.theta, &block[0], &h);
            inner.iter_mut().for_each(|v| *v = v.tanh());
            let outer = dense_values(&self.theta, &block[1], &inner);
            for (hi, o) in h.iter_mut().zip(outer) {
                *hi += o.tanh();
            }
        }
        dense_values(&self.theta, &layers[layers.len() - 1], &h)
    }

    /// Zeroes both layers of residual block `block` (0-based).
    pub fn zero_block(&mut self, block: usize) {
        let layers = self.arch.layers();
        let first = layers[1 + 2 * block];
        let second = layers[2 + 2 * block];
        let end = second.bias + second.fan_out;
        self.theta[first.weights..end].iter_mut().for_each(|w| *w = 0.0);
    }

    /// Zeroes everything except the input layer.
    pub fn zero_all_but_input(&mut self) {
        let first = self.arch.layers()[0];
        let end = first.bias + first.fan_out;
        self.theta[end..].iter_mut().for_each(|w| *w = 0.0);
    }
}

fn dense_values(theta: &[f64], layer: &Dense, input: &[f64]) -> Vec<f64> {
    (0..layer.fan_out)
        .map(|j| {
            let row = &theta[layer.weights + j * layer.fan_in..layer.weights + (j + 1) * layer.fan_in];
            f64::affine(theta[layer.bias + j], row, input)
        })
        .collect()
}

#[inline]
fn component<T: Copy>(jet: &Jet2<T>, c: usize) -> T {
    match c {
        0 => jet.value,
        1 | 2 => jet.d1[c - 1],
        _ => jet.d2[c - 3],
    }
}

/// Applies a dense layer to every jet component; the bias only enters the value.
fn dense_jets<T: Real>(theta: &[T], layer: &Dense, input: &[Jet2<T>], scratch: &mut Vec<T>) -> Vec<Jet2<T>> {
    let zero = T::constant(0.0);
    let mut out = vec![Jet2::<T>::constant(0.0); layer.fan_out];
    for c in 0..6 {
        scratch.clear();
        scratch.extend(input.iter().map(|j| component(j, c)));
        for (j, o) in out.iter_mut().enumerate() {
            let row = &theta[layer.weights + j * layer.fan_in..layer.weights + (j + 1) * layer.fan_in];
            let bias = if c == 0 { theta[layer.bias + j] } else { zero };
            let v = T::affine(bias, row, scratch);
            match c {
                0 => o.value = v,
                1 | 2 => o.d1[c - 1] = v,
                _ => o.d2[c - 3] = v,
            }
        }
    }
    out
}

/// ŷ with spatial gradient and Hessian, generic over plain or taped scalars.
pub fn forward<T: Real>(arch: &Architecture, theta: &[T], x: [Jet2<T>; 2]) -> Vec<Jet2<T>> {
    debug_assert_eq!(theta.len(), arch.parameter_count());
    let layers = arch.layers();
    let mut scratch = Vec::with_capacity(arch.width);
    let mut h: Vec<Jet2<T>> = dense_jets(theta, &layers[0], &x, &mut scratch)
        .iter()
        .map(Jet2::tanh)
        .collect();
    for block in layers[1..layers.len() - 1].chunks(2) {
        let inner: Vec<Jet2<T>> = dense_jets(theta, &block[0], &h, &mut scratch)
            .iter()
            .map(Jet2::tanh)
            .collect();
        let outer = dense_jets(theta, &block[1], &inner, &mut scratch);
        for (hi, o) in h.iter_mut().zip(&outer) {
            *hi = *hi + o.tanh();
        }
    }
    dense_jets(theta, &layers[layers.len() - 1], &h, &mut scratch)
}

/// Jets kept by [`forward_traced`] for the reverse pass; reusable across calls.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Input jets of every dense layer.
    inputs: Vec<Vec<Jet2<f64>>>,
    /// Pre-activation jets of every activated layer.
    pre: Vec<Vec<Jet2<f64>>>,
    /// `tanh` of the pre-activation values.
    act: Vec<Vec<f64>>,
}

fn dense_into(theta: &[f64], layer: &Dense, input: &[Jet2<f64>], out: &mut Vec<Jet2<f64>>) {
    out.clear();
    for j in 0..layer.fan_out {
        let row = &theta[layer.weights + j * layer.fan_in..layer.weights + (j + 1) * layer.fan_in];
        let mut z = Jet2 {
            value: theta[layer.bias + j],
            d1: [0.0; 2],
            d2: [0.0; 3],
        };
        for (w, h) in row.iter().zip(input) {
            z.value += w * h.value;
            z.d1[0] += w * h.d1[0];
            z.d1[1] += w * h.d1[1];
            z.d2[0] += w * h.d2[0];
            z.d2[1] += w * h.d2[1];
            z.d2[2] += w * h.d2[2];
        }
        out.push(z);
    }
}

/// Plain-jet forward pass that records the intermediate jets in `trace`.
pub fn forward_traced(arch: &Architecture, theta: &[f64], x: [Jet2<f64>; 2], trace: &mut Trace) -> Vec<Jet2<f64>> {
    let layers = arch.layers();
    let n = layers.len();
    trace.inputs.resize_with(n, Vec::new);
    trace.pre.resize_with(n - 1, Vec::new);
    trace.act.resize_with(n - 1, Vec::new);
    trace.inputs[0].clear();
    trace.inputs[0].extend_from_slice(&x);

    let mut z = std::mem::take(&mut trace.pre[0]);
    dense_into(theta, &layers[0], &trace.inputs[0], &mut z);
    let mut h: Vec<Jet2<f64>> = z.iter().map(Jet2::tanh).collect();
    record_act(&mut trace.act[0], &h);
    trace.pre[0] = z;
    for b in 0..arch.blocks {
        let a = 1 + 2 * b;
        trace.inputs[a].clear();
        trace.inputs[a].extend_from_slice(&h);
        let mut z1 = std::mem::take(&mut trace.pre[a]);
        dense_into(theta, &layers[a], &h, &mut z1);
        let inner = &mut trace.inputs[a + 1];
        inner.clear();
        inner.extend(z1.iter().map(Jet2::tanh));
        trace.pre[a] = z1;
        let inner = std::mem::take(&mut trace.inputs[a + 1]);
        record_act(&mut trace.act[a], &inner);
        trace.inputs[a + 1] = inner;
        let mut z2 = std::mem::take(&mut trace.pre[a + 1]);
        dense_into(theta, &layers[a + 1], &trace.inputs[a + 1], &mut z2);
        let act = &mut trace.act[a + 1];
        act.clear();
        for (hi, zi) in h.iter_mut().zip(&z2) {
            let t = zi.tanh();
            act.push(t.value);
            *hi = *hi + t;
        }
        trace.pre[a + 1] = z2;
    }
    trace.inputs[n - 1].clear();
    trace.inputs[n - 1].extend_from_slice(&h);
    let mut y = Vec::with_capacity(arch.outputs);
    dense_into(theta, &layers[n - 1], &h, &mut y);
    y
}

fn record_act(act: &mut Vec<f64>, jets: &[Jet2<f64>]) {
    act.clear();
    act.extend(jets.iter().map(|j| j.value));
}

fn tanh_adjoints(pre: &[Jet2<f64>], act: &[f64], out: &[Jet2<f64>]) -> Vec<Jet2<f64>> {
    pre.iter().zip(act).zip(out).map(|((z, &t), o)| tanh_adjoint(z, t, o)).collect()
}

/// Adjoint of `z ↦ tanh(z)` on jets: maps the output adjoint to the input adjoint.
fn tanh_adjoint(z: &Jet2<f64>, t: f64, out: &Jet2<f64>) -> Jet2<f64> {
    let f1 = 1.0 - t * t;
    let f2 = -2.0 * t * f1;
    let f3 = f1 * (6.0 * t * t - 2.0);
    let [z1, z2] = z.d1;
    let [o11, o12, o22] = out.d2;
    Jet2 {
        value: f1 * out.value
            + f2 * (z1 * out.d1[0] + z2 * out.d1[1])
            + o11 * (f2 * z.d2[0] + f3 * z1 * z1)
            + o12 * (f2 * z.d2[1] + f3 * z1 * z2)
            + o22 * (f2 * z.d2[2] + f3 * z2 * z2),
        d1: [
            f1 * out.d1[0] + f2 * (2.0 * z1 * o11 + z2 * o12),
            f1 * out.d1[1] + f2 * (z1 * o12 + 2.0 * z2 * o22),
        ],
        d2: [f1 * o11, f1 * o12, f1 * o22],
    }
}

/// Accumulates weight and bias gradients of one dense layer; adds the input
/// adjoint into `input_adj` when given.
fn dense_adjoint(
    theta: &[f64],
    layer: &Dense,
    input: &[Jet2<f64>],
    z_adj: &[Jet2<f64>],
    grad: &mut [f64],
    mut input_adj: Option<&mut [Jet2<f64>]>,
) {
    for (j, g) in z_adj.iter().enumerate() {
        grad[layer.bias + j] += g.value;
        let w0 = layer.weights + j * layer.fan_in;
        for (i, h) in input.iter().enumerate() {
            grad[w0 + i] += g.value * h.value
                + g.d1[0] * h.d1[0]
                + g.d1[1] * h.d1[1]
                + g.d2[0] * h.d2[0]
                + g.d2[1] * h.d2[1]
                + g.d2[2] * h.d2[2];
        }
        if let Some(adj) = input_adj.as_deref_mut() {
            let row = &theta[w0..w0 + layer.fan_in];
            for (a, &w) in adj.iter_mut().zip(row) {
                a.value += w * g.value;
                a.d1[0] += w * g.d1[0];
                a.d1[1] += w * g.d1[1];
                a.d2[0] += w * g.d2[0];
                a.d2[1] += w * g.d2[1];
                a.d2[2] += w * g.d2[2];
            }
        }
    }
}

/// Reverse pass through the jet network recorded in `trace`.
///
/// `out_adj[c]` holds `∂L/∂(component of ŷ_c)` for all six jet components;
/// `∂L/∂θ` is added into `grad`.
pub fn backward(arch: &Architecture, theta: &[f64], trace: &Trace, out_adj: &[Jet2<f64>], grad: &mut [f64]) {
    let layers = arch.layers();
    let n = layers.len();
    let zero = Jet2::<f64>::constant(0.0);
    let mut h_adj = vec![zero; arch.width];
    dense_adjoint(theta, &layers[n - 1], &trace.inputs[n - 1], out_adj, grad, Some(&mut h_adj));
    for b in (0..arch.blocks).rev() {
        let a = 1 + 2 * b;
        let z2_adj = tanh_adjoints(&trace.pre[a + 1], &trace.act[a + 1], &h_adj);
        let mut inner_adj = vec![zero; arch.width];
        dense_adjoint(theta, &layers[a + 1], &trace.inputs[a + 1], &z2_adj, grad, Some(&mut inner_adj));
        let z1_adj = tanh_adjoints(&trace.pre[a], &trace.act[a], &inner_adj);
        dense_adjoint(theta, &layers[a], &trace.inputs[a], &z1_adj, grad, Some(&mut h_adj));
    }
    let z0_adj = tanh_adjoints(&trace.pre[0], &trace.act[0], &h_adj);
    dense_adjoint(theta, &layers[0], &trace.inputs[0], &z0_adj, grad, None);
}

/// Writes `arch l m P seed [role=...]` followed by one parameter per line.
pub fn save_checkpoint(path: &Path, params: &NetworkParameters, role: Option<&str>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let arch = &params.arch;
    write!(out, "arch {} {} {} {}", arch.blocks, arch.width, params.len(), params.seed)?;
    if let Some(role) = role {
        write!(out, " role={role}")?;
    }
    writeln!(out)?;
    for w in &params.theta {
        writeln!(out, "{w:?}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the role tag if present.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkParameters, Option<String>)> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "arch" {
        return Err(bad(format!("bad header {header:?}")));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("header field {s:?}: {e}")));
    let (blocks, width, count, seed) = (num(fields[1])? as usize, num(fields[2])? as usize, num(fields[3])? as usize, num(fields[4])?);
    let role = match fields.get(5) {
        Some(tag) => Some(
            tag.strip_prefix("role=")
                .ok_or_else(|| bad(format!("unexpected header field {tag:?}")))?
                .to_string(),
        ),
        None => None,
    };
    let trunk = Architecture::new(blocks, width).with_outputs(0).parameter_count();
    if width == 0 || count < trunk || !(count - trunk).is_multiple_of(width + 1) {
        return Err(bad(format!("parameter count {count} inconsistent with l={blocks} m={width}")));
    }
    let arch = Architecture::new(blocks, width).with_outputs((count - trunk) / (width + 1));
    let theta = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 2))))
        .collect::<Result<Vec<f64>>>()?;
    if theta.len() != count {
        return Err(bad(format!("expected {count} parameters, found {}", theta.len())));
    }
    if let Some(i) = theta.iter().position(|w| !w.is_finite()) {
        return Err(bad(format!("non-finite parameter on line {}", i + 2)));
    }
    Ok((NetworkParameters { arch, theta, seed }, role))
}
