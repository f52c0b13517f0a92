//! Feed-forward flow-map surrogate and its differentiation engine.
//!
//! The network maps `(t, x0, u)` through an input normalizer, a tanh layer
//! stack and an affine output map back to state coordinates. Because the
//! architecture is fixed and small, differentiation is done with closed-form
//! layer recursions instead of a general tape:
//!
//! * a forward *tangent* pass propagates `d/dt` exactly alongside the primal
//!   (for the physics residual),
//! * a reverse pass over the tangent-augmented computation yields exact
//!   weight gradients of losses that contain the time derivative (the mixed
//!   second-order path), and
//! * the same reverse pass restricted to the primal gives vector-Jacobian
//!   products with respect to the inputs (for control gradients).

mod checkpoint;

pub use checkpoint::{Checkpoint, TrainingMetadata};

use nalgebra::{Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Layer widths of the surrogate. Hidden layers are tanh, the output layer is
/// affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Topology {
    /// The default flow-map surrogate: inputs `(t, x0, u)`, three hidden
    /// layers of 64 tanh units, four state outputs.
    pub fn flow_default() -> Self {
        Self { input_dim: 7, hidden: vec![64, 64, 64], output_dim: 4 }
    }

    pub fn with_hidden(hidden: Vec<usize>) -> Self {
        Self { hidden, ..Self::flow_default() }
    }

    /// `(n_in, n_out)` of every layer, hidden layers first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total number of parameters in the flat weight layout.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * i + o).sum()
    }

    pub fn max_width(&self) -> usize {
        self.hidden
            .iter()
            .copied()
            .chain([self.input_dim, self.output_dim])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Flattened parameters: per layer the weight matrix row-major, then the
/// bias. The layout is fixed by [`Topology::layer_dims`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(topology: &Topology) -> Self {
        Self(vec![0.0; topology.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Glorot-uniform weights (`limit = sqrt(6 / (fan_in + fan_out))`), zero
/// biases, deterministic under the seed.
pub fn init_weights(topology: &Topology, seed: u64) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(topology.param_count());
    for (n_in, n_out) in topology.layer_dims() {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_in * n_out {
            data.push(rng.random_range(-limit..limit));
        }
        data.extend(std::iter::repeat(0.0).take(n_out));
    }
    WeightVector(data)
}

/// Per-coordinate affine map between raw values and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl Normalizer {
    pub fn new(center: Vec<f64>, half_width: Vec<f64>) -> Result<Self> {
        if center.len() != half_width.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), got: half_width.len() });
        }
        if half_width.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidConfig("normalizer half-widths must be > 0".into()));
        }
        Ok(Self { center, half_width })
    }

    pub fn identity(dim: usize) -> Self {
        Self { center: vec![0.0; dim], half_width: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn normalize_into(&self, raw: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = (raw[i] - self.center[i]) / self.half_width[i];
        }
    }

    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| self.center[i] + self.half_width[i] * unit[i]).collect()
    }
}

/// The trained flow-map surrogate: topology, flat weights and the affine
/// maps tying network coordinates to physical ones.
///
/// With `hard_ic` enabled the prediction is `x0 + t * g(t, x0, u)` with `g`
/// the mapped network output, which pins the initial condition exactly; by
/// default the initial condition is only anchored softly through the data
/// loss.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    topology: Topology,
    weights: WeightVector,
    input_norm: Normalizer,
    output_map: Normalizer,
    /// Largest prediction time the surrogate was trained for.
    t_max: f64,
    hard_ic: bool,
}

impl NetworkModel {
    pub fn new(
        topology: Topology,
        weights: WeightVector,
        input_norm: Normalizer,
        output_map: Normalizer,
        t_max: f64,
    ) -> Result<Self> {
        topology.validate()?;
        if weights.len() != topology.param_count() {
            return Err(Error::DimensionMismatch {
                expected: topology.param_count(),
                got: weights.len(),
            });
        }
        if input_norm.dim() != topology.input_dim {
            return Err(Error::DimensionMismatch {
                expected: topology.input_dim,
                got: input_norm.dim(),
            });
        }
        if output_map.dim() != topology.output_dim {
            return Err(Error::DimensionMismatch {
                expected: topology.output_dim,
                got: output_map.dim(),
            });
        }
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidConfig(format!("t_max must be > 0, got {t_max}")));
        }
        Ok(Self { topology, weights, input_norm, output_map, t_max, hard_ic: false })
    }

    pub fn with_hard_ic(mut self, hard_ic: bool) -> Self {
        self.hard_ic = hard_ic;
        self
    }

    pub fn hard_ic(&self) -> bool {
        self.hard_ic
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightVector {
        &mut self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) {
        self.weights.0.copy_from_slice(w);
    }

    pub fn input_norm(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn output_map(&self) -> &Normalizer {
        &self.output_map
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    fn pack_inputs(t: f64, x0: &Vector4<f64>, u: &Vector2<f64>) -> [f64; 7] {
        [t, x0[0], x0[1], x0[2], x0[3], u[0], u[1]]
    }

    /// Primal evaluation `phihat(t, x0, u)`.
    pub fn forward(&self, t: f64, x0: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        let mut scratch = Scratch::new(&self.topology);
        self.forward_scratch(&mut scratch, t, x0, u)
    }

    /// The mapped network output `g` (and its time derivative) from the
    /// current trace.
    fn mapped_output(&self, scratch: &Scratch) -> Vector4<f64> {
        let y = scratch.output();
        let hw = &self.output_map.half_width;
        let c = &self.output_map.center;
        Vector4::new(
            c[0] + hw[0] * y[0],
            c[1] + hw[1] * y[1],
            c[2] + hw[2] * y[2],
            c[3] + hw[3] * y[3],
        )
    }

    fn mapped_tangent(&self, scratch: &Scratch) -> Vector4<f64> {
        let yd = scratch.output_tangent();
        let hw = &self.output_map.half_width;
        Vector4::new(hw[0] * yd[0], hw[1] * yd[1], hw[2] * yd[2], hw[3] * yd[3])
    }

    /// Primal evaluation reusing caller-owned buffers (no allocation).
    pub fn forward_scratch(
        &self,
        scratch: &mut Scratch,
        t: f64,
        x0: &Vector4<f64>,
        u: &Vector2<f64>,
    ) -> Vector4<f64> {
        let raw = Self::pack_inputs(t, x0, u);
        self.trace(scratch, &raw, false);
        let g = self.mapped_output(scratch);
        if self.hard_ic {
            x0 + t * g
        } else {
            g
        }
    }

    /// Exact `d phihat / d t` via a forward tangent pass.
    pub fn time_derivative(&self, t: f64, x0: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        let mut scratch = Scratch::new(&self.topology);
        let raw = Self::pack_inputs(t, x0, u);
        self.trace(&mut scratch, &raw, true);
        let gd = self.mapped_tangent(&scratch);
        if self.hard_ic {
            self.mapped_output(&scratch) + t * gd
        } else {
            gd
        }
    }

    /// Primal and tangent outputs from one traced pass, reusing `scratch`.
    pub fn eval_traced(
        &self,
        scratch: &mut Scratch,
        t: f64,
        x0: &Vector4<f64>,
        u: &Vector2<f64>,
        with_tangent: bool,
    ) -> (Vector4<f64>, Option<Vector4<f64>>) {
        let raw = Self::pack_inputs(t, x0, u);
        self.trace(scratch, &raw, with_tangent);
        let g = self.mapped_output(scratch);
        if self.hard_ic {
            let out = x0 + t * g;
            let out_dot = with_tangent.then(|| g + t * self.mapped_tangent(scratch));
            (out, out_dot)
        } else {
            let out_dot = with_tangent.then(|| self.mapped_tangent(scratch));
            (g, out_dot)
        }
    }

    /// Vector-Jacobian product of the primal output with respect to the raw
    /// inputs `(x0, u)` for a covector in state space.
    pub fn input_gradient(
        &self,
        t: f64,
        x0: &Vector4<f64>,
        u: &Vector2<f64>,
        seed_covector: &Vector4<f64>,
    ) -> (Vector4<f64>, Vector2<f64>) {
        let mut scratch = Scratch::new(&self.topology);
        self.input_gradient_scratch(&mut scratch, t, x0, u, seed_covector)
    }

    pub fn input_gradient_scratch(
        &self,
        scratch: &mut Scratch,
        t: f64,
        x0: &Vector4<f64>,
        u: &Vector2<f64>,
        seed_covector: &Vector4<f64>,
    ) -> (Vector4<f64>, Vector2<f64>) {
        let raw = Self::pack_inputs(t, x0, u);
        self.trace(scratch, &raw, false);
        let grad = self.input_backprop(scratch, seed_covector);
        let gx = Vector4::new(grad[1], grad[2], grad[3], grad[4]);
        let gu = Vector2::new(grad[5], grad[6]);
        if self.hard_ic {
            // x = x0 + t g: the identity term plus the scaled chain term.
            (seed_covector + t * gx, t * gu)
        } else {
            (gx, gu)
        }
    }

    /// Forward pass storing activations (and tangents when requested).
    fn trace(&self, scratch: &mut Scratch, raw_inputs: &[f64], with_tangent: bool) {
        debug_assert_eq!(raw_inputs.len(), self.topology.input_dim);
        scratch.with_tangent = with_tangent;
        scratch.last_t = raw_inputs[0];
        self.input_norm.normalize_into(raw_inputs, &mut scratch.a0);
        if with_tangent {
            // Tangent along the time axis of the raw inputs, pushed through
            // the input normalization.
            scratch.a0_dot.iter_mut().for_each(|v| *v = 0.0);
            scratch.a0_dot[0] = 1.0 / self.input_norm.half_width[0];
        }

        let dims = self.topology.layer_dims();
        let n_layers = dims.len();
        let mut offset = 0;
        for (l, (n_in, n_out)) in dims.iter().copied().enumerate() {
            let (w, b) = layer_slices(&self.weights.0, offset, n_in, n_out);
            let last = l == n_layers - 1;
            // Detach this layer's buffers so the previous layer's can be
            // borrowed immutably alongside.
            let mut z = std::mem::take(&mut scratch.acts[l]);
            let a_prev: &[f64] = if l == 0 { &scratch.a0 } else { &scratch.acts[l - 1] };
            matvec_bias(w, b, a_prev, &mut z);
            if with_tangent {
                let mut zd = std::mem::take(&mut scratch.preact_tans[l]);
                let mut ad = std::mem::take(&mut scratch.act_tans[l]);
                let ad_prev: &[f64] = if l == 0 { &scratch.a0_dot } else { &scratch.act_tans[l - 1] };
                matvec(w, ad_prev, &mut zd);
                ad.resize(n_out, 0.0);
                if last {
                    ad.copy_from_slice(&zd);
                } else {
                    for i in 0..n_out {
                        let a = z[i].tanh();
                        ad[i] = (1.0 - a * a) * zd[i];
                        z[i] = a;
                    }
                }
                scratch.preact_tans[l] = zd;
                scratch.act_tans[l] = ad;
            } else if !last {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            scratch.acts[l] = z;
            offset += n_out * n_in + n_out;
        }
    }

    /// Reverse pass accumulating `d<v, phihat> + d<v_dot, d/dt phihat>`
    /// with respect to the weights into `grad` (raw-space covectors).
    pub fn backprop_params(
        &self,
        scratch: &mut Scratch,
        v_raw: &Vector4<f64>,
        v_dot_raw: Option<&Vector4<f64>>,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.topology.param_count());
        debug_assert!(v_dot_raw.is_none() || scratch.with_tangent);

        // Under the hard ansatz `out = x0 + t g`, `out_dot = g + t gdot`, the
        // covectors transform to the plain-network ones for (g, gdot).
        let (v_eff, v_dot_eff) = if self.hard_ic {
            let t = scratch.last_t;
            match v_dot_raw {
                Some(vd) => (t * v_raw + vd, Some(t * vd)),
                None => (t * v_raw, None),
            }
        } else {
            (*v_raw, v_dot_raw.copied())
        };
        let v_raw = &v_eff;
        let v_dot_raw = v_dot_eff.as_ref();

        let dims = self.topology.layer_dims();
        let n_layers = dims.len();
        let hw = &self.output_map.half_width;

        // Covectors in normalized output coordinates.
        let n_out_last = dims[n_layers - 1].1;
        scratch.delta.resize(n_out_last, 0.0);
        for i in 0..n_out_last {
            scratch.delta[i] = v_raw[i] * hw[i];
        }
        let with_tan = if let Some(vd) = v_dot_raw {
            scratch.delta_dot.resize(n_out_last, 0.0);
            for i in 0..n_out_last {
                scratch.delta_dot[i] = vd[i] * hw[i];
            }
            true
        } else {
            false
        };

        // Walk the layers backwards.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for (n_in, n_out) in dims.iter().copied() {
            offsets.push(off);
            off += n_out * n_in + n_out;
        }

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = dims[l];
            let offset = offsets[l];
            let last = l == n_layers - 1;

            // delta currently holds the adjoint of this layer's output
            // activation a_l; convert it to the pre-activation adjoint.
            if !last {
                let a = &scratch.acts[l];
                if with_tan {
                    let zd = &scratch.preact_tans[l];
                    for i in 0..n_out {
                        let s1 = 1.0 - a[i] * a[i];
                        let s2 = -2.0 * a[i] * s1;
                        let zbar = s1 * scratch.delta[i] + s2 * zd[i] * scratch.delta_dot[i];
                        let zdbar = s1 * scratch.delta_dot[i];
                        scratch.delta[i] = zbar;
                        scratch.delta_dot[i] = zdbar;
                    }
                } else {
                    for i in 0..n_out {
                        let s1 = 1.0 - a[i] * a[i];
                        scratch.delta[i] *= s1;
                    }
                }
            }

            // Parameter gradients of z = W a_prev + b and zdot = W adot_prev.
            {
                let a_prev: &[f64] = if l == 0 { &scratch.a0 } else { &scratch.acts[l - 1] };
                let gw = &mut grad[offset..offset + n_out * n_in];
                for i in 0..n_out {
                    let di = scratch.delta[i];
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        row[j] += di * a_prev[j];
                    }
                }
                if with_tan {
                    let ad_prev: &[f64] = if l == 0 { &scratch.a0_dot } else { &scratch.act_tans[l - 1] };
                    for i in 0..n_out {
                        let di = scratch.delta_dot[i];
                        if di != 0.0 {
                            let row = &mut gw[i * n_in..(i + 1) * n_in];
                            for j in 0..n_in {
                                row[j] += di * ad_prev[j];
                            }
                        }
                    }
                }
                let gb = &mut grad[offset + n_out * n_in..offset + n_out * n_in + n_out];
                for i in 0..n_out {
                    gb[i] += scratch.delta[i];
                }
            }

            // Push the adjoints to the previous layer's activations.
            if l > 0 {
                let (w, _) = layer_slices(&self.weights.0, offset, n_in, n_out);
                scratch.next_delta.resize(n_in, 0.0);
                matvec_transpose(w, &scratch.delta, n_in, n_out, &mut scratch.next_delta);
                std::mem::swap(&mut scratch.delta, &mut scratch.next_delta);
                if with_tan {
                    scratch.next_delta.resize(n_in, 0.0);
                    matvec_transpose(w, &scratch.delta_dot, n_in, n_out, &mut scratch.next_delta);
                    std::mem::swap(&mut scratch.delta_dot, &mut scratch.next_delta);
                }
            }
        }
    }

    /// Reverse pass to the raw inputs for a primal covector; the result is
    /// the full 7-vector `(d/dt, d/dx0, d/du)` in raw units.
    fn input_backprop(&self, scratch: &mut Scratch, v_raw: &Vector4<f64>) -> [f64; 7] {
        let dims = self.topology.layer_dims();
        let n_layers = dims.len();
        let hw = &self.output_map.half_width;

        let n_out_last = dims[n_layers - 1].1;
        scratch.delta.resize(n_out_last, 0.0);
        for i in 0..n_out_last {
            scratch.delta[i] = v_raw[i] * hw[i];
        }

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for (n_in, n_out) in dims.iter().copied() {
            offsets.push(off);
            off += n_out * n_in + n_out;
        }

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = dims[l];
            let last = l == n_layers - 1;
            if !last {
                let a = &scratch.acts[l];
                for i in 0..n_out {
                    scratch.delta[i] *= 1.0 - a[i] * a[i];
                }
            }
            let (w, _) = layer_slices(&self.weights.0, offsets[l], n_in, n_out);
            scratch.next_delta.resize(n_in, 0.0);
            matvec_transpose(w, &scratch.delta, n_in, n_out, &mut scratch.next_delta);
            std::mem::swap(&mut scratch.delta, &mut scratch.next_delta);
        }

        let mut out = [0.0; 7];
        for i in 0..self.topology.input_dim.min(7) {
            out[i] = scratch.delta[i] / self.input_norm.half_width[i];
        }
        out
    }
}

/// Reusable buffers for traced evaluation and backpropagation.
#[derive(Debug, Clone)]
pub struct Scratch {
    a0: Vec<f64>,
    a0_dot: Vec<f64>,
    /// Post-activation values per layer (the last entry is the raw output).
    acts: Vec<Vec<f64>>,
    /// Pre-activation tangents per layer.
    preact_tans: Vec<Vec<f64>>,
    /// Post-activation tangents per layer.
    act_tans: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_dot: Vec<f64>,
    next_delta: Vec<f64>,
    with_tangent: bool,
    /// Raw time coordinate of the last traced input.
    last_t: f64,
}

impl Scratch {
    pub fn new(topology: &Topology) -> Self {
        let dims = topology.layer_dims();
        Self {
            a0: vec![0.0; topology.input_dim],
            a0_dot: vec![0.0; topology.input_dim],
            acts: dims.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            preact_tans: dims.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            act_tans: dims.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            delta: Vec::new(),
            delta_dot: Vec::new(),
            next_delta: Vec::new(),
            with_tangent: false,
            last_t: 0.0,
        }
    }

    fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    fn output_tangent(&self) -> &[f64] {
        self.act_tans.last().expect("at least one layer")
    }
}

fn layer_slices(flat: &[f64], offset: usize, n_in: usize, n_out: usize) -> (&[f64], &[f64]) {
    let w = &flat[offset..offset + n_out * n_in];
    let b = &flat[offset + n_out * n_in..offset + n_out * n_in + n_out];
    (w, b)
}

fn matvec_bias(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n_out = b.len();
    let n_in = x.len();
    out.resize(n_out, 0.0);
    for i in 0..n_out {
        let row = &w[i * n_in..(i + 1) * n_in];
        let mut acc = b[i];
        for j in 0..n_in {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

fn matvec(w: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n_in = x.len();
    let n_out = w.len() / n_in;
    out.resize(n_out, 0.0);
    for i in 0..n_out {
        let row = &w[i * n_in..(i + 1) * n_in];
        let mut acc = 0.0;
        for j in 0..n_in {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

/// `out = W' d` for the row-major `n_out x n_in` matrix `W`.
fn matvec_transpose(w: &[f64], d: &[f64], n_in: usize, n_out: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n_out {
        let di = d[i];
        if di == 0.0 {
            continue;
        }
        let row = &w[i * n_in..(i + 1) * n_in];
        for j in 0..n_in {
            out[j] += di * row[j];
        }
    }
}

/// How batched loss/gradient evaluations are scheduled. Reductions run in a
/// fixed chunk order either way, so results are bit-identical across modes
/// and worker counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Sequential,
    Parallel,
}

/// One sampled evaluation point of the surrogate.
#[derive(Debug, Clone, Copy)]
pub struct BatchPoint {
    pub t: f64,
    pub x0: Vector4<f64>,
    pub u: Vector2<f64>,
}

/// Per-point loss adjoint: maps network outputs at a point to the loss
/// contribution and the covectors seeding the reverse pass.
pub trait PointAdjoint: Sync {
    fn needs_tangent(&self) -> bool;

    /// Returns `(loss_i, d loss_i / d out, d loss_i / d out_dot)` in raw
    /// state units.
    fn eval(
        &self,
        idx: usize,
        out: &Vector4<f64>,
        out_dot: Option<&Vector4<f64>>,
    ) -> (f64, Vector4<f64>, Option<Vector4<f64>>);
}

const CHUNK: usize = 128;

/// Sum of per-point losses and its exact weight gradient over a batch.
///
/// Points are processed in fixed chunks whose partial sums are combined in
/// chunk order, so the reduction is deterministic for any worker count.
pub fn batch_loss_gradient(
    net: &NetworkModel,
    points: &[BatchPoint],
    adjoint: &(impl PointAdjoint + ?Sized),
    mode: BatchMode,
) -> Result<(f64, Vec<f64>)> {
    let p = net.topology().param_count();
    let chunk_eval = |chunk: &[BatchPoint], base: usize| -> (f64, Vec<f64>) {
        let mut scratch = Scratch::new(net.topology());
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        let tangent = adjoint.needs_tangent();
        for (k, pt) in chunk.iter().enumerate() {
            let (out, out_dot) = net.eval_traced(&mut scratch, pt.t, &pt.x0, &pt.u, tangent);
            let (l, v, v_dot) = adjoint.eval(base + k, &out, out_dot.as_ref());
            loss += l;
            net.backprop_params(&mut scratch, &v, v_dot.as_ref(), &mut grad);
        }
        (loss, grad)
    };

    let partials: Vec<(f64, Vec<f64>)> = match mode {
        BatchMode::Sequential => points
            .chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| chunk_eval(chunk, c * CHUNK))
            .collect(),
        BatchMode::Parallel => {
            use rayon::prelude::*;
            points
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| chunk_eval(chunk, c * CHUNK))
                .collect()
        }
    };

    let mut total = 0.0;
    let mut grad = vec![0.0; p];
    for (l, g) in partials {
        total += l;
        for (gi, pi) in grad.iter_mut().zip(&g) {
            *gi += pi;
        }
    }
    if !total.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((total, grad))
}

/// Generic weight gradient of a batch loss; the adjoint closure owns the loss
/// definition. Thin wrapper kept for symmetry with the single-point ops.
pub fn loss_weight_gradient(
    net: &NetworkModel,
    points: &[BatchPoint],
    adjoint: &(impl PointAdjoint + ?Sized),
) -> Result<(f64, Vec<f64>)> {
    batch_loss_gradient(net, points, adjoint, BatchMode::Sequential)
}
