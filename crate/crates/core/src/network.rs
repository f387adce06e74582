//! One-hidden-layer tanh actor and critic with hand-derived gradients.
//!
//! The actor computes `μ₀(s) = W_out · (tanh(W_in · s̃); 1)` with `s̃ = (s; 1)` and a linear
//! output. The critic computes `Q(s, a) = w_out · (tanh(W_s · s̃ + W_a · a); 1)`; the action
//! input carries no bias of its own.

use crate::bounded_qn::BoxBounds;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matrix, Rng};
use crate::replay::Minibatch;

/// A fixed list of weight tensors that can be averaged, decayed and optimized as a unit.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    /// A parameter set of the same shape filled with zeros.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        z
    }

    /// `‖θ‖²` over every entry, bias columns included.
    fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorParams {
    /// H × (D_s + 1); last column is the bias.
    pub w_in: Matrix,
    /// D_a × (H + 1); last column is the bias.
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    /// H × (D_s + 1); last column is the bias.
    pub w_s_in: Matrix,
    /// H × D_a.
    pub w_a_in: Matrix,
    /// 1 × (H + 1); last entry is the bias.
    pub w_out: Matrix,
}

impl ParamSet for ActorParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w_in, &self.w_out]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_in, &mut self.w_out]
    }
}

impl ParamSet for CriticParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w_s_in, &self.w_a_in, &self.w_out]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_s_in, &mut self.w_a_in, &mut self.w_out]
    }
}

fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

/// Defines `fn $name` that runs its body compiled for the widest x86 vector unit present.
///
/// Only register width changes, never FMA, so every variant rounds identically.
macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident: $ty:ty),*) $body:block) => {
        $(#[$m])*
        $vis fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn generic($($arg: $ty),*) $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn avx512($($arg: $ty),*) {
                    generic($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn avx2($($arg: $ty),*) {
                    generic($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx512f") {
                    // SAFETY: feature detected at runtime
                    return unsafe { avx512($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: feature detected at runtime
                    return unsafe { avx2($($arg),*) };
                }
            }
            generic($($arg),*)
        }
    };
}

/// `tanh(x)` within a few ulps of `f64::tanh`, written without branches so slice loops
/// vectorize. NaN propagates.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to an integer and leaves it in the low mantissa bits
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let y = 2.0 * x.clamp(-20.0, 20.0);
    let t = y * std::f64::consts::LOG2_E + ROUND;
    let n = t - ROUND;
    let r = (y - n * LN2_HI) - n * LN2_LO;
    // exp(r) − 1 for |r| ≤ ln2/2, Taylor through r¹³
    let p = r
        * (1.0
            + r * (1.0 / 2.0
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5040.0
                                    + r * (1.0 / 40_320.0
                                        + r * (1.0 / 362_880.0
                                            + r * (1.0 / 3_628_800.0
                                                + r * (1.0 / 39_916_800.0
                                                    + r * (1.0 / 479_001_600.0
                                                        + r * (1.0 / 6_227_020_800.0)))))))))))));
    let scale = f64::from_bits(t.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(1023) << 52);
    let em1 = scale * p + (scale - 1.0);
    em1 / (em1 + 2.0)
}

multiversion! {
    pub(crate) fn tanh_in_place(v: &mut [f64]) {
        for x in v.iter_mut() {
            *x = tanh(*x);
        }
    }
}

multiversion! {
    /// `z = b + Σ x_j·w_j` then `(tanh(z); 1)`, over contiguous columns of height `z.len()`.
    fn layer_forward(cols: &[f64], x: &[f64], out: &mut [f64]) {
        let h = out.len() - 1;
        let (z, one) = out.split_at_mut(h);
        z.copy_from_slice(&cols[..h]);
        for (j, &xj) in x.iter().enumerate() {
            for (zi, &w) in z.iter_mut().zip(&cols[(j + 1) * h..(j + 2) * h]) {
                *zi += xj * w;
            }
        }
        for v in z.iter_mut() {
            *v = tanh(*v);
        }
        one[0] = 1.0;
    }
}

multiversion! {
    /// Adds the outer product of `dz` with `(1, x)` into contiguous columns.
    fn layer_accumulate(cols: &mut [f64], dz: &[f64], x: &[f64]) {
        let h = dz.len();
        for (i, col) in cols.chunks_exact_mut(h).enumerate() {
            let xj = if i == 0 { 1.0 } else { x[i - 1] };
            for (c, &d) in col.iter_mut().zip(dz) {
                *c += xj * d;
            }
        }
    }
}

fn concat_into(buf: &mut Vec<f64>, s: &[f64], a: &[f64]) {
    buf.clear();
    buf.extend_from_slice(s);
    buf.extend_from_slice(a);
}

/// Input weights regrouped into one contiguous length-H column per input, bias column
/// first, then state inputs, then action inputs. Batched passes become whole-layer axpys.
struct InputColumns {
    hidden: usize,
    data: Vec<f64>,
}

impl InputColumns {
    fn new(w_s: &Matrix, w_a: Option<&Matrix>) -> Self {
        let h = w_s.rows();
        let ds = w_s.cols() - 1;
        let da = w_a.map_or(0, Matrix::cols);
        let mut data = vec![0.0; (1 + ds + da) * h];
        for i in 0..h {
            let row = w_s.row(i);
            data[i] = row[ds];
            for j in 0..ds {
                data[(1 + j) * h + i] = row[j];
            }
            if let Some(w_a) = w_a {
                for (k, &w) in w_a.row(i).iter().enumerate() {
                    data[(1 + ds + k) * h + i] = w;
                }
            }
        }
        Self { hidden: h, data }
    }

    fn zeros(hidden: usize, inputs: usize) -> Self {
        Self {
            hidden,
            data: vec![0.0; (1 + inputs) * hidden],
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.hidden..(j + 1) * self.hidden]
    }

    /// `(tanh(b + Σ x_j·w_j); 1)` for the concatenated input `x = (s, a)`.
    fn hidden_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.hidden + 1);
        layer_forward(&self.data, x, out);
    }

    /// Adds the outer product of `dz` with `(1, x)`.
    fn accumulate(&mut self, dz: &[f64], x: &[f64]) {
        layer_accumulate(&mut self.data, dz, x);
    }

    /// Adds the accumulated columns back into row-major weight gradients.
    fn scatter_add(&self, w_s: &mut Matrix, w_a: Option<&mut Matrix>) {
        let h = self.hidden;
        let ds = w_s.cols() - 1;
        for i in 0..h {
            let row = w_s.row_mut(i);
            row[ds] += self.data[i];
            for j in 0..ds {
                row[j] += self.data[(1 + j) * h + i];
            }
        }
        if let Some(w_a) = w_a {
            for i in 0..h {
                for (k, g) in w_a.row_mut(i).iter_mut().enumerate() {
                    *g += self.data[(1 + ds + k) * h + i];
                }
            }
        }
    }
}

impl ActorParams {
    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            w_in: Matrix::zeros(hidden, state_dim + 1),
            w_out: Matrix::zeros(action_dim, hidden + 1),
        }
    }

    /// Each tensor i.i.d. uniform in `±1/√fan_in`, `fan_in` being the tensor's input count.
    pub fn init(rng: &mut Rng, state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            w_in: uniform_matrix(rng, hidden, state_dim + 1, state_dim + 1),
            w_out: uniform_matrix(rng, action_dim, hidden + 1, hidden + 1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w_in.cols() - 1
    }

    pub fn action_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_in.rows()
    }

    fn hidden_into(&self, s: &[f64], out: &mut [f64]) {
        let ds = self.state_dim();
        let h = self.hidden();
        for (i, z) in out[..h].iter_mut().enumerate() {
            let w = self.w_in.row(i);
            *z = w[ds];
            for j in 0..ds {
                *z += s[j] * w[j];
            }
        }
        tanh_in_place(&mut out[..h]);
        out[h] = 1.0;
    }

    fn output_into(&self, hidden: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.w_out.row(k), hidden);
        }
    }

    /// Returns the raw (unclipped) action `μ₀(s)` and the augmented hidden layer.
    pub fn forward(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if s.len() != self.state_dim() {
            return Err(crate::error::dim_mismatch(
                "actor_forward",
                self.state_dim(),
                s.len(),
            ));
        }
        let mut hidden = vec![0.0; self.hidden() + 1];
        self.hidden_into(s, &mut hidden);
        let mut mu0 = vec![0.0; self.action_dim()];
        self.output_into(&hidden, &mut mu0);
        Ok((mu0, hidden))
    }

    /// Row-stacked hidden features `(tanh(W_in s̃); 1)` for every state row.
    pub fn hidden_features(&self, states: &Matrix) -> Matrix {
        debug_assert_eq!(states.cols(), self.state_dim());
        let cols = InputColumns::new(&self.w_in, None);
        let mut out = Matrix::zeros(states.rows(), self.hidden() + 1);
        for n in 0..states.rows() {
            cols.hidden_into(states.row(n), out.row_mut(n));
        }
        out
    }

    /// Raw outputs for a feature matrix produced by [`Self::hidden_features`].
    pub fn outputs_from_features(&self, features: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(features.rows(), self.action_dim());
        for n in 0..features.rows() {
            self.output_into(features.row(n), out.row_mut(n));
        }
        out
    }

    /// Clipped action `C(μ₀(s))` for every state row.
    pub fn clipped_actions(&self, states: &Matrix, bounds: &BoxBounds) -> Matrix {
        let mut out = self.outputs_from_features(&self.hidden_features(states));
        for n in 0..out.rows() {
            bounds.clip_in_place(out.row_mut(n));
        }
        out
    }
}

impl CriticParams {
    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            w_s_in: Matrix::zeros(hidden, state_dim + 1),
            w_a_in: Matrix::zeros(hidden, action_dim),
            w_out: Matrix::zeros(1, hidden + 1),
        }
    }

    /// Both input tensors feed the same hidden units, so they share the fan-in
    /// `D_s + 1 + D_a`; the output row uses `H + 1`.
    pub fn init(rng: &mut Rng, state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        let fan_in = state_dim + 1 + action_dim;
        Self {
            w_s_in: uniform_matrix(rng, hidden, state_dim + 1, fan_in),
            w_a_in: uniform_matrix(rng, hidden, action_dim, fan_in),
            w_out: uniform_matrix(rng, 1, hidden + 1, hidden + 1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w_s_in.cols() - 1
    }

    pub fn action_dim(&self) -> usize {
        self.w_a_in.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_s_in.rows()
    }

    fn check_dims(&self, op: &'static str, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() || a.len() != self.action_dim() {
            return Err(crate::error::dim_mismatch(
                op,
                format!("({}, {})", self.state_dim(), self.action_dim()),
                format!("({}, {})", s.len(), a.len()),
            ));
        }
        Ok(())
    }

    fn hidden_into(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        let ds = self.state_dim();
        let h = self.hidden();
        for (i, z) in out[..h].iter_mut().enumerate() {
            let ws = self.w_s_in.row(i);
            *z = ws[ds];
            for j in 0..ds {
                *z += s[j] * ws[j];
            }
            for (&ak, &w) in a.iter().zip(self.w_a_in.row(i)) {
                *z += ak * w;
            }
        }
        tanh_in_place(&mut out[..h]);
        out[h] = 1.0;
    }

    fn columns(&self) -> InputColumns {
        InputColumns::new(&self.w_s_in, Some(&self.w_a_in))
    }

    /// Returns `Q(s, a)` and the augmented hidden layer `x_c(s, a)`.
    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dims("critic_forward", s, a)?;
        let mut hidden = vec![0.0; self.hidden() + 1];
        self.hidden_into(s, a, &mut hidden);
        let q = dot(self.w_out.as_slice(), &hidden);
        Ok((q, hidden))
    }

    /// `∇_a Q(s, a)`; the constant hidden component contributes nothing.
    pub fn grad_action(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad_action(s, a)?.1)
    }

    /// `Q(s, a)` together with `∇_a Q(s, a)` from a single hidden-layer pass.
    pub fn value_and_grad_action(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (q, hidden) = self.forward(s, a)?;
        let mut grad = vec![0.0; self.action_dim()];
        self.grad_action_from_hidden(&hidden, &mut grad);
        Ok((q, grad))
    }

    fn grad_action_from_hidden(&self, hidden: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let w = self.w_out.as_slice();
        for i in 0..self.hidden() {
            let h = hidden[i];
            let coeff = w[i] * (1.0 - h * h);
            for (g, &wa) in grad.iter_mut().zip(self.w_a_in.row(i)) {
                *g += coeff * wa;
            }
        }
    }

    /// Row-stacked hidden features `x_c(s, a)`.
    pub fn hidden_features(&self, states: &Matrix, actions: &Matrix) -> Matrix {
        let cols = self.columns();
        let mut out = Matrix::zeros(states.rows(), self.hidden() + 1);
        let mut x = Vec::new();
        for n in 0..states.rows() {
            concat_into(&mut x, states.row(n), actions.row(n));
            cols.hidden_into(&x, out.row_mut(n));
        }
        out
    }

    pub fn values(&self, states: &Matrix, actions: &Matrix) -> Vec<f64> {
        let cols = self.columns();
        let mut hidden = vec![0.0; self.hidden() + 1];
        let mut x = Vec::new();
        (0..states.rows())
            .map(|n| {
                concat_into(&mut x, states.row(n), actions.row(n));
                cols.hidden_into(&x, &mut hidden);
                dot(self.w_out.as_slice(), &hidden)
            })
            .collect()
    }
}

/// Free-function form of [`ActorParams::forward`].
pub fn actor_forward(params: &ActorParams, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    params.forward(s)
}

/// Free-function form of [`CriticParams::forward`].
pub fn critic_forward(params: &CriticParams, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
    params.forward(s, a)
}

/// Free-function form of [`CriticParams::grad_action`].
pub fn grad_a_q(params: &CriticParams, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    params.grad_action(s, a)
}

/// `target ← (1 − τ)·target + τ·main` on every tensor.
pub fn soft_update<P: ParamSet>(target: &mut P, main: &P, tau: f64) -> Result<()> {
    if !target.same_shape(main) {
        return Err(Error::ShapeMismatch("soft_update".into()));
    }
    for (t, m) in target.tensors_mut().into_iter().zip(main.tensors()) {
        for (x, &y) in t.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grad: &P) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step = self.lr / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let p = p.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                p[j] -= step * m[j] / ((v[j] / bc2).sqrt() + eps);
            }
        }
    }
}

/// Bootstrap targets `y = r + γ(1 − d)·Q_targ(s', C(μ₀_targ(s')))`.
pub fn critic_targets(
    actor_target: &ActorParams,
    critic_target: &CriticParams,
    batch: &Minibatch,
    gamma: f64,
    bounds: &BoxBounds,
) -> Vec<f64> {
    let next_actions = actor_target.clipped_actions(&batch.next_states, bounds);
    let next_q = critic_target.values(&batch.next_states, &next_actions);
    batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(next_q)
        .map(|((&r, &d), q)| r + gamma * (1.0 - d) * q)
        .collect()
}

/// Critic loss `mean (Q(s,a) − y)² + β′‖φ‖²` and its gradient with respect to every tensor.
pub fn critic_loss_and_grad(
    critic: &CriticParams,
    batch: &Minibatch,
    targets: &[f64],
    beta_prime: f64,
) -> (f64, CriticParams) {
    let n = batch.len();
    let hdim = critic.hidden();
    let cols = critic.columns();
    let mut grad_cols = InputColumns::zeros(hdim, critic.state_dim() + critic.action_dim());
    let mut grad = critic.zeros_like();
    let mut hidden = vec![0.0; hdim + 1];
    let mut dz = vec![0.0; hdim];
    let mut x = Vec::new();
    let mut loss = 0.0;
    let w_out = critic.w_out.as_slice();
    for t in 0..n {
        let s = batch.states.row(t);
        let a = batch.actions.row(t);
        concat_into(&mut x, s, a);
        cols.hidden_into(&x, &mut hidden);
        let q = dot(w_out, &hidden);
        let err = q - targets[t];
        loss += err * err;
        let g = 2.0 * err / n as f64;
        axpy(g, &hidden, grad.w_out.as_mut_slice());
        for ((d, &w), &h) in dz.iter_mut().zip(w_out).zip(&hidden) {
            *d = g * w * (1.0 - h * h);
        }
        grad_cols.accumulate(&dz, &x);
    }
    grad_cols.scatter_add(&mut grad.w_s_in, Some(&mut grad.w_a_in));
    loss /= n as f64;
    loss += beta_prime * critic.sum_squares();
    for (g, p) in grad.tensors_mut().into_iter().zip(critic.tensors()) {
        axpy(2.0 * beta_prime, p.as_slice(), g.as_mut_slice());
    }
    (loss, grad)
}

/// Actor loss `mean[−Q(s, C(μ₀)) + (c/D_a)‖μ₀ − C(μ₀)‖²] + β′‖θ‖²` and its gradient.
///
/// The clip's derivative is taken as 1 on the closed box and 0 outside it.
pub fn actor_loss_and_grad(
    actor: &ActorParams,
    critic: &CriticParams,
    states: &Matrix,
    c: f64,
    beta_prime: f64,
    bounds: &BoxBounds,
) -> (f64, ActorParams) {
    let n = states.rows();
    let ds = actor.state_dim();
    let da = actor.action_dim();
    let hdim = actor.hidden();
    let actor_cols = InputColumns::new(&actor.w_in, None);
    let critic_cols = critic.columns();
    let mut grad_cols = InputColumns::zeros(hdim, ds);
    let mut u = vec![0.0; critic.hidden()];
    let mut x = Vec::new();
    let mut grad = actor.zeros_like();
    let mut h_actor = vec![0.0; hdim + 1];
    let mut h_critic = vec![0.0; critic.hidden() + 1];
    let mut mu0 = vec![0.0; da];
    let mut dq_da = vec![0.0; da];
    let mut d_mu0 = vec![0.0; da];
    let mut dh = vec![0.0; hdim];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for t in 0..n {
        let s = states.row(t);
        actor_cols.hidden_into(s, &mut h_actor);
        actor.output_into(&h_actor, &mut mu0);
        let mut mu = mu0.clone();
        bounds.clip_in_place(&mut mu);
        concat_into(&mut x, s, &mu);
        critic_cols.hidden_into(&x, &mut h_critic);
        let q = dot(critic.w_out.as_slice(), &h_critic);
        for ((ui, &w), &h) in u.iter_mut().zip(critic.w_out.as_slice()).zip(&h_critic) {
            *ui = w * (1.0 - h * h);
        }
        for (k, g) in dq_da.iter_mut().enumerate() {
            *g = dot(&u, critic_cols.col(1 + ds + k));
        }
        let mut penalty = 0.0;
        for j in 0..da {
            let excess = mu0[j] - mu[j];
            penalty += excess * excess;
            let inside = mu0[j] >= bounds.low[j] && mu0[j] <= bounds.high[j];
            let dq = if inside { dq_da[j] } else { 0.0 };
            d_mu0[j] = inv_n * (-dq + 2.0 * c / da as f64 * excess);
        }
        loss += -q + c / da as f64 * penalty;

        dh.fill(0.0);
        for k in 0..da {
            let g = d_mu0[k];
            if g == 0.0 {
                continue;
            }
            axpy(g, &h_actor, grad.w_out.row_mut(k));
            axpy(g, &actor.w_out.row(k)[..hdim], &mut dh);
        }
        for (d, &h) in dh.iter_mut().zip(&h_actor) {
            *d *= 1.0 - h * h;
        }
        grad_cols.accumulate(&dh, s);
    }
    grad_cols.scatter_add(&mut grad.w_in, None);
    loss *= inv_n;
    loss += beta_prime * actor.sum_squares();
    for (g, p) in grad.tensors_mut().into_iter().zip(actor.tensors()) {
        axpy(2.0 * beta_prime, p.as_slice(), g.as_mut_slice());
    }
    (loss, grad)
}

/// One Adam step on the critic loss. Returns the loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn ddpg_critic_step(
    critic: &mut CriticParams,
    actor_target: &ActorParams,
    critic_target: &CriticParams,
    batch: &Minibatch,
    gamma: f64,
    beta_c_prime: f64,
    bounds: &BoxBounds,
    adam: &mut AdamState,
) -> Result<f64> {
    let targets = critic_targets(actor_target, critic_target, batch, gamma, bounds);
    let (loss, grad) = critic_loss_and_grad(critic, batch, &targets, beta_c_prime);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteLoss("critic"));
    }
    adam.step(critic, &grad);
    Ok(loss)
}

/// One Adam step on the actor loss. Returns the loss before the step.
pub fn ddpg_actor_step(
    actor: &mut ActorParams,
    critic: &CriticParams,
    batch: &Minibatch,
    c: f64,
    beta_a_prime: f64,
    bounds: &BoxBounds,
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grad) = actor_loss_and_grad(actor, critic, &batch.states, c, beta_a_prime, bounds);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteLoss("actor"));
    }
    adam.step(actor, &grad);
    Ok(loss)
}
