use rand_distr::{Distribution, Normal, Uniform};

use super::layout::*;
use super::ops::{axpy, col2im, dot, im2col, sigmoid, Real};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Flat parameter vector plus the magnitude-head bound `nu_max` (deg/frame).
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    nu_max: f64,
    values: Vec<F>,
}

/// Gradient with the same layout as [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    values: Vec<F>,
}

impl<F: Real> NetParams<F> {
    pub fn zeros(nu_max: f64) -> Self {
        Self { nu_max, values: vec![F::zero(); param_count()] }
    }

    pub fn from_values(nu_max: f64, values: Vec<F>) -> Result<Self> {
        if values.len() != param_count() {
            return Err(Error::Shape(format!("{} parameters, expected {}", values.len(), param_count())));
        }
        if !(nu_max > 0.0) {
            return Err(Error::InvalidInput(format!("nu_max must be positive, got {nu_max}")));
        }
        Ok(Self { nu_max, values })
    }

    /// Glorot-uniform conv and LSTM weights, forget-gate bias 1, and small
    /// output heads so the initial policy is close to uniform.
    pub fn init(nu_max: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(nu_max);
        let fill_uniform = |s: &mut [F], bound: f64, rng: &mut Rng| {
            let u = Uniform::new_inclusive(-bound, bound).unwrap();
            s.iter_mut().for_each(|v| *v = F::lit(u.sample(rng)));
        };
        for l in 0..4 {
            let cin = if l == 0 { 1 } else { CONV_CHANNELS };
            let bound = (6.0 / ((cin + CONV_CHANNELS) * 9) as f64).sqrt();
            fill_uniform(p.tensor_mut(Tensor::conv_weight(l)), bound, rng);
        }
        let lstm_bound = 1.0 / (HIDDEN as f64).sqrt();
        fill_uniform(p.tensor_mut(Tensor::LstmWih), lstm_bound, rng);
        fill_uniform(p.tensor_mut(Tensor::LstmWhh), lstm_bound, rng);
        p.tensor_mut(Tensor::LstmB)[HIDDEN..2 * HIDDEN].iter_mut().for_each(|v| *v = F::one());
        let small = Normal::new(0.0, 0.01).unwrap();
        for t in [Tensor::PolicyW, Tensor::MagnitudeW] {
            p.tensor_mut(t).iter_mut().for_each(|v| *v = F::lit(small.sample(rng)));
        }
        fill_uniform(p.tensor_mut(Tensor::ValueW), lstm_bound, rng);
        p
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn tensor(&self, t: Tensor) -> &[F] {
        &self.values[t.range()]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [F] {
        &mut self.values[t.range()]
    }

    pub fn cast<G: Real>(&self) -> NetParams<G> {
        NetParams { nu_max: self.nu_max, values: self.values.iter().map(|v| G::lit(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<F: Real> Gradients<F> {
    pub fn zeros() -> Self {
        Self { values: vec![F::zero(); param_count()] }
    }

    pub fn from_values(values: Vec<F>) -> Result<Self> {
        if values.len() != param_count() {
            return Err(Error::Shape(format!("{} gradient entries, expected {}", values.len(), param_count())));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn tensor(&self, t: Tensor) -> &[F] {
        &self.values[t.range()]
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += *b);
    }

    pub fn scale(&mut self, k: F) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    /// Rescales so the L2 norm does not exceed `max_norm`; returns the original norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.l2_norm();
        if n > max_norm && n > 0.0 {
            self.scale(F::lit(max_norm / n));
        }
        n
    }
}

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub hidden: Vec<F>,
    pub cell: Vec<F>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros() -> Self {
        Self { hidden: vec![F::zero(); HIDDEN], cell: vec![F::zero(); HIDDEN] }
    }
}

impl<F: Real> Default for LstmState<F> {
    fn default() -> Self {
        Self::zeros()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput<F> {
    pub policy: [F; N_DIRECTIONS],
    pub logits: [F; N_DIRECTIONS],
    pub value: F,
    /// Predicted step magnitude in degrees, within `[0, nu_max]`.
    pub magnitude: F,
    pub next_state: LstmState<F>,
}

impl<F: Real> NetOutput<F> {
    pub fn greedy_direction(&self) -> usize {
        let mut best = 0;
        for k in 1..N_DIRECTIONS {
            if self.policy[k] > self.policy[best] {
                best = k;
            }
        }
        best
    }
}

/// Activations of one forward step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepRecord<F> {
    pub(crate) input: Vec<F>,
    /// Post-ReLU outputs of the four conv layers.
    pub(crate) acts: [Vec<F>; 4],
    pub(crate) h_prev: Vec<F>,
    pub(crate) c_prev: Vec<F>,
    /// Gate activations in i, f, g, o order.
    pub(crate) gates: Vec<F>,
    pub(crate) tanh_c: Vec<F>,
    pub(crate) h: Vec<F>,
    pub(crate) mag_sigmoid: F,
}

impl<F: Real> StepRecord<F> {
    /// Sign pattern of every ReLU unit; used to detect kinks when comparing
    /// against finite differences.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.acts.iter().flat_map(|a| a.iter().map(|v| *v > F::zero())).collect()
    }
}

/// Recorded forward activations of a sequence of steps.
#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    pub(crate) steps: Vec<StepRecord<F>>,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepRecord<F>] {
        &self.steps
    }
}

/// Gradient of the training objective with respect to one step's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadGrad<F> {
    pub d_logits: [F; N_DIRECTIONS],
    pub d_value: F,
    /// With respect to the magnitude in degrees (after the `nu_max` scaling).
    pub d_magnitude: F,
}

impl<F: Real> Default for HeadGrad<F> {
    fn default() -> Self {
        Self { d_logits: [F::zero(); N_DIRECTIONS], d_value: F::zero(), d_magnitude: F::zero() }
    }
}

fn conv_forward<F: Real>(params: &NetParams<F>, layer: usize, input: &[F], cols: &mut Vec<F>) -> Vec<F> {
    let cin = if layer == 0 { 1 } else { CONV_CHANNELS };
    let n = SPATIAL[layer];
    let m = SPATIAL[layer + 1];
    let k = cin * 9;
    im2col(input, cin, n, cols);
    let w = params.tensor(Tensor::conv_weight(layer));
    let b = params.tensor(Tensor::conv_bias(layer));
    let mut out = vec![F::zero(); CONV_CHANNELS * m * m];
    for o in 0..CONV_CHANNELS {
        let row = &mut out[o * m * m..(o + 1) * m * m];
        row.iter_mut().for_each(|v| *v = b[o]);
        let wo = &w[o * k..(o + 1) * k];
        for (kk, &wv) in wo.iter().enumerate() {
            axpy(wv, &cols[kk * m * m..(kk + 1) * m * m], row);
        }
        row.iter_mut().for_each(|v| *v = v.max(F::zero()));
    }
    out
}

fn step_forward<F: Real>(params: &NetParams<F>, obs: &[f32], state: &LstmState<F>) -> (StepRecord<F>, NetOutput<F>) {
    assert_eq!(obs.len(), SPATIAL[0] * SPATIAL[0], "observation must be 42x42");
    let input: Vec<F> = obs.iter().map(|&v| F::lit(v as f64)).collect();
    let mut cols = Vec::new();
    let a1 = conv_forward(params, 0, &input, &mut cols);
    let a2 = conv_forward(params, 1, &a1, &mut cols);
    let a3 = conv_forward(params, 2, &a2, &mut cols);
    let a4 = conv_forward(params, 3, &a3, &mut cols);

    let wih = params.tensor(Tensor::LstmWih);
    let whh = params.tensor(Tensor::LstmWhh);
    let bias = params.tensor(Tensor::LstmB);
    let mut gates = vec![F::zero(); GATES];
    for r in 0..GATES {
        let z = bias[r] + dot(&wih[r * FLAT..(r + 1) * FLAT], &a4) + dot(&whh[r * HIDDEN..(r + 1) * HIDDEN], &state.hidden);
        gates[r] = if (2 * HIDDEN..3 * HIDDEN).contains(&r) { z.tanh() } else { sigmoid(z) };
    }
    let mut cell = vec![F::zero(); HIDDEN];
    let mut tanh_c = vec![F::zero(); HIDDEN];
    let mut h = vec![F::zero(); HIDDEN];
    for j in 0..HIDDEN {
        let (i, f, g, o) = (gates[j], gates[HIDDEN + j], gates[2 * HIDDEN + j], gates[3 * HIDDEN + j]);
        cell[j] = f * state.cell[j] + i * g;
        tanh_c[j] = cell[j].tanh();
        h[j] = o * tanh_c[j];
    }

    let pw = params.tensor(Tensor::PolicyW);
    let pb = params.tensor(Tensor::PolicyB);
    let mut logits = [F::zero(); N_DIRECTIONS];
    for k in 0..N_DIRECTIONS {
        logits[k] = pb[k] + dot(&pw[k * HIDDEN..(k + 1) * HIDDEN], &h);
    }
    let policy = softmax(&logits);
    let value = params.tensor(Tensor::ValueB)[0] + dot(params.tensor(Tensor::ValueW), &h);
    let mag_z = params.tensor(Tensor::MagnitudeB)[0] + dot(params.tensor(Tensor::MagnitudeW), &h);
    let mag_sigmoid = sigmoid(mag_z);
    let magnitude = F::lit(params.nu_max) * mag_sigmoid;

    let out = NetOutput {
        policy,
        logits,
        value,
        magnitude,
        next_state: LstmState { hidden: h.clone(), cell },
    };
    let rec = StepRecord {
        input,
        acts: [a1, a2, a3, a4],
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        gates,
        tanh_c,
        h,
        mag_sigmoid,
    };
    (rec, out)
}

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &[F; N_DIRECTIONS]) -> [F; N_DIRECTIONS] {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut p = [F::zero(); N_DIRECTIONS];
    let mut s = F::zero();
    for k in 0..N_DIRECTIONS {
        p[k] = (logits[k] - m).exp();
        s += p[k];
    }
    p.iter_mut().for_each(|v| *v = *v / s);
    p
}

/// One step of the network: policy over the 8 headings, state value,
/// magnitude and the next recurrent state. Pure in its arguments.
pub fn forward<F: Real>(params: &NetParams<F>, obs: &[f32], state: &LstmState<F>) -> NetOutput<F> {
    step_forward(params, obs, state).1
}

/// As [`forward`], additionally recording activations onto `tape`.
pub fn forward_taped<F: Real>(params: &NetParams<F>, obs: &[f32], state: &LstmState<F>, tape: &mut Tape<F>) -> NetOutput<F> {
    let (rec, out) = step_forward(params, obs, state);
    tape.steps.push(rec);
    out
}

/// Backpropagation through time over a whole tape, given the gradient of
/// the objective with respect to each step's outputs.
pub fn backward<F: Real>(params: &NetParams<F>, tape: &Tape<F>, heads: &[HeadGrad<F>]) -> Result<Gradients<F>> {
    if heads.len() != tape.len() {
        return Err(Error::Shape(format!("{} head gradients for a tape of {} steps", heads.len(), tape.len())));
    }
    let mut grads = Gradients::zeros();
    let mut dh_next = vec![F::zero(); HIDDEN];
    let mut dc_next = vec![F::zero(); HIDDEN];
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    let nu_max = F::lit(params.nu_max);

    for (rec, hg) in tape.steps.iter().zip(heads).rev() {
        let mut dh = dh_next.clone();
        {
            let pw = params.tensor(Tensor::PolicyW);
            for k in 0..N_DIRECTIONS {
                let g = hg.d_logits[k];
                if g == F::zero() {
                    continue;
                }
                axpy(g, &pw[k * HIDDEN..(k + 1) * HIDDEN], &mut dh);
                let r = Tensor::PolicyW.range();
                axpy(g, &rec.h, &mut grads.values[r.start + k * HIDDEN..r.start + (k + 1) * HIDDEN]);
                grads.values[Tensor::PolicyB.range().start + k] += g;
            }
            let dv = hg.d_value;
            axpy(dv, params.tensor(Tensor::ValueW), &mut dh);
            axpy(dv, &rec.h, &mut grads.values[Tensor::ValueW.range()]);
            grads.values[Tensor::ValueB.range().start] += dv;
            let s = rec.mag_sigmoid;
            let dz = hg.d_magnitude * nu_max * s * (F::one() - s);
            axpy(dz, params.tensor(Tensor::MagnitudeW), &mut dh);
            axpy(dz, &rec.h, &mut grads.values[Tensor::MagnitudeW.range()]);
            grads.values[Tensor::MagnitudeB.range().start] += dz;
        }

        let mut dz = vec![F::zero(); GATES];
        let mut dc_prev = vec![F::zero(); HIDDEN];
        for j in 0..HIDDEN {
            let (i, f, g, o) = (rec.gates[j], rec.gates[HIDDEN + j], rec.gates[2 * HIDDEN + j], rec.gates[3 * HIDDEN + j]);
            let tc = rec.tanh_c[j];
            let d_o = dh[j] * tc;
            let dc = dh[j] * o * (F::one() - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (F::one() - i);
            dz[HIDDEN + j] = dc * rec.c_prev[j] * f * (F::one() - f);
            dz[2 * HIDDEN + j] = dc * i * (F::one() - g * g);
            dz[3 * HIDDEN + j] = d_o * o * (F::one() - o);
            dc_prev[j] = dc * f;
        }

        let x = &rec.acts[3];
        let mut dx = vec![F::zero(); FLAT];
        let mut dh_prev = vec![F::zero(); HIDDEN];
        {
            let wih = params.tensor(Tensor::LstmWih);
            let whh = params.tensor(Tensor::LstmWhh);
            let (r_ih, r_hh, r_b) = (Tensor::LstmWih.range(), Tensor::LstmWhh.range(), Tensor::LstmB.range());
            for r in 0..GATES {
                let d = dz[r];
                if d == F::zero() {
                    continue;
                }
                axpy(d, x, &mut grads.values[r_ih.start + r * FLAT..r_ih.start + (r + 1) * FLAT]);
                axpy(d, &rec.h_prev, &mut grads.values[r_hh.start + r * HIDDEN..r_hh.start + (r + 1) * HIDDEN]);
                grads.values[r_b.start + r] += d;
                axpy(d, &wih[r * FLAT..(r + 1) * FLAT], &mut dx);
                axpy(d, &whh[r * HIDDEN..(r + 1) * HIDDEN], &mut dh_prev);
            }
        }

        let mut dact = dx;
        for layer in (0..4).rev() {
            let cin = if layer == 0 { 1 } else { CONV_CHANNELS };
            let n = SPATIAL[layer];
            let m = SPATIAL[layer + 1];
            let mm = m * m;
            let k = cin * 9;
            let out = &rec.acts[layer];
            for (d, a) in dact.iter_mut().zip(out) {
                if *a <= F::zero() {
                    *d = F::zero();
                }
            }
            let input = if layer == 0 { &rec.input } else { &rec.acts[layer - 1] };
            im2col(input, cin, n, &mut cols);
            let w = params.tensor(Tensor::conv_weight(layer));
            let rw = Tensor::conv_weight(layer).range();
            let rb = Tensor::conv_bias(layer).range();
            for o in 0..CONV_CHANNELS {
                let dout = &dact[o * mm..(o + 1) * mm];
                grads.values[rb.start + o] += dout.iter().copied().sum::<F>();
                for kk in 0..k {
                    grads.values[rw.start + o * k + kk] += dot(dout, &cols[kk * mm..(kk + 1) * mm]);
                }
            }
            if layer == 0 {
                break;
            }
            dcols.clear();
            dcols.resize(k * mm, F::zero());
            for o in 0..CONV_CHANNELS {
                let dout = &dact[o * mm..(o + 1) * mm];
                for kk in 0..k {
                    axpy(w[o * k + kk], dout, &mut dcols[kk * mm..(kk + 1) * mm]);
                }
            }
            let mut din = vec![F::zero(); cin * n * n];
            col2im(&dcols, cin, n, &mut din);
            dact = din;
        }

        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    Ok(grads)
}
