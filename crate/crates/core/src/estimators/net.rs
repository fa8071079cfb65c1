//! A two-hidden-layer fully connected noise estimator with exact backprop.
//!
//! ```text
//! a1 = W1 x + b1 + Wt tau(t) + (Wc e | null)
//! h1 = silu(a1)
//! h2 = silu(W2 h1 + b2)
//! eps = W3 h2 + b3
//! ```
//!
//! `tau(t)` is a fixed sinusoidal timestep embedding. The null condition adds
//! a learned hidden-space token instead of the projected embedding, so the
//! unconditional branch never touches `Wc`.

use super::tensor::{read_tensors, take_tensor, write_tensors, Tensor};
use super::{ConditionalEstimator, NoiseEstimator};
use crate::diffusion::forward_jump;
use crate::embedding::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::rng::DiffusionSeed;
use crate::schedule::NoiseSchedule;

pub const TIME_EMBED_WIDTH: usize = 16;

const HEADER: &str = "voxtend-net v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub frames: usize,
    pub bins: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub cond_dim: usize,
}

impl NetShape {
    pub fn input_len(&self) -> usize {
        self.frames * self.bins
    }

    fn validate(&self) -> Result<()> {
        if [self.frames, self.bins, self.hidden1, self.hidden2, self.cond_dim].contains(&0) {
            return Err(Error::Config(format!("net dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            frames: 8,
            bins: 8,
            hidden1: 128,
            hidden2: 128,
            cond_dim: 8,
        }
    }
}

/// Every trainable tensor; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w_time: Tensor,
    pub w_cond: Tensor,
    pub null_cond: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl NetParams {
    pub const NAMES: [&'static str; 9] = [
        "w1", "b1", "w_time", "w_cond", "null_cond", "w2", "b2", "w3", "b3",
    ];

    fn zeros(s: &NetShape) -> Self {
        let n = s.input_len();
        Self {
            w1: Tensor::zeros(s.hidden1, n),
            b1: Tensor::zeros(s.hidden1, 1),
            w_time: Tensor::zeros(s.hidden1, TIME_EMBED_WIDTH),
            w_cond: Tensor::zeros(s.hidden1, s.cond_dim),
            null_cond: Tensor::zeros(s.hidden1, 1),
            w2: Tensor::zeros(s.hidden2, s.hidden1),
            b2: Tensor::zeros(s.hidden2, 1),
            w3: Tensor::zeros(n, s.hidden2),
            b3: Tensor::zeros(n, 1),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w_time", &self.w_time),
            ("w_cond", &self.w_cond),
            ("null_cond", &self.null_cond),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w_time", &mut self.w_time),
            ("w_cond", &mut self.w_cond),
            ("null_cond", &mut self.null_cond),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallNetEstimator {
    shape: NetShape,
    params: NetParams,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// Sinusoidal embedding of the step index: sines then cosines at
/// geometrically spaced frequencies `10000^(-j/8)`.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_WIDTH] {
    let half = TIME_EMBED_WIDTH / 2;
    let mut out = [0.0; TIME_EMBED_WIDTH];
    for j in 0..half {
        let freq = 10_000f64.powf(-(j as f64) / half as f64);
        let angle = t as f64 * freq;
        out[j] = angle.sin();
        out[half + j] = angle.cos();
    }
    out
}

struct Activations {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
    tau: [f64; TIME_EMBED_WIDTH],
}

impl SmallNetEstimator {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(shape: NetShape, seed: &mut DiffusionSeed) -> Result<Self> {
        shape.validate()?;
        let mut params = NetParams::zeros(&shape);
        let n = shape.input_len();
        let fan_ins = [
            n,
            n,
            TIME_EMBED_WIDTH,
            shape.cond_dim,
            n,
            shape.hidden1,
            shape.hidden1,
            shape.hidden2,
            shape.hidden2,
        ];
        for ((_, tensor), fan_in) in params.tensors_mut().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut tensor.data {
                *v = (2.0 * seed.uniform() - 1.0) * bound;
            }
        }
        Ok(Self { shape, params })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            params: NetParams::zeros(&shape),
            shape,
        })
    }

    pub fn net_shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn check_inputs(&self, x_t: &FeatureMap, condition: Option<&SpeakerEmbedding>) -> Result<()> {
        if x_t.shape() != (self.shape.frames, self.shape.bins) {
            return Err(Error::Config(format!(
                "estimator expects {}x{} maps, got {}x{}",
                self.shape.frames,
                self.shape.bins,
                x_t.frames(),
                x_t.bins()
            )));
        }
        if let Some(e) = condition {
            if e.dim() != self.shape.cond_dim {
                return Err(Error::Config(format!(
                    "estimator expects {}-dim embeddings, got {}",
                    self.shape.cond_dim,
                    e.dim()
                )));
            }
        }
        Ok(())
    }

    fn activations(&self, x: &[f64], t: usize, condition: Option<&SpeakerEmbedding>) -> Activations {
        let p = &self.params;
        let tau = time_embedding(t);
        let mut a1 = p.b1.data.clone();
        p.w1.matvec_acc(x, &mut a1);
        p.w_time.matvec_acc(&tau, &mut a1);
        match condition {
            Some(e) => p.w_cond.matvec_acc(e.as_slice(), &mut a1),
            None => {
                for (a, n) in a1.iter_mut().zip(&p.null_cond.data) {
                    *a += n;
                }
            }
        }
        let h1: Vec<f64> = a1.iter().map(|&a| silu(a)).collect();
        let mut a2 = p.b2.data.clone();
        p.w2.matvec_acc(&h1, &mut a2);
        let h2: Vec<f64> = a2.iter().map(|&a| silu(a)).collect();
        let mut out = p.b3.data.clone();
        p.w3.matvec_acc(&h2, &mut out);
        Activations {
            a1,
            h1,
            a2,
            h2,
            out,
            tau,
        }
    }

    /// Deterministic forward pass; `None` runs the unconditional branch.
    pub fn forward(
        &self,
        x_t: &FeatureMap,
        t: usize,
        condition: Option<&SpeakerEmbedding>,
    ) -> Result<FeatureMap> {
        self.check_inputs(x_t, condition)?;
        let act = self.activations(x_t.as_slice(), t, condition);
        Ok(FeatureMap::from_vec_unchecked(
            self.shape.frames,
            self.shape.bins,
            act.out,
        ))
    }

    /// Accumulate `d loss / d params` for one example given `d loss / d out`.
    fn backward(
        &self,
        x: &[f64],
        condition: Option<&SpeakerEmbedding>,
        act: &Activations,
        d_out: &[f64],
        grads: &mut NetParams,
    ) {
        let p = &self.params;
        grads.w3.outer_acc(d_out, &act.h2);
        for (g, d) in grads.b3.data.iter_mut().zip(d_out) {
            *g += d;
        }
        let mut d_h2 = vec![0.0; self.shape.hidden2];
        p.w3.matvec_t_acc(d_out, &mut d_h2);
        let d_a2: Vec<f64> = d_h2
            .iter()
            .zip(&act.a2)
            .map(|(d, &a)| d * silu_grad(a))
            .collect();
        grads.w2.outer_acc(&d_a2, &act.h1);
        for (g, d) in grads.b2.data.iter_mut().zip(&d_a2) {
            *g += d;
        }
        let mut d_h1 = vec![0.0; self.shape.hidden1];
        p.w2.matvec_t_acc(&d_a2, &mut d_h1);
        let d_a1: Vec<f64> = d_h1
            .iter()
            .zip(&act.a1)
            .map(|(d, &a)| d * silu_grad(a))
            .collect();
        grads.w1.outer_acc(&d_a1, x);
        grads.w_time.outer_acc(&d_a1, &act.tau);
        for (g, d) in grads.b1.data.iter_mut().zip(&d_a1) {
            *g += d;
        }
        match condition {
            Some(e) => grads.w_cond.outer_acc(&d_a1, e.as_slice()),
            None => {
                for (g, d) in grads.null_cond.data.iter_mut().zip(&d_a1) {
                    *g += d;
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let s = &self.shape;
        let meta = Tensor {
            rows: 1,
            cols: 2,
            data: vec![s.frames as f64, s.bins as f64],
        };
        let mut tensors = vec![("shape", &meta)];
        tensors.extend(self.params.tensors());
        write_tensors(HEADER, tensors)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tensors = read_tensors(HEADER, text)?;
        let meta = take_tensor(&mut tensors, "shape", 1, 2)?;
        let dim = |name: &str, axis: fn(&Tensor) -> usize| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| axis(t))
                .ok_or_else(|| Error::Config(format!("checkpoint missing tensor `{name}`")))
        };
        let shape = NetShape {
            frames: meta.data[0] as usize,
            bins: meta.data[1] as usize,
            hidden1: dim("w1", |t| t.rows)?,
            hidden2: dim("w2", |t| t.rows)?,
            cond_dim: dim("w_cond", |t| t.cols)?,
        };
        shape.validate()?;
        let n = shape.input_len();
        let (h1, h2, d) = (shape.hidden1, shape.hidden2, shape.cond_dim);
        let params = NetParams {
            w1: take_tensor(&mut tensors, "w1", h1, n)?,
            b1: take_tensor(&mut tensors, "b1", h1, 1)?,
            w_time: take_tensor(&mut tensors, "w_time", h1, TIME_EMBED_WIDTH)?,
            w_cond: take_tensor(&mut tensors, "w_cond", h1, d)?,
            null_cond: take_tensor(&mut tensors, "null_cond", h1, 1)?,
            w2: take_tensor(&mut tensors, "w2", h2, h1)?,
            b2: take_tensor(&mut tensors, "b2", h2, 1)?,
            w3: take_tensor(&mut tensors, "w3", n, h2)?,
            b3: take_tensor(&mut tensors, "b3", n, 1)?,
        };
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Config(format!("unexpected tensor `{name}` in checkpoint")));
        }
        Ok(Self { shape, params })
    }
}

impl NoiseEstimator for SmallNetEstimator {
    fn shape(&self) -> (usize, usize) {
        (self.shape.frames, self.shape.bins)
    }

    fn estimate(&self, x_t: &FeatureMap, t: usize) -> Result<FeatureMap> {
        self.forward(x_t, t, None)
    }
}

impl ConditionalEstimator for SmallNetEstimator {
    fn estimate_conditional(
        &self,
        x_t: &FeatureMap,
        t: usize,
        condition: Option<&SpeakerEmbedding>,
    ) -> Result<FeatureMap> {
        self.forward(x_t, t, condition)
    }
}

/// One training example before noising.
#[derive(Debug, Clone, Copy)]
pub struct TrainingItem<'a> {
    pub x0: &'a FeatureMap,
    pub t: usize,
    pub condition: Option<&'a SpeakerEmbedding>,
}

/// Mean `l_simple` over the batch and its exact gradient.
///
/// Each item is noised with [`forward_jump`], drawing from `seed` in batch order.
pub fn net_grad(
    batch: &[TrainingItem<'_>],
    net: &SmallNetEstimator,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<(f64, NetParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut grads = NetParams::zeros(&net.shape);
    let n = net.shape.input_len() as f64;
    let scale = 2.0 / (n * batch.len() as f64);
    let mut loss = 0.0;
    for item in batch {
        net.check_inputs(item.x0, item.condition)?;
        let (xt, eps) = forward_jump(item.x0, item.t, sched, seed)?;
        let act = net.activations(xt.as_slice(), item.t, item.condition);
        let diff: Vec<f64> = act
            .out
            .iter()
            .zip(eps.as_slice())
            .map(|(o, e)| o - e)
            .collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / n;
        let d_out: Vec<f64> = diff.iter().map(|d| d * scale).collect();
        net.backward(xt.as_slice(), item.condition, &act, &d_out, &mut grads);
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Source of `(x0, reference embedding)` training pairs.
pub trait PairSource {
    fn draw(&self, seed: &mut DiffusionSeed) -> (FeatureMap, SpeakerEmbedding);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Plain gradient descent with a fixed step.
    Sgd,
    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8` and bias correction.
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the condition with the null token.
    pub p_uncond: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            p_uncond: 0.1,
            optimizer: Optimizer::default(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: NetParams,
    v: NetParams,
    step: i32,
}

impl AdamState {
    fn new(shape: &NetShape) -> Self {
        Self {
            m: NetParams::zeros(shape),
            v: NetParams::zeros(shape),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut NetParams, grads: &NetParams, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            for (((pv, gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SmallNetEstimator,
    /// Batch loss at every step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// Mean of the first and last `window` losses.
    pub fn smoothed_endpoints(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (
            mean(&self.losses[..w]),
            mean(&self.losses[self.losses.len() - w..]),
        )
    }
}

/// Minimize the batch noise-prediction loss with conditional dropout.
///
/// Each step draws `batch_size` pairs, a uniform step index per pair, and
/// replaces the condition by the null token with probability `p_uncond`.
pub fn train_estimator(
    data: &dyn PairSource,
    mut net: SmallNetEstimator,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    seed: &mut DiffusionSeed,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::invalid("steps and batch size must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.p_uncond) {
        return Err(Error::invalid(format!("p_uncond {} outside [0, 1]", cfg.p_uncond)));
    }
    let total = sched.total_steps();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut adam = AdamState::new(&net.shape);
    for step in 1..=cfg.steps {
        let mut examples = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (x0, e) = data.draw(seed);
            let t = 1 + seed.index_inclusive(total - 1);
            let keep = seed.uniform() >= cfg.p_uncond;
            examples.push((x0, t, keep.then_some(e)));
        }
        let batch: Vec<TrainingItem<'_>> = examples
            .iter()
            .map(|(x0, t, e)| TrainingItem {
                x0,
                t: *t,
                condition: e.as_ref(),
            })
            .collect();
        let (loss, grads) = net_grad(&batch, &net, sched, seed)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch: step, loss });
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for ((_, p), (_, g)) in net.params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pv, gv) in p.data.iter_mut().zip(&g.data) {
                        *pv -= cfg.learning_rate * gv;
                    }
                }
            }
            Optimizer::Adam => adam.apply(&mut net.params, &grads, cfg.learning_rate),
        }
        if !net.params.is_finite() {
            return Err(Error::TrainingDiverged { epoch: step, loss: f64::NAN });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    fn tiny() -> NetShape {
        NetShape {
            frames: 2,
            bins: 3,
            hidden1: 5,
            hidden2: 4,
            cond_dim: 3,
        }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear, 50).unwrap()
    }

    fn silu_ref(a: f64) -> f64 {
        a / (1.0 + (-a).exp())
    }

    /// Forward pass written with explicit index loops over the named tensors.
    fn reference_forward(p: &NetParams, s: &NetShape, x: &[f64], t: usize, e: Option<&[f64]>) -> Vec<f64> {
        let at = |m: &Tensor, r: usize, c: usize| m.data[r * m.cols + c];
        let n = s.input_len();
        let tau: Vec<f64> = (0..16)
            .map(|k| {
                let j = k % 8;
                let angle = t as f64 / 10_000f64.powf(j as f64 / 8.0);
                if k < 8 { angle.sin() } else { angle.cos() }
            })
            .collect();
        let h1: Vec<f64> = (0..s.hidden1)
            .map(|i| {
                let mut a = p.b1.data[i];
                a += (0..n).map(|c| at(&p.w1, i, c) * x[c]).sum::<f64>();
                a += (0..16).map(|c| at(&p.w_time, i, c) * tau[c]).sum::<f64>();
                a += match e {
                    Some(e) => (0..s.cond_dim).map(|c| at(&p.w_cond, i, c) * e[c]).sum::<f64>(),
                    None => p.null_cond.data[i],
                };
                silu_ref(a)
            })
            .collect();
        let h2: Vec<f64> = (0..s.hidden2)
            .map(|i| silu_ref(p.b2.data[i] + (0..s.hidden1).map(|c| at(&p.w2, i, c) * h1[c]).sum::<f64>()))
            .collect();
        (0..n)
            .map(|i| p.b3.data[i] + (0..s.hidden2).map(|c| at(&p.w3, i, c) * h2[c]).sum::<f64>())
            .collect()
    }

    fn unit(v: &[f64]) -> SpeakerEmbedding {
        SpeakerEmbedding::normalize(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = SmallNetEstimator::zeros(NetShape::default()).unwrap();
        let x = DiffusionSeed::new(1).normal_map(8, 8);
        let out = net.forward(&x, 17, None).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_loop_reference() {
        let s = tiny();
        let net = SmallNetEstimator::init(s, &mut DiffusionSeed::new(4)).unwrap();
        let mut rng = DiffusionSeed::new(5);
        let e = unit(&[0.3, -0.8, 0.5]);
        for t in [1, 7, 50] {
            let x = rng.normal_map(2, 3);
            for cond in [None, Some(&e)] {
                let got = net.forward(&x, t, cond).unwrap();
                let want = reference_forward(net.params(), &s, x.as_slice(), t, cond.map(|e| e.as_slice()));
                for (g, w) in got.as_slice().iter().zip(&want) {
                    assert!((g - w).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_checks_shapes() {
        let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(4)).unwrap();
        let x = DiffusionSeed::new(6).normal_map(2, 3);
        assert_eq!(net.forward(&x, 3, None).unwrap(), net.forward(&x, 3, None).unwrap());
        assert!(net.forward(&FeatureMap::zeros(3, 2), 3, None).is_err());
        assert!(net.forward(&x, 3, Some(&unit(&[1.0, 0.0]))).is_err());
        assert_eq!(net.parameter_count(), 5 * 6 + 5 + 5 * 16 + 5 * 3 + 5 + 4 * 5 + 4 + 6 * 4 + 6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = tiny();
        let net = SmallNetEstimator::init(s, &mut DiffusionSeed::new(8)).unwrap();
        let sch = sched();
        let mut rng = DiffusionSeed::new(9);
        let xs: Vec<FeatureMap> = (0..4).map(|_| rng.normal_map(2, 3)).collect();
        let ea = unit(&[1.0, 2.0, -1.0]);
        let eb = unit(&[-0.5, 0.1, 0.9]);
        let batch = [
            TrainingItem { x0: &xs[0], t: 1, condition: Some(&ea) },
            TrainingItem { x0: &xs[1], t: 12, condition: None },
            TrainingItem { x0: &xs[2], t: 30, condition: Some(&eb) },
            TrainingItem { x0: &xs[3], t: 50, condition: None },
        ];
        let seed = DiffusionSeed::new(10);
        let (loss, grads) = net_grad(&batch, &net, &sch, &mut seed.clone()).unwrap();
        assert!(loss >= 0.0);
        let h = 1e-6;
        let mut checked = 0;
        for name in NetParams::NAMES {
            let len = net.params().tensors().iter().find(|(n, _)| *n == name).unwrap().1.data.len();
            for k in 0..len {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    for (n, t) in probe.params_mut().tensors_mut() {
                        if n == name {
                            t.data[k] += delta;
                        }
                    }
                    net_grad(&batch, &probe, &sch, &mut seed.clone()).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads.tensors().iter().find(|(n, _)| *n == name).unwrap().1.data[k];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "{name}[{k}]: analytic {an} vs numeric {fd}");
                checked += 1;
            }
        }
        assert_eq!(checked, net.parameter_count());
    }

    #[test]
    fn batch_gradient_is_mean_of_item_gradients() {
        let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(8)).unwrap();
        let sch = sched();
        let mut rng = DiffusionSeed::new(11);
        let (x0, x1) = (rng.normal_map(2, 3), rng.normal_map(2, 3));
        let a = TrainingItem { x0: &x0, t: 5, condition: None };
        let b = TrainingItem { x0: &x1, t: 40, condition: None };
        let (loss_ab, g_ab) = net_grad(&[a, b], &net, &sch, &mut DiffusionSeed::new(12)).unwrap();
        let mut seq = DiffusionSeed::new(12);
        let (loss_a, g_a) = net_grad(&[a], &net, &sch, &mut seq).unwrap();
        let (loss_b, g_b) = net_grad(&[b], &net, &sch, &mut seq).unwrap();
        assert!((loss_ab - 0.5 * (loss_a + loss_b)).abs() < 1e-12);
        for (((_, ab), (_, ga)), (_, gb)) in g_ab.tensors().iter().zip(g_a.tensors()).zip(g_b.tensors()) {
            for ((x, y), z) in ab.data.iter().zip(&ga.data).zip(&gb.data) {
                assert!((x - 0.5 * (y + z)).abs() < 1e-12);
            }
        }
        assert!(net_grad(&[], &net, &sch, &mut seq).is_err());
    }

    struct FixedPairs {
        maps: Vec<FeatureMap>,
        emb: SpeakerEmbedding,
    }

    impl PairSource for FixedPairs {
        fn draw(&self, seed: &mut DiffusionSeed) -> (FeatureMap, SpeakerEmbedding) {
            let k = seed.index_inclusive(self.maps.len() - 1);
            (self.maps[k].clone(), self.emb.clone())
        }
    }

    fn pairs() -> FixedPairs {
        FixedPairs {
            maps: vec![FeatureMap::filled(2, 3, 1.0), FeatureMap::filled(2, 3, -1.0)],
            emb: unit(&[0.0, 1.0, 0.0]),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = TrainConfig { steps: 20, batch_size: 4, ..TrainConfig::default() };
        let run = || {
            let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(1)).unwrap();
            train_estimator(&pairs(), net, &cfg, &sched(), &mut DiffusionSeed::new(2)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.net, b.net);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.losses.len(), 20);
        assert!(a.losses.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn fully_unconditional_training_leaves_condition_weights() {
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig { steps: 10, batch_size: 4, p_uncond: 1.0, optimizer, ..TrainConfig::default() };
            let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(1)).unwrap();
            let before = net.params().w_cond.clone();
            let out = train_estimator(&pairs(), net, &cfg, &sched(), &mut DiffusionSeed::new(2)).unwrap();
            assert_eq!(out.net.params().w_cond, before);
            assert_ne!(out.net.params().null_cond, SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(1)).unwrap().params().null_cond);
        }
    }

    #[test]
    fn huge_step_diverges() {
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 4,
            learning_rate: 1e6,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(1)).unwrap();
        let err = train_estimator(&pairs(), net, &cfg, &sched(), &mut DiffusionSeed::new(2)).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }), "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = SmallNetEstimator::init(tiny(), &mut DiffusionSeed::new(3)).unwrap();
        let text = net.to_text();
        assert!(text.starts_with("voxtend-net v1\n"));
        assert_eq!(SmallNetEstimator::from_text(&text).unwrap(), net);
        assert!(SmallNetEstimator::from_text(&text.replace("tensor b3", "tensor b4")).is_err());
        assert!(SmallNetEstimator::from_text("voxtend-fbank v1\n").is_err());
    }

    #[test]
    fn time_embedding_values() {
        let tau = time_embedding(3);
        assert_eq!(tau[0], 3f64.sin());
        assert_eq!(tau[8], 3f64.cos());
        assert!((tau[7] - (3.0 * 10_000f64.powf(-7.0 / 8.0)).sin()).abs() < 1e-15);
    }
}
