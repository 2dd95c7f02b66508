//! Jordan network with output-probability feedback.
//!
//! At every step the hidden layer sees the constant problem input
//! concatenated with the previous step's output probabilities:
//!
//! ```text
//! h(t) = relu(W1 [x ; p(t-1)] + b1)
//! p(t) = sigmoid(W2 h(t) + b2),     p(-1) = (0.5, ..., 0.5)
//! ```
//!
//! A digit is decided once its probability leaves the closed band
//! `[1 - threshold, threshold]`; the network answers at the first step where
//! every digit is decided. Training unrolls the full step budget and sums the
//! binary cross-entropy of every step.

use serde::{Deserialize, Serialize};

use crate::arithmetic::{Operation, Operator, DEFAULT_WIDTH};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` inside `log`.
pub const PROB_EPSILON: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub operator: Operator,
    pub hidden_dim: usize,
    pub threshold: f64,
    pub max_steps: usize,
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_width() -> usize {
    DEFAULT_WIDTH
}

impl ModelConfig {
    pub fn new(operator: Operator, hidden_dim: usize, threshold: f64) -> Result<Self> {
        let config = Self {
            operator,
            hidden_dim,
            threshold,
            max_steps: DEFAULT_MAX_STEPS,
            width: DEFAULT_WIDTH,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Result<Self> {
        self.max_steps = max_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.5 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold must lie in (0.5, 1), got {}",
                self.threshold
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument("width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.width
    }

    pub fn output_dim(&self) -> usize {
        self.operator.output_dim(self.width)
    }
}

/// Weights and biases, row-major.
///
/// `w1` is `hidden_dim x (input_dim + output_dim)`, `w2` is
/// `output_dim x hidden_dim`. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * (input_dim + output_dim)],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    pub fn zeros_for(config: &ModelConfig) -> Self {
        Self::zeros(config.input_dim(), config.hidden_dim, config.output_dim())
    }

    /// Row length of `w1`.
    pub fn fan_in(&self) -> usize {
        self.input_dim + self.output_dim
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// All parameters in `w1, b1, w2, b2` order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
    }

    pub fn fill(&mut self, value: f64) {
        self.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &NetworkParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// Check internal consistency and agreement with `config`.
    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        let expect = |what, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    what,
                    expected,
                    actual,
                })
            }
        };
        expect("input_dim", config.input_dim(), self.input_dim)?;
        expect("hidden_dim", config.hidden_dim, self.hidden_dim)?;
        expect("output_dim", config.output_dim(), self.output_dim)?;
        expect("w1", self.hidden_dim * self.fan_in(), self.w1.len())?;
        expect("b1", self.hidden_dim, self.b1.len())?;
        expect("w2", self.output_dim * self.hidden_dim, self.w2.len())?;
        expect("b2", self.output_dim, self.b2.len())
    }
}

/// On-disk form of a trained network: the model configuration, a shape
/// header, and every weight in one flat row-major array (`w1`, `b1`, `w2`,
/// `b2` in that order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedNetwork {
    pub config: ModelConfig,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub weights: Vec<f64>,
}

impl SavedNetwork {
    pub fn new(config: &ModelConfig, params: &NetworkParams) -> Result<Self> {
        params.check_shape(config)?;
        let (i, h, o) = (params.input_dim, params.hidden_dim, params.output_dim);
        let shapes = vec![
            ("w1".to_string(), vec![h, i + o]),
            ("b1".to_string(), vec![h]),
            ("w2".to_string(), vec![o, h]),
            ("b2".to_string(), vec![o]),
        ];
        Ok(Self {
            config: *config,
            shapes,
            weights: params.iter().copied().collect(),
        })
    }

    pub fn params(&self) -> Result<NetworkParams> {
        self.config.validate()?;
        let mut params = NetworkParams::zeros_for(&self.config);
        if self.weights.len() != params.len() {
            return Err(Error::ShapeMismatch {
                what: "saved weights",
                expected: params.len(),
                actual: self.weights.len(),
            });
        }
        params.iter_mut().zip(&self.weights).for_each(|(p, w)| *p = *w);
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Digit {
    Zero,
    One,
    Uncertain,
}

impl Digit {
    pub fn bit(self) -> Option<u8> {
        match self {
            Digit::Zero => Some(0),
            Digit::One => Some(1),
            Digit::Uncertain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
    pub digits: Vec<Digit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub steps: Vec<StepRecord>,
    pub answer_step: Option<usize>,
    pub predicted: Option<Vec<u8>>,
}

/// Outcome of running one problem to its answer, without the per-step record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub step: Option<usize>,
    pub digits: Option<Vec<u8>>,
}

impl Answer {
    pub fn is_correct(&self, target: &[u8]) -> bool {
        self.digits.as_deref() == Some(target)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One unroll step: `h = relu(W1 [x ; p_prev] + b1)`, `p = sigmoid(W2 h + b2)`.
///
/// Returns `(pre_activation, hidden, probs)`.
pub fn forward_step(
    params: &NetworkParams,
    x: &[f64],
    p_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if x.len() != params.input_dim {
        return Err(Error::ShapeMismatch {
            what: "input vector",
            expected: params.input_dim,
            actual: x.len(),
        });
    }
    if p_prev.len() != params.output_dim {
        return Err(Error::ShapeMismatch {
            what: "feedback vector",
            expected: params.output_dim,
            actual: p_prev.len(),
        });
    }
    let fan_in = params.fan_in();
    let pre: Vec<f64> = (0..params.hidden_dim)
        .map(|j| {
            let row = &params.w1[j * fan_in..(j + 1) * fan_in];
            let (wx, wp) = row.split_at(params.input_dim);
            params.b1[j] + dot(wx, x) + dot(wp, p_prev)
        })
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
    let probs = (0..params.output_dim)
        .map(|i| {
            let row = &params.w2[i * params.hidden_dim..(i + 1) * params.hidden_dim];
            sigmoid(params.b2[i] + dot(row, &hidden))
        })
        .collect();
    Ok((pre, hidden, probs))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Threshold each probability: `One` above `threshold`, `Zero` below
/// `1 - threshold`, `Uncertain` on the closed band in between.
pub fn decide_digits(probs: &[f64], threshold: f64) -> Vec<Digit> {
    probs.iter().map(|&p| decide(p, threshold)).collect()
}

#[inline]
fn decide(p: f64, threshold: f64) -> Digit {
    if p > threshold {
        Digit::One
    } else if p < 1.0 - threshold {
        Digit::Zero
    } else {
        Digit::Uncertain
    }
}

/// Unroll until every digit is confident or the step budget runs out.
///
/// The trace holds every computed step up to and including the answer step.
pub fn run_to_answer(params: &NetworkParams, config: &ModelConfig, op: &Operation) -> Result<ForwardTrace> {
    params.check_shape(config)?;
    check_operation(config, op)?;
    let x = op.input_f64();
    let mut p_prev = vec![0.5; config.output_dim()];
    let mut steps = Vec::new();
    for t in 0..config.max_steps {
        let (pre_activation, hidden, probs) = forward_step(params, &x, &p_prev)?;
        let digits = decide_digits(&probs, config.threshold);
        let answered = digits.iter().all(|d| *d != Digit::Uncertain);
        p_prev.clone_from(&probs);
        steps.push(StepRecord {
            pre_activation,
            hidden,
            probs,
            digits,
        });
        if answered {
            let predicted = steps[t].digits.iter().filter_map(|d| d.bit()).collect();
            return Ok(ForwardTrace {
                steps,
                answer_step: Some(t),
                predicted: Some(predicted),
            });
        }
    }
    Ok(ForwardTrace {
        steps,
        answer_step: None,
        predicted: None,
    })
}

fn check_operation(config: &ModelConfig, op: &Operation) -> Result<()> {
    if op.operator != config.operator {
        return Err(Error::InvalidArgument(format!(
            "operation {op} does not match a {} network",
            config.operator
        )));
    }
    if op.width() != config.width {
        return Err(Error::ShapeMismatch {
            what: "operand width",
            expected: config.width,
            actual: op.width(),
        });
    }
    Ok(())
}

/// Binary cross-entropy summed over digits.
pub fn step_loss(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .map(|(&z, &p)| {
            let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
            -(z * p.ln() + (1.0 - z) * (1.0 - p).ln())
        })
        .sum()
}

/// Sum of step losses over the full `max_steps` unroll (no early halting).
pub fn total_loss(params: &NetworkParams, config: &ModelConfig, op: &Operation) -> Result<f64> {
    params.check_shape(config)?;
    check_operation(config, op)?;
    let example = Example::from_operation(op);
    let mut tape = Tape::new(params, config.max_steps);
    tape.forward(params, &example.input);
    Ok(tape.loss(&example.target))
}

/// Exact gradient of the summed unrolled loss over `batch`, including the
/// path through the fed-back probabilities.
pub fn bptt_gradients(params: &NetworkParams, config: &ModelConfig, batch: &[Operation]) -> Result<NetworkParams> {
    Ok(loss_and_gradients(params, config, batch)?.1)
}

pub fn loss_and_gradients(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &[Operation],
) -> Result<(f64, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    params.check_shape(config)?;
    for op in batch {
        check_operation(config, op)?;
    }
    let examples: Vec<Example> = batch.iter().map(Example::from_operation).collect();
    let mut grads = NetworkParams::zeros_for(config);
    let mut tape = Tape::new(params, config.max_steps);
    let loss = examples
        .iter()
        .map(|ex| tape.accumulate(params, ex, &mut grads))
        .sum();
    Ok((loss, grads))
}

/// Input and target as reals, precomputed once per operation.
#[derive(Debug, Clone)]
pub(crate) struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl Example {
    pub fn from_operation(op: &Operation) -> Self {
        Self {
            input: op.input_f64(),
            target: op.target_f64(),
        }
    }
}

/// Activation storage for one unrolled sequence, reused across examples.
pub(crate) struct Tape {
    steps: usize,
    hidden_dim: usize,
    output_dim: usize,
    initial: Vec<f64>,
    base: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    // backward scratch
    d_probs: Vec<f64>,
    d_out: Vec<f64>,
    d_pre: Vec<f64>,
    d_pre_sum: Vec<f64>,
}

impl Tape {
    pub fn new(params: &NetworkParams, steps: usize) -> Self {
        let (h, o) = (params.hidden_dim, params.output_dim);
        Self {
            steps,
            hidden_dim: h,
            output_dim: o,
            initial: vec![0.5; o],
            base: vec![0.0; h],
            pre: vec![0.0; steps * h],
            hidden: vec![0.0; steps * h],
            probs: vec![0.0; steps * o],
            d_probs: vec![0.0; o],
            d_out: vec![0.0; o],
            d_pre: vec![0.0; h],
            d_pre_sum: vec![0.0; h],
        }
    }

    pub fn probs(&self, t: usize) -> &[f64] {
        &self.probs[t * self.output_dim..(t + 1) * self.output_dim]
    }

    pub fn forward(&mut self, params: &NetworkParams, input: &[f64]) {
        let (h, o, n_in) = (self.hidden_dim, self.output_dim, params.input_dim);
        let fan_in = params.fan_in();
        // the input part of W1 x is constant over the unroll
        for j in 0..h {
            self.base[j] = params.b1[j] + dot(&params.w1[j * fan_in..j * fan_in + n_in], input);
        }
        for t in 0..self.steps {
            let (done, rest) = self.probs.split_at_mut(t * o);
            let prev: &[f64] = if t == 0 { &self.initial } else { &done[(t - 1) * o..] };
            let pre = &mut self.pre[t * h..(t + 1) * h];
            let hid = &mut self.hidden[t * h..(t + 1) * h];
            for j in 0..h {
                let a = self.base[j] + dot(&params.w1[j * fan_in + n_in..(j + 1) * fan_in], prev);
                pre[j] = a;
                hid[j] = a.max(0.0);
            }
            let out = &mut rest[..o];
            for i in 0..o {
                out[i] = sigmoid(params.b2[i] + dot(&params.w2[i * h..(i + 1) * h], hid));
            }
        }
    }

    pub fn loss(&self, target: &[f64]) -> f64 {
        (0..self.steps).map(|t| step_loss(target, self.probs(t))).sum()
    }

    /// Forward, then backpropagate through time into `grads`. Returns the loss.
    pub fn accumulate(&mut self, params: &NetworkParams, ex: &Example, grads: &mut NetworkParams) -> f64 {
        self.forward(params, &ex.input);
        let loss = self.loss(&ex.target);
        let (h, o, n_in) = (self.hidden_dim, self.output_dim, params.input_dim);
        let fan_in = params.fan_in();
        self.d_probs.fill(0.0);
        self.d_pre_sum.fill(0.0);
        for t in (0..self.steps).rev() {
            let probs = &self.probs[t * o..(t + 1) * o];
            let hid = &self.hidden[t * h..(t + 1) * h];
            let pre = &self.pre[t * h..(t + 1) * h];
            for i in 0..o {
                let p = probs[i];
                // d(BCE)/d(logit) = p - z; the fed-back gradient passes through sigmoid'
                self.d_out[i] = (p - ex.target[i]) + self.d_probs[i] * p * (1.0 - p);
            }
            for i in 0..o {
                let g = self.d_out[i];
                grads.b2[i] += g;
                let row = &mut grads.w2[i * h..(i + 1) * h];
                row.iter_mut().zip(hid).for_each(|(w, &hj)| *w += g * hj);
            }
            for j in 0..h {
                self.d_pre[j] = if pre[j] > 0.0 {
                    (0..o).map(|i| params.w2[i * h + j] * self.d_out[i]).sum()
                } else {
                    0.0
                };
            }
            let prev_start = t.checked_sub(1).map(|s| s * o);
            for j in 0..h {
                let g = self.d_pre[j];
                if g == 0.0 {
                    continue;
                }
                grads.b1[j] += g;
                self.d_pre_sum[j] += g;
                let row = &mut grads.w1[j * fan_in + n_in..(j + 1) * fan_in];
                match prev_start {
                    Some(s) => {
                        let prev = &self.probs[s..s + o];
                        row.iter_mut().zip(prev).for_each(|(w, &pk)| *w += g * pk);
                    }
                    None => row.iter_mut().for_each(|w| *w += g * 0.5),
                }
            }
            if t > 0 {
                for k in 0..o {
                    self.d_probs[k] = (0..h)
                        .map(|j| params.w1[j * fan_in + n_in + k] * self.d_pre[j])
                        .sum();
                }
            }
        }
        for j in 0..h {
            let g = self.d_pre_sum[j];
            if g != 0.0 {
                let row = &mut grads.w1[j * fan_in..j * fan_in + n_in];
                row.iter_mut().zip(&ex.input).for_each(|(w, &xk)| *w += g * xk);
            }
        }
        loss
    }
}

/// Allocation-light evaluator used for accuracy and answer-step sweeps.
pub(crate) struct Evaluator {
    base: Vec<f64>,
    hidden: Vec<f64>,
    prev: Vec<f64>,
    probs: Vec<f64>,
}

impl Evaluator {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            base: vec![0.0; params.hidden_dim],
            hidden: vec![0.0; params.hidden_dim],
            prev: vec![0.0; params.output_dim],
            probs: vec![0.0; params.output_dim],
        }
    }

    pub fn answer(&mut self, params: &NetworkParams, threshold: f64, max_steps: usize, input: &[f64]) -> Answer {
        let (h, o, n_in) = (params.hidden_dim, params.output_dim, params.input_dim);
        let fan_in = params.fan_in();
        for j in 0..h {
            self.base[j] = params.b1[j] + dot(&params.w1[j * fan_in..j * fan_in + n_in], input);
        }
        self.prev.fill(0.5);
        for t in 0..max_steps {
            for j in 0..h {
                let a = self.base[j] + dot(&params.w1[j * fan_in + n_in..(j + 1) * fan_in], &self.prev);
                self.hidden[j] = a.max(0.0);
            }
            let mut answered = true;
            for i in 0..o {
                let p = sigmoid(params.b2[i] + dot(&params.w2[i * h..(i + 1) * h], &self.hidden));
                self.probs[i] = p;
                answered &= decide(p, threshold) != Digit::Uncertain;
            }
            if answered {
                let digits = self.probs.iter().map(|&p| u8::from(p > threshold)).collect();
                return Answer {
                    step: Some(t),
                    digits: Some(digits),
                };
            }
            std::mem::swap(&mut self.prev, &mut self.probs);
        }
        Answer {
            step: None,
            digits: None,
        }
    }
}

/// Run one problem to its answer, keeping only the answer step and digits.
pub fn answer(params: &NetworkParams, config: &ModelConfig, op: &Operation) -> Result<Answer> {
    params.check_shape(config)?;
    check_operation(config, op)?;
    Ok(Evaluator::new(params).answer(params, config.threshold, config.max_steps, &op.input_f64()))
}
