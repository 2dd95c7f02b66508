//! Training to full accuracy with Adam over BPTT gradients, and answer-step
//! measurement of trained networks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arithmetic::{partition_by_carries, CarryDataset, Operation};
use crate::error::{Error, Result};
use crate::network::{Evaluator, Example, ModelConfig, NetworkParams, Tape};
use crate::par;

pub const DEFAULT_MAX_EPOCHS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0 && self.epsilon > 0.0 && self.batch_size > 0;
        let betas = (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0;
        if positive && betas {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros = NetworkParams::zeros(params.input_dim, params.hidden_dim, params.output_dim);
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let correction1 = 1.0 - cfg.beta1.powi(t);
    let correction2 = 1.0 - cfg.beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((w, g), m), v) in tensors {
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Draw from N(0, (bound/2)^2), rejecting anything outside `[-bound, bound]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    let normal = Normal::new(0.0, bound / 2.0).expect("positive std dev");
    loop {
        let x = normal.sample(rng);
        if x.abs() <= bound {
            return x;
        }
    }
}

/// Weights from a truncated normal on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
/// biases zero. Layer 1 fan-in is input + output width, layer 2 is hidden width.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> NetworkParams {
    let mut params = NetworkParams::zeros_for(config);
    let bound1 = 1.0 / (params.fan_in() as f64).sqrt();
    let bound2 = 1.0 / (params.hidden_dim as f64).sqrt();
    params.w1.iter_mut().for_each(|w| *w = truncated_normal(rng, bound1));
    params.w2.iter_mut().for_each(|w| *w = truncated_normal(rng, bound2));
    params
}

/// Result of one training run plus its answer-step measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: ModelConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_index: Option<usize>,
    pub epochs_run: usize,
    /// `None` when training stopped at the epoch limit.
    pub epochs_to_converge: Option<usize>,
    pub final_accuracy: f64,
    pub answer_steps: BTreeMap<String, Vec<usize>>,
    pub mean_answer_step: BTreeMap<String, f64>,
    pub overall_mean_answer_step: Option<f64>,
}

impl TrialRecord {
    pub fn converged(&self) -> bool {
        self.epochs_to_converge.is_some()
    }

    /// Class means ordered by carry count.
    pub fn class_means(&self) -> Vec<(usize, f64)> {
        let mut means: Vec<(usize, f64)> = self
            .mean_answer_step
            .iter()
            .filter_map(|(k, v)| k.parse().ok().map(|c| (c, *v)))
            .collect();
        means.sort_by_key(|(c, _)| *c);
        means
    }

    /// Fill answer-step fields from a measurement.
    pub fn set_answer_steps(&mut self, steps: &BTreeMap<usize, Vec<usize>>) {
        self.answer_steps = steps.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        self.mean_answer_step = steps.iter().map(|(k, v)| (k.to_string(), mean_usize(v))).collect();
        let all: Vec<usize> = steps.values().flatten().copied().collect();
        self.overall_mean_answer_step = (!all.is_empty()).then(|| mean_usize(&all));
    }
}

fn mean_usize(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

/// Stateful trainer; one epoch at a time.
pub struct Trainer {
    config: ModelConfig,
    adam: AdamConfig,
    params: NetworkParams,
    state: AdamState,
    ops: Vec<Operation>,
    examples: Vec<Example>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    tape: Tape,
    grads: NetworkParams,
    evaluator: Evaluator,
    epochs: usize,
}

impl Trainer {
    /// Seeds the generator, then draws the initial weights from it.
    pub fn new(config: ModelConfig, adam: AdamConfig, dataset: &[Operation], seed: u64) -> Result<Self> {
        config.validate()?;
        adam.validate()?;
        if dataset.is_empty() {
            return Err(Error::EmptyInput("training dataset"));
        }
        if let Some(op) = dataset.iter().find(|op| op.operator != config.operator) {
            return Err(Error::InvalidArgument(format!(
                "operation {op} does not match a {} network",
                config.operator
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng);
        Ok(Self {
            config,
            adam,
            state: AdamState::new(&params),
            grads: NetworkParams::zeros_for(&config),
            tape: Tape::new(&params, config.max_steps),
            evaluator: Evaluator::new(&params),
            params,
            ops: dataset.to_vec(),
            examples: dataset.iter().map(Example::from_operation).collect(),
            order: (0..dataset.len()).collect(),
            rng,
            epochs: 0,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Shuffle, then one Adam step per mini-batch on the summed gradient.
    /// Returns the summed loss seen during the epoch.
    pub fn run_epoch(&mut self) -> f64 {
        self.order.shuffle(&mut self.rng);
        let mut epoch_loss = 0.0;
        for batch in self.order.chunks(self.adam.batch_size) {
            self.grads.fill(0.0);
            for &i in batch {
                epoch_loss += self.tape.accumulate(&self.params, &self.examples[i], &mut self.grads);
            }
            adam_step(&mut self.params, &self.grads, &mut self.state, &self.adam);
        }
        self.epochs += 1;
        epoch_loss
    }

    pub fn accuracy(&mut self) -> f64 {
        let correct = self
            .ops
            .iter()
            .zip(&self.examples)
            .filter(|(op, ex)| {
                self.evaluator
                    .answer(&self.params, self.config.threshold, self.config.max_steps, &ex.input)
                    .is_correct(&op.target)
            })
            .count();
        correct as f64 / self.ops.len() as f64
    }

    /// Total unrolled loss over the whole dataset at the current parameters.
    pub fn dataset_loss(&mut self) -> f64 {
        self.examples
            .iter()
            .map(|ex| {
                self.tape.forward(&self.params, &ex.input);
                self.tape.loss(&ex.target)
            })
            .sum()
    }
}

/// Train until the whole dataset is answered correctly or `max_epochs` pass.
///
/// Accuracy is checked after every epoch. A converged network also gets its
/// answer steps measured per carry class.
pub fn train_network(
    config: &ModelConfig,
    adam: &AdamConfig,
    dataset: &[Operation],
    seed: u64,
    max_epochs: usize,
) -> Result<(NetworkParams, TrialRecord)> {
    let mut trainer = Trainer::new(*config, *adam, dataset, seed)?;
    let mut converged = None;
    let mut accuracy = trainer.accuracy();
    while trainer.epochs() < max_epochs {
        trainer.run_epoch();
        accuracy = trainer.accuracy();
        if accuracy == 1.0 {
            converged = Some(trainer.epochs());
            break;
        }
    }
    log::debug!(
        "{} d_h={} theta={} seed={seed}: {} after {} epochs (accuracy {accuracy:.4})",
        config.operator,
        config.hidden_dim,
        config.threshold,
        if converged.is_some() { "converged" } else { "stopped" },
        trainer.epochs()
    );
    let mut record = TrialRecord {
        config: *config,
        seed,
        trial_index: None,
        epochs_run: trainer.epochs(),
        epochs_to_converge: converged,
        final_accuracy: accuracy,
        answer_steps: BTreeMap::new(),
        mean_answer_step: BTreeMap::new(),
        overall_mean_answer_step: None,
    };
    let params = trainer.into_params();
    if converged.is_some() {
        let classes = partition_by_carries(dataset)?;
        record.set_answer_steps(&measure_answer_steps(&params, config, &classes)?);
    }
    Ok((params, record))
}

/// Fraction of operations answered with exactly the right digits.
pub fn evaluate_accuracy(params: &NetworkParams, config: &ModelConfig, dataset: &[Operation]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    params.check_shape(config)?;
    let correct = par::map(dataset, |op| {
        let mut eval = Evaluator::new(params);
        eval.answer(params, config.threshold, config.max_steps, &op.input_f64())
            .is_correct(&op.target)
    });
    Ok(correct.iter().filter(|&&c| c).count() as f64 / dataset.len() as f64)
}

/// Answer step of every operation, grouped by carry class. Fails if any
/// operation goes unanswered.
pub fn measure_answer_steps(
    params: &NetworkParams,
    config: &ModelConfig,
    classes: &[CarryDataset],
) -> Result<BTreeMap<usize, Vec<usize>>> {
    params.check_shape(config)?;
    let mut out = BTreeMap::new();
    for class in classes {
        let steps = par::map(&class.operations, |op| {
            Evaluator::new(params)
                .answer(params, config.threshold, config.max_steps, &op.input_f64())
                .step
                .ok_or_else(|| Error::Unanswered(op.to_string()))
        });
        out.insert(class.carries, steps.into_iter().collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::{enumerate_dataset, Operator};

    #[test]
    fn biases_start_at_zero_and_weights_in_bounds() {
        let config = ModelConfig::new(Operator::Add, 48, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init_params(&config, &mut rng);
        assert!(params.b1.iter().chain(&params.b2).all(|&b| b == 0.0));
        let b1 = 1.0 / 13f64.sqrt();
        let b2 = 1.0 / 48f64.sqrt();
        assert!(params.w1.iter().all(|w| w.abs() <= b1));
        assert!(params.w2.iter().all(|w| w.abs() <= b2));
        assert!(params.w1.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn truncated_normal_support_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r = 1.0 / 13.0;
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = truncated_normal(&mut rng, r);
            assert!(x.abs() <= r);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 3.0 * (r / 2.0) / 1e3, "mean {mean}");
    }

    fn toy_params(v: f64) -> NetworkParams {
        let mut p = NetworkParams::zeros(2, 2, 1);
        p.fill(v);
        p
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = AdamConfig::default();
        let mut params = toy_params(0.3);
        let mut state = AdamState::new(&params);
        state.m.fill(0.5);
        state.v.fill(0.25);
        let mut zero_state = AdamState::new(&params);
        let zero = toy_params(0.0);
        let before = params.clone();
        adam_step(&mut params, &zero, &mut zero_state, &cfg);
        assert_eq!(params, before);
        assert!(zero_state.m.iter().all(|&m| m == 0.0));
        // existing moments decay
        let mut p2 = before.clone();
        adam_step(&mut p2, &zero, &mut state, &cfg);
        assert!(state.m.iter().all(|&m| (m - 0.45).abs() < 1e-15));
        assert!(state.v.iter().all(|&v| (v - 0.25 * 0.999).abs() < 1e-15));
    }

    #[test]
    fn adam_constant_gradient_steps_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut params = toy_params(0.0);
        let mut state = AdamState::new(&params);
        let mut grads = toy_params(0.0);
        grads.w1 = vec![2.0, -3.0, 0.5, -0.1, 7.0, 1.0, -1.0, 4.0, 2.0, 3.0, 0.0, 1.0][..grads.w1.len()].to_vec();
        grads.b2 = vec![-5.0];
        let mut prev = params.clone();
        for _ in 0..2000 {
            prev.clone_from(&params);
            adam_step(&mut params, &grads, &mut state, &cfg);
        }
        for ((now, before), g) in params.iter().zip(prev.iter()).zip(grads.iter()) {
            let step = now - before;
            if *g == 0.0 {
                assert_eq!(step, 0.0);
            } else {
                assert!((step + cfg.learning_rate * g.signum()).abs() < 1e-6, "{step} for {g}");
            }
        }
    }

    #[test]
    fn adam_matches_reference_recomputation() {
        let cfg = AdamConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = NetworkParams::zeros(3, 2, 2);
        params.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let mut flat: Vec<f64> = params.iter().copied().collect();
        let (mut m, mut v) = (vec![0.0; flat.len()], vec![0.0; flat.len()]);
        let mut state = AdamState::new(&params);
        for t in 1..=25 {
            let mut grads = NetworkParams::zeros(3, 2, 2);
            grads.iter_mut().for_each(|g| *g = rng.random_range(-2.0..2.0));
            adam_step(&mut params, &grads, &mut state, &cfg);
            for (i, g) in grads.iter().enumerate() {
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                flat[i] -= 0.001 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in params.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(state.t, 25);
    }

    #[test]
    fn zero_epochs_does_not_converge() {
        let config = ModelConfig::new(Operator::Sub, 8, 0.9).unwrap();
        let data = enumerate_dataset(Operator::Sub);
        let (_, record) = train_network(&config, &AdamConfig::default(), &data, 1, 0).unwrap();
        assert!(!record.converged());
        assert_eq!(record.epochs_run, 0);
        assert!(record.final_accuracy < 0.05);
        assert!(record.answer_steps.is_empty());
        assert_eq!(record.overall_mean_answer_step, None);
    }

    #[test]
    fn accuracy_edge_cases() {
        let config = ModelConfig::new(Operator::Add, 4, 0.9).unwrap();
        let data = enumerate_dataset(Operator::Add);
        let zero = NetworkParams::zeros_for(&config);
        assert_eq!(evaluate_accuracy(&zero, &config, &data).unwrap(), 0.0);
        // b2 biased straight to the answer of 0000+0000
        let mut params = zero.clone();
        params.b2 = vec![-20.0; 5];
        assert_eq!(evaluate_accuracy(&params, &config, &data[..1]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&params, &config, &data[..2]).unwrap(), 0.5);
        assert!(evaluate_accuracy(&params, &config, &[]).is_err());
    }

    #[test]
    fn answer_steps_grouping_and_unanswered_error() {
        let config = ModelConfig::new(Operator::Sub, 4, 0.9).unwrap();
        let classes = partition_by_carries(&enumerate_dataset(Operator::Sub)).unwrap();
        let mut params = NetworkParams::zeros_for(&config);
        params.b2 = vec![-20.0; 4];
        let steps = measure_answer_steps(&params, &config, &classes[2..3]).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[&2], vec![0; 19]);
        let never = NetworkParams::zeros_for(&config);
        assert!(matches!(
            measure_answer_steps(&never, &config, &classes),
            Err(Error::Unanswered(_))
        ));
    }

    #[test]
    fn epoch_visits_every_operation_once() {
        let data = enumerate_dataset(Operator::Sub);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        order.shuffle(&mut rng);
        let mut seen: Vec<usize> = order.chunks(32).flatten().copied().collect();
        assert_eq!(order.chunks(32).count(), 5);
        assert_eq!(order.chunks(32).last().unwrap().len(), 8);
        seen.sort();
        assert_eq!(seen, (0..136).collect::<Vec<_>>());
    }

    #[test]
    fn loss_falls_during_early_training() {
        let config = ModelConfig::new(Operator::Sub, 24, 0.9).unwrap();
        let data = enumerate_dataset(Operator::Sub);
        let mut trainer = Trainer::new(config, AdamConfig::default(), &data, 17).unwrap();
        let start = trainer.dataset_loss();
        for _ in 0..50 {
            trainer.run_epoch();
        }
        assert!(trainer.dataset_loss() < start);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let config = ModelConfig::new(Operator::Sub, 8, 0.9).unwrap();
        let data = enumerate_dataset(Operator::Sub);
        let a = train_network(&config, &AdamConfig::default(), &data, 5, 20).unwrap();
        let b = train_network(&config, &AdamConfig::default(), &data, 5, 20).unwrap();
        assert_eq!(a, b);
        let c = train_network(&config, &AdamConfig::default(), &data, 6, 20).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn trainer_rejects_mismatched_data() {
        let config = ModelConfig::new(Operator::Sub, 8, 0.9).unwrap();
        let add = enumerate_dataset(Operator::Add);
        assert!(Trainer::new(config, AdamConfig::default(), &add, 0).is_err());
        assert!(Trainer::new(config, AdamConfig::default(), &[], 0).is_err());
    }
}
