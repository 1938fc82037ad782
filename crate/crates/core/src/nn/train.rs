//! Minibatch SGD with momentum and per-layer learning rates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::mse_slices;
use crate::nn::network::{Network, Params};

/// How the per-sample squared error is scaled into the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// `(1 / (B * n)) * sum (pred - target)^2`: the mean over every output
    /// element of the batch.
    Mean,
    /// `(1 / (2 * B)) * sum (pred - target)^2`: squared error summed over a
    /// sample's outputs, averaged over the batch (the "Euclidean" loss of
    /// classic CNN frameworks, which the reference learning rates assume).
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub gamma: f64,
    pub every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// One rate per weighted layer, in order. A shorter list is stretched:
    /// the last entry drives the final layer, the one before it any extra
    /// convolution layers.
    pub learning_rates: Vec<f64>,
    pub bias_lr_mult: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub init_std: f64,
    pub log_interval: u64,
    pub loss_scale: LossScale,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub lr_decay: Option<StepDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-3, 1e-5],
            bias_lr_mult: 1.0,
            momentum: 0.9,
            batch_size: 64,
            iterations: 10_000,
            seed: 0,
            init_std: 1e-3,
            log_interval: 100,
            loss_scale: LossScale::default(),
            weight_decay: 0.0,
            clip_norm: None,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.learning_rates.is_empty() {
            return bad("learning_rates must not be empty".into());
        }
        if let Some(r) = self
            .learning_rates
            .iter()
            .find(|r| !(r.is_finite() && **r > 0.0))
        {
            return bad(format!("learning rate {r} must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be at least 1".into());
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad(format!("init_std {} must be >= 0", self.init_std));
        }
        if !(self.bias_lr_mult.is_finite() && self.bias_lr_mult >= 0.0) {
            return bad(format!("bias_lr_mult {} must be >= 0", self.bias_lr_mult));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("clip_norm {c} must be positive"));
            }
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.gamma.is_finite() && d.gamma > 0.0) {
                return bad(format!("invalid lr_decay {d:?}"));
            }
        }
        Ok(())
    }

    /// Learning rate of each weighted layer for a network with `layers` of them.
    pub fn resolve_rates(&self, layers: usize) -> Result<Vec<f64>> {
        let r = &self.learning_rates;
        if r.is_empty() {
            return Err(Error::Config("learning_rates must not be empty".into()));
        }
        if r.len() == layers || layers == 0 {
            return Ok(r[..layers.min(r.len())].to_vec());
        }
        if r.len() == 1 {
            return Ok(vec![r[0]; layers]);
        }
        let convs = &r[..r.len() - 1];
        let mut out: Vec<f64> = (0..layers - 1)
            .map(|i| convs[i.min(convs.len() - 1)])
            .collect();
        out.push(*r.last().unwrap());
        Ok(out)
    }

    fn decay_factor(&self, step: u64) -> f64 {
        match self.lr_decay {
            Some(d) => d.gamma.powi((step / d.every) as i32),
            None => 1.0,
        }
    }
}

/// Momentum SGD state: `v <- mu * v - lr * g; p <- p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    rates: Vec<f64>,
    velocity: Vec<Params>,
}

impl Sgd {
    pub fn new(network: &Network, config: &TrainConfig) -> Result<Self> {
        let rates = config.resolve_rates(network.parametric_layers())?;
        let velocity = network
            .layers()
            .iter()
            .map(Params::zeros_like)
            .collect();
        Ok(Self { rates, velocity })
    }

    pub(crate) fn with_velocity(network: &Network, config: &TrainConfig, velocity: Vec<Params>) -> Result<Self> {
        let mut s = Self::new(network, config)?;
        if velocity.len() != s.velocity.len()
            || velocity
                .iter()
                .zip(&s.velocity)
                .any(|(a, b)| a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len())
        {
            return Err(Error::shape("optimizer state", s.velocity.len(), velocity.len()));
        }
        s.velocity = velocity;
        Ok(s)
    }

    pub fn velocity(&self) -> &[Params] {
        &self.velocity
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Applies one update. Gradients are checked before anything is touched,
    /// so a non-finite gradient leaves the network unchanged.
    pub fn step(
        &mut self,
        network: &mut Network,
        grads: &[Params],
        config: &TrainConfig,
        step: u64,
    ) -> Result<()> {
        if grads.len() != network.layers().len() {
            return Err(Error::shape("gradients", network.layers().len(), grads.len()));
        }
        for (g, p) in grads.iter().zip(network.params()) {
            if g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len() {
                return Err(Error::shape(
                    "gradient",
                    (p.weights.len(), p.bias.len()),
                    (g.weights.len(), g.bias.len()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step,
                });
            }
        }
        let clip = match config.clip_norm {
            Some(c) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.weights.iter().chain(&g.bias))
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let mu = config.momentum;
        let decay = config.decay_factor(step);
        let mut rate = self.rates.iter();
        for ((p, g), v) in network
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
        {
            if p.weights.is_empty() && p.bias.is_empty() {
                continue;
            }
            let lr = rate.next().copied().unwrap_or(0.0) * decay;
            let blr = lr * config.bias_lr_mult;
            for ((w, &gw), vw) in p.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                let grad = clip * gw + config.weight_decay * *w;
                *vw = mu * *vw - lr * grad;
                *w += *vw;
            }
            for ((b, &gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
                *vb = mu * *vb - blr * clip * gb;
                *b += *vb;
            }
        }
        Ok(())
    }
}

/// Paired inputs and targets, each stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_len: usize,
    target_len: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_len: usize, target_len: usize) -> Self {
        Self {
            input_len,
            target_len,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) -> Result<()> {
        if input.len() != self.input_len || target.len() != self.target_len {
            return Err(Error::shape(
                "dataset sample",
                (self.input_len, self.target_len),
                (input.len(), target.len()),
            ));
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_len..(i + 1) * self.target_len]
    }

    /// Concatenation of two datasets with equal sample shapes.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if (other.input_len, other.target_len) != (self.input_len, self.target_len) {
            return Err(Error::shape(
                "dataset extend",
                (self.input_len, self.target_len),
                (other.input_len, other.target_len),
            ));
        }
        self.inputs.extend_from_slice(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
        Ok(())
    }

    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.input_len);
        let mut y = Vec::with_capacity(idx.len() * self.target_len);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.target(i));
        }
        (x, y)
    }
}

/// Sample indices for step `step`. Each step draws from its own RNG stream so
/// the order does not depend on how many steps ran before a resume.
pub fn batch_indices(seed: u64, step: u64, len: usize, batch: usize) -> Vec<usize> {
    if batch >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rand::seq::index::sample(&mut rng, len, batch).into_vec()
}

/// Mean squared error over a batch plus the scaled `d loss / d output`.
pub fn batch_loss(
    outputs: &[f64],
    targets: &[f64],
    batch: usize,
    scale: LossScale,
) -> (f64, Vec<f64>) {
    let (mse, mut grad) = mse_slices(outputs, targets);
    let factor = match scale {
        LossScale::Mean => 2.0 / outputs.len() as f64,
        LossScale::Euclidean => 1.0 / batch as f64,
    };
    for g in &mut grad {
        *g *= factor;
    }
    (mse, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
}

/// Loss history as CSV with a one-line header.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,loss\n");
    for r in history {
        s.push_str(&format!("{},{:e}\n", r.step, r.loss));
    }
    s
}

#[derive(Debug, Clone)]
pub struct Trainer {
    network: Network,
    sgd: Sgd,
    config: TrainConfig,
    step: u64,
    history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(network: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sgd = Sgd::new(&network, &config)?;
        Ok(Self {
            network,
            sgd,
            config,
            step: 0,
            history: Vec::new(),
        })
    }

    pub(crate) fn restore(
        network: Network,
        config: TrainConfig,
        velocity: Vec<Params>,
        step: u64,
        history: Vec<LossRecord>,
    ) -> Result<Self> {
        config.validate()?;
        let sgd = Sgd::with_velocity(&network, &config, velocity)?;
        Ok(Self {
            network,
            sgd,
            config,
            step,
            history,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn sgd(&self) -> &Sgd {
        &self.sgd
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn into_parts(self) -> (Network, Vec<LossRecord>) {
        (self.network, self.history)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if data.input_len() != self.network.input_len() || data.target_len() != self.network.output_len() {
            return Err(Error::shape(
                "training data vs network",
                (self.network.input_len(), self.network.output_len()),
                (data.input_len(), data.target_len()),
            ));
        }
        Ok(())
    }

    /// Runs one SGD step and returns the batch MSE measured before the update.
    pub fn train_step(&mut self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        self.step_unchecked(data)
    }

    fn step_unchecked(&mut self, data: &Dataset) -> Result<f64> {
        let step = self.step;
        let idx = batch_indices(self.config.seed, step, data.len(), self.config.batch_size);
        let (x, y) = data.gather(&idx);
        let trace = self.network.trace(&x, idx.len())?;
        let out = trace.output.unpack();
        let (loss, grad) = batch_loss(&out, &y, idx.len(), self.config.loss_scale);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        let grads = self.network.backprop(&trace, &grad);
        self.sgd.step(&mut self.network, &grads, &self.config, step)?;
        self.step += 1;
        Ok(loss)
    }

    /// Raises the step budget of a restored trainer. A trailing history entry
    /// that exists only because the previous run ended there is dropped, so
    /// the continued history matches an uninterrupted run.
    pub fn continue_to(&mut self, iterations: u64) {
        if let Some(last) = self.history.last() {
            if last.step + 1 == self.step
                && last.step % self.config.log_interval != 0
                && iterations > self.step
            {
                self.history.pop();
            }
        }
        self.config.iterations = iterations;
    }

    /// Trains until `config.iterations` steps have completed.
    pub fn run(&mut self, data: &Dataset) -> Result<()> {
        self.run_until(data, |_, _| false)
    }

    /// Like [`Trainer::run`] but stops early once `stop(step, loss)` is true.
    pub fn run_until(
        &mut self,
        data: &Dataset,
        mut stop: impl FnMut(u64, f64) -> bool,
    ) -> Result<()> {
        self.check_data(data)?;
        let total = self.config.iterations;
        while self.step < total {
            let step = self.step;
            let loss = self.step_unchecked(data)?;
            let done = stop(step, loss);
            if step.is_multiple_of(self.config.log_interval) || step + 1 == total || done {
                self.history.push(LossRecord { step, loss });
            }
            if done {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::LayerSpec;

    fn scalar_net(w: f64) -> Network {
        let mut net = Network::new(
            (1, 1, 1),
            vec![LayerSpec::FullyConnected {
                in_size: 1,
                out_size: 1,
            }],
            0,
            0.0,
        )
        .unwrap();
        net.params_mut()[0].weights[0] = w;
        net
    }

    fn unit_grad() -> Vec<Params> {
        vec![Params {
            weights: vec![1.0],
            bias: vec![0.0],
        }]
    }

    fn cfg(lr: f64, momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rates: vec![lr],
            momentum,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = scalar_net(0.3);
        let c = cfg(0.1, 0.9);
        let mut sgd = Sgd::new(&net, &c).unwrap();
        let zero = vec![Params {
            weights: vec![0.0],
            bias: vec![0.0],
        }];
        sgd.step(&mut net, &zero, &c, 0).unwrap();
        assert_eq!(net.params()[0].weights[0], 0.3);
    }

    #[test]
    fn single_step_without_momentum() {
        let mut net = scalar_net(1.0);
        let c = cfg(0.1, 0.0);
        let mut sgd = Sgd::new(&net, &c).unwrap();
        sgd.step(&mut net, &unit_grad(), &c, 0).unwrap();
        assert!((net.params()[0].weights[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut net = scalar_net(0.0);
        let c = cfg(0.1, 0.9);
        let mut sgd = Sgd::new(&net, &c).unwrap();
        sgd.step(&mut net, &unit_grad(), &c, 0).unwrap();
        sgd.step(&mut net, &unit_grad(), &c, 1).unwrap();
        // v1 = -0.1, v2 = 0.9 * -0.1 - 0.1 = -0.19
        assert!((net.params()[0].weights[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut net = scalar_net(0.5);
        let c = cfg(0.1, 0.0);
        let mut sgd = Sgd::new(&net, &c).unwrap();
        let bad = vec![Params {
            weights: vec![f64::NAN],
            bias: vec![0.0],
        }];
        let err = sgd.step(&mut net, &bad, &c, 17).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "gradient", step: 17 }));
        assert_eq!(net.params()[0].weights[0], 0.5);
    }

    #[test]
    fn rate_resolution() {
        let c = TrainConfig::default();
        assert_eq!(c.resolve_rates(3).unwrap(), vec![1e-3, 1e-3, 1e-5]);
        assert_eq!(c.resolve_rates(5).unwrap(), vec![1e-3, 1e-3, 1e-3, 1e-3, 1e-5]);
        assert_eq!(c.resolve_rates(2).unwrap(), vec![1e-3, 1e-5]);
        assert_eq!(cfg(0.5, 0.0).resolve_rates(4).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0).validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn batches_are_reproducible_per_step() {
        let a = batch_indices(5, 10, 100, 8);
        assert_eq!(a, batch_indices(5, 10, 100, 8));
        assert_ne!(a, batch_indices(5, 11, 100, 8));
        assert_eq!(batch_indices(5, 3, 4, 8), vec![0, 1, 2, 3]);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn batch_loss_scales() {
        let out = [1.0, 2.0, 3.0, 4.0];
        let tgt = [0.0; 4];
        let (mse, g) = batch_loss(&out, &tgt, 2, LossScale::Mean);
        assert_eq!(mse, 7.5);
        assert_eq!(g, vec![0.5, 1.0, 1.5, 2.0]);
        let (mse, g) = batch_loss(&out, &tgt, 4, LossScale::Euclidean);
        assert_eq!(mse, 7.5);
        assert_eq!(g, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn zero_iterations_returns_initial_network() {
        let net = scalar_net(0.25);
        let mut data = Dataset::new(1, 1);
        data.push(&[1.0], &[2.0]).unwrap();
        let mut t = Trainer::new(
            net.clone(),
            TrainConfig {
                iterations: 0,
                ..cfg(0.1, 0.0)
            },
        )
        .unwrap();
        t.run(&data).unwrap();
        let (trained, history) = t.into_parts();
        assert_eq!(trained, net);
        assert!(history.is_empty());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut t = Trainer::new(scalar_net(0.0), cfg(0.1, 0.0)).unwrap();
        assert!(matches!(t.run(&Dataset::new(1, 1)), Err(Error::Config(_))));
    }
}
