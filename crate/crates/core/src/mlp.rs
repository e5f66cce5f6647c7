//! One-hidden-layer sigmoid network trained online, one pattern at a time.
//!
//! Every node computes `o = 1 / (1 + exp(-sum_i w_i x_i))`. A training step for a
//! pattern `(x, d)`:
//!
//! 1. forward pass, pattern error `E = 1/2 sum (d - o)^2`;
//! 2. output deltas `o (1 - o) (d - o)`;
//! 3. hidden-to-output weights `w += eta * delta_out * o_hidden`;
//! 4. hidden deltas `o (1 - o) sum delta_out * w_hidden_output`;
//! 5. input-to-hidden weights `w += eta * delta_hidden * x`.
//!
//! In [`UpdateMode::PaperSequential`] step 4 reads the weights already changed in
//! step 3. In [`UpdateMode::TextbookSimultaneous`] step 4 reads the pre-update
//! weights, which makes the increments exactly `-eta * dE/dw`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_HIDDEN: usize = 10;
pub const DEFAULT_ETA: f64 = 0.25;
pub const DEFAULT_TARGET_MSE: f64 = 0.005;
pub const DEFAULT_MAX_EPOCHS: usize = 50_000;
pub const INIT_RANGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("layer `{0}` has zero size")]
    ZeroSizeLayer(&'static str),
    #[error("learning factor must be finite and >= 0, got {0}")]
    InvalidEta(f64),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("weight array `{0}` does not match the layer sizes")]
    ShapeMismatch(&'static str),
    #[error("non-finite weight in `{0}`")]
    NonFiniteWeight(&'static str),
    #[error("no training patterns")]
    EmptyData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("finite-difference step {0} outside [1e-6, 1e-3]")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Hidden deltas use the hidden-to-output weights after their update.
    #[default]
    PaperSequential,
    /// All deltas use the weights as they were before the step.
    TextbookSimultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl LayerSizes {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }
}

/// Everything needed to build a fresh network except the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub sizes: LayerSizes,
    pub eta: f64,
    pub mode: UpdateMode,
    /// Append an always-1 unit to the input and hidden layers.
    pub bias: bool,
}

impl NetworkSpec {
    pub fn new(sizes: LayerSizes) -> Self {
        Self {
            sizes,
            eta: DEFAULT_ETA,
            mode: UpdateMode::default(),
            bias: false,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `o (1 - o) (d - o)` for an output node.
#[inline]
pub fn output_delta(o: f64, d: f64) -> f64 {
    o * (1.0 - o) * (d - o)
}

/// `o (1 - o) sum delta_k w_k` for a hidden node, given its downstream `(delta_k, w_k)` pairs.
pub fn hidden_delta(o: f64, downstream: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    o * (1.0 - o) * downstream.into_iter().map(|(d, w)| d * w).sum::<f64>()
}

/// `w + eta * delta * upstream`.
#[inline]
pub fn updated_weight(w: f64, eta: f64, delta: f64, upstream: f64) -> f64 {
    w + eta * delta * upstream
}

/// `1/2 sum (d - o)^2`.
pub fn pattern_error(desired: &[f64], output: &[f64]) -> Result<f64, MlpError> {
    if desired.len() != output.len() {
        return Err(MlpError::LengthMismatch {
            what: "desired vs output",
            expected: output.len(),
            got: desired.len(),
        });
    }
    Ok(0.5
        * desired
            .iter()
            .zip(output)
            .map(|(d, o)| (d - o) * (d - o))
            .sum::<f64>())
}

/// Layer activations from one forward pass. Bias units are not included.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Weights and hyperparameters of a network.
///
/// `input_hidden` is row-major `(input [+1]) x hidden`; `hidden_output` is row-major
/// `(hidden [+1]) x output`. The extra row exists only when `bias` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub sizes: LayerSizes,
    pub bias: bool,
    pub eta: f64,
    pub mode: UpdateMode,
    pub seed: u64,
    pub input_hidden: Vec<f64>,
    pub hidden_output: Vec<f64>,
}

/// Builds a network with default hyperparameters and seeded uniform weights.
pub fn init_weights(sizes: LayerSizes, seed: u64) -> Result<NetworkState, MlpError> {
    NetworkState::init(&NetworkSpec::new(sizes), seed)
}

impl NetworkState {
    /// Draws every weight uniformly from `[-0.5, 0.5]` with a ChaCha8 stream seeded by `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, MlpError> {
        let LayerSizes {
            input,
            hidden,
            output,
        } = spec.sizes;
        for (name, n) in [("input", input), ("hidden", hidden), ("output", output)] {
            if n == 0 {
                return Err(MlpError::ZeroSizeLayer(name));
            }
        }
        check_eta(spec.eta)?;
        let extra = usize::from(spec.bias);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
                .collect()
        };
        let input_hidden = draw((input + extra) * hidden);
        let hidden_output = draw((hidden + extra) * output);
        Ok(Self {
            sizes: spec.sizes,
            bias: spec.bias,
            eta: spec.eta,
            mode: spec.mode,
            seed,
            input_hidden,
            hidden_output,
        })
    }

    /// Checks shapes and finiteness, e.g. after deserializing a snapshot.
    pub fn validate(&self) -> Result<(), MlpError> {
        let LayerSizes {
            input,
            hidden,
            output,
        } = self.sizes;
        for (name, n) in [("input", input), ("hidden", hidden), ("output", output)] {
            if n == 0 {
                return Err(MlpError::ZeroSizeLayer(name));
            }
        }
        check_eta(self.eta)?;
        if self.input_hidden.len() != self.input_rows() * hidden {
            return Err(MlpError::ShapeMismatch("input_hidden"));
        }
        if self.hidden_output.len() != self.hidden_rows() * output {
            return Err(MlpError::ShapeMismatch("hidden_output"));
        }
        if !self.input_hidden.iter().all(|w| w.is_finite()) {
            return Err(MlpError::NonFiniteWeight("input_hidden"));
        }
        if !self.hidden_output.iter().all(|w| w.is_finite()) {
            return Err(MlpError::NonFiniteWeight("hidden_output"));
        }
        Ok(())
    }

    fn input_rows(&self) -> usize {
        self.sizes.input + usize::from(self.bias)
    }

    fn hidden_rows(&self) -> usize {
        self.sizes.hidden + usize::from(self.bias)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() == self.sizes.input {
            Ok(())
        } else {
            Err(MlpError::LengthMismatch {
                what: "input",
                expected: self.sizes.input,
                got: x.len(),
            })
        }
    }

    fn check_target(&self, d: &[f64]) -> Result<(), MlpError> {
        if d.len() == self.sizes.output {
            Ok(())
        } else {
            Err(MlpError::LengthMismatch {
                what: "target",
                expected: self.sizes.output,
                got: d.len(),
            })
        }
    }

    /// Layer input with the bias unit appended when enabled.
    fn augmented(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        if self.bias {
            out.push(1.0);
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations, MlpError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Activations {
        let LayerSizes { hidden, output, .. } = self.sizes;
        let xa = self.augmented(x);
        let hidden_act: Vec<f64> = (0..hidden)
            .map(|j| {
                let net: f64 = xa
                    .iter()
                    .enumerate()
                    .map(|(i, &xi)| self.input_hidden[i * hidden + j] * xi)
                    .sum();
                sigmoid(net)
            })
            .collect();
        let ha = self.augmented(&hidden_act);
        let output_act = (0..output)
            .map(|k| {
                let net: f64 = ha
                    .iter()
                    .enumerate()
                    .map(|(j, &hj)| self.hidden_output[j * output + k] * hj)
                    .sum();
                sigmoid(net)
            })
            .collect();
        Activations {
            hidden: hidden_act,
            output: output_act,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        Ok(self.forward(x)?.output)
    }

    /// Applies one online update for `(x, d)` and returns the pattern error
    /// measured before the update.
    pub fn train_pattern(&mut self, x: &[f64], d: &[f64]) -> Result<f64, MlpError> {
        self.check_input(x)?;
        self.check_target(d)?;
        Ok(self.step(x, d))
    }

    fn step(&mut self, x: &[f64], d: &[f64]) -> f64 {
        let LayerSizes { hidden, output, .. } = self.sizes;
        let act = self.forward_unchecked(x);
        let error = 0.5
            * d.iter()
                .zip(&act.output)
                .map(|(d, o)| (d - o) * (d - o))
                .sum::<f64>();
        let delta_out: Vec<f64> = act
            .output
            .iter()
            .zip(d)
            .map(|(&o, &d)| output_delta(o, d))
            .collect();
        let ha = self.augmented(&act.hidden);

        let hidden_deltas = |w: &[f64]| -> Vec<f64> {
            (0..hidden)
                .map(|j| {
                    let row = &w[j * output..(j + 1) * output];
                    hidden_delta(act.hidden[j], delta_out.iter().copied().zip(row.iter().copied()))
                })
                .collect::<Vec<f64>>()
        };

        let delta_hidden = match self.mode {
            UpdateMode::TextbookSimultaneous => {
                let dh = hidden_deltas(&self.hidden_output);
                self.update_hidden_output(&ha, &delta_out);
                dh
            }
            UpdateMode::PaperSequential => {
                self.update_hidden_output(&ha, &delta_out);
                hidden_deltas(&self.hidden_output)
            }
        };

        let xa = self.augmented(x);
        for (i, &xi) in xa.iter().enumerate() {
            for (j, &dj) in delta_hidden.iter().enumerate() {
                let w = &mut self.input_hidden[i * hidden + j];
                *w = updated_weight(*w, self.eta, dj, xi);
            }
        }
        error
    }

    fn update_hidden_output(&mut self, hidden_aug: &[f64], delta_out: &[f64]) {
        let output = self.sizes.output;
        for (j, &hj) in hidden_aug.iter().enumerate() {
            for (k, &dk) in delta_out.iter().enumerate() {
                let w = &mut self.hidden_output[j * output + k];
                *w = updated_weight(*w, self.eta, dk, hj);
            }
        }
    }

    /// Per-pattern errors and their mean over `data` without touching the weights.
    pub fn evaluate(&self, data: &[TrainingPattern]) -> Result<(Vec<f64>, f64), MlpError> {
        if data.is_empty() {
            return Err(MlpError::EmptyData);
        }
        let mut errors = Vec::with_capacity(data.len());
        for p in data {
            self.check_input(&p.input)?;
            self.check_target(&p.target)?;
            let out = self.forward_unchecked(&p.input).output;
            errors.push(pattern_error(&p.target, &out)?);
        }
        let mse = errors.iter().sum::<f64>() / errors.len() as f64;
        Ok((errors, mse))
    }
}

fn check_eta(eta: f64) -> Result<(), MlpError> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(MlpError::InvalidEta(eta))
    }
}

/// A featurized, normalized pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPattern {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresentationOrder {
    /// Table order, every epoch.
    #[default]
    Sequential,
    /// A fresh permutation each epoch drawn from a stream seeded by the network seed.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub target_mse: f64,
    pub max_epochs: usize,
    pub order: PresentationOrder,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            target_mse: DEFAULT_TARGET_MSE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            order: PresentationOrder::Sequential,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.target_mse.is_finite() && self.target_mse > 0.0) {
            return Err(MlpError::InvalidConfig(format!(
                "target MSE must be > 0, got {}",
                self.target_mse
            )));
        }
        if self.max_epochs == 0 {
            return Err(MlpError::InvalidConfig("max epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`train`].
///
/// The MSE of an epoch is the mean pattern error over the whole training set,
/// measured with the weights at the end of that epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mse_trace: Vec<f64>,
    pub best_mse_trace: Vec<f64>,
    pub epochs_executed: usize,
    pub epochs_to_target: Option<usize>,
    pub final_mse: f64,
    pub final_pattern_errors: Vec<f64>,
}

/// Trains until the epoch MSE reaches `cfg.target_mse` or `cfg.max_epochs` run out.
pub fn train(
    state: NetworkState,
    data: &[TrainingPattern],
    cfg: &TrainingConfig,
) -> Result<(NetworkState, TrainingReport), MlpError> {
    train_observed(state, data, cfg, |_, _| {})
}

/// As [`train`], calling `observer(epoch, &state)` after every epoch (1-based).
pub fn train_observed(
    mut state: NetworkState,
    data: &[TrainingPattern],
    cfg: &TrainingConfig,
    mut observer: impl FnMut(usize, &NetworkState),
) -> Result<(NetworkState, TrainingReport), MlpError> {
    cfg.validate()?;
    state.validate()?;
    if data.is_empty() {
        return Err(MlpError::EmptyData);
    }
    for p in data {
        state.check_input(&p.input)?;
        state.check_target(&p.target)?;
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ 0x005E_ED0F_0DE5);
    let mut mse_trace = Vec::new();
    let mut best_mse_trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut epochs_to_target = None;

    for epoch in 1..=cfg.max_epochs {
        if cfg.order == PresentationOrder::Shuffled {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            state.step(&data[i].input, &data[i].target);
        }
        let (_, mse) = state.evaluate(data)?;
        best = best.min(mse);
        mse_trace.push(mse);
        best_mse_trace.push(best);
        observer(epoch, &state);
        if mse <= cfg.target_mse {
            epochs_to_target = Some(epoch);
            break;
        }
    }

    let (final_pattern_errors, final_mse) = state.evaluate(data)?;
    let report = TrainingReport {
        epochs_executed: mse_trace.len(),
        mse_trace,
        best_mse_trace,
        epochs_to_target,
        final_mse,
        final_pattern_errors,
    };
    Ok((state, report))
}

/// Worst relative discrepancy between the analytic increments of one
/// simultaneous-mode step (divided by the learning factor) and central finite
/// differences of the pattern error.
///
/// The step is taken on a copy with `eta = 1` in simultaneous mode, so the
/// result does not depend on the state's own `eta` or mode. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients from
/// dividing roundoff by zero.
pub fn gradient_check(
    state: &NetworkState,
    x: &[f64],
    d: &[f64],
    eps: f64,
) -> Result<f64, MlpError> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(MlpError::InvalidStep(eps));
    }
    state.check_input(x)?;
    state.check_target(d)?;

    let mut probe = state.clone();
    probe.eta = 1.0;
    probe.mode = UpdateMode::TextbookSimultaneous;
    let mut stepped = probe.clone();
    stepped.step(x, d);

    let error_at = |s: &NetworkState| pattern_error(d, &s.forward_unchecked(x).output).unwrap();

    let mut worst = 0.0f64;
    for layer in [Layer::InputHidden, Layer::HiddenOutput] {
        for idx in 0..layer.weights(&probe).len() {
            let analytic = layer.weights(&stepped)[idx] - layer.weights(&probe)[idx];
            let mut plus = probe.clone();
            layer.weights_mut(&mut plus)[idx] += eps;
            let mut minus = probe.clone();
            layer.weights_mut(&mut minus)[idx] -= eps;
            let numeric = -(error_at(&plus) - error_at(&minus)) / (2.0 * eps);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy)]
enum Layer {
    InputHidden,
    HiddenOutput,
}

impl Layer {
    fn weights(self, s: &NetworkState) -> &[f64] {
        match self {
            Layer::InputHidden => &s.input_hidden,
            Layer::HiddenOutput => &s.hidden_output,
        }
    }

    fn weights_mut(self, s: &mut NetworkState) -> &mut [f64] {
        match self {
            Layer::InputHidden => &mut s.input_hidden,
            Layer::HiddenOutput => &mut s.hidden_output,
        }
    }
}
