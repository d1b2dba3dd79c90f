//! TempFlow: a two-layer stacked LSTM forecasting next-day surface
//! temperature from a window of daily observations.
//!
//! Layer one (100 units) emits its hidden state at every step; layer two
//! (50 units) consumes that sequence and only its final state reaches the
//! single-output dense head. Both layers are followed by dropout (0.2)
//! during training. States start at zero for every window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::kernels::sigmoid;
use crate::graph::{Graph, Var};
use crate::nn::{self, Module, TrainConfig};
use crate::optim::loss::mse_with_grad;
use crate::tensor::Tensor;

pub const LAYER1_UNITS: usize = 100;
pub const LAYER2_UNITS: usize = 50;
pub const DROPOUT: f64 = 0.2;
/// Features per day: normalized LST, interpolation flag, sin/cos month,
/// latitude, longitude.
pub const FEATURES: usize = 6;
pub const DEFAULT_LOOKBACK: usize = 30;

/// Gate order used by every per-gate array: forget, input, candidate, output.
pub const GATES: [&str; 4] = ["f", "i", "c", "o"];

/// Weights of one LSTM layer: `W` (input×units), `U` (units×units) and `b`
/// (units) for each of the four gates.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerWeights {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

/// Gate activations of one step, for inspection.
#[derive(Clone, Debug)]
pub struct LstmGates {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

impl LstmLayerWeights {
    /// Uniform `±sqrt(1/units)` weights, zero biases except the forget
    /// gate, which starts at 1.
    pub fn init<R: Rng + ?Sized>(input: usize, units: usize, rng: &mut R) -> Self {
        let bound = (1.0 / units as f64).sqrt();
        let w = std::array::from_fn(|_| Tensor::uniform(vec![input, units], bound, rng));
        let u = std::array::from_fn(|_| Tensor::uniform(vec![units, units], bound, rng));
        let b = std::array::from_fn(|gate| Tensor::full(vec![units], if gate == 0 { 1.0 } else { 0.0 }));
        Self { w, u, b }
    }

    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(vec![input, units])),
            u: std::array::from_fn(|_| Tensor::zeros(vec![units, units])),
            b: std::array::from_fn(|_| Tensor::zeros(vec![units])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].shape()[0]
    }

    pub fn units(&self) -> usize {
        self.w[0].shape()[1]
    }

    /// `W_f..W_o, U_f..U_o, b_f..b_o`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.w.iter().chain(&self.u).chain(&self.b).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.w.iter_mut().chain(&mut self.u).chain(&mut self.b).collect()
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (kind, arr) in [("W", &self.w), ("U", &self.u), ("b", &self.b)] {
            for (gate, t) in GATES.iter().zip(arr.iter()) {
                out.push((format!("{prefix}.{kind}_{gate}"), t));
            }
        }
        out
    }

    /// Direct evaluation of one step for a single sequence.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.step_with_gates(x, h_prev, c_prev).map(|(h, c, _)| (h, c))
    }

    pub fn step_with_gates(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmGates)> {
        let (n_in, units) = (self.input_dim(), self.units());
        if x.len() != n_in || h_prev.len() != units || c_prev.len() != units {
            return Err(Error::shape(format!(
                "lstm step: x {} (want {n_in}), h {} and c {} (want {units})",
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let pre = |gate: usize| -> Vec<f64> {
            (0..units)
                .map(|j| {
                    let mut s = self.b[gate].data()[j];
                    for (i, &xi) in x.iter().enumerate() {
                        s += xi * self.w[gate].data()[i * units + j];
                    }
                    for (i, &hi) in h_prev.iter().enumerate() {
                        s += hi * self.u[gate].data()[i * units + j];
                    }
                    s
                })
                .collect()
        };
        let forget: Vec<f64> = pre(0).into_iter().map(sigmoid).collect();
        let input: Vec<f64> = pre(1).into_iter().map(sigmoid).collect();
        let candidate: Vec<f64> = pre(2).into_iter().map(f64::tanh).collect();
        let output: Vec<f64> = pre(3).into_iter().map(sigmoid).collect();
        let c: Vec<f64> = (0..units).map(|j| forget[j] * c_prev[j] + input[j] * candidate[j]).collect();
        let h: Vec<f64> = (0..units).map(|j| output[j] * c[j].tanh()).collect();
        Ok((h, c, LstmGates { forget, input, candidate, output }))
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LstmVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        LstmVars::from_slice(&vars)
    }
}

/// Graph handles of one layer's weights, in [`LstmLayerWeights::tensors`] order.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl LstmVars {
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 12, "an LSTM layer has 12 tensors");
        Self {
            w: [v[0], v[1], v[2], v[3]],
            u: [v[4], v[5], v[6], v[7]],
            b: [v[8], v[9], v[10], v[11]],
        }
    }
}

/// One recorded LSTM step over a batch: `x` is `B×input`, `h_prev` and
/// `c_prev` are `B×units`. Returns `(h_t, c_t)`.
pub fn lstm_step(g: &mut Graph, w: &LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let mut gate = |k: usize| -> Result<Var> {
        let xw = g.matmul(x, w.w[k])?;
        let hu = g.matmul(h_prev, w.u[k])?;
        let s = g.add(xw, hu)?;
        g.add_row_bias(s, w.b[k])
    };
    let (pf, pi, pc, po) = (gate(0)?, gate(1)?, gate(2)?, gate(3)?);
    let f = g.sigmoid(pf);
    let i = g.sigmoid(pi);
    let cand = g.tanh(pc);
    let o = g.sigmoid(po);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// A lookback window of daily features and the next day's value.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureWindow {
    features: Tensor,
    target: f64,
}

impl TemperatureWindow {
    /// `features` is `lookback × FEATURES`; column 1 is the 0/1
    /// interpolation flag.
    pub fn new(features: Tensor, target: f64) -> Result<Self> {
        let (_, cols) = features.dims2()?;
        if cols != FEATURES {
            return Err(Error::shape(format!("temperature window needs {FEATURES} features, got {cols}")));
        }
        if !features.is_finite() || !target.is_finite() {
            return Err(Error::NonFinite("temperature window contains NaN or infinity".into()));
        }
        if features.data().chunks_exact(cols).any(|r| r[1] != 0.0 && r[1] != 1.0) {
            return Err(Error::invalid("quality flag must be 0 or 1"));
        }
        Ok(Self { features, target })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn lookback(&self) -> usize {
        self.features.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TempFlowModel {
    pub layer1: LstmLayerWeights,
    pub layer2: LstmLayerWeights,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

struct TempFlowVars {
    layer1: LstmVars,
    layer2: LstmVars,
    head_w: Var,
    head_b: Var,
    all: Vec<Var>,
}

impl Module for TempFlowModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.layer1.named("lstm1");
        out.extend(self.layer2.named("lstm2"));
        out.push(("dense.W".into(), &self.head_w));
        out.push(("dense.b".into(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.layer1.tensors_mut();
        out.extend(self.layer2.tensors_mut());
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

impl TempFlowModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer1 = LstmLayerWeights::init(FEATURES, LAYER1_UNITS, &mut rng);
        let layer2 = LstmLayerWeights::init(LAYER1_UNITS, LAYER2_UNITS, &mut rng);
        let bound = (1.0 / LAYER2_UNITS as f64).sqrt();
        let head_w = Tensor::uniform(vec![LAYER2_UNITS, 1], bound, &mut rng);
        Self { layer1, layer2, head_w, head_b: Tensor::zeros(vec![1]) }
    }

    /// All weights and biases zero.
    pub fn zeroed() -> Self {
        Self {
            layer1: LstmLayerWeights::zeros(FEATURES, LAYER1_UNITS),
            layer2: LstmLayerWeights::zeros(LAYER1_UNITS, LAYER2_UNITS),
            head_w: Tensor::zeros(vec![LAYER2_UNITS, 1]),
            head_b: Tensor::zeros(vec![1]),
        }
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> TempFlowVars {
        let all = nn::bind_params(g, self, trainable);
        TempFlowVars {
            layer1: LstmVars::from_slice(&all[0..12]),
            layer2: LstmVars::from_slice(&all[12..24]),
            head_w: all[24],
            head_b: all[25],
            all,
        }
    }

    /// Records the forward pass of a batch of equal-length windows; returns
    /// a `B×1` prediction node. Dropout is active only when `dropout_rng` is
    /// given.
    fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &TempFlowVars,
        windows: &[&TemperatureWindow],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let batch = windows.len();
        let lookback = windows.first().ok_or_else(|| Error::invalid("empty batch"))?.lookback();
        if windows.iter().any(|w| w.lookback() != lookback) {
            return Err(Error::shape("windows in a batch must share one lookback"));
        }
        let zeros = |g: &mut Graph, units| g.constant(Tensor::zeros(vec![batch, units]));
        let (mut h1, mut c1) = (zeros(g, LAYER1_UNITS), zeros(g, LAYER1_UNITS));
        let (mut h2, mut c2) = (zeros(g, LAYER2_UNITS), zeros(g, LAYER2_UNITS));
        for t in 0..lookback {
            let mut rows = Vec::with_capacity(batch * FEATURES);
            for w in windows {
                rows.extend_from_slice(w.features.row(t));
            }
            let x = g.constant(Tensor::new(vec![batch, FEATURES], rows)?);
            (h1, c1) = lstm_step(g, &vars.layer1, x, h1, c1)?;
            let fed = match dropout_rng.as_deref_mut() {
                Some(rng) => g.dropout(h1, DROPOUT, rng)?,
                None => h1,
            };
            (h2, c2) = lstm_step(g, &vars.layer2, fed, h2, c2)?;
        }
        let last = match dropout_rng {
            Some(rng) => g.dropout(h2, DROPOUT, rng)?,
            None => h2,
        };
        let y = g.matmul(last, vars.head_w)?;
        g.add_row_bias(y, vars.head_b)
    }

    /// Inference-mode predictions (normalized units).
    pub fn predict(&self, windows: &[TemperatureWindow]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let refs: Vec<&TemperatureWindow> = chunk.iter().collect();
            let y = self.forward_graph(&mut g, &vars, &refs, None)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    /// One window, optionally with training-mode dropout.
    pub fn forward(&self, window: &TemperatureWindow, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let y = self.forward_graph(&mut g, &vars, &[window], dropout_rng)?;
        Ok(g.value(y).item())
    }

    pub fn mse_on(&self, windows: &[TemperatureWindow]) -> Result<f64> {
        let pred = self.predict(windows)?;
        let target: Vec<f64> = windows.iter().map(|w| w.target).collect();
        crate::optim::mse(&pred, &target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TempFlowEpoch {
    pub epoch: usize,
    /// Training-set MSE in inference mode after the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

/// Holds the optimizer and RNG across epochs.
pub struct TempFlowTrainer {
    cfg: TrainConfig,
    opt: crate::optim::Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    steps: usize,
}

impl TempFlowTrainer {
    /// Changes the learning rate for subsequent steps; moments are kept.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and nonnegative")));
        }
        self.opt.config.lr = lr;
        Ok(())
    }

    pub fn new(model: &TempFlowModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            opt: nn::adam_for(model, cfg.lr),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            epoch: 0,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimizer step on the given batch; returns its training loss.
    pub fn step(&mut self, model: &mut TempFlowModel, batch: &[&TemperatureWindow]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, true);
        let pred = model.forward_graph(&mut g, &vars, batch, Some(&mut self.rng))?;
        let target: Vec<f64> = batch.iter().map(|w| w.target).collect();
        let (loss_value, dpred) = mse_with_grad(g.value(pred).data(), &target)?;
        nn::check_loss(loss_value, "tempflow")?;
        let loss = g.loss_node(pred, loss_value, dpred)?;
        g.backward(loss)?;
        let grads = nn::collect_grads(&g, &vars.all, model);
        nn::apply_adam(&mut self.opt, model, &grads)?;
        self.steps += 1;
        Ok(loss_value)
    }

    pub fn run_epoch(
        &mut self,
        model: &mut TempFlowModel,
        train: &[TemperatureWindow],
        val: &[TemperatureWindow],
    ) -> Result<TempFlowEpoch> {
        if train.is_empty() {
            return Err(Error::invalid("tempflow: empty training set"));
        }
        for idx in nn::shuffled_batches(train.len(), self.cfg.batch_size, &mut self.rng) {
            let batch: Vec<&TemperatureWindow> = idx.iter().map(|&i| &train[i]).collect();
            self.step(model, &batch)?;
        }
        self.epoch += 1;
        let train_mse = model.mse_on(train)?;
        nn::check_loss(train_mse, "tempflow")?;
        let (val_mse, val_mae) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let pred = model.predict(val)?;
            let target: Vec<f64> = val.iter().map(|w| w.target).collect();
            (crate::optim::mse(&pred, &target)?, crate::optim::mae(&pred, &target)?)
        };
        Ok(TempFlowEpoch { epoch: self.epoch, train_mse, val_mse, val_mae })
    }
}

/// Trains with MSE and Adam for `cfg.epochs` epochs.
pub fn tempflow_train(
    model: &mut TempFlowModel,
    train: &[TemperatureWindow],
    val: &[TemperatureWindow],
    cfg: TrainConfig,
) -> Result<Vec<TempFlowEpoch>> {
    if train.is_empty() {
        return Err(Error::invalid("tempflow: empty training set"));
    }
    let mut trainer = TempFlowTrainer::new(model, cfg)?;
    (0..cfg.epochs).map(|_| trainer.run_epoch(model, train, val)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn window(rows: usize, f: impl Fn(usize) -> f64) -> TemperatureWindow {
        let data = (0..rows).flat_map(|t| [f(t), 0.0, 0.5, 0.5, 0.3, 0.7]).collect();
        TemperatureWindow::new(Tensor::new(vec![rows, FEATURES], data).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let w = LstmLayerWeights::zeros(2, 3);
        let c = [0.8, -1.2, 2.0];
        let (h, c_next, gates) = w.step_with_gates(&[0.3, -0.4], &[0.1, 0.2, 0.3], &c).unwrap();
        for j in 0..3 {
            assert_eq!(gates.forget[j], 0.5);
            assert_eq!(gates.input[j], 0.5);
            assert_eq!(gates.output[j], 0.5);
            assert_eq!(gates.candidate[j], 0.0);
            assert!((c_next[j] - 0.5 * c[j]).abs() < 1e-15);
            assert!((h[j] - 0.5 * (0.5 * c[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_zero_input_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = LstmLayerWeights::init(3, 4, &mut rng);
        w.b.iter_mut().for_each(|b| b.data_mut().fill(0.0));
        let (h, c) = w.step(&[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_integrate_input() {
        // forget and input gates pinned open, candidate driven by x
        let mut w = LstmLayerWeights::zeros(1, 1);
        w.b[0].data_mut()[0] = 20.0;
        w.b[1].data_mut()[0] = 20.0;
        w.w[2].data_mut()[0] = 0.7;
        let mut c = vec![0.25];
        let mut h = vec![0.0];
        let mut expected = 0.25;
        for x in [0.5, -1.0, 0.3, 0.9] {
            let (h2, c2) = w.step(&[x], &h, &c).unwrap();
            expected += (0.7 * x).tanh();
            (h, c) = (h2, c2);
            assert!((c[0] - expected).abs() < 1e-7, "{} vs {expected}", c[0]);
        }
    }

    #[test]
    fn graph_step_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = LstmLayerWeights::init(3, 5, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let vars = w.bind(&mut g, false);
        let xv = g.constant(Tensor::new(vec![2, 3], x.clone()).unwrap());
        let hv = g.constant(Tensor::new(vec![2, 5], h0.clone()).unwrap());
        let cv = g.constant(Tensor::new(vec![2, 5], c0.clone()).unwrap());
        let (h, c) = lstm_step(&mut g, &vars, xv, hv, cv).unwrap();
        for b in 0..2 {
            let (hd, cd) = w.step(&x[b * 3..b * 3 + 3], &h0[b * 5..b * 5 + 5], &c0[b * 5..b * 5 + 5]).unwrap();
            for j in 0..5 {
                assert!((g.value(h).data()[b * 5 + j] - hd[j]).abs() < 1e-12);
                assert!((g.value(c).data()[b * 5 + j] - cd[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn architecture_is_fixed() {
        let m = TempFlowModel::new(0);
        assert_eq!(m.layer1.units(), 100);
        assert_eq!(m.layer2.units(), 50);
        assert_eq!(m.layer2.input_dim(), 100);
        let expected = 4 * (6 * 100 + 100 * 100 + 100) + 4 * (100 * 50 + 50 * 50 + 50) + 51;
        assert_eq!(m.param_count(), expected);
        assert_eq!(m.named_params().len(), m.clone().params_mut().len());
    }

    #[test]
    fn zero_model_predicts_head_bias() {
        let mut m = TempFlowModel::zeroed();
        m.head_b.data_mut()[0] = -0.37;
        let w = window(30, |t| t as f64 / 30.0);
        assert_eq!(m.forward(&w, None).unwrap(), -0.37);
    }

    #[test]
    fn inference_is_repeatable_and_dropout_is_not() {
        let m = TempFlowModel::new(4);
        let w = window(30, |t| (t as f64 * 0.3).sin());
        let a = m.forward(&w, None).unwrap();
        assert_eq!(a, m.forward(&w, None).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d1 = m.forward(&w, Some(&mut rng)).unwrap();
        let d2 = m.forward(&w, Some(&mut rng)).unwrap();
        assert_ne!(d1, d2);
    }

    #[test]
    fn rejects_bad_windows() {
        let bad = Tensor::new(vec![2, FEATURES], vec![f64::NAN; 2 * FEATURES]).unwrap();
        assert!(TemperatureWindow::new(bad, 0.0).is_err());
        let flag = Tensor::new(vec![1, FEATURES], vec![0.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(TemperatureWindow::new(flag, 0.0).is_err());
        let narrow = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(TemperatureWindow::new(narrow, 0.0).is_err());
    }

    #[test]
    fn lr_zero_keeps_history_constant() {
        let mut m = TempFlowModel::new(3);
        let before = m.clone();
        let data: Vec<TemperatureWindow> = (0..6).map(|k| window(5, |t| ((t + k) as f64 * 0.4).sin())).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 0.0, seed: 1 };
        let hist = tempflow_train(&mut m, &data[..4], &data[4..], cfg).unwrap();
        assert_eq!(hist.len(), 3);
        assert!(hist.iter().all(|h| h.train_mse == hist[0].train_mse && h.val_mse == hist[0].val_mse));
        assert_eq!(m, before);
        assert!(tempflow_train(&mut m, &[], &data, cfg).is_err());
    }

    proptest! {
        #[test]
        fn gates_and_state_stay_bounded(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = LstmLayerWeights::init(3, 4, &mut rng);
            w.tensors_mut().into_iter().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (h2, _, gates) = w.step_with_gates(&x, &h, &c).unwrap();
            for (j, hj) in h2.iter().enumerate() {
                for v in [gates.forget[j], gates.input[j], gates.output[j]] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(gates.candidate[j].abs() <= 1.0);
                prop_assert!(hj.abs() < 1.0);
            }
        }
    }
}
