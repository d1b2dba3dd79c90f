//! TerraFlow: a transformer encoder regressing next-day glacier velocity
//! from a window of daily features.
//!
//! `z₀ = X·W_E + P`, then `layers` post-norm encoder blocks
//! (`x₁ = LN(x + MHA(x))`, `out = LN(x₁ + FFN(x₁))`), mean pooling over
//! positions and a linear head. Per-head projections are stored side by side
//! in one `d_model × d_model` matrix; head `i` owns columns
//! `i·head_dim .. (i+1)·head_dim`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{self, Module, TrainConfig};
use crate::optim::LossKind;
use crate::tensor::Tensor;

/// lat, lon, year, sin/cos month, sin/cos day-of-year, average and maximum
/// velocity.
pub const FEATURES: usize = 9;
pub const WINDOW: usize = 30;
pub const LN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TerraFlowConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub window: usize,
    pub features: usize,
}

impl TerraFlowConfig {
    /// d_model 256, 8 heads, 4 layers, d_ff 2048.
    pub fn full() -> Self {
        Self { d_model: 256, heads: 8, layers: 4, d_ff: 2048, window: WINDOW, features: FEATURES }
    }

    /// Width-reduced build for single-core training runs.
    pub fn desk() -> Self {
        Self { d_model: 64, heads: 4, layers: 2, d_ff: 128, window: WINDOW, features: FEATURES }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_model, self.heads, self.layers, self.d_ff, self.window, self.features];
        if dims.contains(&0) {
            return Err(Error::invalid(format!("terraflow config has a zero dimension: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }

    /// Trainable parameters of a model built from this configuration.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let layer = 4 * d * d + 4 * d + d * self.d_ff + self.d_ff + self.d_ff * d + d;
        self.features * d + self.window * d + self.layers * layer + d + 1
    }
}

/// A window of daily velocity features and the next day's normalized
/// average velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityWindow {
    features: Tensor,
    target: f64,
}

/// Column indices of the sin/cos pairs in a [`VelocityWindow`].
pub const CYCLICAL_PAIRS: [(usize, usize); 2] = [(3, 4), (5, 6)];

impl VelocityWindow {
    pub fn new(features: Tensor, target: f64) -> Result<Self> {
        let (_, cols) = features.dims2()?;
        if cols != FEATURES {
            return Err(Error::shape(format!("velocity window needs {FEATURES} features, got {cols}")));
        }
        if !features.is_finite() || !target.is_finite() {
            return Err(Error::NonFinite("velocity window contains NaN or infinity".into()));
        }
        for row in features.data().chunks_exact(cols) {
            for (s, c) in CYCLICAL_PAIRS {
                if (row[s].powi(2) + row[c].powi(2) - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("cyclical feature pair is not on the unit circle"));
                }
            }
        }
        Ok(Self { features, target })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_shift: Tensor,
    pub w_1: Tensor,
    pub b_1: Tensor,
    pub w_2: Tensor,
    pub b_2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_shift: Tensor,
}

impl EncoderLayer {
    fn init<R: Rng + ?Sized>(cfg: &TerraFlowConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let glorot = |rows: usize, cols: usize, rng: &mut R| {
            Tensor::uniform(vec![rows, cols], (6.0 / (rows + cols) as f64).sqrt(), rng)
        };
        Self {
            w_q: glorot(d, d, rng),
            w_k: glorot(d, d, rng),
            w_v: glorot(d, d, rng),
            w_o: glorot(d, d, rng),
            ln1_gain: Tensor::full(vec![d], 1.0),
            ln1_shift: Tensor::zeros(vec![d]),
            w_1: glorot(d, cfg.d_ff, rng),
            b_1: Tensor::zeros(vec![cfg.d_ff]),
            w_2: glorot(cfg.d_ff, d, rng),
            b_2: Tensor::zeros(vec![d]),
            ln2_gain: Tensor::full(vec![d], 1.0),
            ln2_shift: Tensor::zeros(vec![d]),
        }
    }

    fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.ln1_gain, &self.ln1_shift,
            &self.w_1, &self.b_1, &self.w_2, &self.b_2, &self.ln2_gain, &self.ln2_shift,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o, &mut self.ln1_gain,
            &mut self.ln1_shift, &mut self.w_1, &mut self.b_1, &mut self.w_2, &mut self.b_2,
            &mut self.ln2_gain, &mut self.ln2_shift,
        ]
    }

    /// Zeroes every projection and FFN weight, leaving the norms at unit
    /// gain and zero shift.
    pub fn zero_sublayers(&mut self) {
        for t in [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o, &mut self.w_1, &mut self.b_1, &mut self.w_2, &mut self.b_2] {
            t.data_mut().fill(0.0);
        }
    }
}

const LAYER_NAMES: [&str; 12] = [
    "W_Q", "W_K", "W_V", "W_O", "ln1.gain", "ln1.shift", "W_1", "b_1", "W_2", "b_2", "ln2.gain", "ln2.shift",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TerraFlowModel {
    pub config: TerraFlowConfig,
    pub w_e: Tensor,
    pub pos: Tensor,
    pub layers: Vec<EncoderLayer>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Module for TerraFlowModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed.W_E".to_string(), &self.w_e), ("embed.P".to_string(), &self.pos)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("head.W".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_e, &mut self.pos];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

struct LayerVars {
    v: [Var; 12],
}

struct ModelVars {
    w_e: Var,
    pos: Var,
    layers: Vec<LayerVars>,
    head_w: Var,
    head_b: Var,
    all: Vec<Var>,
}

impl TerraFlowModel {
    pub fn new(config: TerraFlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let w_e = Tensor::uniform(vec![config.features, d], (6.0 / (config.features + d) as f64).sqrt(), &mut rng);
        let pos = Tensor::uniform(vec![config.window, d], 0.1, &mut rng);
        let layers = (0..config.layers).map(|_| EncoderLayer::init(&config, &mut rng)).collect();
        let head_w = Tensor::uniform(vec![d, 1], (1.0 / d as f64).sqrt(), &mut rng);
        Ok(Self { config, w_e, pos, layers, head_w, head_b: Tensor::zeros(vec![1]) })
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let all = nn::bind_params(g, self, trainable);
        let layers = (0..self.layers.len())
            .map(|l| {
                let s = 2 + 12 * l;
                LayerVars { v: std::array::from_fn(|k| all[s + k]) }
            })
            .collect();
        let n = all.len();
        ModelVars { w_e: all[0], pos: all[1], layers, head_w: all[n - 2], head_b: all[n - 1], all }
    }

    fn embed_graph(&self, g: &mut Graph, mv: &ModelVars, x: Var) -> Result<Var> {
        let z = g.matmul(x, mv.w_e)?;
        g.add_tiled(z, mv.pos)
    }

    fn mha_graph(&self, g: &mut Graph, lv: &LayerVars, x: Var) -> Result<Var> {
        let (hd, t) = (self.config.head_dim(), self.config.window);
        let q = g.matmul(x, lv.v[0])?;
        let k = g.matmul(x, lv.v[1])?;
        let v = g.matmul(x, lv.v[2])?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            heads.push(g.attention(qh, kh, vh, t)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        g.matmul(cat, lv.v[3])
    }

    fn encoder_graph(&self, g: &mut Graph, lv: &LayerVars, x: Var) -> Result<Var> {
        let a = self.mha_graph(g, lv, x)?;
        let r = g.add(x, a)?;
        let x1 = g.layer_norm(r, lv.v[4], lv.v[5], LN_EPSILON)?;
        let h = g.matmul(x1, lv.v[6])?;
        let h = g.add_row_bias(h, lv.v[7])?;
        let h = g.relu(h);
        let f = g.matmul(h, lv.v[8])?;
        let f = g.add_row_bias(f, lv.v[9])?;
        let r2 = g.add(x1, f)?;
        g.layer_norm(r2, lv.v[10], lv.v[11], LN_EPSILON)
    }

    fn forward_graph(&self, g: &mut Graph, mv: &ModelVars, windows: &[&VelocityWindow]) -> Result<Var> {
        let t = self.config.window;
        let mut data = Vec::with_capacity(windows.len() * t * self.config.features);
        for w in windows {
            if w.features.shape() != [t, self.config.features] {
                return Err(Error::shape(format!(
                    "terraflow expects {t}×{} windows, got {:?}",
                    self.config.features,
                    w.features.shape()
                )));
            }
            data.extend_from_slice(w.features.data());
        }
        let x = g.constant(Tensor::new(vec![windows.len() * t, self.config.features], data)?);
        let mut z = self.embed_graph(g, mv, x)?;
        for lv in &mv.layers {
            z = self.encoder_graph(g, lv, z)?;
        }
        let pooled = g.mean_pool(z, t)?;
        let y = g.matmul(pooled, mv.head_w)?;
        g.add_row_bias(y, mv.head_b)
    }

    fn single<F>(&self, input: &Tensor, f: F) -> Result<Tensor>
    where
        F: FnOnce(&Self, &mut Graph, &ModelVars, Var) -> Result<Var>,
    {
        let mut g = Graph::new();
        let mv = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = f(self, &mut g, &mv, x)?;
        Ok(g.value(y).clone())
    }

    /// `X·W_E + P` for one `window × features` input.
    pub fn embed_with_position(&self, window: &Tensor) -> Result<Tensor> {
        if window.shape() != [self.config.window, self.config.features] {
            return Err(Error::shape(format!("embed: expected {}×{}, got {:?}", self.config.window, self.config.features, window.shape())));
        }
        self.single(window, |m, g, mv, x| m.embed_graph(g, mv, x))
    }

    /// Multi-head self-attention of layer `layer` on a `window × d_model` input.
    pub fn multi_head_attention(&self, layer: usize, input: &Tensor) -> Result<Tensor> {
        self.check_hidden(layer, input)?;
        self.single(input, |m, g, mv, x| m.mha_graph(g, &mv.layers[layer], x))
    }

    /// One full encoder block of layer `layer`.
    pub fn encoder_layer(&self, layer: usize, input: &Tensor) -> Result<Tensor> {
        self.check_hidden(layer, input)?;
        self.single(input, |m, g, mv, x| m.encoder_graph(g, &mv.layers[layer], x))
    }

    fn check_hidden(&self, layer: usize, input: &Tensor) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::invalid(format!("layer {layer} of {}", self.layers.len())));
        }
        if input.shape() != [self.config.window, self.config.d_model] {
            return Err(Error::shape(format!("expected {}×{}, got {:?}", self.config.window, self.config.d_model, input.shape())));
        }
        Ok(())
    }

    pub fn forward(&self, window: &VelocityWindow) -> Result<f64> {
        Ok(self.predict(std::slice::from_ref(window))?[0])
    }

    /// Normalized predictions, one per window.
    pub fn predict(&self, windows: &[VelocityWindow]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(128) {
            let mut g = Graph::new();
            let mv = self.bind(&mut g, false);
            let refs: Vec<&VelocityWindow> = chunk.iter().collect();
            let y = self.forward_graph(&mut g, &mv, &refs)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    /// Loss and parameter gradients for one batch.
    pub fn loss_and_grads(&self, batch: &[&VelocityWindow], loss: LossKind) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let mv = self.bind(&mut g, true);
        let y = self.forward_graph(&mut g, &mv, batch)?;
        let target: Vec<f64> = batch.iter().map(|w| w.target).collect();
        let l = loss.record(&mut g, y, &target)?;
        let value = g.value(l).item();
        nn::check_loss(value, "terraflow")?;
        g.backward(l)?;
        Ok((value, nn::collect_grads(&g, &mv.all, self)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerraFlowEpoch {
    pub epoch: usize,
    /// Training loss over the whole training split after the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

pub struct TerraFlowTrainer {
    cfg: TrainConfig,
    loss: LossKind,
    opt: crate::optim::Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn targets(ws: &[VelocityWindow]) -> Vec<f64> {
    ws.iter().map(|w| w.target).collect()
}

impl TerraFlowTrainer {
    /// Changes the learning rate for subsequent steps; moments are kept.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and nonnegative")));
        }
        self.opt.config.lr = lr;
        Ok(())
    }

    pub fn new(model: &TerraFlowModel, loss: LossKind, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, loss, opt: nn::adam_for(model, cfg.lr), rng: ChaCha8Rng::seed_from_u64(cfg.seed), epoch: 0 })
    }

    pub fn run_epoch(
        &mut self,
        model: &mut TerraFlowModel,
        train: &[VelocityWindow],
        val: &[VelocityWindow],
    ) -> Result<TerraFlowEpoch> {
        if train.is_empty() {
            return Err(Error::invalid("terraflow: empty training set"));
        }
        for idx in nn::shuffled_batches(train.len(), self.cfg.batch_size, &mut self.rng) {
            let batch: Vec<&VelocityWindow> = idx.iter().map(|&i| &train[i]).collect();
            let (_, grads) = model.loss_and_grads(&batch, self.loss)?;
            nn::apply_adam(&mut self.opt, model, &grads)?;
        }
        self.epoch += 1;
        let train_loss = self.loss.value(&model.predict(train)?, &targets(train))?;
        nn::check_loss(train_loss, "terraflow")?;
        let (val_loss, val_mae) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let pred = model.predict(val)?;
            let t = targets(val);
            (self.loss.value(&pred, &t)?, crate::optim::mae(&pred, &t)?)
        };
        Ok(TerraFlowEpoch { epoch: self.epoch, train_loss, val_loss, val_mae })
    }
}

/// Trains under `loss` with Adam for `cfg.epochs` epochs, tracking
/// validation MAE.
pub fn terraflow_train(
    model: &mut TerraFlowModel,
    train: &[VelocityWindow],
    val: &[VelocityWindow],
    loss: LossKind,
    cfg: TrainConfig,
) -> Result<Vec<TerraFlowEpoch>> {
    if train.is_empty() {
        return Err(Error::invalid("terraflow: empty training set"));
    }
    let mut trainer = TerraFlowTrainer::new(model, loss, cfg)?;
    (0..cfg.epochs).map(|_| trainer.run_epoch(model, train, val)).collect()
}

/// MAE of always predicting the training-target mean.
pub fn mean_predictor_mae(train: &[VelocityWindow], eval: &[VelocityWindow]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::invalid("mean predictor needs training targets"));
    }
    let mean = train.iter().map(|w| w.target).sum::<f64>() / train.len() as f64;
    crate::optim::mae(&vec![mean; eval.len()], &targets(eval))
}
