//! RiskFlow: the vision-stream CNN mapping a 6-band 128×128 patch to a GLOF
//! probability.
//!
//! ```text
//! input 6×128×128
//! conv 3×3 ×32, relu      32×126×126    1,760
//! maxpool 2               32×63×63
//! conv 3×3 ×64, relu      64×61×61     18,496
//! maxpool 2               64×30×30
//! flatten                 57600
//! dense 64, relu          64        3,686,464
//! dropout 0.5 (training)
//! dense 1, sigmoid        1                65
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{self, Module, TrainConfig};
use crate::optim::loss::{bce, bce_with_grad};
use crate::tensor::Tensor;

pub const BANDS: usize = 6;
pub const SIDE: usize = 128;
pub const DROPOUT: f64 = 0.5;
pub const FLAT: usize = 64 * 30 * 30;
pub const HIDDEN: usize = 64;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_BATCH: usize = 16;
pub const BAND_NAMES: [&str; BANDS] = ["B2", "B3", "B4", "B8", "B11", "B12"];

/// A 6×128×128 patch (bands B2, B3, B4, B8, B11, B12) with values in
/// `[0,1]` and a binary label (1 = GLOF).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    bands: Tensor,
    label: u8,
}

impl ImageSample {
    pub fn new(bands: Tensor, label: u8) -> Result<Self> {
        if bands.shape() != [BANDS, SIDE, SIDE] {
            return Err(Error::shape(format!("image must be 6×128×128, got {:?}", bands.shape())));
        }
        if label > 1 {
            return Err(Error::invalid(format!("label {label} is not 0 or 1")));
        }
        if bands.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0,1]"));
        }
        Ok(Self { bands, label })
    }

    pub fn bands(&self) -> &Tensor {
        &self.bands
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn into_parts(self) -> (Tensor, u8) {
        (self.bands, self.label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlofClass {
    NoGlof,
    Glof,
}

impl GlofClass {
    pub fn as_label(self) -> u8 {
        match self {
            GlofClass::NoGlof => 0,
            GlofClass::Glof => 1,
        }
    }
}

/// GLOF iff `probability >= threshold`.
pub fn classify(probability: f64, threshold: f64) -> Result<GlofClass> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0,1]")));
    }
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::invalid(format!("probability {probability} outside [0,1]")));
    }
    Ok(if probability >= threshold { GlofClass::Glof } else { GlofClass::NoGlof })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskFlowModel {
    pub conv1_k: Tensor,
    pub conv1_b: Tensor,
    pub conv2_k: Tensor,
    pub conv2_b: Tensor,
    pub dense1_w: Tensor,
    pub dense1_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl Module for RiskFlowModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("conv1.kernel".into(), &self.conv1_k),
            ("conv1.bias".into(), &self.conv1_b),
            ("conv2.kernel".into(), &self.conv2_k),
            ("conv2.bias".into(), &self.conv2_b),
            ("dense1.W".into(), &self.dense1_w),
            ("dense1.b".into(), &self.dense1_b),
            ("dense_out.W".into(), &self.out_w),
            ("dense_out.b".into(), &self.out_b),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_k,
            &mut self.conv1_b,
            &mut self.conv2_k,
            &mut self.conv2_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }
}

/// Output shapes recorded by one forward pass, per-sample (batch axis dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrace {
    pub stages: Vec<(&'static str, Vec<usize>)>,
}

impl RiskFlowModel {
    /// He-uniform weights, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: Vec<usize>, fan_in| Tensor::uniform(shape, nn::he_uniform_bound(fan_in), &mut rng);
        Self {
            conv1_k: he(vec![32, BANDS, 3, 3], BANDS * 9),
            conv1_b: Tensor::zeros(vec![32]),
            conv2_k: he(vec![64, 32, 3, 3], 32 * 9),
            conv2_b: Tensor::zeros(vec![64]),
            dense1_w: he(vec![FLAT, HIDDEN], FLAT),
            dense1_b: Tensor::zeros(vec![HIDDEN]),
            out_w: he(vec![HIDDEN, 1], HIDDEN),
            out_b: Tensor::zeros(vec![1]),
        }
    }

    pub fn zeroed() -> Self {
        Self {
            conv1_k: Tensor::zeros(vec![32, BANDS, 3, 3]),
            conv1_b: Tensor::zeros(vec![32]),
            conv2_k: Tensor::zeros(vec![64, 32, 3, 3]),
            conv2_b: Tensor::zeros(vec![64]),
            dense1_w: Tensor::zeros(vec![FLAT, HIDDEN]),
            dense1_b: Tensor::zeros(vec![HIDDEN]),
            out_w: Tensor::zeros(vec![HIDDEN, 1]),
            out_b: Tensor::zeros(vec![1]),
        }
    }

    /// `(layer, parameter count)` for the four weighted layers.
    pub fn layer_param_counts(&self) -> [(&'static str, usize); 4] {
        [
            ("conv1", self.conv1_k.len() + self.conv1_b.len()),
            ("conv2", self.conv2_k.len() + self.conv2_b.len()),
            ("dense1", self.dense1_w.len() + self.dense1_b.len()),
            ("dense_out", self.out_w.len() + self.out_b.len()),
        ]
    }

    fn forward_graph(
        &self,
        g: &mut Graph,
        p: &[Var],
        input: Var,
        dropout_rng: Option<&mut ChaCha8Rng>,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Var> {
        let mut record = |g: &Graph, name: &'static str, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.stages.push((name, g.shape(v)[1..].to_vec()));
            }
        };
        let n = g.shape(input)[0];
        record(g, "input", input);
        let x = g.conv2d(input, p[0], p[1], 1)?;
        let x = g.relu(x);
        record(g, "conv1", x);
        let x = g.maxpool2d(x, 2)?;
        record(g, "pool1", x);
        let x = g.conv2d(x, p[2], p[3], 1)?;
        let x = g.relu(x);
        record(g, "conv2", x);
        let x = g.maxpool2d(x, 2)?;
        record(g, "pool2", x);
        let x = g.reshape(x, vec![n, FLAT])?;
        record(g, "flatten", x);
        let x = g.matmul(x, p[4])?;
        let x = g.add_row_bias(x, p[5])?;
        let mut x = g.relu(x);
        record(g, "dense1", x);
        if let Some(rng) = dropout_rng {
            x = g.dropout(x, DROPOUT, rng)?;
        }
        let z = g.matmul(x, p[6])?;
        let z = g.add_row_bias(z, p[7])?;
        let y = g.sigmoid(z);
        record(g, "dense_out", y);
        Ok(y)
    }

    fn stack(images: &[&Tensor]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(images.len() * BANDS * SIDE * SIDE);
        for img in images {
            if img.shape() != [BANDS, SIDE, SIDE] {
                return Err(Error::shape(format!("riskflow expects 6×128×128 input, got {:?}", img.shape())));
            }
            if !img.is_finite() {
                return Err(Error::NonFinite("riskflow input contains NaN or infinity".into()));
            }
            data.extend_from_slice(img.data());
        }
        Tensor::new(vec![images.len(), BANDS, SIDE, SIDE], data)
    }

    /// Inference-mode probabilities for a batch `N×6×128×128`.
    pub fn forward(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != [BANDS, SIDE, SIDE] {
            return Err(Error::shape(format!("riskflow expects N×6×128×128 input, got {s:?}")));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("riskflow input contains NaN or infinity".into()));
        }
        let per = BANDS * SIDE * SIDE;
        let mut out = Vec::with_capacity(s[0]);
        for chunk in batch.data().chunks(8 * per) {
            let mut g = Graph::new();
            let p = nn::bind_params(&mut g, self, false);
            let x = g.constant(Tensor::new(vec![chunk.len() / per, BANDS, SIDE, SIDE], chunk.to_vec())?);
            let y = self.forward_graph(&mut g, &p, x, None, None)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &[ImageSample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(8) {
            let refs: Vec<&Tensor> = chunk.iter().map(|s| &s.bands).collect();
            out.extend(self.forward(&Self::stack(&refs)?)?);
        }
        Ok(out)
    }

    /// Per-sample output shape of every stage for a single zero image.
    pub fn shape_trace(&self) -> Result<ShapeTrace> {
        let mut g = Graph::new();
        let p = nn::bind_params(&mut g, self, false);
        let x = g.constant(Tensor::zeros(vec![1, BANDS, SIDE, SIDE]));
        let mut trace = ShapeTrace { stages: Vec::new() };
        self.forward_graph(&mut g, &p, x, None, Some(&mut trace))?;
        Ok(trace)
    }

    /// BCE and parameter gradients for one batch in training mode.
    pub fn loss_and_grads(
        &self,
        batch: &[&ImageSample],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>, Vec<Tensor>)> {
        let refs: Vec<&Tensor> = batch.iter().map(|s| &s.bands).collect();
        let labels: Vec<f64> = batch.iter().map(|s| f64::from(s.label)).collect();
        let mut g = Graph::new();
        let p = nn::bind_params(&mut g, self, true);
        let x = g.constant(Self::stack(&refs)?);
        let y = self.forward_graph(&mut g, &p, x, dropout_rng, None)?;
        let probs = g.value(y).data().to_vec();
        let (loss, dpred) = bce_with_grad(&probs, &labels)?;
        nn::check_loss(loss, "riskflow")?;
        let l = g.loss_node(y, loss, dpred)?;
        g.backward(l)?;
        Ok((loss, probs, nn::collect_grads(&g, &p, self)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskFlowEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

fn accuracy(probs: &[f64], samples: &[ImageSample]) -> f64 {
    let hits = probs
        .iter()
        .zip(samples)
        .filter(|(p, s)| u8::from(**p >= 0.5) == s.label)
        .count();
    hits as f64 / samples.len() as f64
}

/// BCE and accuracy of inference-mode predictions.
pub fn evaluate(model: &RiskFlowModel, samples: &[ImageSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let probs = model.predict(samples)?;
    let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    Ok((bce(&probs, &labels)?, accuracy(&probs, samples)))
}

pub struct RiskFlowTrainer {
    cfg: TrainConfig,
    opt: crate::optim::Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl RiskFlowTrainer {
    /// Changes the learning rate for subsequent steps; moments are kept.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and nonnegative")));
        }
        self.opt.config.lr = lr;
        Ok(())
    }

    pub fn new(model: &RiskFlowModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, opt: nn::adam_for(model, cfg.lr), rng: ChaCha8Rng::seed_from_u64(cfg.seed), epoch: 0 })
    }

    /// One pass over `train`. The reported train loss and accuracy are
    /// averages of the training-mode batch values.
    pub fn run_epoch(
        &mut self,
        model: &mut RiskFlowModel,
        train: &[ImageSample],
        val: &[ImageSample],
    ) -> Result<RiskFlowEpoch> {
        if train.is_empty() {
            return Err(Error::invalid("riskflow: empty training set"));
        }
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for idx in nn::shuffled_batches(train.len(), self.cfg.batch_size, &mut self.rng) {
            let batch: Vec<&ImageSample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, probs, grads) = model.loss_and_grads(&batch, Some(&mut self.rng))?;
            nn::apply_adam(&mut self.opt, model, &grads)?;
            loss_sum += loss * batch.len() as f64;
            hits += probs.iter().zip(&batch).filter(|(p, s)| u8::from(**p >= 0.5) == s.label).count();
        }
        self.epoch += 1;
        let (val_loss, val_accuracy) = evaluate(model, val)?;
        Ok(RiskFlowEpoch {
            epoch: self.epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        })
    }
}

/// Trains with BCE and Adam for `cfg.epochs` epochs.
pub fn riskflow_train(
    model: &mut RiskFlowModel,
    train: &[ImageSample],
    val: &[ImageSample],
    cfg: TrainConfig,
) -> Result<Vec<RiskFlowEpoch>> {
    if train.is_empty() {
        return Err(Error::invalid("riskflow: empty training set"));
    }
    let mut trainer = RiskFlowTrainer::new(model, cfg)?;
    (0..cfg.epochs).map(|_| trainer.run_epoch(model, train, val)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(fill: f64, label: u8) -> ImageSample {
        ImageSample::new(Tensor::full(vec![BANDS, SIDE, SIDE], fill), label).unwrap()
    }

    #[test]
    fn table_shape_chain_and_counts() {
        let m = RiskFlowModel::new(0);
        let trace = m.shape_trace().unwrap();
        let shapes: Vec<Vec<usize>> = trace.stages.iter().map(|(_, s)| s.clone()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![6, 128, 128],
                vec![32, 126, 126],
                vec![32, 63, 63],
                vec![64, 61, 61],
                vec![64, 30, 30],
                vec![57600],
                vec![64],
                vec![1],
            ]
        );
        let counts: Vec<usize> = m.layer_param_counts().iter().map(|c| c.1).collect();
        assert_eq!(counts, vec![1760, 18496, 3_686_464, 65]);
        assert_eq!(m.param_count(), 3_706_785);
    }

    #[test]
    fn seeded_init() {
        assert_eq!(RiskFlowModel::new(4), RiskFlowModel::new(4));
        assert_ne!(RiskFlowModel::new(4).conv1_k, RiskFlowModel::new(5).conv1_k);
        let m = RiskFlowModel::new(4);
        let bound = (6.0f64 / 54.0).sqrt();
        assert!(m.conv1_k.data().iter().all(|v| v.abs() <= bound));
        assert!(m.conv1_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_gives_one_half() {
        let m = RiskFlowModel::zeroed();
        let p = m.forward(&Tensor::zeros(vec![1, 6, 128, 128])).unwrap();
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn batch_of_seven_and_bad_shapes() {
        let m = RiskFlowModel::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = Tensor::uniform(vec![7, 6, 128, 128], 1.0, &mut rng).map(f64::abs);
        let p = m.forward(&batch).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p, m.forward(&batch).unwrap());
        assert!(m.forward(&Tensor::zeros(vec![1, 5, 128, 128])).is_err());
        assert!(m.forward(&Tensor::zeros(vec![1, 6, 64, 64])).is_err());
    }

    #[test]
    fn conv1_receives_gradient() {
        let m = RiskFlowModel::new(3);
        let a = image(0.2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy = Tensor::uniform(vec![6, 128, 128], 0.5, &mut rng).map(|v| v + 0.5);
        let b = ImageSample::new(noisy, 1).unwrap();
        let (_, _, grads) = m.loss_and_grads(&[&a, &b], None).unwrap();
        assert!(grads[0].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn classify_thresholds() {
        assert_eq!(classify(0.8323, 0.8).unwrap(), GlofClass::Glof);
        assert_eq!(classify(0.0143, 0.8).unwrap(), GlofClass::NoGlof);
        assert_eq!(classify(0.5, 0.5).unwrap(), GlofClass::Glof);
        assert!(classify(0.5, 1.2).is_err());
    }

    #[test]
    fn image_sample_validation() {
        assert!(ImageSample::new(Tensor::zeros(vec![6, 128, 127]), 0).is_err());
        assert!(ImageSample::new(Tensor::full(vec![6, 128, 128], 1.5), 0).is_err());
        assert!(ImageSample::new(Tensor::zeros(vec![6, 128, 128]), 2).is_err());
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let mut m = RiskFlowModel::new(8);
        let before = m.clone();
        let data = vec![image(0.1, 0), image(0.9, 1)];
        let cfg = TrainConfig { epochs: 2, batch_size: 2, lr: 0.0, seed: 1 };
        let hist = riskflow_train(&mut m, &data, &data, cfg).unwrap();
        assert_eq!(hist.len(), 2);
        assert_eq!(hist[0].val_loss, hist[1].val_loss);
        assert_eq!(m, before);
        assert!(riskflow_train(&mut m, &[], &data, cfg).is_err());
    }
}
