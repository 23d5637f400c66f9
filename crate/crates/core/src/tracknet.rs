//! Learned tracking cost: an MLP from raw polynomial coefficients to the
//! closed-loop tracking cost, with hand-written forward, backward and
//! input-gradient passes.
//!
//! Inputs are standardized with statistics of the training split. The network
//! regresses `log1p(label)` when the label transform is enabled, and
//! [`TrackNetModel::forward`] maps predictions back through `expm1`, floored
//! at zero. Hidden units are ReLU with subgradient 0 at the kink.

use std::io::Read as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{split, RolloutRecord};
use crate::error::{Error, Result};
use crate::stats::spearman;

pub const HIDDEN_LAYERS: [usize; 3] = [100, 100, 20];
const MAGIC: &[u8; 4] = b"QLCD";
pub const FORMAT_VERSION: u32 = 1;
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackNetModel {
    pub layers: Vec<Layer>,
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    pub log_label: bool,
}

impl TrackNetModel {
    /// He-initialized network with the given layer widths.
    pub fn init(dims: &[usize], log_label: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("finite std");
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(rng)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        TrackNetModel {
            layers,
            mean: DVector::zeros(dims[0]),
            std: DVector::from_element(dims[0], 1.0),
            log_label,
        }
    }

    /// All weights and biases zero, identity normalization.
    pub fn zeros(dims: &[usize], log_label: bool) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        TrackNetModel {
            layers,
            mean: DVector::zeros(dims[0]),
            std: DVector::from_element(dims[0], 1.0),
            log_label,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weights.nrows()));
        d
    }

    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: &str| Err(Error::ShapeCorruption(m.to_string()));
        if self.layers.is_empty() {
            return corrupt("no layers");
        }
        for pair in self.layers.windows(2) {
            if pair[1].weights.ncols() != pair[0].weights.nrows() {
                return corrupt("layer shapes do not chain");
            }
        }
        if self.layers.iter().any(|l| l.bias.len() != l.weights.nrows()) {
            return corrupt("bias length differs from layer width");
        }
        if self.layers.last().map(|l| l.weights.nrows()) != Some(1) {
            return corrupt("output layer must be scalar");
        }
        if self.mean.len() != self.input_dim() || self.std.len() != self.input_dim() {
            return corrupt("normalization length differs from input width");
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return corrupt("normalization std must be positive");
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.mean.iter().zip(self.std.iter()))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    /// Raw network output in transformed-label units, plus the
    /// pre-activations of every hidden layer.
    fn head(&self, x: &[f64]) -> (f64, Vec<DVector<f64>>) {
        let mut a = self.normalize(x);
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = &layer.weights * &a + &layer.bias;
            if i == last {
                return (z[0], pre);
            }
            a = z.map(|v| v.max(0.0));
            pre.push(z);
        }
        unreachable!("network has an output layer")
    }

    fn output_from_head(&self, y: f64) -> (f64, f64) {
        // (value, d value / d y)
        if self.log_label {
            let v = y.exp_m1();
            if v > 0.0 {
                (v, y.exp())
            } else {
                (0.0, 0.0)
            }
        } else if y > 0.0 {
            (y, 1.0)
        } else {
            (0.0, 0.0)
        }
    }

    /// Predicted tracking cost (label units, never negative).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.output_from_head(self.head(x).0).0)
    }

    /// Exact gradient of [`Self::forward`] with respect to the raw input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (y, pre) = self.head(x);
        let (value, dy) = self.output_from_head(y);
        let last = self.layers.len() - 1;
        let mut delta = self.layers[last].weights.row(0).transpose() * dy;
        for i in (0..last).rev() {
            let masked = delta.zip_map(&pre[i], |d, z| if z > 0.0 { d } else { 0.0 });
            delta = self.layers[i].weights.tr_mul(&masked);
        }
        let grad = delta.component_div(&self.std);
        Ok((value, grad.iter().copied().collect()))
    }

    /// Smallest distance of any hidden pre-activation from the ReLU kink.
    pub fn kink_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (_, pre) = self.head(x);
        Ok(pre
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.weights.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weights.ncols() as u32).to_le_bytes());
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    out.extend_from_slice(&l.weights[(r, c)].to_le_bytes());
                }
            }
            for b in l.bias.iter() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        for v in self.mean.iter().chain(self.std.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(self.log_label));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ShapeCorruption("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch(version));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::ShapeCorruption(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 26) {
                return Err(Error::ShapeCorruption(format!("implausible layer {rows}x{cols}")));
            }
            let w = r.f64s(rows * cols)?;
            let weights = DMatrix::from_row_slice(rows, cols, &w);
            let bias = DVector::from_vec(r.f64s(rows)?);
            layers.push(Layer { weights, bias });
        }
        let d = layers[0].weights.ncols();
        let mean = DVector::from_vec(r.f64s(d)?);
        let std = DVector::from_vec(r.f64s(d)?);
        let flag = r.take(1)?[0];
        if flag > 1 {
            return Err(Error::ShapeCorruption("bad transform flag".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::ShapeCorruption("trailing bytes".into()));
        }
        let model = TrackNetModel {
            layers,
            mean,
            std,
            log_label: flag == 1,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ShapeCorruption("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::ShapeCorruption("length overflow".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f64,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub log_label: bool,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 200,
            val_fraction: 0.2,
            seed: 0,
            log_label: true,
            hidden: HIDDEN_LAYERS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig("validation fraction must be in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig("need learning rate > 0 and batch size >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Validation MSE (transformed labels) before the first update.
    pub initial_val_loss: f64,
    /// Per-epoch (mean training-batch MSE, validation MSE).
    pub epochs: Vec<(f64, f64)>,
    /// Spearman correlation of predictions and labels on the validation split.
    pub val_spearman: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

pub const MIN_TRAIN_RECORDS: usize = 100;

/// Trains on rollout records: inputs are coefficient vectors, targets the
/// tracking-cost labels.
pub fn train(records: &[RolloutRecord], config: &TrainConfig) -> Result<(TrackNetModel, TrainReport)> {
    let inputs: Vec<&[f64]> = records.iter().map(|r| r.coeffs.as_slice()).collect();
    let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
    train_samples(&inputs, &labels, config)
}

pub fn train_samples(
    inputs: &[&[f64]],
    labels: &[f64],
    config: &TrainConfig,
) -> Result<(TrackNetModel, TrainReport)> {
    config.validate()?;
    if inputs.len() < MIN_TRAIN_RECORDS {
        return Err(Error::InsufficientData {
            needed: MIN_TRAIN_RECORDS,
            got: inputs.len(),
        });
    }
    assert_eq!(inputs.len(), labels.len());
    if labels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidConfig("labels must be finite and non-negative".into()));
    }
    let dim = inputs[0].len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let (train_idx, val_idx) = split(inputs.len(), config.val_fraction, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a11);
    let mut dims = vec![dim];
    dims.extend(&config.hidden);
    dims.push(1);
    let mut model = TrackNetModel::init(&dims, config.log_label, &mut rng);
    let (mean, std) = column_stats(inputs, &train_idx);
    // constant inputs never receive a weight gradient; start them silent
    for (j, &s) in std.iter().enumerate() {
        if s == 1.0 && is_constant(inputs, &train_idx, j) {
            model.layers[0].weights.column_mut(j).fill(0.0);
        }
    }
    model.mean = mean;
    model.std = std;

    let target = |l: f64| if config.log_label { l.ln_1p() } else { l };
    let x_all = DMatrix::from_fn(dim, inputs.len(), |r, c| {
        (inputs[c][r] - model.mean[r]) / model.std[r]
    });
    let y_all: Vec<f64> = labels.iter().map(|&l| target(l)).collect();
    let out_bias = train_idx.iter().map(|&i| y_all[i]).sum::<f64>() / train_idx.len() as f64;
    model.layers.last_mut().expect("output layer").bias[0] = out_bias;

    let val_x = x_all.select_columns(&val_idx);
    let val_y: Vec<f64> = val_idx.iter().map(|&i| y_all[i]).collect();
    let val_loss = |m: &TrackNetModel| mse(&batch_forward(m, &val_x).0, &val_y);
    let initial_val_loss = val_loss(&model);

    let mut velocity: Vec<(DMatrix<f64>, DVector<f64>)> = model
        .layers
        .iter()
        .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len())))
        .collect();
    let mut order = train_idx.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let x = x_all.select_columns(batch);
            let y: Vec<f64> = batch.iter().map(|&i| y_all[i]).collect();
            let (loss, grads) = batch_gradient(&model, &x, &y);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(epoch));
            }
            loss_sum += loss;
            batches += 1;
            for ((layer, vel), (gw, gb)) in model.layers.iter_mut().zip(&mut velocity).zip(grads) {
                vel.0 *= config.momentum;
                vel.0 -= (gw + &layer.weights * config.weight_decay) * config.learning_rate;
                vel.1 *= config.momentum;
                vel.1 -= gb * config.learning_rate;
                layer.weights += &vel.0;
                layer.bias += &vel.1;
            }
        }
        let v = val_loss(&model);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        epochs.push((loss_sum / batches.max(1) as f64, v));
    }

    let pred = batch_forward(&model, &val_x).0;
    let truth: Vec<f64> = val_idx.iter().map(|&i| labels[i]).collect();
    let report = TrainReport {
        initial_val_loss,
        epochs,
        val_spearman: spearman(&pred, &truth),
        train_indices: train_idx,
        val_indices: val_idx,
    };
    Ok((model, report))
}

fn is_constant(inputs: &[&[f64]], rows: &[usize], j: usize) -> bool {
    let first = inputs[rows[0]][j];
    rows.iter().all(|&i| (inputs[i][j] - first).abs() <= MIN_STD)
}

/// Per-dimension mean and std over the given rows. Constant dimensions get
/// unit std so they pass through unscaled.
pub fn column_stats(inputs: &[&[f64]], rows: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let dim = inputs[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(dim);
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(inputs[i]) {
            *m += v / n;
        }
    }
    let mut var = DVector::<f64>::zeros(dim);
    for &i in rows {
        for ((s, v), m) in var.iter_mut().zip(inputs[i]).zip(mean.iter()) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = var.map(|v| {
        let s = v.sqrt();
        if s > MIN_STD {
            s
        } else {
            1.0
        }
    });
    (mean, std)
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

/// Network head on normalized columns; returns outputs and per-layer
/// activations (input first).
fn batch_forward(model: &TrackNetModel, x: &DMatrix<f64>) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let last = model.layers.len() - 1;
    let mut acts = vec![x.clone()];
    for (i, layer) in model.layers.iter().enumerate() {
        let mut z = &layer.weights * acts.last().expect("input");
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        if i < last {
            z.apply(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    let out = acts.last().expect("output").row(0).iter().copied().collect();
    (out, acts)
}

type LayerGrads = Vec<(DMatrix<f64>, DVector<f64>)>;

/// Mean squared error of the head and its parameter gradients.
fn batch_gradient(model: &TrackNetModel, x: &DMatrix<f64>, y: &[f64]) -> (f64, LayerGrads) {
    let n = y.len() as f64;
    let (out, acts) = batch_forward(model, x);
    let loss = mse(&out, y);
    let mut delta = DMatrix::from_fn(1, y.len(), |_, c| 2.0 * (out[c] - y[c]) / n);
    let mut grads = Vec::with_capacity(model.layers.len());
    for i in (0..model.layers.len()).rev() {
        let a_prev = &acts[i];
        let gw = &delta * a_prev.transpose();
        let gb = delta.column_sum();
        if i > 0 {
            let mut back = model.layers[i].weights.tr_mul(&delta);
            back.zip_apply(a_prev, |d, a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = back;
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> TrackNetModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = TrackNetModel::init(&[6, 8, 5, 1], true, &mut rng);
        m.mean = DVector::from_fn(6, |i, _| 0.1 * i as f64);
        m.std = DVector::from_fn(6, |i, _| 0.5 + 0.25 * i as f64);
        m.layers.last_mut().unwrap().bias[0] = 1.0;
        m
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = TrackNetModel::zeros(&[96, 100, 100, 20, 1], true);
        let x = vec![1.5; 96];
        assert_eq!(m.forward(&x).unwrap(), 0.0);
        assert!(m.input_gradient(&x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_path_by_hand() {
        let mut m = TrackNetModel::zeros(&[2, 2, 1], false);
        m.layers[0].weights[(0, 0)] = 2.0;
        m.layers[0].bias[0] = 0.5;
        m.layers[1].weights[(0, 0)] = 3.0;
        m.layers[1].bias[0] = 0.25;
        m.mean[0] = 1.0;
        m.std[0] = 2.0;
        // z0 = (5 - 1)/2 = 2; h = relu(2*2 + 0.5) = 4.5; y = 3*4.5 + 0.25
        assert_eq!(m.forward(&[5.0, -7.0]).unwrap(), 13.75);
        let g = m.input_gradient(&[5.0, -7.0]).unwrap();
        assert_eq!(g, vec![3.0 * 2.0 / 2.0, 0.0]);
    }

    #[test]
    fn dead_unit_gives_zero_partial() {
        let mut m = TrackNetModel::zeros(&[2, 1, 1], false);
        m.layers[0].weights[(0, 1)] = 1.0;
        m.layers[0].bias[0] = -10.0;
        m.layers[1].weights[(0, 0)] = 1.0;
        m.layers[1].bias[0] = 1.0;
        let g = m.input_gradient(&[0.0, 3.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let m = small_model(case);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            if m.kink_margin(&x).unwrap() < 1e-3 {
                continue;
            }
            let g = m.input_gradient(&x).unwrap();
            for i in 0..6 {
                let h = 1e-5;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-6), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = small_model(0);
        assert!(matches!(m.forward(&[0.0; 5]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.input_gradient(&[0.0; 7]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let m = small_model(3);
        let back = TrackNetModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let x = [0.3, -0.2, 1.1, 0.0, 2.0, -1.0];
        assert_eq!(back.forward(&x).unwrap().to_bits(), m.forward(&x).unwrap().to_bits());
    }

    #[test]
    fn corrupted_files_rejected() {
        let bytes = small_model(3).to_bytes();
        assert!(matches!(
            TrackNetModel::from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::ShapeCorruption(_))
        ));
        let mut bumped = bytes.clone();
        bumped[4] += 1;
        assert!(matches!(
            TrackNetModel::from_bytes(&bumped),
            Err(Error::FormatVersionMismatch(2))
        ));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(TrackNetModel::from_bytes(&bad_magic).is_err());
    }

    #[test]
    fn too_few_records() {
        let x = vec![0.0; 4];
        let inputs: Vec<&[f64]> = (0..50).map(|_| x.as_slice()).collect();
        let labels = vec![1.0; 50];
        assert!(matches!(
            train_samples(&inputs, &labels, &TrainConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let labels: Vec<f64> = xs.iter().map(|x| 1e6 * x[0].abs()).collect();
        let cfg = TrainConfig {
            learning_rate: 1e3,
            epochs: 50,
            hidden: vec![8],
            log_label: false,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_samples(&inputs, &labels, &cfg),
            Err(Error::NonFiniteLoss(_))
        ));
    }
}
