//! Fully connected regression network for 2-D positions.
//!
//! Hidden layers use the rectifier and optional inverted dropout; the output
//! layer is linear. Training minimises the mean squared error over both
//! coordinates with plain mini-batch SGD. Evaluation reports the mean
//! per-sample Euclidean distance in metres.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fidelity::{Monitor, StopDecision};
use crate::rng;

const MODEL_MAGIC: &str = "boloc-mlp v1";

/// Training is declared diverged once the validation error exceeds this
/// multiple of the untrained network's validation error.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    seed: u64,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases for the given layer sizes
    /// (input, hidden..., output).
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut r = rng::seeded(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| r.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            sizes: sizes.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    /// Builds a model from explicit `(weights, bias)` pairs; weights are
    /// shaped `(fan_in, fan_out)`.
    pub fn from_layers(layers: Vec<(Array2<f64>, Array1<f64>)>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        let mut sizes = vec![layers[0].0.nrows()];
        for (w, b) in &layers {
            if w.nrows() != *sizes.last().unwrap() || w.ncols() != b.len() {
                return Err(Error::invalid("inconsistent layer shapes"));
            }
            sizes.push(w.ncols());
        }
        let (weights, biases) = layers.into_iter().unzip();
        Ok(MlpModel {
            sizes,
            weights,
            biases,
            seed,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let mut k = k;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if k < w.len() {
                return &mut w.as_slice_mut().expect("standard layout")[k];
            }
            k -= w.len();
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    /// Deterministic forward pass (no dropout).
    pub fn predict_positions(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.sizes[0] {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.sizes[0],
                features.ncols()
            )));
        }
        let mut a = features.to_owned();
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        Ok(a)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC}");
        let _ = writeln!(out, "seed {}", self.seed);
        let sizes: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for row in w.rows() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
            let vals: Vec<String> = b.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| perr(0, format!("missing {what}")));
        let (ln, magic) = next("header")?;
        if magic != MODEL_MAGIC {
            return Err(perr(ln, format!("expected `{MODEL_MAGIC}`")));
        }
        let (ln, seed_line) = next("seed")?;
        let seed = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(ln, "bad seed line".into()))?;
        let (ln, layer_line) = next("layer sizes")?;
        let sizes: Vec<usize> = layer_line
            .strip_prefix("layers ")
            .ok_or_else(|| perr(ln, "bad layers line".into()))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| perr(ln, format!("bad size `{s}`"))))
            .collect::<Result<_>>()?;
        let mut model = MlpModel::new(&sizes, seed).map_err(|e| perr(ln, e.to_string()))?;
        let mut parse_row = |expect: usize| -> Result<Vec<f64>> {
            let (ln, line) = next("parameter row")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| perr(ln, format!("bad value `{s}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != expect || vals.iter().any(|v| !v.is_finite()) {
                return Err(perr(ln, format!("expected {expect} finite values")));
            }
            Ok(vals)
        };
        for l in 0..model.n_layers() {
            let (rows, cols) = model.weights[l].dim();
            for r in 0..rows {
                let vals = parse_row(cols)?;
                model.weights[l].row_mut(r).assign(&Array1::from(vals));
            }
            model.biases[l] = Array1::from(parse_row(cols)?);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Mean per-sample Euclidean distance between predicted and true positions.
pub fn localisation_error(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} differs from truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let n = pred.nrows();
    if n == 0 {
        return Err(Error::invalid("localisation error of an empty set"));
    }
    let total: f64 = pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / n as f64)
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub units1: usize,
    pub units2: usize,
    pub dropout1: f64,
    pub dropout2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Return the parameters of the epoch with the lowest validation error
    /// instead of those after the last epoch.
    pub restore_best: bool,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.units1 == 0 || self.units2 == 0 {
            return Err(Error::invalid("hidden layers need at least one unit"));
        }
        for p in [self.dropout1, self.dropout2] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("dropout {p} outside [0, 1)")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Features and labels for one split.
#[derive(Clone, Debug)]
pub struct Split {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Train/validation/test matrices after feature processing.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub epoch_val_errors: Vec<f64>,
    pub train_error_m: f64,
    pub val_error_m: f64,
    pub test_error_m: f64,
}

/// Gradients in the same layout as the model parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Per-layer inputs and pre-activations kept for the backward pass.
struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

fn forward_train(
    model: &MlpModel,
    x: Array2<f64>,
    dropout: &[f64],
    mut rng: Option<&mut rng::Rng>,
) -> (Array2<f64>, Tape) {
    let last = model.n_layers() - 1;
    let mut tape = Tape {
        inputs: Vec::with_capacity(model.n_layers()),
        pre: Vec::with_capacity(model.n_layers()),
        masks: Vec::with_capacity(model.n_layers()),
    };
    let mut a = x;
    for l in 0..model.n_layers() {
        let mut z = a.dot(&model.weights[l]);
        z += &model.biases[l];
        tape.inputs.push(a);
        if l == last {
            tape.pre.push(z.clone());
            tape.masks.push(None);
            a = z;
            break;
        }
        let mut h = z.mapv(relu);
        tape.pre.push(z);
        let p = dropout.get(l).copied().unwrap_or(0.0);
        let mask = match rng.as_deref_mut() {
            Some(r) if p > 0.0 => {
                let keep = 1.0 - p;
                let m = Array2::from_shape_fn(h.dim(), |_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                h *= &m;
                Some(m)
            }
            _ => None,
        };
        tape.masks.push(mask);
        a = h;
    }
    (a, tape)
}

/// Backward pass for the loss `mean((out - y)²)` over all entries.
fn backward(model: &MlpModel, out: &Array2<f64>, y: ArrayView2<'_, f64>, tape: &Tape) -> (f64, Gradients) {
    let count = out.len() as f64;
    let diff = out - &y;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let mut delta = diff * (2.0 / count);
    let n = model.n_layers();
    let mut gw = vec![Array2::zeros((0, 0)); n];
    let mut gb = vec![Array1::zeros(0); n];
    for l in (0..n).rev() {
        gw[l] = tape.inputs[l].t().dot(&delta);
        gb[l] = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut up = delta.dot(&model.weights[l].t());
        if let Some(m) = &tape.masks[l - 1] {
            up *= m;
        }
        Zip::from(&mut up).and(&tape.pre[l - 1]).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        delta = up;
    }
    (
        loss,
        Gradients {
            weights: gw,
            biases: gb,
        },
    )
}

/// Loss and analytic gradients on a batch with dropout disabled.
pub fn loss_and_gradients(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> (f64, Gradients) {
    let (out, tape) = forward_train(model, x.to_owned(), &[], None);
    backward(model, &out, y, &tape)
}

fn loss_only(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let out = model.predict_positions(x).expect("shape checked by caller");
    let diff = out - y;
    diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
}

/// Largest relative deviation between analytic gradients and central finite
/// differences (step 1e-5) over at least 200 parameters, or all of them when
/// the model is smaller.
pub fn gradient_check(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::invalid("gradient check needs a non-empty batch"));
    }
    if x.ncols() != model.sizes[0] || y.ncols() != *model.sizes.last().unwrap() {
        return Err(Error::invalid("batch shape does not match the model"));
    }
    let (_, grads) = loss_and_gradients(model, x, y);
    let analytic = grads.flat();
    let total = analytic.len();
    let picks: Vec<usize> = if total <= 200 {
        (0..total).collect()
    } else {
        let mut r = rng::seeded(model.seed ^ 0x6772_6164);
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut r);
        idx.truncate(200);
        idx.sort_unstable();
        idx
    };
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in picks {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + h;
        let up = loss_only(&probe, x, y);
        *probe.param_mut(k) = orig - h;
        let down = loss_only(&probe, x, y);
        *probe.param_mut(k) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(dev);
    }
    Ok(worst)
}

fn check_split(name: &str, split: &Split, n_features: usize) -> Result<()> {
    if split.is_empty() {
        return Err(Error::invalid(format!("{name} split is empty")));
    }
    if split.features.ncols() != n_features || split.labels.ncols() != 2 || split.labels.nrows() != split.len() {
        return Err(Error::invalid(format!("{name} split has inconsistent shapes")));
    }
    Ok(())
}

fn evaluate(model: &MlpModel, split: &Split) -> Result<f64> {
    let pred = model.predict_positions(split.features.view())?;
    localisation_error(pred.view(), split.labels.view())
}

/// Trains a two-hidden-layer network. `stop_poll` is called after every
/// epoch with the validation error; returning `Stop` ends training early.
pub fn train(data: &TrainData, cfg: &TrainConfig, stop_poll: &mut Monitor<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_features = data.train.features.ncols();
    if n_features == 0 {
        return Err(Error::invalid("no input features"));
    }
    check_split("train", &data.train, n_features)?;
    check_split("validation", &data.val, n_features)?;
    check_split("test", &data.test, n_features)?;

    let mut model = MlpModel::new(&[n_features, cfg.units1, cfg.units2, 2], cfg.seed)?;
    let mut r = rng::child(cfg.seed, 1);
    let dropout = [cfg.dropout1, cfg.dropout2];
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_val_errors = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(MlpModel, f64)> = None;
    let blowup = DIVERGENCE_FACTOR * evaluate(&model, &data.val)?.max(1e-3);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.train.features.select(Axis(0), batch);
            let yb = data.train.labels.select(Axis(0), batch);
            let (out, tape) = forward_train(&model, xb, &dropout, Some(&mut r));
            let (loss, grads) = backward(&model, &out, yb.view(), &tape);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!("training loss became {loss}"),
                });
            }
            if cfg.learning_rate > 0.0 {
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-cfg.learning_rate, g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-cfg.learning_rate, g);
                }
            }
        }
        let val = evaluate(&model, &data.val)?;
        if !val.is_finite() || !model.is_finite() || val > blowup {
            return Err(Error::Diverged {
                epoch,
                msg: format!("validation error became {val}"),
            });
        }
        if cfg.restore_best && best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((model.clone(), val));
        }
        epoch_val_errors.push(val);
        if stop_poll(epoch, val) == StopDecision::Stop {
            break;
        }
    }

    let val_error_m = match best {
        Some((m, v)) => {
            model = m;
            v
        }
        None => *epoch_val_errors.last().expect("at least one epoch"),
    };
    let train_error_m = evaluate(&model, &data.train)?;
    let test_error_m = evaluate(&model, &data.test)?;
    if !train_error_m.is_finite() || !test_error_m.is_finite() {
        return Err(Error::Diverged {
            epoch: epoch_val_errors.len(),
            msg: "final errors are not finite".into(),
        });
    }
    Ok(TrainOutcome {
        model,
        epoch_val_errors,
        train_error_m,
        val_error_m,
        test_error_m,
    })
}

/// Full-batch gradient descent on a network without hidden layers; returns
/// the loss before each step. Used to check descent on a convex problem.
pub fn linear_descent_losses(model: &mut MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, lr: f64, steps: usize) -> Vec<f64> {
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, g) = loss_and_gradients(model, x, y);
        losses.push(loss);
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            w.scaled_add(-lr, gw);
        }
        for (b, gb) in model.biases.iter_mut().zip(&g.biases) {
            b.scaled_add(-lr, gb);
        }
    }
    losses
}

/// Pre-activation of a layer fed through one inverted-dropout mask draw.
pub fn dropout_preactivation(
    input: &Array1<f64>,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    rate: f64,
    r: &mut rng::Rng,
) -> Array1<f64> {
    let keep = 1.0 - rate;
    let masked = input.mapv(|v| if r.random::<f64>() < keep { v / keep } else { 0.0 });
    masked.dot(weights) + bias
}
