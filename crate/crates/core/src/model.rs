//! Dense ReLU classifier with softmax output, trained by mini-batch
//! crossentropy backprop and RMSprop.
//!
//! Canonical parameter layout: layers in order from input to output; for each
//! layer the `in x out` weight matrix in row-major order (entry `[i][j]`
//! connects input `i` to unit `j`), followed by its `out` biases. Weight
//! distance, averaging and snapshot files all use this flat layout.
//!
//! Raw sensing features (16 phases, 16 powers) pass through a fixed input map
//! before the first dense layer. [`InputMap::Squared`], the classifier's map,
//! turns each (phase, power) pair into the in-phase/quadrature coordinates of
//! the squared symbol, scaled by the sample's mean power: BPSK symbols then
//! coincide and QPSK symbols fall on two antipodal points, whatever the
//! channel phase. The map has no parameters, so the parameter count is
//! unaffected.

use std::fmt;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{ClientDataset, FEATURE_LEN};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Fixed preprocessing applied to raw inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InputMap {
    #[default]
    Identity,
    /// First half phases, second half powers. Output is
    /// `[sqrt(p_k) cos(phi_k) / a .., sqrt(p_k) sin(phi_k) / a ..]` with `a`
    /// the RMS amplitude of the sample (zero when every power is zero).
    IqNormalized,
    /// Like `IqNormalized` on the squared symbols: power `p_k / mean(p)` at
    /// angle `2 phi_k`, which folds antipodal points together.
    Squared,
}

impl InputMap {
    pub fn name(self) -> &'static str {
        match self {
            InputMap::Identity => "identity",
            InputMap::IqNormalized => "iq",
            InputMap::Squared => "squared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(InputMap::Identity),
            "iq" => Ok(InputMap::IqNormalized),
            "squared" => Ok(InputMap::Squared),
            _ => Err(Error::invalid(format!("unknown input map `{s}`"))),
        }
    }

    pub fn apply_into(self, x: &[f64], out: &mut [f64]) {
        match self {
            InputMap::Identity => out.copy_from_slice(x),
            InputMap::IqNormalized => {
                let h = x.len() / 2;
                let (phases, powers) = x.split_at(h);
                let rms = (powers.iter().sum::<f64>() / h as f64).sqrt();
                let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
                for k in 0..h {
                    let amp = powers[k].max(0.0).sqrt() * scale;
                    out[k] = amp * phases[k].cos();
                    out[h + k] = amp * phases[k].sin();
                }
            }
            InputMap::Squared => {
                let h = x.len() / 2;
                let (phases, powers) = x.split_at(h);
                let mean = powers.iter().sum::<f64>() / h as f64;
                let scale = if mean > 0.0 { 1.0 / mean } else { 0.0 };
                for k in 0..h {
                    let amp = powers[k].max(0.0) * scale;
                    out[k] = amp * (2.0 * phases[k]).cos();
                    out[h + k] = amp * (2.0 * phases[k]).sin();
                }
            }
        }
    }

    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Layer widths, input first, plus the input map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    sizes: Vec<usize>,
    input_map: InputMap,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        Self::with_input_map(sizes, InputMap::Identity)
    }

    pub fn with_input_map(sizes: Vec<usize>, input_map: InputMap) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        if input_map != InputMap::Identity && !sizes[0].is_multiple_of(2) {
            return Err(Error::invalid("a phase/power input map needs an even input width"));
        }
        Ok(Architecture { sizes, input_map })
    }

    /// 32 -> 128 -> 64 -> 32 -> 2 behind the squared-symbol map.
    pub fn sensing_classifier() -> Self {
        Self::sensing_classifier_with(InputMap::Squared)
    }

    pub fn sensing_classifier_with(input_map: InputMap) -> Self {
        Architecture {
            sizes: vec![FEATURE_LEN, 128, 64, 32, 2],
            input_map,
        }
    }

    pub fn input_map(&self) -> InputMap {
        self.input_map
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    arch: Architecture,
    params: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        ModelWeights {
            arch,
            params: vec![0.0; n],
        }
    }

    pub fn from_flat(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture {arch} needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(ModelWeights { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b) = self.arch.layer_offsets(l);
        ArrayView2::from_shape((self.arch.sizes[l], self.arch.sizes[l + 1]), &self.params[w..b])
            .expect("layout matches architecture")
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.arch.layer_offsets(l);
        &self.params[b..b + self.arch.sizes[l + 1]]
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot())?;
        Ok(())
    }

    /// One header line `# arch <sizes> input <map> params <count>`, then one
    /// value per line.
    pub fn to_snapshot(&self) -> String {
        let mut out = format!(
            "# arch {} input {} params {}\n",
            self.arch,
            self.arch.input_map.name(),
            self.params.len()
        );
        for p in &self.params {
            out.push_str(&format!("{p}\n"));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty snapshot"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "#" || fields[1] != "arch" || fields[3] != "input" || fields[5] != "params" {
            return Err(Error::invalid(format!("bad snapshot header `{header}`")));
        }
        let declared: usize = fields[6]
            .parse()
            .map_err(|_| Error::invalid(format!("bad parameter count `{}`", fields[6])))?;
        let sizes = fields[2]
            .split('-')
            .map(|s| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad layer size `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture::with_input_map(sizes, InputMap::parse(fields[4])?)?;
        if declared != arch.param_count() {
            return Err(Error::invalid(format!("header declares {declared} parameters, {arch} has {}", arch.param_count())));
        }
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad weight `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        ModelWeights::from_flat(arch, params)
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        Self::from_snapshot(&std::fs::read_to_string(path)?)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_weights(arch: &Architecture, rng: &mut SimRng) -> ModelWeights {
    let mut w = ModelWeights::zeros(arch.clone());
    for l in 0..arch.n_layers() {
        let (fan_in, fan_out) = (arch.sizes[l], arch.sizes[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (start, end) = arch.layer_offsets(l);
        for p in &mut w.params[start..end] {
            *p = rng.random_range(-limit..limit);
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub dropout_rate: f64,
    pub epochs_per_round: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rms_decay: 0.9,
            epsilon: 1e-7,
            dropout_rate: 0.2,
            epochs_per_round: 1,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be >= 0")?;
        check(self.rms_decay > 0.0 && self.rms_decay < 1.0, "rms_decay", "must lie in (0, 1)")?;
        check(self.epsilon > 0.0, "epsilon", "must be > 0")?;
        check((0.0..1.0).contains(&self.dropout_rate), "dropout_rate", "must lie in [0, 1)")?;
        check(self.epochs_per_round >= 1, "epochs_per_round", "must be >= 1")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")
    }
}

/// RMSprop running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(param_count: usize) -> Self {
        RmsProp {
            mean_square: vec![0.0; param_count],
        }
    }

    /// `v <- rho v + (1 - rho) g^2`, `w <- w - lr g / (sqrt(v) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, rho: f64, eps: f64) {
        debug_assert_eq!(params.len(), grad.len());
        for ((w, v), &g) in params.iter_mut().zip(self.mean_square.iter_mut()).zip(grad) {
            *v = rho * *v + (1.0 - rho) * g * g;
            *w -= lr * g / (v.sqrt() + eps);
        }
    }
}

/// Inputs as an `n x input_len` matrix plus class indices.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl DesignMatrix {
    /// Features of `data` after `map`.
    pub fn from_dataset(data: &ClientDataset, map: InputMap) -> Self {
        let n = data.samples.len();
        let mut x = Array2::zeros((n, FEATURE_LEN));
        for (mut row, s) in x.rows_mut().into_iter().zip(&data.samples) {
            map.apply_into(&s.features, row.as_slice_mut().expect("standard layout"));
        }
        DesignMatrix {
            x,
            y: data.samples.iter().map(|s| s.label.index()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn affine(w: &ModelWeights, l: usize, input: &ArrayView2<f64>) -> Array2<f64> {
    let bias = Array1::from(w.bias(l).to_vec());
    let mut z = Array2::from_shape_fn((input.nrows(), bias.len()), |(_, j)| bias[j]);
    general_mat_mul(1.0, input, &w.weight(l), 1.0, &mut z);
    z
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Class probabilities for each row of `x` (already mapped), dropout disabled.
pub fn predict_proba(w: &ModelWeights, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut a = affine(w, 0, x);
    for l in 1..w.arch.n_layers() {
        a.mapv_inplace(|v| v.max(0.0));
        a = affine(w, l, &a.view());
    }
    softmax_rows(&mut a);
    a
}

/// Single-input forward pass on raw features. In training mode, inverted
/// dropout is applied after every hidden activation.
pub fn forward(w: &ModelWeights, x: &[f64], train_mode: bool, dropout_rate: f64, rng: Option<&mut SimRng>) -> Result<Vec<f64>> {
    if x.len() != w.arch.input_len() {
        return Err(Error::invalid(format!("input length {} != {}", x.len(), w.arch.input_len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input"));
    }
    let mapped = w.arch.input_map.apply(x);
    let input = ArrayView2::from_shape((1, x.len()), &mapped[..]).expect("row vector");
    if !train_mode || dropout_rate == 0.0 {
        return Ok(predict_proba(w, &input).row(0).to_vec());
    }
    let rng = rng.ok_or_else(|| Error::invalid("training-mode forward needs a random stream"))?;
    let mut a = affine(w, 0, &input);
    for l in 1..w.arch.n_layers() {
        let mask = dropout_mask(a.dim(), dropout_rate, rng);
        a.zip_mut_with(&mask, |v, &m| *v = v.max(0.0) * m);
        a = affine(w, l, &a.view());
    }
    softmax_rows(&mut a);
    Ok(a.row(0).to_vec())
}

fn dropout_mask(dim: (usize, usize), rate: f64, rng: &mut SimRng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Mean crossentropy of a batch and its gradient in canonical layout.
/// With `dropout = Some((rate, rng))` a fresh inverted-dropout mask is drawn
/// for every hidden layer.
pub fn loss_and_gradient(
    w: &ModelWeights,
    x: &ArrayView2<f64>,
    y: &[usize],
    dropout: Option<(f64, &mut SimRng)>,
) -> (f64, Vec<f64>) {
    let arch = &w.arch;
    let n_layers = arch.n_layers();
    let batch = x.nrows();
    let mut dropout = dropout.filter(|(r, _)| *r > 0.0);

    // activations[l] is the input to layer l; gates[l] multiplies dA of
    // hidden layer l (ReLU derivative times dropout scale).
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    let mut gates: Vec<Array2<f64>> = Vec::with_capacity(n_layers - 1);
    let mut z = affine(w, 0, x);
    for l in 1..n_layers {
        let mut gate = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        if let Some((rate, rng)) = dropout.as_mut() {
            gate *= &dropout_mask(z.dim(), *rate, rng);
        }
        z *= &gate;
        gates.push(gate);
        let next = affine(w, l, &z.view());
        activations.push(z);
        z = next;
    }
    softmax_rows(&mut z);

    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        loss -= z[[i, label]].max(f64::MIN_POSITIVE).ln();
        z[[i, label]] -= 1.0;
    }
    loss /= batch as f64;
    let mut delta = z / batch as f64;

    let mut grad = vec![0.0; w.params.len()];
    for l in (0..n_layers).rev() {
        let input = if l == 0 { x.view() } else { activations[l - 1].view() };
        let (wo, bo) = arch.layer_offsets(l);
        let (fan_in, fan_out) = (arch.sizes[l], arch.sizes[l + 1]);
        {
            let mut gw = ndarray::ArrayViewMut2::from_shape((fan_in, fan_out), &mut grad[wo..bo]).expect("layout");
            general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut gw);
        }
        for (g, s) in grad[bo..bo + fan_out].iter_mut().zip(delta.sum_axis(Axis(0))) {
            *g = s;
        }
        if l > 0 {
            let mut upstream = delta.dot(&w.weight(l).t());
            upstream *= &gates[l - 1];
            delta = upstream;
        }
    }
    (loss, grad)
}

/// Runs `epochs_per_round` shuffled mini-batch epochs over `data`.
pub fn train_round(
    w: &ModelWeights,
    data: &DesignMatrix,
    cfg: &TrainConfig,
    opt: &mut RmsProp,
    rng: &mut SimRng,
) -> Result<ModelWeights> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if opt.mean_square.len() != w.param_count() {
        return Err(Error::invalid("optimizer state does not match the model"));
    }
    let mut w = w.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs_per_round {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
            let (_, grad) = loss_and_gradient(&w, &xb.view(), &yb, Some((cfg.dropout_rate, &mut *rng)));
            opt.step(&mut w.params, &grad, cfg.learning_rate, cfg.rms_decay, cfg.epsilon);
        }
    }
    Ok(w)
}

/// Mean crossentropy over the whole set, dropout disabled.
pub fn mean_loss(w: &ModelWeights, data: &DesignMatrix) -> f64 {
    let p = predict_proba(w, &data.x.view());
    let total: f64 = data.y.iter().enumerate().map(|(i, &c)| -p[[i, c]].max(f64::MIN_POSITIVE).ln()).sum();
    total / data.len() as f64
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Fraction of rows whose argmax class equals the label.
pub fn evaluate(w: &ModelWeights, data: &DesignMatrix) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let p = predict_proba(w, &data.x.view());
    let hits = p
        .rows()
        .into_iter()
        .zip(&data.y)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Euclidean distance between two canonical flattenings.
pub fn weight_distance(a: &ModelWeights, b: &ModelWeights) -> Result<f64> {
    if a.arch != b.arch {
        return Err(Error::invalid(format!("architecture mismatch: {} vs {}", a.arch, b.arch)));
    }
    Ok(a.params
        .iter()
        .zip(&b.params)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn random_batch(n: usize, d: usize, classes: usize, rng: &mut SimRng) -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (x, y)
    }

    #[test]
    fn parameter_count_matches_layer_sum() {
        let arch = Architecture::sensing_classifier();
        assert_eq!(arch.param_count(), 4224 + 8256 + 2080 + 66);
        assert_eq!(arch.param_count(), 14_626);
        assert_eq!(init_weights(&arch, &mut seeded(1)).param_count(), 14_626);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = Architecture::sensing_classifier();
        let a = init_weights(&arch, &mut seeded(3));
        let b = init_weights(&arch, &mut seeded(3));
        assert_eq!(a, b);
        for l in 0..arch.n_layers() {
            assert!(a.bias(l).iter().all(|&v| v == 0.0));
            let limit = (6.0 / (arch.sizes()[l] + arch.sizes()[l + 1]) as f64).sqrt();
            assert!(a.weight(l).iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn iq_map_recovers_normalized_constellation() {
        let mut x = [0.0; 32];
        for k in 0..16 {
            x[k] = if k % 2 == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
            x[16 + k] = 4.0;
        }
        let y = InputMap::IqNormalized.apply(&x);
        for k in 0..16 {
            let (i, q) = if k % 2 == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            assert!((y[k] - i).abs() < 1e-12 && (y[16 + k] - q).abs() < 1e-12);
        }
        assert_eq!(InputMap::IqNormalized.apply(&[1.0, 2.0, 0.0, 0.0]), vec![0.0; 4]);
        assert_eq!(InputMap::Identity.apply(&x), x.to_vec());
        assert!(Architecture::with_input_map(vec![3, 2], InputMap::IqNormalized).is_err());
    }

    #[test]
    fn squared_map_folds_constellations() {
        let theta = 1.1;
        let mut bpsk = [0.0; 32];
        let mut qpsk = [0.0; 32];
        for k in 0..16 {
            bpsk[k] = theta + if k % 3 == 0 { std::f64::consts::PI } else { 0.0 };
            qpsk[k] = theta + std::f64::consts::FRAC_PI_4 + (k % 4) as f64 * std::f64::consts::FRAC_PI_2;
            bpsk[16 + k] = 2.5;
            qpsk[16 + k] = 2.5;
        }
        let b = InputMap::Squared.apply(&bpsk);
        let q = InputMap::Squared.apply(&qpsk);
        for k in 0..16 {
            assert!((b[k] - (2.0 * theta).cos()).abs() < 1e-12 && (b[16 + k] - (2.0 * theta).sin()).abs() < 1e-12);
        }
        let (si, sq): (f64, f64) = ((0..16).map(|k| q[k]).sum(), (16..32).map(|k| q[k]).sum());
        assert!(si.abs() < 1e-12 && sq.abs() < 1e-12);
        assert_eq!(InputMap::Squared.apply(&[1.0, 2.0, 0.0, 0.0]), vec![0.0; 4]);
        assert_eq!(InputMap::parse("squared").unwrap(), InputMap::Squared);
    }

    #[test]
    fn iq_map_is_invariant_to_received_power() {
        let mut rng = seeded(31);
        let x: Vec<f64> = (0..32).map(|k| if k < 16 { rng.random_range(0.0..std::f64::consts::TAU) } else { rng.random_range(0.1..5.0) }).collect();
        let mut scaled = x.clone();
        for v in &mut scaled[16..] {
            *v *= 37.0;
        }
        let (a, b) = (InputMap::IqNormalized.apply(&x), InputMap::IqNormalized.apply(&scaled));
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
        let energy: f64 = a.iter().map(|v| v * v).sum();
        assert!((energy - 16.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let w = ModelWeights::zeros(Architecture::sensing_classifier());
        let p = forward(&w, &[0.7; 32], false, 0.2, None).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let w = ModelWeights::zeros(Architecture::sensing_classifier());
        assert!(forward(&w, &[0.0; 31], false, 0.0, None).is_err());
        let mut x = [0.0; 32];
        x[4] = f64::NAN;
        assert!(forward(&w, &x, false, 0.0, None).is_err());
        assert!(forward(&w, &[0.0; 32], true, 0.5, None).is_err());
    }

    #[test]
    fn toy_forward_matches_hand_computation() {
        // 2 -> 2 -> 2; x = [1, -2]
        // hidden z = x W1 + b1 with W1 = [[0.5, -1], [0.25, 0.5]], b1 = [0.1, 0.2]
        //   z = [0.5 - 0.5 + 0.1, -1 - 1 + 0.2] = [0.1, -1.8] -> relu [0.1, 0]
        // logits = h W2 + b2 with W2 = [[2, -3], [7, 7]], b2 = [0.3, -0.4]
        //   = [0.2 + 0.3, -0.3 - 0.4] = [0.5, -0.7]
        let arch = Architecture::new(vec![2, 2, 2]).unwrap();
        let w = ModelWeights::from_flat(arch, vec![0.5, -1.0, 0.25, 0.5, 0.1, 0.2, 2.0, -3.0, 7.0, 7.0, 0.3, -0.4]).unwrap();
        let p = forward(&w, &[1.0, -2.0], false, 0.0, None).unwrap();
        let e0 = 0.5f64.exp();
        let e1 = (-0.7f64).exp();
        assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn training_forward_uses_dropout() {
        let arch = Architecture::sensing_classifier();
        let w = init_weights(&arch, &mut seeded(4));
        let x = [1.0; 32];
        let eval = forward(&w, &x, false, 0.5, None).unwrap();
        let train = forward(&w, &x, true, 0.5, Some(&mut seeded(5))).unwrap();
        assert_ne!(eval, train);
        assert!((train.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seeded(11);
        let arch = Architecture::sensing_classifier();
        let w = init_weights(&arch, &mut rng);
        // small nonzero biases so every parameter group is exercised
        let mut w = w;
        for l in 0..arch.n_layers() {
            let (_, b) = arch.layer_offsets(l);
            for p in &mut w.params[b..b + arch.sizes()[l + 1]] {
                *p = rng.random_range(-0.1..0.1);
            }
        }
        let (x, y) = random_batch(8, 32, 2, &mut rng);
        let (_, grad) = loss_and_gradient(&w, &x.view(), &y, None);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..w.param_count()).step_by(37) {
            let mut plus = w.clone();
            plus.params[i] += h;
            let mut minus = w.clone();
            minus.params[i] -= h;
            let (lp, _) = loss_and_gradient(&plus, &x.view(), &y, None);
            let (lm, _) = loss_and_gradient(&minus, &x.view(), &y, None);
            let numeric = (lp - lm) / (2.0 * h);
            let denom = numeric.abs().max(grad[i].abs()).max(1e-7);
            worst = worst.max((numeric - grad[i]).abs() / denom);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn rmsprop_single_step() {
        let mut opt = RmsProp::new(1);
        let mut w = [0.0];
        opt.step(&mut w, &[2.0], 0.1, 0.9, 1e-8);
        assert!((opt.mean_square[0] - 0.4).abs() < 1e-15);
        let expect = -0.1 * 2.0 / (0.4f64.sqrt() + 1e-8);
        assert!((w[0] - expect).abs() < 1e-15);
    }

    fn separable_set(n: usize, rng: &mut SimRng) -> DesignMatrix {
        let mut x = Array2::zeros((n, 32));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            for j in 0..32 {
                x[[i, j]] = rng.random_range(-1.0..1.0);
            }
            x[[i, 0]] = if label == 0 { -1.0 } else { 1.0 } * rng.random_range(0.5..1.5);
            y.push(label);
        }
        DesignMatrix { x, y }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = seeded(12);
        let data = separable_set(64, &mut rng);
        let w = init_weights(&Architecture::sensing_classifier(), &mut rng);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = RmsProp::new(w.param_count());
        let trained = train_round(&w, &data, &cfg, &mut opt, &mut rng).unwrap();
        assert_eq!(trained, w);
    }

    #[test]
    fn training_fits_separable_data() {
        let mut rng = seeded(13);
        let data = separable_set(200, &mut rng);
        let mut w = init_weights(&Architecture::sensing_classifier(), &mut rng);
        let cfg = TrainConfig::default();
        let mut opt = RmsProp::new(w.param_count());
        let before = mean_loss(&w, &data);
        for _ in 0..100 {
            w = train_round(&w, &data, &cfg, &mut opt, &mut rng).unwrap();
        }
        assert!(mean_loss(&w, &data) < before);
        assert!(evaluate(&w, &data).unwrap() > 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_set(100, &mut seeded(14));
        let w0 = init_weights(&Architecture::sensing_classifier(), &mut seeded(15));
        let run = || {
            let mut opt = RmsProp::new(w0.param_count());
            train_round(&w0, &data, &TrainConfig::default(), &mut opt, &mut seeded(16)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_data_rejected() {
        let w = ModelWeights::zeros(Architecture::sensing_classifier());
        let empty = DesignMatrix {
            x: Array2::zeros((0, 32)),
            y: vec![],
        };
        assert!(evaluate(&w, &empty).is_err());
        let mut opt = RmsProp::new(w.param_count());
        assert!(train_round(&w, &empty, &TrainConfig::default(), &mut opt, &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_model_scores_half_on_balanced_labels() {
        let w = ModelWeights::zeros(Architecture::sensing_classifier());
        let data = separable_set(100, &mut seeded(17));
        assert_eq!(evaluate(&w, &data).unwrap(), 0.5);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax([0.5, 0.5]), 0);
        assert_eq!(argmax([0.2, 0.8]), 1);
    }

    #[test]
    fn distance_closed_forms() {
        let arch = Architecture::sensing_classifier();
        let w = init_weights(&arch, &mut seeded(18));
        assert_eq!(weight_distance(&w, &w).unwrap(), 0.0);
        let z = ModelWeights::zeros(arch.clone());
        let c = ModelWeights::from_flat(arch, vec![0.3; 14_626]).unwrap();
        assert!((weight_distance(&z, &c).unwrap() - 0.3 * 14_626f64.sqrt()).abs() < 1e-10);
        let small = ModelWeights::zeros(Architecture::new(vec![2, 2]).unwrap());
        assert!(weight_distance(&z, &small).is_err());
    }

    #[test]
    fn snapshot_roundtrip_is_exact() {
        let w = init_weights(&Architecture::sensing_classifier(), &mut seeded(19));
        let text = w.to_snapshot();
        assert!(text.starts_with("# arch 32-128-64-32-2 input squared params 14626\n"));
        assert_eq!(ModelWeights::from_snapshot(&text).unwrap(), w);
        assert!(ModelWeights::from_snapshot("# arch 2-2 input identity params 6\n1\n2\n").is_err());
        assert!(ModelWeights::from_snapshot("# arch 2-1 input identity params 3\n1\n2\n3\n").is_ok());
        assert!(ModelWeights::from_snapshot("# arch 2-1 input iq params 4\n1\n2\n3\n").is_err());
        assert!(ModelWeights::from_snapshot("# arch 2-1 params 3\n1\n2\n3\n").is_err());
    }

    #[test]
    fn predict_matches_single_forward() {
        let w = init_weights(&Architecture::sensing_classifier(), &mut seeded(20));
        let x = array![[0.1; 32], [2.0; 32]];
        let mut mapped = x.clone();
        for mut row in mapped.rows_mut() {
            let m = w.architecture().input_map().apply(row.as_slice().unwrap());
            row.assign(&ndarray::ArrayView1::from(&m[..]));
        }
        let p = predict_proba(&w, &mapped.view());
        for i in 0..2 {
            let single = forward(&w, x.row(i).as_slice().unwrap(), false, 0.0, None).unwrap();
            assert!((p[[i, 0]] - single[0]).abs() < 1e-15);
        }
    }
}
