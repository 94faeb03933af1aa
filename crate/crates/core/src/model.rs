//! Small fully-connected noise-prediction network with sinusoidal time
//! embedding, hand-rolled reverse-mode differentiation, both training losses,
//! and an Adam optimizer.
//!
//! The network maps [x_t ; embed(t)] through dense layers with SiLU
//! activations to an N-dimensional noise estimate ε̂. Wrapped through the mean
//! reparameterization it becomes a [`StepwiseDenoiser`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::diffusion::{mu_from_eps, posterior_mean, StepwiseDenoiser};
use crate::error::{Error, Result};
use crate::gmm::Gmm;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the integer step: pairs
/// (sin(t/10000^{2i/E}), cos(t/10000^{2i/E})) for i = 0..E/2−1.
pub fn time_embed(t: usize, s: &NoiseSchedule, width: usize) -> Result<DVector<f64>> {
    if width == 0 || !width.is_multiple_of(2) {
        return Err(Error::param("embed", "width must be positive and even"));
    }
    if t < 1 || t > s.len() {
        return Err(Error::param("t", format!("outside 1..={}", s.len())));
    }
    let mut v = DVector::zeros(width);
    for i in 0..width / 2 {
        let freq = 10_000f64.powf(2.0 * i as f64 / width as f64);
        let angle = t as f64 / freq;
        v[2 * i] = angle.sin();
        v[2 * i + 1] = angle.cos();
    }
    Ok(v)
}

#[derive(Debug, Clone)]
struct Layer {
    w: DMatrix<f64>, // out × in
    b: DVector<f64>,
}

/// Dense ε-prediction network: input N + E, hidden layers with SiLU, linear
/// output of width N.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    data_dim: usize,
    embed_width: usize,
    layers: Vec<Layer>,
}

/// Activations recorded by the forward pass for reverse-mode differentiation.
pub struct Tape {
    inputs: Vec<DMatrix<f64>>, // input to each layer, column-per-sample
    pre: Vec<DMatrix<f64>>,    // pre-activations of hidden layers
}

/// Parameter gradients, same layout as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Gradients {
    fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                        DVector::zeros(l.b.len()),
                    )
                })
                .collect(),
        }
    }

    /// Flat read access in the network's parameter order.
    pub fn param(&self, idx: usize) -> f64 {
        let (layer, in_weights, offset) = locate(&self.layers, idx);
        if in_weights {
            self.layers[layer].0.as_slice()[offset]
        } else {
            self.layers[layer].1[offset]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

// Maps a flat parameter index to (layer, weights-or-bias, offset). Weight
// matrices use nalgebra's column-major slice order; tests only need a
// consistent bijection, not a particular layout.
fn locate(layers: &[(DMatrix<f64>, DVector<f64>)], mut idx: usize) -> (usize, bool, usize) {
    for (i, (w, b)) in layers.iter().enumerate() {
        if idx < w.len() {
            return (i, true, idx);
        }
        idx -= w.len();
        if idx < b.len() {
            return (i, false, idx);
        }
        idx -= b.len();
    }
    panic!("parameter index out of range");
}

impl MlpNetwork {
    /// All-zero parameters.
    pub fn zeros(data_dim: usize, hidden: &[usize], embed_width: usize) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::param("N", "must be >= 1"));
        }
        if embed_width == 0 || !embed_width.is_multiple_of(2) {
            return Err(Error::param("embed", "width must be positive and even"));
        }
        if hidden.contains(&0) {
            return Err(Error::param("hidden", "layer widths must be >= 1"));
        }
        let mut dims = vec![data_dim + embed_width];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let layers = dims
            .windows(2)
            .map(|d| Layer {
                w: DMatrix::zeros(d[1], d[0]),
                b: DVector::zeros(d[1]),
            })
            .collect();
        Ok(Self {
            data_dim,
            embed_width,
            layers,
        })
    }

    /// He-style initialization: w ~ N(0, 2/fan_in), biases zero.
    pub fn random(
        data_dim: usize,
        hidden: &[usize],
        embed_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(data_dim, hidden, embed_width)?;
        for layer in &mut net.layers {
            let std = (2.0 / layer.w.ncols() as f64).sqrt();
            layer
                .w
                .iter_mut()
                .for_each(|w| *w = std * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(net)
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn embed_width(&self) -> usize {
        self.embed_width
    }

    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn param(&self, idx: usize) -> f64 {
        let pairs: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .layers
            .iter()
            .map(|l| (l.w.clone(), l.b.clone()))
            .collect();
        let (layer, in_weights, offset) = locate(&pairs, idx);
        if in_weights {
            self.layers[layer].w.as_slice()[offset]
        } else {
            self.layers[layer].b[offset]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let pairs: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .layers
            .iter()
            .map(|l| (l.w.clone(), l.b.clone()))
            .collect();
        let (layer, in_weights, offset) = locate(&pairs, idx);
        if in_weights {
            self.layers[layer].w.as_mut_slice()[offset] = value;
        } else {
            self.layers[layer].b[offset] = value;
        }
    }

    /// Noise prediction for a single input.
    pub fn forward(&self, x_t: &DVector<f64>, t: usize, s: &NoiseSchedule) -> Result<DVector<f64>> {
        let (out, _) = self.forward_with_tape(x_t, t, s)?;
        Ok(out)
    }

    /// Forward pass that records activations for the backward pass.
    pub fn forward_with_tape(
        &self,
        x_t: &DVector<f64>,
        t: usize,
        s: &NoiseSchedule,
    ) -> Result<(DVector<f64>, Tape)> {
        if x_t.len() != self.data_dim {
            return Err(Error::param(
                "x_t",
                format!("dimension {} != {}", x_t.len(), self.data_dim),
            ));
        }
        let emb = time_embed(t, s, self.embed_width)?;
        let mut input = DMatrix::zeros(self.data_dim + self.embed_width, 1);
        input.view_mut((0, 0), (self.data_dim, 1)).copy_from(x_t);
        input
            .view_mut((self.data_dim, 0), (self.embed_width, 1))
            .copy_from(&emb);
        let (out, tape) = self.forward_batch(&input);
        Ok((out.column(0).into_owned(), tape))
    }

    /// Batched forward pass over column-per-sample inputs of size
    /// (N + E) × B. Hidden layers apply SiLU, the last layer is linear.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> (DMatrix<f64>, Tape) {
        assert_eq!(inputs.nrows(), self.data_dim + self.embed_width);
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len().saturating_sub(1)),
        };
        let mut z = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            tape.inputs.push(z.clone());
            let mut a = &layer.w * &z;
            for mut col in a.column_iter_mut() {
                col += &layer.b;
            }
            if i + 1 < self.layers.len() {
                tape.pre.push(a.clone());
                a.apply(|v| *v = silu(*v));
            }
            z = a;
        }
        (z, tape)
    }

    /// Reverse-mode pass: `d_out` is ∂L/∂output (same shape as the batched
    /// output); returns parameter gradients.
    pub fn backward_batch(&self, tape: &Tape, d_out: &DMatrix<f64>) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            grads.layers[i].0 = &delta * tape.inputs[i].transpose();
            let mut db = DVector::zeros(delta.nrows());
            for col in delta.column_iter() {
                db += col;
            }
            grads.layers[i].1 = db;
            if i > 0 {
                let mut back = self.layers[i].w.transpose() * &delta;
                back.zip_apply(&tape.pre[i - 1], |d, p| *d *= silu_prime(p));
                delta = back;
            }
        }
        grads
    }

    fn adam_update(&mut self, grads: &Gradients, opt: &mut AdamState, lr: f64, cfg: &TrainConfig) {
        opt.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(opt.step);
        let bc2 = 1.0 - cfg.beta2.powi(opt.step);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut opt.m[i];
            let (vw, vb) = &mut opt.v[i];
            for ((w, g), (m, v)) in layer
                .w
                .iter_mut()
                .zip(gw.iter())
                .zip(mw.iter_mut().zip(vw.iter_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            }
            for ((b, g), (m, v)) in layer
                .b
                .iter_mut()
                .zip(gb.iter())
                .zip(mb.iter_mut().zip(vb.iter_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

struct AdamState {
    step: i32,
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl AdamState {
    fn new(net: &MlpNetwork) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                        DVector::zeros(l.b.len()),
                    )
                })
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Which training objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean of ‖ε − ε̂‖² (prefactor-free noise matching).
    Eps,
    /// Mean of ‖μ̃ − μ_θ‖²/(2σ_t²) (first-moment matching); excludes t = 1
    /// where σ_1 = 0 makes the weight singular.
    Mu,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(LossKind::Eps),
            "mu" => Ok(LossKind::Mu),
            other => Err(Error::param(
                "train.loss",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dataset_size: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 25,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dataset_size: 100_000,
            seed: 0,
            loss: LossKind::Eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("train.batch", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("train.epochs", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::param("train.lr", "must be >= 0"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::param("train.beta", "decay rates must be in (0,1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("train.eps", "must be > 0"));
        }
        if self.dataset_size == 0 {
            return Err(Error::param("train.dataset", "must be >= 1"));
        }
        Ok(())
    }
}

/// One training example: clean sample, step index, and the forward noise.
pub type BatchItem = (DVector<f64>, usize, DVector<f64>);

fn batch_inputs(
    net: &MlpNetwork,
    batch: &[BatchItem],
    s: &NoiseSchedule,
) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
    if batch.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    let n = net.data_dim;
    let mut inputs = DMatrix::zeros(n + net.embed_width, batch.len());
    let mut xts = Vec::with_capacity(batch.len());
    for (j, (x0, t, eps)) in batch.iter().enumerate() {
        let ab = s.alpha_bar(*t);
        let x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
        inputs.view_mut((0, j), (n, 1)).copy_from(&x_t);
        inputs
            .view_mut((n, j), (net.embed_width, 1))
            .copy_from(&time_embed(*t, s, net.embed_width)?);
        xts.push(x_t);
    }
    Ok((inputs, xts))
}

/// Noise-matching loss: mean over the batch of ‖ε − ε̂(x_t, t)‖², with
/// gradients for every parameter via the reverse-mode tape.
pub fn loss_eps(
    net: &MlpNetwork,
    batch: &[BatchItem],
    s: &NoiseSchedule,
) -> Result<(f64, Gradients)> {
    let (inputs, _) = batch_inputs(net, batch, s)?;
    let (out, tape) = net.forward_batch(&inputs);
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(out.nrows(), out.ncols());
    for (j, (_, _, eps)) in batch.iter().enumerate() {
        let r = out.column(j) - eps;
        loss += r.norm_squared();
        d_out.set_column(j, &(2.0 / b * r));
    }
    Ok((loss / b, net.backward_batch(&tape, &d_out)))
}

/// First-moment matching loss: mean over the batch of
/// ‖μ̃(x_t, x_0) − μ_θ(x_t, t)‖² / (2σ_t²), with μ_θ obtained from the noise
/// estimate through the mean reparameterization. Requires t ≥ 2.
pub fn loss_mu(
    net: &MlpNetwork,
    batch: &[BatchItem],
    s: &NoiseSchedule,
) -> Result<(f64, Gradients)> {
    for (_, t, _) in batch {
        if *t < 2 {
            return Err(Error::param(
                "t",
                "first-moment loss needs t >= 2 (the weight is singular at t = 1)",
            ));
        }
    }
    let (inputs, xts) = batch_inputs(net, batch, s)?;
    let (out, tape) = net.forward_batch(&inputs);
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(out.nrows(), out.ncols());
    for (j, (x0, t, _)) in batch.iter().enumerate() {
        let eps_hat = out.column(j).into_owned();
        let mu_theta = mu_from_eps(&eps_hat, &xts[j], s, *t);
        let mu_tilde = posterior_mean(&xts[j], x0, s, *t);
        let weight = 1.0 / (2.0 * s.sigma_sq(*t));
        let diff = &mu_theta - &mu_tilde;
        loss += weight * diff.norm_squared();
        // dμ/dε̂ = −c_t/√α_t with c_t = (1−α_t)/√(1−ᾱ_t).
        let c = (1.0 - s.alpha(*t)) / (1.0 - s.alpha_bar(*t)).sqrt();
        let chain = -c / s.alpha(*t).sqrt();
        d_out.set_column(j, &(weight * 2.0 / b * chain * diff));
    }
    Ok((loss / b, net.backward_batch(&tape, &d_out)))
}

/// Trained network plus the per-epoch mean training loss.
pub struct TrainResult {
    pub net: MlpNetwork,
    pub epoch_losses: Vec<f64>,
}

/// Train with Adam on freshly drawn forward-noised batches.
///
/// Every step draws `batch_size` new (x_0, t, ε) triples: x_0 from the prior,
/// t uniform over the valid steps for the loss kind, ε standard normal.
/// `dataset_size` fixes the number of draws per epoch. Deterministic given
/// the generator state. Aborts with a numeric error if the loss stops being
/// finite.
pub fn train(
    net: MlpNetwork,
    g: &Gmm,
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainResult> {
    cfg.validate()?;
    if g.dim() != net.data_dim {
        return Err(Error::param(
            "prior.N",
            "prior and network dimension differ",
        ));
    }
    let t_min = match cfg.loss {
        LossKind::Eps => 1,
        LossKind::Mu => 2,
    };
    if s.len() < t_min {
        return Err(Error::param("schedule.T", "too few steps for this loss"));
    }
    let steps_per_epoch = cfg.dataset_size.div_ceil(cfg.batch_size);
    let mut net = net;
    let mut opt = AdamState::new(&net);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            let batch: Vec<BatchItem> = (0..cfg.batch_size)
                .map(|_| {
                    let x0 = g.sample_one(rng);
                    let t = rng.gen_range(t_min..=s.len());
                    let eps =
                        DVector::from_fn(g.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    (x0, t, eps)
                })
                .collect();
            let (loss, grads) = match cfg.loss {
                LossKind::Eps => loss_eps(&net, &batch, s)?,
                LossKind::Mu => loss_mu(&net, &batch, s)?,
            };
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss {loss} at epoch {epoch} step {step}"
                )));
            }
            net.adam_update(&grads, &mut opt, cfg.learning_rate, cfg);
            epoch_loss += loss;
        }
        epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(TrainResult { net, epoch_losses })
}

/// Denoiser view of a network: step(x_t, t) is the reparameterized mean of
/// the predicted noise. Embeddings are cached per step.
pub struct MlpDenoiser {
    net: MlpNetwork,
    schedule: NoiseSchedule,
    embeds: Vec<DVector<f64>>,
}

/// Wrap a network and schedule into a [`StepwiseDenoiser`].
pub fn as_denoiser(net: MlpNetwork, s: &NoiseSchedule) -> Result<MlpDenoiser> {
    let embeds = (1..=s.len())
        .map(|t| time_embed(t, s, net.embed_width))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpDenoiser {
        net,
        schedule: s.clone(),
        embeds,
    })
}

impl MlpDenoiser {
    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }
}

impl StepwiseDenoiser for MlpDenoiser {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn step(&self, x_t: &DVector<f64>, t: usize) -> DVector<f64> {
        let n = self.net.data_dim;
        let mut input = DMatrix::zeros(n + self.net.embed_width, 1);
        input.view_mut((0, 0), (n, 1)).copy_from(x_t);
        input
            .view_mut((n, 0), (self.net.embed_width, 1))
            .copy_from(&self.embeds[t - 1]);
        let (out, _) = self.net.forward_batch(&input);
        mu_from_eps(&out.column(0).into_owned(), x_t, &self.schedule, t)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

/// Serialize to the `DMDEN-MLP v1` text format: the layer width list, then
/// per layer the weight rows and the bias line. Shortest round-trip decimals
/// make reload bit-exact. The embedding width is the input minus the output
/// width.
pub fn to_text(net: &MlpNetwork) -> String {
    let mut out = String::new();
    out.push_str("DMDEN-MLP v1\n");
    let dims = net.dims();
    let _ = writeln!(
        out,
        "{}",
        dims.iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    for layer in &net.layers {
        for i in 0..layer.w.nrows() {
            let row: Vec<String> = layer.w.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        let b: Vec<String> = layer.b.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", b.join(" "));
    }
    out
}

pub fn from_text(text: &str, origin: &str) -> Result<MlpNetwork> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "DMDEN-MLP v1" {
        return Err(Error::parse(origin, format!("bad header `{header}`")));
    }
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(origin, format!("bad width `{t}`")))
        })
        .collect::<Result<_>>()?;
    if dims.len() < 2 {
        return Err(Error::parse(
            origin,
            "need at least input and output widths",
        ));
    }
    let out_dim = *dims.last().unwrap();
    if dims[0] <= out_dim {
        return Err(Error::parse(origin, "input width must exceed output width"));
    }
    let embed_width = dims[0] - out_dim;
    let hidden = &dims[1..dims.len() - 1];
    let mut net = MlpNetwork::zeros(out_dim, hidden, embed_width)
        .map_err(|e| Error::parse(origin, e.to_string()))?;
    let mut next_row = |len: usize, what: &str| -> Result<Vec<f64>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(origin, format!("missing {what}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(origin, format!("{what}: bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != len {
            return Err(Error::parse(
                origin,
                format!("{what}: expected {len} values, got {}", vals.len()),
            ));
        }
        Ok(vals)
    };
    for (li, layer) in net.layers.iter_mut().enumerate() {
        for i in 0..layer.w.nrows() {
            let row = next_row(layer.w.ncols(), &format!("layer {li} row {i}"))?;
            for (j, v) in row.into_iter().enumerate() {
                layer.w[(i, j)] = v;
            }
        }
        let b = next_row(layer.b.len(), &format!("layer {li} bias"))?;
        layer.b = DVector::from_vec(b);
    }
    Ok(net)
}

pub fn save(net: &MlpNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<MlpNetwork> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_text(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    fn sample_batch(
        g: &Gmm,
        s: &NoiseSchedule,
        size: usize,
        t_min: usize,
        rng: &mut Rng,
    ) -> Vec<BatchItem> {
        (0..size)
            .map(|_| {
                let x0 = g.sample_one(rng);
                let t = rng.gen_range(t_min..=s.len());
                let eps = DVector::from_fn(g.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                (x0, t, eps)
            })
            .collect()
    }

    #[test]
    fn time_embed_values() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let e = time_embed(1, &s, 4).unwrap();
        assert_relative_eq!(e[0], 1f64.sin(), epsilon = 0.0);
        assert_relative_eq!(e[1], 1f64.cos(), epsilon = 0.0);
        assert_relative_eq!(e[2], 0.01f64.sin(), epsilon = 0.0);
        assert_relative_eq!(e[3], 0.01f64.cos(), epsilon = 0.0);
        for t in 1..=10 {
            let e = time_embed(t, &s, 32).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(time_embed(0, &s, 4).is_err());
        assert!(time_embed(11, &s, 4).is_err());
        assert!(time_embed(1, &s, 3).is_err());
    }

    #[test]
    fn forward_zero_net_and_identity_block() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let net = MlpNetwork::zeros(3, &[8], 4).unwrap();
        let x = DVector::from_vec(vec![0.5, -0.5, 2.0]);
        assert_eq!(net.forward(&x, 3, &s).unwrap(), DVector::zeros(3));

        // Single linear layer passing x_t through an identity block.
        let mut lin = MlpNetwork::zeros(3, &[], 4).unwrap();
        for i in 0..3 {
            lin.layers[0].w[(i, i)] = 1.0;
        }
        assert_eq!(lin.forward(&x, 3, &s).unwrap(), x);

        // Deterministic repeats on a random net.
        let mut rng = stream_rng(1, 0);
        let net = MlpNetwork::random(3, &[16, 16], 8, &mut rng).unwrap();
        let a = net.forward(&x, 5, &s).unwrap();
        let b = net.forward(&x, 5, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(net.forward(&DVector::zeros(2), 5, &s).is_err());
    }

    #[test]
    fn loss_eps_zero_when_prediction_is_exact() {
        // A network with zero weights predicts 0; feed eps = 0 so the
        // prediction is exact and both loss and gradients vanish.
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let net = MlpNetwork::zeros(2, &[4], 4).unwrap();
        let batch = vec![
            (DVector::from_vec(vec![1.0, 2.0]), 3, DVector::zeros(2)),
            (DVector::from_vec(vec![-1.0, 0.5]), 7, DVector::zeros(2)),
        ];
        let (loss, grads) = loss_eps(&net, &batch, &s).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn loss_eps_is_mean_normalized() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let mut rng = stream_rng(2, 0);
        let net = MlpNetwork::random(2, &[8], 4, &mut rng).unwrap();
        let g = Gmm::standard_normal(2);
        let batch = sample_batch(&g, &s, 5, 1, &mut rng);
        let mut doubled = batch.clone();
        doubled.extend(batch.iter().cloned());
        let (a, _) = loss_eps(&net, &batch, &s).unwrap();
        let (b, _) = loss_eps(&net, &doubled, &s).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn loss_mu_zero_probe_and_t1_rejection() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        // Constructed probe with mu_theta = mu_tilde exactly: fix t and take
        // x0 = 0 so x_t = sqrt(1-alpha_bar_t) * eps; a single linear layer
        // scaling the x block by 1/sqrt(1-alpha_bar_t) then outputs the true
        // forward noise, which makes the reparameterized mean exact.
        let t = 6usize;
        let mut probe = MlpNetwork::zeros(2, &[], 4).unwrap();
        let scale = 1.0 / (1.0 - s.alpha_bar(t)).sqrt();
        for i in 0..2 {
            probe.layers[0].w[(i, i)] = scale;
        }
        let mut rng = stream_rng(9, 0);
        let batch: Vec<BatchItem> = (0..4)
            .map(|_| {
                let eps = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
                (DVector::zeros(2), t, eps)
            })
            .collect();
        let (loss, grads) = loss_mu(&probe, &batch, &s).unwrap();
        assert!(loss <= 1e-25, "loss {loss}");
        assert!(grads.max_abs() <= 1e-12);

        // sigma_1 = 0 makes the t = 1 weight singular.
        let net = MlpNetwork::zeros(2, &[4], 4).unwrap();
        let bad = vec![(DVector::from_vec(vec![1.0, 2.0]), 1, DVector::zeros(2))];
        assert!(loss_mu(&net, &bad, &s).is_err());
    }

    #[test]
    fn loss_mu_equals_weighted_eps_loss() {
        // Per element, the first-moment loss is the noise loss scaled by
        // (1-alpha_t)^2 / (2 sigma_t^2 alpha_t (1-alpha_bar_t)).
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let mut rng = stream_rng(3, 0);
        let net = MlpNetwork::random(2, &[8], 4, &mut rng).unwrap();
        let g = Gmm::standard_normal(2);
        let batch = sample_batch(&g, &s, 16, 2, &mut rng);
        let (mu_loss, _) = loss_mu(&net, &batch, &s).unwrap();
        let mut expected = 0.0;
        for (x0, t, eps) in &batch {
            let ab = s.alpha_bar(*t);
            let x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
            let eps_hat = net.forward(&x_t, *t, &s).unwrap();
            let w = (1.0 - s.alpha(*t)).powi(2)
                / (2.0 * s.sigma_sq(*t) * s.alpha(*t) * (1.0 - s.alpha_bar(*t)));
            expected += w * (eps - eps_hat).norm_squared();
        }
        expected /= batch.len() as f64;
        assert_relative_eq!(mu_loss, expected, max_relative = 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let mut rng = stream_rng(4, 0);
        let net = MlpNetwork::random(3, &[12, 10], 6, &mut rng).unwrap();
        let g = Gmm::standard_normal(3);
        let batch = sample_batch(&g, &s, 8, 2, &mut rng);
        let h = 1e-5;
        for name in ["eps", "mu"] {
            let f = |net: &MlpNetwork| match name {
                "eps" => loss_eps(net, &batch, &s).unwrap(),
                _ => loss_mu(net, &batch, &s).unwrap(),
            };
            let (_, grads) = f(&net);
            let count = net.param_count();
            for probe in 0..64 {
                let idx = (probe * 2654435761usize) % count;
                let orig = net.param(idx);
                let mut plus = net.clone();
                plus.set_param(idx, orig + h);
                let mut minus = net.clone();
                minus.set_param(idx, orig - h);
                let (lp, _) = f(&plus);
                let (lm, _) = f(&minus);
                let fd = (lp - lm) / (2.0 * h);
                let analytic = grads.param(idx);
                let denom = fd.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-5,
                    "{name} loss, param {idx}: analytic {analytic} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let g = Gmm::standard_normal(2);
        let mut rng = stream_rng(5, 0);
        let net = MlpNetwork::random(2, &[8], 4, &mut rng).unwrap();
        let before = to_text(&net);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            dataset_size: 64,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let result = train(net, &g, &s, &cfg, &mut rng).unwrap();
        assert_eq!(to_text(&result.net), before);
    }

    #[test]
    fn training_reaches_oracle_loss_on_gaussian_prior() {
        // Standard-normal prior: the best possible noise predictor is
        // sqrt(1 - alpha_bar_t) * x_t, whose held-out loss is the floor the
        // trained network must approach within 10%.
        let s = crate::schedule::linear_matched(100, 1.0).unwrap();
        let g = Gmm::standard_normal(4);
        let mut rng = stream_rng(6, 0);
        let net = MlpNetwork::random(4, &[48, 48], 16, &mut rng).unwrap();
        let initial = net.clone();
        let cfg = TrainConfig {
            epochs: 2,
            dataset_size: 128_000,
            batch_size: 128,
            ..TrainConfig::default()
        };
        let result = train(net, &g, &s, &cfg, &mut rng).unwrap();

        let mut rng = stream_rng(6, 1);
        let held_out = sample_batch(&g, &s, 4096, 1, &mut rng);
        let (trained_loss, _) = loss_eps(&result.net, &held_out, &s).unwrap();
        // Learning is non-trivial: the fixed validation batch improves over
        // the untrained parameters.
        let (initial_loss, _) = loss_eps(&initial, &held_out, &s).unwrap();
        assert!(trained_loss < initial_loss);
        let mut oracle_loss = 0.0;
        for (x0, t, eps) in &held_out {
            let ab = s.alpha_bar(*t);
            let x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
            let eps_star = (1.0 - ab).sqrt() * x_t;
            oracle_loss += (eps - eps_star).norm_squared();
        }
        oracle_loss /= held_out.len() as f64;
        assert!(
            trained_loss <= 1.10 * oracle_loss,
            "trained {trained_loss} vs oracle floor {oracle_loss}"
        );
        // Training made progress over the first epoch.
        assert!(result.epoch_losses.last().unwrap() < &result.epoch_losses[0]);

        // As a denoiser the trained network tracks the closed-form step of
        // the Gaussian prior, sqrt(alpha_t) * x_t, within 5% relative.
        let d = as_denoiser(result.net, &s).unwrap();
        let mut rng = stream_rng(6, 2);
        for t in [2usize, 25, 50, 75, 100] {
            let mut err = 0.0;
            let mut norm = 0.0;
            for _ in 0..64 {
                let x0 = g.sample_one(&mut rng);
                let x_t = crate::diffusion::forward_sample(&x0, &s, t, &mut rng);
                let expect = s.alpha(t).sqrt() * &x_t;
                err += (d.step(&x_t, t) - &expect).norm_squared();
                norm += expect.norm_squared();
            }
            let rel = (err / norm).sqrt();
            assert!(rel <= 0.05, "t={t}: relative step error {rel}");
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let g = Gmm::random(2, 2, 11).unwrap().normalize().unwrap();
        let run = || {
            let mut rng = stream_rng(7, 0);
            let net = MlpNetwork::random(2, &[8], 4, &mut rng).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                dataset_size: 256,
                batch_size: 32,
                ..TrainConfig::default()
            };
            to_text(&train(net, &g, &s, &cfg, &mut rng).unwrap().net)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = stream_rng(8, 0);
        let net = MlpNetwork::random(3, &[5, 4], 6, &mut rng).unwrap();
        let text = to_text(&net);
        let back = from_text(&text, "mem").unwrap();
        assert_eq!(to_text(&back), text);
        assert_eq!(back.dims(), net.dims());
        assert_eq!(back.embed_width(), 6);
        // Forward outputs identical bit for bit.
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        assert_eq!(
            net.forward(&x, 4, &s).unwrap(),
            back.forward(&x, 4, &s).unwrap()
        );
    }

    #[test]
    fn denoiser_view_applies_reparameterization() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.7, 1.0).unwrap();
        let net = MlpNetwork::zeros(2, &[4], 4).unwrap();
        let d = as_denoiser(net, &s).unwrap();
        let x = DVector::from_vec(vec![0.4, -0.8]);
        for t in [1usize, 5, 10] {
            // Zero network outputs zero noise: step is x_t / sqrt(alpha_t).
            assert_relative_eq!(d.step(&x, t), &x / s.alpha(t).sqrt(), epsilon = 0.0);
        }
        assert_eq!(d.step(&x, 3), d.step(&x, 3));
    }

    #[test]
    fn parameter_count_matches_layout() {
        let net = MlpNetwork::zeros(8, &[128, 128], 32).unwrap();
        let expect = (40 * 128 + 128) + (128 * 128 + 128) + (128 * 8 + 8);
        assert_eq!(net.param_count(), expect);
    }
}
