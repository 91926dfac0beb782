//! Toy training demo: BFT fusion against a MAC-matched dense pointwise fusion.
//!
//! Both models are
//!
//! ```text
//! depthwise 3x3 -> relu -> depthwise 3x3 -> fusion (+bias) -> relu -> global mean -> linear -> softmax
//! ```
//!
//! and differ only in the fusion layer. The BFT model fuses `n -> n` channels
//! with a butterfly of base `k`; the dense model fuses `n -> n_d` with
//! `n_d = round(count_flops / n)` so both fusion layers cost the same MACs.
//!
//! Data are seeded class-conditional patterns: class `c` has a random channel
//! profile modulated by a class-specific spatial cosine, plus Gaussian noise.
//! The learning-rate schedule (constant, then x0.1 for the last quarter of
//! epochs) is a toy-scale choice.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::butterfly::{count_flops, ButterflySpec, ButterflyWeights, ResidualPolicy};
use crate::grad::{backward, forward_tape};
use crate::init::{init_weights, sample_open, xavier_bound, InitConfig};
use crate::tensor::DenseMatrix;
use crate::{BftError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTask {
    pub n_channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    /// Standard deviation of the additive noise; the signal has unit scale.
    pub noise: f64,
    pub seed: u64,
}

impl DemoTask {
    /// Low-noise task that a linear classifier on the raw input separates.
    pub fn separable(seed: u64) -> Self {
        Self {
            n_channels: 16,
            height: 6,
            width: 6,
            n_classes: 4,
            n_samples: 256,
            noise: 0.3,
            seed,
        }
    }

    /// Noisier variant used for the ablations, where models do not saturate.
    pub fn hard(seed: u64) -> Self {
        Self {
            noise: 4.0,
            n_samples: 384,
            ..Self::separable(seed)
        }
    }

    fn sites(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of epochs after which the learning rate drops by 10x.
    pub decay_after: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub residual: ResidualPolicy,
    pub base: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.02,
            decay_after: 0.75,
            momentum: 0.9,
            batch_size: 16,
            weight_decay: 0.0,
            residual: ResidualPolicy::FirstToLast,
            base: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, epoch: usize) -> f64 {
        if (epoch as f64) < self.decay_after * self.epochs as f64 {
            self.learning_rate
        } else {
            self.learning_rate * 0.1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Bft,
    Pointwise,
}

impl FusionKind {
    fn name(self) -> &'static str {
        match self {
            FusionKind::Bft => "bft",
            FusionKind::Pointwise => "pointwise",
        }
    }
}

/// Samples in channel-major layout with their labels, split into train and
/// validation (every fourth sample).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<(Vec<f64>, usize)>,
    pub val: Vec<(Vec<f64>, usize)>,
}

pub fn generate(task: &DemoTask) -> Result<Dataset> {
    if task.n_channels == 0 || task.sites() == 0 || task.n_classes < 2 || task.n_samples < task.n_classes {
        return Err(BftError::Arch(format!("degenerate demo task {task:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let n = task.n_channels;
    let prototypes: Vec<Vec<f64>> = (0..task.n_classes)
        .map(|_| {
            let profile: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let fy = rng.gen_range(0.5..2.0);
            let fx = rng.gen_range(0.5..2.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut p = Vec::with_capacity(n * task.sites());
            for &a in &profile {
                for y in 0..task.height {
                    for x in 0..task.width {
                        let arg = std::f64::consts::TAU
                            * (fy * y as f64 / task.height as f64 + fx * x as f64 / task.width as f64)
                            + phase;
                        p.push(a * (1.0 + 0.5 * arg.cos()));
                    }
                }
            }
            p
        })
        .collect();
    let mut samples: Vec<(Vec<f64>, usize)> = (0..task.n_samples)
        .map(|i| {
            let label = i % task.n_classes;
            let x = prototypes[label]
                .iter()
                .map(|&v| v + task.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (x, label)
        })
        .collect();
    samples.shuffle(&mut rng);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.into_iter().enumerate() {
        if i % 4 == 3 {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(Dataset { train, val })
}

#[derive(Debug, Clone)]
struct Depthwise {
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl Depthwise {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = xavier_bound(9, 9);
        Self {
            kernel: (0..n * 9).map(|_| sample_open(rng, bound)).collect(),
            bias: vec![0.0; n],
        }
    }

    /// Same-padded 3x3 per-channel convolution on an `n x (h w)` buffer.
    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let sites = h * w;
        let mut out = vec![0.0; x.len()];
        for (c, bias) in self.bias.iter().enumerate() {
            let k = &self.kernel[c * 9..c * 9 + 9];
            let xc = &x[c * sites..(c + 1) * sites];
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = *bias;
                    for (t, kv) in k.iter().enumerate() {
                        let (sy, sx) = (y as isize + t as isize / 3 - 1, xx as isize + t as isize % 3 - 1);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += kv * xc[sy as usize * w + sx as usize];
                        }
                    }
                    out[c * sites + y * w + xx] = acc;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], h: usize, w: usize, grad: &mut Depthwise) -> Vec<f64> {
        let sites = h * w;
        let mut dx = vec![0.0; x.len()];
        for c in 0..self.bias.len() {
            let k = &self.kernel[c * 9..c * 9 + 9];
            for y in 0..h {
                for xx in 0..w {
                    let g = dy[c * sites + y * w + xx];
                    grad.bias[c] += g;
                    for (t, kv) in k.iter().enumerate() {
                        let (sy, sx) = (y as isize + t as isize / 3 - 1, xx as isize + t as isize % 3 - 1);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            let src = c * sites + sy as usize * w + sx as usize;
                            grad.kernel[c * 9 + t] += g * x[src];
                            dx[src] += kv * g;
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
enum Fusion {
    Bft {
        weights: ButterflyWeights,
        residual: ResidualPolicy,
    },
    Dense(DenseMatrix),
}

impl Fusion {
    fn out_channels(&self) -> usize {
        match self {
            Fusion::Bft { weights, .. } => weights.spec().n(),
            Fusion::Dense(w) => w.rows(),
        }
    }

    fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Fusion::Bft { weights, .. } => weights.values_mut(),
            Fusion::Dense(w) => w.data_mut(),
        }
    }
}

#[derive(Debug, Clone)]
struct Model {
    dw1: Depthwise,
    dw2: Depthwise,
    fusion: Fusion,
    fusion_bias: Vec<f64>,
    classifier: DenseMatrix,
    classifier_bias: Vec<f64>,
}

impl Model {
    fn new(task: &DemoTask, cfg: &TrainConfig, kind: FusionKind) -> Result<Self> {
        let n = task.n_channels;
        let spec = ButterflySpec::with_base(n, cfg.base)?;
        let mut conv_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dw1 = Depthwise::new(n, &mut conv_rng);
        let dw2 = Depthwise::new(n, &mut conv_rng);
        let fusion = match kind {
            FusionKind::Bft => Fusion::Bft {
                weights: init_weights(&spec, &InitConfig::for_spec(&spec, cfg.seed.wrapping_add(1)))?,
                residual: cfg.residual,
            },
            FusionKind::Pointwise => {
                let out = dense_width(&spec);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
                let bound = xavier_bound(n, out);
                Fusion::Dense(DenseMatrix::from_fn(out, n, |_, _| sample_open(&mut rng, bound)))
            }
        };
        let out = fusion.out_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        let bound = xavier_bound(out, task.n_classes);
        Ok(Self {
            dw1,
            dw2,
            fusion,
            fusion_bias: vec![0.0; out],
            classifier: DenseMatrix::from_fn(task.n_classes, out, |_, _| sample_open(&mut rng, bound)),
            classifier_bias: vec![0.0; task.n_classes],
        })
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (s, _) in z.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Parameter slices paired with whether weight decay applies.
    fn slices_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        vec![
            (&mut self.dw1.kernel[..], true),
            (&mut self.dw1.bias[..], false),
            (&mut self.dw2.kernel[..], true),
            (&mut self.dw2.bias[..], false),
            (self.fusion.values_mut(), true),
            (&mut self.fusion_bias[..], false),
            (self.classifier.data_mut(), true),
            (&mut self.classifier_bias[..], false),
        ]
    }

    fn logits(&self, x: &[f64], task: &DemoTask) -> Result<Vec<f64>> {
        Ok(self.forward(x, task)?.logits)
    }

    fn forward(&self, x: &[f64], task: &DemoTask) -> Result<Activations> {
        let (h, w, sites) = (task.height, task.width, task.sites());
        let z1 = self.dw1.forward(x, h, w);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = DenseMatrix::new(task.n_channels, sites, self.dw2.forward(&a1, h, w))?;
        let (mut f, tape) = match &self.fusion {
            Fusion::Bft { weights, residual } => {
                let (y, tape) = forward_tape(weights, &z2, *residual)?;
                (y, Some(tape))
            }
            Fusion::Dense(wd) => (wd.matmul(&z2)?, None),
        };
        for (c, row) in f.data_mut().chunks_mut(sites).enumerate() {
            for v in row {
                *v = (*v + self.fusion_bias[c]).max(0.0);
            }
        }
        let pooled: Vec<f64> = f
            .data()
            .chunks(sites)
            .map(|row| row.iter().sum::<f64>() / sites as f64)
            .collect();
        let mut logits = self.classifier.matvec(&pooled)?;
        for (l, b) in logits.iter_mut().zip(&self.classifier_bias) {
            *l += b;
        }
        Ok(Activations {
            z1,
            a1,
            z2,
            tape,
            a3: f,
            pooled,
            logits,
        })
    }

    /// Adds the cross-entropy gradient of one sample into `grad`; returns the loss.
    fn accumulate(&self, x: &[f64], label: usize, task: &DemoTask, grad: &mut Model) -> Result<f64> {
        let (h, w, sites) = (task.height, task.width, task.sites());
        let act = self.forward(x, task)?;
        let max = act.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = act.logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let loss = z.ln() - (act.logits[label] - max);
        let dlogits: Vec<f64> = exp
            .iter()
            .enumerate()
            .map(|(i, e)| e / z - if i == label { 1.0 } else { 0.0 })
            .collect();

        let out = self.fusion.out_channels();
        let mut dpooled = vec![0.0; out];
        for (i, &g) in dlogits.iter().enumerate() {
            grad.classifier_bias[i] += g;
            for (c, d) in dpooled.iter_mut().enumerate() {
                let idx = i * out + c;
                grad.classifier.data_mut()[idx] += g * act.pooled[c];
                *d += self.classifier.data()[idx] * g;
            }
        }
        let mut dfused = DenseMatrix::zeros(out, sites);
        for (c, d) in dpooled.iter().enumerate() {
            for s in 0..sites {
                if act.a3.get(c, s) > 0.0 {
                    let g = d / sites as f64;
                    dfused.set(c, s, g);
                    grad.fusion_bias[c] += g;
                }
            }
        }
        let dz2 = match (&self.fusion, &mut grad.fusion) {
            (Fusion::Bft { weights, .. }, Fusion::Bft { weights: gw, .. }) => {
                let tape = act.tape.as_ref().expect("bft forward records a tape");
                let (dx, dw) = backward(weights, tape, &dfused)?;
                for (a, b) in gw.values_mut().iter_mut().zip(dw) {
                    *a += b;
                }
                dx
            }
            (Fusion::Dense(wd), Fusion::Dense(gd)) => {
                let dw = dfused.matmul(&act.z2.transpose())?;
                for (a, b) in gd.data_mut().iter_mut().zip(dw.data()) {
                    *a += b;
                }
                wd.transpose().matmul(&dfused)?
            }
            _ => unreachable!("gradient buffer mirrors the model"),
        };
        let da1 = self.dw2.backward(&act.a1, dz2.data(), h, w, &mut grad.dw2);
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&act.z1)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        self.dw1.backward(x, &dz1, h, w, &mut grad.dw1);
        Ok(loss)
    }
}

struct Activations {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: DenseMatrix,
    tape: Option<crate::grad::GradTape>,
    a3: DenseMatrix,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

/// Output width of the dense fusion whose MACs match the butterfly's.
pub fn dense_width(spec: &ButterflySpec) -> usize {
    ((count_flops(spec) as f64 / spec.n() as f64).round() as usize).max(1)
}

/// Per-image MACs of one demo model (convolutions, fusion, pooling, classifier).
pub fn model_macs(task: &DemoTask, base: usize, kind: FusionKind) -> Result<u64> {
    let n = task.n_channels as u64;
    let sites = task.sites() as u64;
    let spec = ButterflySpec::with_base(task.n_channels, base)?;
    let (fusion, out) = match kind {
        FusionKind::Bft => (count_flops(&spec), n),
        FusionKind::Pointwise => {
            let out = dense_width(&spec) as u64;
            (n * out, out)
        }
    };
    Ok(2 * 9 * n * sites + fusion * sites + out * sites + out * task.n_classes as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub fusion: FusionKind,
    pub fusion_channels: usize,
    pub macs_per_image: u64,
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMetrics {
    pub task: DemoTask,
    pub config: TrainConfig,
    pub runs: Vec<RunMetrics>,
}

fn accuracy(model: &Model, data: &[(Vec<f64>, usize)], task: &DemoTask) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, label) in data {
        let logits = model.logits(x, task)?;
        let pred = logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &l)| if l > best.1 { (i, l) } else { best },
            )
            .0;
        correct += usize::from(pred == *label);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains one model with mini-batch SGD with momentum.
pub fn train_one(task: &DemoTask, cfg: &TrainConfig, data: &Dataset, kind: FusionKind) -> Result<RunMetrics> {
    if cfg.weight_decay < 0.0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
        || cfg.batch_size == 0
        || cfg.epochs == 0
    {
        return Err(BftError::Arch(format!("invalid training config {cfg:?}")));
    }
    let mut model = Model::new(task, cfg, kind)?;
    let mut velocity = model.zeros_like();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut metrics = RunMetrics {
        fusion: kind,
        fusion_channels: model.fusion.out_channels(),
        macs_per_image: model_macs(task, cfg.base, kind)?,
        loss: Vec::new(),
        train_accuracy: Vec::new(),
        val_accuracy: Vec::new(),
        final_train_accuracy: 0.0,
        final_val_accuracy: 0.0,
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zeros_like();
            for &i in batch {
                let (x, label) = &data.train[i];
                epoch_loss += model.accumulate(x, *label, task, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut params = model.slices_mut();
            let mut vel = velocity.slices_mut();
            let mut grads = grad.slices_mut();
            for ((p, decay), ((v, _), (g, _))) in params.iter_mut().zip(vel.iter_mut().zip(grads.iter_mut())) {
                for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                    let mut step = gv * scale;
                    if *decay {
                        step += cfg.weight_decay * *pv;
                    }
                    *vv = cfg.momentum * *vv + step;
                    *pv -= lr * *vv;
                }
            }
        }
        let mean_loss = epoch_loss / data.train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(BftError::Diverged {
                fusion: kind.name().into(),
                epoch,
            });
        }
        metrics.loss.push(mean_loss);
        metrics.train_accuracy.push(accuracy(&model, &data.train, task)?);
        metrics.val_accuracy.push(accuracy(&model, &data.val, task)?);
    }
    metrics.final_train_accuracy = *metrics.train_accuracy.last().expect("at least one epoch");
    metrics.final_val_accuracy = *metrics.val_accuracy.last().expect("at least one epoch");
    Ok(metrics)
}

/// Trains the BFT model and the MAC-matched dense model on the same data.
pub fn train_demo(task: &DemoTask, cfg: &TrainConfig) -> Result<DemoMetrics> {
    let data = generate(task)?;
    let runs = [FusionKind::Bft, FusionKind::Pointwise]
        .into_iter()
        .map(|kind| train_one(task, cfg, &data, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(DemoMetrics {
        task: task.clone(),
        config: cfg.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_task() -> DemoTask {
        DemoTask {
            n_channels: 8,
            height: 3,
            width: 3,
            n_classes: 3,
            n_samples: 24,
            noise: 0.5,
            seed: 1,
        }
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let task = DemoTask::separable(7);
        let a = generate(&task).unwrap();
        let b = generate(&task).unwrap();
        assert_eq!(a.train, b.train);
        let mut counts = vec![0; task.n_classes];
        for (_, l) in a.train.iter().chain(&a.val) {
            counts[*l] += 1;
        }
        assert!(counts.iter().all(|&c| c == task.n_samples / task.n_classes));
    }

    #[test]
    fn macs_match_within_five_percent() {
        for base in [2, 4] {
            let task = DemoTask::separable(0);
            let bft = model_macs(&task, base, FusionKind::Bft).unwrap() as f64;
            let pw = model_macs(&task, base, FusionKind::Pointwise).unwrap() as f64;
            assert!((bft - pw).abs() / bft < 0.05, "base {base}: {bft} vs {pw}");
        }
    }

    fn numeric_check(kind: FusionKind, residual: ResidualPolicy) {
        let task = tiny_task();
        let cfg = TrainConfig {
            base: 2,
            residual,
            ..TrainConfig::default()
        };
        let data = generate(&task).unwrap();
        let model = Model::new(&task, &cfg, kind).unwrap();
        let (x, label) = &data.train[0];
        let mut grad = model.zeros_like();
        model.accumulate(x, *label, &task, &mut grad).unwrap();
        let loss_of = |m: &Model| {
            let logits = m.logits(x, &task).unwrap();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            -(logits[*label] - max - z.ln())
        };
        let h = 1e-6;
        let mut probe = model.clone();
        let n_slices = probe.slices_mut().len();
        for s in 0..n_slices {
            let len = probe.slices_mut()[s].0.len();
            for i in (0..len).step_by(3) {
                let orig = probe.slices_mut()[s].0[i];
                probe.slices_mut()[s].0[i] = orig + h;
                let plus = loss_of(&probe);
                probe.slices_mut()[s].0[i] = orig - h;
                let minus = loss_of(&probe);
                probe.slices_mut()[s].0[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grad.slices_mut()[s].0[i];
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1.0),
                    "{kind:?} slice {s} index {i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        numeric_check(FusionKind::Bft, ResidualPolicy::FirstToLast);
        numeric_check(FusionKind::Bft, ResidualPolicy::EveryOther);
        numeric_check(FusionKind::Pointwise, ResidualPolicy::None);
    }

    #[test]
    fn training_is_deterministic() {
        let task = tiny_task();
        let cfg = TrainConfig {
            epochs: 3,
            base: 2,
            ..TrainConfig::default()
        };
        assert_eq!(train_demo(&task, &cfg).unwrap(), train_demo(&task, &cfg).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let task = tiny_task();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e150,
            base: 2,
            ..TrainConfig::default()
        };
        let err = train_demo(&task, &cfg).unwrap_err();
        assert!(matches!(err, BftError::Diverged { .. }), "{err}");
    }
}
