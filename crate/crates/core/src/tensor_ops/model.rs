//! Sequential networks: a PDO-eConv stack over a point group, or a plain
//! convolutional baseline with the same layout.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{
    correlate2d_backward, correlate2d_forward, groupconv_backward, groupconv_forward, lifting_backward, lifting_forward,
};
use super::layers::{self, Argmax, BnCache, BnMode, BnStats};
use super::optim::OptimizerKind;
use super::FeatureMap;
use crate::error::{Error, Result};
use crate::group2d::{Group2D, GroupSpec};
use crate::kernels::{init_beta, GroupConvBank, LiftingBank};
use crate::pdo::BetaVector;

/// Spatial size of the baseline's convolutions.
pub const CNN_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Lifting followed by group convolutions, orientation pooling at the end.
    Pdo,
    /// Ordinary 3×3 convolutions.
    Cnn,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdo" => Ok(Arch::Pdo),
            "cnn" => Ok(Arch::Cnn),
            _ => Err(Error::InvalidArgument(format!("unknown architecture {s:?} (pdo, cnn)"))),
        }
    }
}

/// Network layout and training hyperparameters.
///
/// Each width adds conv → batch norm → ReLU; the first two blocks (when
/// followed by another block) end in 2×2 max pooling. The head is
/// orientation pooling (PDO only), global average pooling, optional dropout
/// and a dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub group: GroupSpec,
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// The small p4 network used for CPU-scale experiments (about 20k
    /// parameters with three classes).
    pub fn desk_pdo(group: GroupSpec, classes: usize, seed: u64) -> Self {
        ModelConfig {
            arch: Arch::Pdo,
            group,
            widths: vec![8, 15, 15, 15],
            in_channels: 1,
            classes,
            epochs: 12,
            batch_size: 32,
            lr: 3e-3,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            dropout: 0.0,
            bn_momentum: 0.1,
            val_fraction: 0.1,
            seed,
        }
    }

    /// Plain CNN with the same layout and a comparable parameter count.
    pub fn desk_cnn(classes: usize, seed: u64) -> Self {
        ModelConfig {
            arch: Arch::Cnn,
            group: GroupSpec::new(1, false),
            widths: vec![16, 30, 30, 30],
            ..Self::desk_pdo(GroupSpec::new(1, false), classes, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.in_channels == 0 || self.classes < 2 {
            return bad("need at least one input channel and two classes");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must be in [0, 1)");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.group.n == 0 {
            return Err(Error::InvalidOrder(0));
        }
        Ok(())
    }
}

/// Input standardization computed on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: 0.0, std: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Lifting { out_ch: usize, in_ch: usize, beta: Vec<f64> },
    GroupConv { out_ch: usize, in_ch: usize, beta: Vec<f64> },
    Conv { out_ch: usize, in_ch: usize, weight: Vec<f64> },
    BatchNorm { scale: Vec<f64>, bias: Vec<f64>, stats: BnStats },
    Relu,
    MaxPool,
    OrientationPool,
    AvgPool,
    Dropout(f64),
    Dense { weight: Vec<f64>, bias: Vec<f64> },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Lifting { .. } => "lifting",
            Layer::GroupConv { .. } => "groupconv",
            Layer::Conv { .. } => "conv",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::OrientationPool => "orientation_pool",
            Layer::AvgPool => "avgpool",
            Layer::Dropout(_) => "dropout",
            Layer::Dense { .. } => "dense",
        }
    }

    fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Lifting { beta, .. } | Layer::GroupConv { beta, .. } => vec![beta],
            Layer::Conv { weight, .. } => vec![weight],
            Layer::BatchNorm { scale, bias, .. } | Layer::Dense { weight: scale, bias } => vec![scale, bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Lifting { beta, .. } | Layer::GroupConv { beta, .. } => vec![beta],
            Layer::Conv { weight, .. } => vec![weight],
            Layer::BatchNorm { scale, bias, .. } | Layer::Dense { weight: scale, bias } => vec![scale, bias],
            _ => Vec::new(),
        }
    }
}

fn to_betas(flat: &[f64]) -> Vec<BetaVector> {
    flat.chunks_exact(9).map(|c| BetaVector(c.try_into().expect("nine entries"))).collect()
}

fn from_betas(betas: &[BetaVector]) -> Vec<f64> {
    betas.iter().flat_map(|b| b.0).collect()
}

/// Saved activations for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Input(FeatureMap),
    Bn(BnCache),
    Arg(Argmax),
    Dims((usize, usize, usize, usize)),
    Mask(Vec<f64>),
    Nothing,
}

/// Result of a forward pass.
pub struct Pass {
    pub output: FeatureMap,
    pub caches: Vec<Cache>,
    /// New running statistics, by layer index; applied with
    /// [`Model::commit`].
    pub bn_updates: Vec<(usize, BnStats)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub normalization: Normalization,
    group: Group2D,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds and initializes a network from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let group = match config.arch {
            Arch::Pdo => Group2D::from_spec(config.group)?,
            Arch::Cnn => Group2D::new(1, false)?,
        };
        let s = group.order();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::new();
        let mut prev = config.in_channels;
        let blocks = config.widths.len();
        for (i, &w) in config.widths.iter().enumerate() {
            let layer_seed: u64 = rng.gen();
            layers.push(match (config.arch, i) {
                (Arch::Pdo, 0) => {
                    Layer::Lifting { out_ch: w, in_ch: prev, beta: from_betas(&init_beta(w, prev, 1, layer_seed)?) }
                }
                (Arch::Pdo, _) => {
                    Layer::GroupConv { out_ch: w, in_ch: prev, beta: from_betas(&init_beta(w, prev, s, layer_seed)?) }
                }
                (Arch::Cnn, _) => {
                    let fan_in = (prev * CNN_KERNEL * CNN_KERNEL) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                    let mut lr = ChaCha8Rng::seed_from_u64(layer_seed);
                    let weight = (0..w * prev * CNN_KERNEL * CNN_KERNEL).map(|_| normal.sample(&mut lr)).collect();
                    Layer::Conv { out_ch: w, in_ch: prev, weight }
                }
            });
            layers.push(Layer::BatchNorm { scale: vec![1.0; w], bias: vec![0.0; w], stats: BnStats::new(w) });
            layers.push(Layer::Relu);
            if i < 2 && i + 1 < blocks {
                layers.push(Layer::MaxPool);
            }
            prev = w;
        }
        if config.arch == Arch::Pdo {
            layers.push(Layer::OrientationPool);
        }
        layers.push(Layer::AvgPool);
        if config.dropout > 0.0 {
            layers.push(Layer::Dropout(config.dropout));
        }
        let limit = (6.0 / (prev + config.classes) as f64).sqrt();
        let mut dr = ChaCha8Rng::seed_from_u64(rng.gen());
        let weight = (0..config.classes * prev).map(|_| dr.gen_range(-limit..limit)).collect();
        layers.push(Layer::Dense { weight, bias: vec![0.0; config.classes] });
        Ok(Model { config, normalization: Normalization::default(), group, layers })
    }

    pub fn group(&self) -> &Group2D {
        &self.group
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All persistent tensors (trainable and running statistics), named,
    /// in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = layer.name();
            match layer {
                Layer::BatchNorm { scale, bias, stats } => {
                    out.push((format!("{i}.{name}.scale"), scale));
                    out.push((format!("{i}.{name}.bias"), bias));
                    out.push((format!("{i}.{name}.running_mean"), &stats.mean));
                    out.push((format!("{i}.{name}.running_var"), &stats.var));
                }
                Layer::Dense { weight, bias } => {
                    out.push((format!("{i}.{name}.weight"), weight));
                    out.push((format!("{i}.{name}.bias"), bias));
                }
                other => {
                    for p in other.params() {
                        out.push((format!("{i}.{name}.weight"), p));
                    }
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::BatchNorm { scale, bias, stats } => {
                    out.extend([scale, bias, &mut stats.mean, &mut stats.var]);
                }
                other => out.extend(other.params_mut()),
            }
        }
        out
    }

    fn lifting_bank(&self, out_ch: usize, in_ch: usize, beta: &[f64]) -> Result<LiftingBank> {
        LiftingBank::new(self.group.clone(), out_ch, in_ch, to_betas(beta), 1.0)
    }

    fn groupconv_bank(&self, out_ch: usize, in_ch: usize, beta: &[f64]) -> Result<GroupConvBank> {
        GroupConvBank::new(self.group.clone(), out_ch, in_ch, to_betas(beta), 1.0)
    }

    /// Runs the network. `train` carries the dropout RNG and switches batch
    /// norm to batch statistics; `None` is inference.
    pub fn forward(&self, x: FeatureMap, mut train: Option<&mut ChaCha8Rng>) -> Result<Pass> {
        let training = train.is_some();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut bn_updates = Vec::new();
        let mut x = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = match layer {
                Layer::Lifting { out_ch, in_ch, beta } => {
                    (lifting_forward(&x, &self.lifting_bank(*out_ch, *in_ch, beta)?)?, Cache::Input(x))
                }
                Layer::GroupConv { out_ch, in_ch, beta } => {
                    (groupconv_forward(&x, &self.groupconv_bank(*out_ch, *in_ch, beta)?)?, Cache::Input(x))
                }
                Layer::Conv { out_ch, weight, .. } => {
                    let y = correlate2d_forward(&x.data, weight, *out_ch, CNN_KERNEL)?;
                    (x.like(y), Cache::Input(x))
                }
                Layer::BatchNorm { scale, bias, stats } => {
                    if training {
                        let mut running = stats.clone();
                        let mode = BnMode::Train { running: &mut running, momentum: self.config.bn_momentum };
                        let (y, c) = layers::group_batchnorm(&x, scale, bias, mode)?;
                        bn_updates.push((i, running));
                        (y, Cache::Bn(c))
                    } else {
                        let (y, c) = layers::group_batchnorm(&x, scale, bias, BnMode::Eval(stats))?;
                        (y, Cache::Bn(c))
                    }
                }
                Layer::Relu => (layers::relu(&x), Cache::Input(x)),
                Layer::MaxPool => {
                    let (y, a) = layers::maxpool2(&x);
                    (y, Cache::Arg(a))
                }
                Layer::OrientationPool => {
                    let (y, a) = layers::orientation_pool(&x);
                    (y, Cache::Arg(a))
                }
                Layer::AvgPool => (layers::global_avg_pool(&x), Cache::Dims(x.data.dim())),
                Layer::Dropout(p) => match train.as_deref_mut() {
                    Some(rng) => {
                        let (y, mask) = layers::dropout(&x, *p, rng);
                        (y, Cache::Mask(mask))
                    }
                    None => (x, Cache::Nothing),
                },
                Layer::Dense { weight, bias } => (layers::dense(&x, weight, bias)?, Cache::Input(x)),
            };
            caches.push(if training { cache } else { Cache::Nothing });
            x = y;
        }
        Ok(Pass { output: x, caches, bn_updates })
    }

    /// Stores running statistics produced by a training forward pass.
    pub fn commit(&mut self, bn_updates: Vec<(usize, BnStats)>) {
        for (i, new) in bn_updates {
            if let Layer::BatchNorm { stats, .. } = &mut self.layers[i] {
                *stats = new;
            }
        }
    }

    /// Gradients of every trainable tensor (in [`params`](Self::params)
    /// order) and of the input, given the gradient at the output.
    pub fn backward(&self, caches: &[Cache], grad: FeatureMap) -> Result<(Vec<Vec<f64>>, FeatureMap)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Shape("backward needs the caches of a training pass".into()));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[i];
            g = match (layer, cache) {
                (Layer::Lifting { out_ch, in_ch, beta }, Cache::Input(x)) => {
                    let (dx, db) = lifting_backward(&g, x, &self.lifting_bank(*out_ch, *in_ch, beta)?)?;
                    per_layer[i] = vec![from_betas(&db)];
                    dx
                }
                (Layer::GroupConv { out_ch, in_ch, beta }, Cache::Input(x)) => {
                    let (dx, db) = groupconv_backward(&g, x, &self.groupconv_bank(*out_ch, *in_ch, beta)?)?;
                    per_layer[i] = vec![from_betas(&db)];
                    dx
                }
                (Layer::Conv { weight, .. }, Cache::Input(x)) => {
                    let (dx, dw) = correlate2d_backward(&g.data, &x.data, weight, CNN_KERNEL)?;
                    per_layer[i] = vec![dw];
                    x.like(dx)
                }
                (Layer::BatchNorm { .. }, Cache::Bn(c)) => {
                    let (dx, ds, db) = layers::group_batchnorm_backward(c, &g);
                    per_layer[i] = vec![ds, db];
                    dx
                }
                (Layer::Relu, Cache::Input(x)) => layers::relu_backward(x, &g),
                (Layer::MaxPool, Cache::Arg(a)) => layers::maxpool2_backward(a, &g),
                (Layer::OrientationPool, Cache::Arg(a)) => layers::orientation_pool_backward(a, &g),
                (Layer::AvgPool, Cache::Dims(d)) => layers::global_avg_pool_backward(*d, &g),
                (Layer::Dropout(_), Cache::Mask(m)) => layers::dropout_backward(m, &g),
                (Layer::Dense { weight, .. }, Cache::Input(x)) => {
                    let (dx, dw, db) = layers::dense_backward(x, weight, &g);
                    per_layer[i] = vec![dw, db];
                    dx
                }
                (layer, _) => return Err(Error::Shape(format!("missing cache for {} layer {i}", layer.name()))),
            };
        }
        Ok((per_layer.into_iter().flatten().collect(), g))
    }

    /// Standardized `[b][1][h][w]` batch from raw images.
    pub fn input_batch(&self, images: &Array3<f64>, indices: &[usize]) -> FeatureMap {
        let (_, h, w) = images.dim();
        let Normalization { mean, std } = self.normalization;
        let mut data = Array4::zeros((indices.len(), 1, h, w));
        for (b, &i) in indices.iter().enumerate() {
            data.index_axis_mut(Axis(0), b)
                .index_axis_mut(Axis(0), 0)
                .assign(&images.index_axis(Axis(0), i).mapv(|v| (v - mean) / std));
        }
        FeatureMap::planar(data)
    }

    /// Inference logits `[count][classes]`.
    pub fn predict(&self, images: &Array3<f64>) -> Result<Array2<f64>> {
        if self.config.in_channels != 1 {
            return Err(Error::Shape("image prediction expects a single input channel".into()));
        }
        let n = images.dim().0;
        let mut logits = Array2::zeros((n, self.config.classes));
        let chunk = 64;
        for start in (0..n).step_by(chunk) {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let out = self.forward(self.input_batch(images, &idx), None)?.output;
            for (b, row) in out.data.outer_iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    logits[[start + b, c]] = *v;
                }
            }
        }
        Ok(logits)
    }
}
