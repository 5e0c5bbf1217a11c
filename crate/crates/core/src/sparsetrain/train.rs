//! Training loops, evaluation, checkpoint selection and activation dumps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::network::{lenet5, Network};
use super::optim::Sgd;
use super::scalar::Scalar;
use super::TrainError;
use crate::tensorio::ActivationTensor;

/// Hyperparameters, loadable from a TOML file such as
///
/// ```toml
/// lr = 0.01
/// momentum = 0.9
/// weight_decay = 5e-4
/// epochs = 8
/// batch_size = 64
/// seed = 1
/// alpha.conv1 = 0.25e-5
/// alpha.conv2 = 2e-5
/// alpha.fc1 = 5e-5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Pretraining epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiply the learning rate by `lr_gamma` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub finetune_epochs: usize,
    /// Fine-tuning starts at a higher rate than pretraining ended at and
    /// steps down by `finetune_lr_gamma` every `finetune_lr_step` epochs.
    pub finetune_lr: f64,
    pub finetune_lr_step: usize,
    pub finetune_lr_gamma: f64,
    /// Accuracy a checkpoint may lose against the pretrained model and still
    /// be selected, as a fraction (0.001 = 0.1 points).
    pub accuracy_tolerance: f64,
    /// Samples held out from the end of the training set for validation.
    pub validation_size: usize,
    pub alpha: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 8,
            batch_size: 64,
            seed: 1,
            lr_step: 4,
            lr_gamma: 0.5,
            finetune_epochs: 12,
            finetune_lr: 0.1,
            finetune_lr_step: 6,
            finetune_lr_gamma: 0.1,
            accuracy_tolerance: 0.001,
            validation_size: 5000,
            alpha: lenet5_alphas(),
        }
    }
}

/// L1 weights for the LeNet-5 activation maps.
pub fn lenet5_alphas() -> BTreeMap<String, f64> {
    [("conv1", 0.25e-5), ("conv2", 2e-5), ("fc1", 5e-5)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let c: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr >= 0.0 && self.finetune_lr >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.lr_step == 0 || self.finetune_lr_step == 0 || !(self.lr_gamma > 0.0 && self.finetune_lr_gamma > 0.0) {
            return bad("learning-rate steps must be positive and gammas > 0");
        }
        if self.alpha.values().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alpha values must be finite and >= 0");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }

    fn finetune_lr_at(&self, epoch: usize) -> f64 {
        self.finetune_lr * self.finetune_lr_gamma.powi((epoch / self.finetune_lr_step) as i32)
    }
}

/// Accuracy, sparsity and objective of a model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub top1: f64,
    /// Pooled over every ReLU map: nonzero elements / total elements.
    pub nonzero_fraction: f64,
    pub objective: f64,
    pub layer_nonzero: Vec<(String, f64)>,
    pub nonzero: u64,
    pub elements: u64,
}

/// Evaluates in batches. `hook` sees each ReLU output and may rewrite it,
/// for example to simulate quantized activations.
pub fn evaluate_with<T: Scalar, F>(
    net: &Network<T>,
    data: &Dataset,
    batch: usize,
    hook: &mut F,
) -> Result<EpochStats, TrainError>
where
    F: FnMut(usize, &str, &mut [T]),
{
    let acts = net.activation_layers();
    let mut nz = vec![0u64; acts.len()];
    let mut total = vec![0u64; acts.len()];
    let mut correct = 0usize;
    let mut objective = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = data.gather::<T>(chunk);
        let t = net.forward_with(&x, &y, hook)?;
        correct += t.predictions().iter().zip(&y).filter(|(p, l)| p == l).count();
        objective += (t.data_loss + t.penalty) * chunk.len() as f64;
        for (j, &li) in acts.iter().enumerate() {
            nz[j] += t.outputs[li].iter().filter(|&&v| v != T::zero()).count() as u64;
            total[j] += t.outputs[li].len() as u64;
        }
    }
    let n = data.len().max(1) as f64;
    let (snz, stot): (u64, u64) = (nz.iter().sum(), total.iter().sum());
    Ok(EpochStats {
        epoch: 0,
        top1: correct as f64 / n,
        nonzero_fraction: if stot == 0 { 0.0 } else { snz as f64 / stot as f64 },
        objective: objective / n + net.weight_decay * net.l2_norm_sq(),
        layer_nonzero: acts
            .iter()
            .enumerate()
            .map(|(j, &li)| (net.layers()[li].name.clone(), nz[j] as f64 / total[j].max(1) as f64))
            .collect(),
        nonzero: snz,
        elements: stot,
    })
}

pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset, batch: usize) -> Result<EpochStats, TrainError> {
    evaluate_with(net, data, batch, &mut |_, _, _| {})
}

/// One pass over `data` in a seeded random order. Returns the mean training
/// objective.
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Sgd<T>,
    data: &Dataset,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let mut sum = 0.0;
    for chunk in idx.chunks(batch) {
        let (x, y) = data.gather::<T>(chunk);
        let t = net.forward(&x, &y)?;
        sum += (t.data_loss + t.penalty) * chunk.len() as f64;
        let g = net.backward(&t)?;
        opt.step(net, &g)?;
    }
    Ok(sum / data.len().max(1) as f64 + net.weight_decay * net.l2_norm_sq())
}

/// Picks the epoch with the fewest nonzero activations among those within
/// `tolerance` of the baseline accuracy, else the most accurate epoch.
pub fn select_checkpoint(curve: &[EpochStats], baseline_top1: f64, tolerance: f64) -> Option<usize> {
    let eligible = curve
        .iter()
        .enumerate()
        .filter(|(_, s)| s.top1 >= baseline_top1 - tolerance - 1e-12)
        .min_by(|a, b| a.1.nonzero_fraction.total_cmp(&b.1.nonzero_fraction).then(a.0.cmp(&b.0)));
    match eligible {
        Some((i, _)) => Some(i),
        None => curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.top1.total_cmp(&b.1.top1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i),
    }
}

pub fn lenet5_network(cfg: &TrainConfig) -> Result<Network<f32>, TrainError> {
    let (shape, layers) = lenet5();
    Network::new(shape, layers, cfg.weight_decay, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Trains with the unregularized objective. `progress` receives each
/// epoch's validation statistics.
pub fn pretrain<F: FnMut(&EpochStats)>(
    net: &mut Network<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<Vec<EpochStats>, TrainError> {
    cfg.validate()?;
    net.clear_alphas();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        train_epoch(net, &mut opt, train, cfg.batch_size, &mut rng)?;
        let mut s = evaluate(net, val, 500)?;
        s.epoch = epoch + 1;
        progress(&s);
        curve.push(s);
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub net: Network<f32>,
    /// Validation statistics; entry 0 is the starting model.
    pub curve: Vec<EpochStats>,
    pub selected: usize,
}

/// Continues training with the L1 activation penalty and returns the
/// checkpoint picked by [`select_checkpoint`].
pub fn finetune<F: FnMut(&EpochStats)>(
    pretrained: &Network<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<FinetuneResult, TrainError> {
    cfg.validate()?;
    let mut net = pretrained.clone();
    net.clear_alphas();
    for (layer, &a) in &cfg.alpha {
        net.set_alpha(layer, a)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt = Sgd::new(cfg.finetune_lr, cfg.momentum);
    let start = evaluate(&net, val, 500)?;
    progress(&start);
    let baseline = start.top1;
    let mut curve = vec![start];
    let mut best = net.clone();
    let mut selected = 0;
    for epoch in 0..cfg.finetune_epochs {
        opt.lr = cfg.finetune_lr_at(epoch);
        train_epoch(&mut net, &mut opt, train, cfg.batch_size, &mut rng)?;
        let mut s = evaluate(&net, val, 500)?;
        s.epoch = epoch + 1;
        progress(&s);
        curve.push(s);
        let pick = select_checkpoint(&curve, baseline, cfg.accuracy_tolerance).expect("non-empty");
        if pick != selected {
            selected = pick;
            best = net.clone();
        }
    }
    Ok(FinetuneResult {
        net: best,
        curve,
        selected,
    })
}

/// Writes `epoch,top1,nonzero_fraction,objective` rows.
pub fn write_curve_csv<W: Write>(curve: &[EpochStats], sink: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(sink);
    let err = |e: csv::Error| TrainError::Data(e.to_string());
    w.write_record(["epoch", "top1", "nonzero_fraction", "objective"]).map_err(err)?;
    for s in curve {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.6}", s.top1),
            format!("{:.6}", s.nonzero_fraction),
            format!("{:.6}", s.objective),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: "curve".into(),
        source,
    })
}

/// Post-ReLU maps for every sample, one tensor per layer per batch of
/// `batch` samples, with dims `[n, h, w, c]`.
pub fn dump_activations(
    net: &Network<f32>,
    data: &Dataset,
    batch: usize,
) -> Result<BTreeMap<String, Vec<ActivationTensor>>, TrainError> {
    let acts = net.activation_layers();
    let mut out: BTreeMap<String, Vec<ActivationTensor>> = BTreeMap::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = data.gather::<f32>(chunk);
        let t = net.forward(&x, &y)?;
        for &li in &acts {
            let s = net.output_shape(li);
            let name = &net.layers()[li].name;
            let dims = [chunk.len() as u32, s.h as u32, s.w as u32, s.c as u32];
            let tensor = ActivationTensor::from_f32(name.clone(), dims, t.outputs[li].clone())
                .map_err(|e| TrainError::Data(e.to_string()))?;
            out.entry(name.clone()).or_default().push(tensor);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedupConvention {
    /// baseline / sparse
    Ratio,
    /// 1 - sparse / baseline
    Percent,
}

/// Zero-skipping speed-up estimated from nonzero activation counts (or
/// fractions over the same element set). A zero sparse count gives
/// infinity under `Ratio`.
pub fn speedup(baseline_nnz: f64, sparse_nnz: f64, convention: SpeedupConvention) -> f64 {
    match convention {
        SpeedupConvention::Ratio => {
            if sparse_nnz == 0.0 {
                f64::INFINITY
            } else {
                baseline_nnz / sparse_nnz
            }
        }
        SpeedupConvention::Percent => 1.0 - sparse_nnz / baseline_nnz,
    }
}
