//! Linear readout on `[S, D]`, the classification and physical losses, Adam,
//! the training loop and the finite-difference gradient certification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynError, RolloutConfig};
use crate::feature::FeatureGrid;
use crate::graphlap::{default_laplacian, GraphError, PatchGrid};
use crate::numcore::kernels::{bce, relu, sigmoid};
use crate::numcore::{refined_derivative, Mat, NumError, SparseSym, Tape};
use crate::potential::{param_group, ParamVars, PotentialConfig, PotentialModel, DEFAULT_D_PHY};
use crate::synthbench::auc;
use crate::trajstats::{phys_features, taped_stats, TrajStats};

pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Relative-error threshold of the gradient certification.
pub const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter `{param}`")]
    NanGradient { param: String },
    #[error(transparent)]
    Dyn(#[from] DynError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `ŷ = σ(w·[S, D] + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    /// 1×2.
    pub w: Mat,
    /// 1×1.
    pub b: Mat,
}

impl Classifier {
    pub fn zeros() -> Self {
        Classifier {
            w: Mat::zeros(1, 2),
            b: Mat::zeros(1, 1),
        }
    }

    pub fn new(w_s: f64, w_d: f64, b: f64) -> Self {
        Classifier {
            w: Mat::row_vector(&[w_s, w_d]),
            b: Mat::scalar(b),
        }
    }
}

pub fn classify(f: &TrajStats, c: &Classifier) -> f64 {
    sigmoid(c.w.dot(&Mat::row_vector(&[f.s, f.d])) + c.b.item())
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(yhat: f64, y: u8) -> f64 {
    bce(yhat, y as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(TrainError::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(TrainError::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// A batch-level term that may be empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub value: f64,
    pub empty: bool,
}

/// `mean(S + D)` over real samples.
pub fn l_real(stats: &[TrajStats]) -> Term {
    if stats.is_empty() {
        return Term { value: 0.0, empty: true };
    }
    let sum: f64 = stats.iter().map(|f| f.s + f.d).sum();
    Term {
        value: sum / stats.len() as f64,
        empty: false,
    }
}

/// `mean(max(0, γ − S))` over fake samples.
pub fn l_fake(stats: &[TrajStats], gamma: f64) -> Term {
    if stats.is_empty() {
        return Term { value: 0.0, empty: true };
    }
    let sum: f64 = stats.iter().map(|f| relu(gamma - f.s)).sum();
    Term {
        value: sum / stats.len() as f64,
        empty: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub phy: f64,
    pub real_term: f64,
    pub fake_term: f64,
}

/// Readout of one sample: statistics, probability and label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOutcome {
    pub stats: TrajStats,
    pub prob: f64,
    pub label: u8,
}

/// Loss of a scored batch. `cls` averages over the whole batch; the physical
/// terms average over their class partition.
pub fn total_loss(batch: &[SampleOutcome], cfg: &LossConfig) -> Result<LossBreakdown, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("loss of an empty batch".into()));
    }
    let cls = batch.iter().map(|o| bce_loss(o.prob, o.label)).sum::<f64>() / batch.len() as f64;
    let real: Vec<TrajStats> = batch.iter().filter(|o| o.label == 0).map(|o| o.stats).collect();
    let fake: Vec<TrajStats> = batch.iter().filter(|o| o.label == 1).map(|o| o.stats).collect();
    let real_term = l_real(&real).value;
    let fake_term = l_fake(&fake, cfg.gamma).value;
    let phy = real_term + fake_term;
    Ok(LossBreakdown {
        total: cls + cfg.lambda * phy,
        cls,
        phy,
        real_term,
        fake_term,
    })
}

/// Labeled feature grids sharing one patch grid. Labels: 0 real, 1 fake,
/// 255 unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: PatchGrid,
    pub samples: Vec<FeatureGrid>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(grid: PatchGrid, samples: Vec<FeatureGrid>, labels: Vec<u8>) -> Result<Self, TrainError> {
        if samples.len() != labels.len() {
            return Err(TrainError::Config(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let d_in = samples.first().map(|s| s.d_in());
        for s in &samples {
            if s.grid() != grid || Some(s.d_in()) != d_in {
                return Err(TrainError::Config("samples disagree on grid or feature width".into()));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y != 0 && y != 1 && y != 255) {
            return Err(TrainError::Config(format!("invalid label {y}")));
        }
        Ok(Dataset { grid, samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_in(&self) -> Option<usize> {
        self.samples.first().map(|s| s.d_in())
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }
}

/// Plain forward pass for one sample.
pub fn score_sample(
    x: &FeatureGrid,
    model: &PotentialModel,
    laplacian: &SparseSym,
    rollout: &RolloutConfig,
) -> Result<(TrajStats, f64), TrainError> {
    let traj = dynamics::rollout(x, model, laplacian, rollout)?;
    let stats = phys_features(&traj, x.n());
    Ok((stats, classify(&stats, &model.classifier)))
}

pub fn score_dataset(
    data: &Dataset,
    model: &PotentialModel,
    laplacian: &SparseSym,
    rollout: &RolloutConfig,
) -> Result<Vec<SampleOutcome>, TrainError> {
    data.samples
        .iter()
        .zip(&data.labels)
        .map(|(x, &label)| {
            let (stats, prob) = score_sample(x, model, laplacian, rollout)?;
            Ok(SampleOutcome { stats, prob, label })
        })
        .collect()
}

/// Loss of a batch recomputed entirely on the plain path.
pub fn batch_loss(
    model: &PotentialModel,
    xs: &[&FeatureGrid],
    ys: &[u8],
    laplacian: &SparseSym,
    rollout: &RolloutConfig,
    loss: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    let outcomes = xs
        .iter()
        .zip(ys)
        .map(|(x, &label)| {
            let (stats, prob) = score_sample(x, model, laplacian, rollout)?;
            Ok(SampleOutcome { stats, prob, label })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    total_loss(&outcomes, loss)
}

/// Gradient of the batch loss for every parameter, in
/// [`PotentialModel::params`] order, plus the per-sample outcomes.
///
/// Each sample runs on its own tape; its loss share is weighted by `1/B`
/// (classification) and `λ/B_real` or `λ/B_fake` (physical terms) so the
/// accumulated gradient is the gradient of [`total_loss`].
pub fn batch_gradients(
    model: &PotentialModel,
    xs: &[&FeatureGrid],
    ys: &[u8],
    laplacian: &SparseSym,
    rollout: &RolloutConfig,
    loss: &LossConfig,
) -> Result<(Vec<Mat>, Vec<SampleOutcome>), TrainError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(TrainError::Config("batch must be non-empty with one label per sample".into()));
    }
    if ys.iter().any(|&y| y > 1) {
        return Err(TrainError::Config("training batch contains an unlabeled sample".into()));
    }
    rollout.validate()?;
    loss.validate()?;
    model.potential.validate().map_err(DynError::from)?;

    let b = xs.len() as f64;
    let n_real = ys.iter().filter(|&&y| y == 0).count();
    let n_fake = xs.len() - n_real;
    let names: Vec<&'static str> = model.params().iter().map(|(n, _)| *n).collect();
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|(_, m)| m.shape()).collect();
    let mut acc: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
    let mut outcomes = Vec::with_capacity(xs.len());

    for (x, &y) in xs.iter().zip(ys) {
        let mut t = Tape::new();
        let params = ParamVars::record(&mut t, model);
        let xv = t.leaf(x.features().clone());
        let traj = dynamics::taped::rollout(&mut t, &params, xv, laplacian, &model.potential, rollout);
        let (s, d) = taped_stats(&mut t, &traj.hamiltonian, x.n());
        let f = t.stack(&[s, d]);
        let logit = t.dot(f, params.cw);
        let logit = t.add(logit, params.cb);
        let prob = t.sigmoid(logit);
        let cls = t.bce(prob, y as f64);
        let cls = t.scale(cls, 1.0 / b);
        let phy = if y == 0 {
            let sd = t.add(s, d);
            t.scale(sd, loss.lambda / n_real as f64)
        } else {
            let neg = t.scale(s, -1.0);
            let margin = t.add_scalar(neg, loss.gamma);
            let hinge = t.relu(margin);
            t.scale(hinge, loss.lambda / n_fake as f64)
        };
        let out = t.add(cls, phy);
        let grads = t.backward(out)?;
        for ((a, v), name) in acc.iter_mut().zip(params.ordered()).zip(&names) {
            if let Some(g) = grads.get(v) {
                if !g.is_finite() {
                    return Err(TrainError::NanGradient {
                        param: (*name).to_string(),
                    });
                }
                a.add_assign(g);
            }
        }
        outcomes.push(SampleOutcome {
            stats: TrajStats {
                s: t.scalar(s),
                d: t.scalar(d),
            },
            prob: t.scalar(prob),
            label: y,
        });
    }
    Ok((acc, outcomes))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl OptimState {
    pub fn new(model: &PotentialModel, config: AdamConfig) -> Self {
        let zeros: Vec<Mat> = model
            .params()
            .iter()
            .map(|(_, p)| Mat::zeros(p.rows(), p.cols()))
            .collect();
        OptimState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update.
    pub fn apply(&mut self, model: &mut PotentialModel, grads: &[Mat]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub rollout: RolloutConfig,
    pub potential: PotentialConfig,
    pub d_phy: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: DEFAULT_BATCH,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            rollout: RolloutConfig::default(),
            potential: PotentialConfig::default(),
            d_phy: DEFAULT_D_PHY,
            seed: 0,
        }
    }
}

/// One gradient step on a batch. Returns the batch loss before the update.
pub fn train_step(
    model: &mut PotentialModel,
    xs: &[&FeatureGrid],
    ys: &[u8],
    laplacian: &SparseSym,
    optim: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let (grads, outcomes) = batch_gradients(model, xs, ys, laplacian, &cfg.rollout, &cfg.loss)?;
    let breakdown = total_loss(&outcomes, &cfg.loss)?;
    optim.apply(model, &grads);
    Ok(breakdown)
}

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: PotentialModel,
    pub history: Vec<EpochLog>,
}

/// History CSV: `epoch,total,cls,phy,auc`.
pub fn history_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,total,cls,phy,auc\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.loss.total, h.loss.cls, h.loss.phy, h.auc
        ));
    }
    s
}

/// AUC of the readout probability over the labeled samples of `data`.
pub fn evaluate_auc(
    data: &Dataset,
    model: &PotentialModel,
    laplacian: &SparseSym,
    rollout: &RolloutConfig,
) -> Result<f64, TrainError> {
    let outcomes = score_dataset(data, model, laplacian, rollout)?;
    let (scores, labels): (Vec<f64>, Vec<u8>) = outcomes
        .iter()
        .filter(|o| o.label <= 1)
        .map(|o| (o.prob, o.label))
        .unzip();
    auc(&scores, &labels).map_err(|e| TrainError::Config(e.to_string()))
}

/// Seeded mini-batch training. The history's loss is the mean of the batch
/// breakdowns of each epoch; its AUC is measured on `val` when given and on
/// the training set otherwise.
pub fn train(train_set: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if !train_set.has_both_classes() {
        return Err(TrainError::Config("training set needs both real and fake samples".into()));
    }
    if train_set.labels.iter().any(|&y| y > 1) {
        return Err(TrainError::Config("training set contains unlabeled samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    cfg.loss.validate()?;
    cfg.rollout.validate()?;
    let d_in = train_set.d_in().expect("non-empty");
    if let Some(v) = val {
        if v.grid != train_set.grid || v.d_in() != Some(d_in) {
            return Err(TrainError::Config("validation set shape differs from training set".into()));
        }
        if !v.has_both_classes() {
            return Err(TrainError::Config("validation set needs both classes".into()));
        }
    }
    let laplacian = default_laplacian(train_set.grid)?;
    let mut model = PotentialModel::init(d_in, cfg.d_phy, cfg.potential, cfg.seed);
    let mut optim = OptimState::new(&model, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a11_ba7c_4e55);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown {
            total: 0.0,
            cls: 0.0,
            phy: 0.0,
            real_term: 0.0,
            fake_term: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&FeatureGrid> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let b = train_step(&mut model, &xs, &ys, &laplacian, &mut optim, cfg)?;
            sum.total += b.total;
            sum.cls += b.cls;
            sum.phy += b.phy;
            sum.real_term += b.real_term;
            sum.fake_term += b.fake_term;
            batches += 1;
        }
        let k = batches as f64;
        let loss = LossBreakdown {
            total: sum.total / k,
            cls: sum.cls / k,
            phy: sum.phy / k,
            real_term: sum.real_term / k,
            fake_term: sum.fake_term / k,
        };
        let auc = evaluate_auc(val.unwrap_or(train_set), &model, &laplacian, &cfg.rollout)?;
        history.push(EpochLog { epoch, loss, auc });
    }
    Ok(TrainOutcome { model, history })
}

/// Toy instance used by the gradient certification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub grid: PatchGrid,
    pub d_in: usize,
    pub d_phy: usize,
    pub samples_per_class: usize,
    pub seeds: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    pub rollout: RolloutConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            grid: PatchGrid::new(2, 2),
            d_in: 3,
            d_phy: 8,
            samples_per_class: 2,
            seeds: 20,
            fd_step: 1e-4,
            tolerance: GRADCHECK_TOL,
            rollout: RolloutConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    /// Worst `max|tape − fd| / max|fd|` over all seeds.
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.group.as_str())
            .collect()
    }
}

/// Hook applied to every tape gradient before comparison, by parameter name.
pub type GradCorruption<'a> = &'a dyn Fn(&str, &mut Mat);

/// Builds the toy model and batch for one seed. The classifier is randomised
/// and `γ` placed above every fake action so every loss path carries gradient.
pub fn gradcheck_instance(cfg: &GradCheckConfig, seed: u64) -> Result<(PotentialModel, Dataset, LossConfig), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let potential = PotentialConfig::default();
    let mut model = PotentialModel::init(cfg.d_in, cfg.d_phy, potential, rng.random());
    model.classifier = Classifier::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.5..0.5),
    );
    let n = cfg.grid.n();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for label in [0u8, 1] {
        for _ in 0..cfg.samples_per_class {
            let amp = if label == 0 { 0.5 } else { 1.5 };
            let data = (0..n * cfg.d_in).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
            samples.push(FeatureGrid::new(cfg.grid, Mat::from_vec(n, cfg.d_in, data)?)?);
            labels.push(label);
        }
    }
    let data = Dataset::new(cfg.grid, samples, labels)?;
    let lap = default_laplacian(cfg.grid)?;
    let outcomes = score_dataset(&data, &model, &lap, &cfg.rollout)?;
    let max_fake = outcomes
        .iter()
        .filter(|o| o.label == 1)
        .map(|o| o.stats.s)
        .fold(0.0, f64::max);
    let loss = LossConfig {
        lambda: 1.0,
        gamma: 2.0 * max_fake + 1.0,
    };
    Ok((model, data, loss))
}

/// Compares tape gradients against finite differences of the plain loss for
/// every parameter coordinate, over `cfg.seeds` toy instances. The
/// difference step is refined near ReLU and hinge kinks.
pub fn gradcheck(cfg: &GradCheckConfig, corrupt: Option<GradCorruption<'_>>) -> Result<GradCheckReport, TrainError> {
    let lap = default_laplacian(cfg.grid)?;
    let mut groups: Vec<GroupCheck> = Vec::new();
    for seed in 0..cfg.seeds as u64 {
        let (model, data, loss) = gradcheck_instance(cfg, seed)?;
        let xs: Vec<&FeatureGrid> = data.samples.iter().collect();
        let (mut tape_grads, _) = batch_gradients(&model, &xs, &data.labels, &lap, &cfg.rollout, &loss)?;
        let names: Vec<&'static str> = model.params().iter().map(|(n, _)| *n).collect();
        if let Some(hook) = corrupt {
            for (g, name) in tape_grads.iter_mut().zip(&names) {
                hook(name, g);
            }
        }

        // per-group (max |diff|, max |fd|)
        let mut per_group: Vec<(&str, f64, f64)> = Vec::new();
        let mut probe = model.clone();
        for (k, name) in names.iter().enumerate() {
            let len = model.params()[k].1.len();
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..len {
                let orig = probe.params_mut()[k].data()[i];
                let fd = refined_derivative(
                    |dt| {
                        probe.params_mut()[k].data_mut()[i] = orig + dt;
                        batch_loss(&probe, &xs, &data.labels, &lap, &cfg.rollout, &loss).map(|b| b.total)
                    },
                    cfg.fd_step,
                )?;
                probe.params_mut()[k].data_mut()[i] = orig;
                diff = diff.max((tape_grads[k].data()[i] - fd).abs());
                scale = scale.max(fd.abs());
            }
            let group = param_group(name);
            match per_group.iter_mut().find(|(g, _, _)| *g == group) {
                Some(e) => {
                    e.1 = e.1.max(diff);
                    e.2 = e.2.max(scale);
                }
                None => per_group.push((group, diff, scale)),
            }
        }
        for (group, diff, scale) in per_group {
            let rel = if diff == 0.0 {
                0.0
            } else if scale == 0.0 {
                f64::INFINITY
            } else {
                diff / scale
            };
            match groups.iter_mut().find(|g| g.group == group) {
                Some(g) => g.max_rel_err = g.max_rel_err.max(rel),
                None => groups.push(GroupCheck {
                    group: group.to_string(),
                    max_rel_err: rel,
                    passed: true,
                }),
            }
        }
    }
    for g in &mut groups {
        g.passed = g.max_rel_err < cfg.tolerance;
    }
    Ok(GradCheckReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphlap::PatchGrid;

    fn outcome(s: f64, d: f64, prob: f64, label: u8) -> SampleOutcome {
        SampleOutcome {
            stats: TrajStats { s, d },
            prob,
            label,
        }
    }

    #[test]
    fn classify_examples() {
        let f = TrajStats { s: 3.0, d: 1.0 };
        assert_eq!(classify(&f, &Classifier::zeros()), 0.5);
        let zero_s = TrajStats { s: 0.0, d: 7.0 };
        assert_eq!(classify(&zero_s, &Classifier::new(1.0, 0.0, 0.0)), 0.5);
        let mut last = 0.0;
        for k in 0..10 {
            let p = classify(&f, &Classifier::new(k as f64, 0.0, 0.0));
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1e-20, 0) < 1e-11);
        assert!((bce_loss(0.9, 1) - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn physical_terms() {
        let t = |s, d| TrajStats { s, d };
        assert_eq!(l_real(&[t(2.0, 0.5)]).value, 2.5);
        assert_eq!(l_real(&[t(1.0, 0.0), t(3.0, 1.0)]).value, 2.5);
        assert!(l_real(&[]).empty);
        assert_eq!(l_fake(&[t(1.5, 0.0)], 1.0).value, 0.0);
        assert!((l_fake(&[t(0.4, 0.0)], 1.0).value - 0.6).abs() < 1e-15);
        assert!((l_fake(&[t(0.4, 0.0), t(1.5, 0.0)], 1.0).value - 0.3).abs() < 1e-15);
        let e = l_fake(&[], 1.0);
        assert_eq!((e.value, e.empty), (0.0, true));
    }

    #[test]
    fn breakdown_identity_and_lambda_zero() {
        let batch = [outcome(0.5, 0.1, 0.3, 0), outcome(0.2, 0.4, 0.8, 1)];
        let cfg = LossConfig { lambda: 0.7, gamma: 1.0 };
        let b = total_loss(&batch, &cfg).unwrap();
        assert!((b.total - (b.cls + 0.7 * (b.real_term + b.fake_term))).abs() < 1e-12);
        let cls = (-(0.7f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((b.cls - cls).abs() < 1e-12);
        assert!((b.real_term - 0.6).abs() < 1e-12);
        assert!((b.fake_term - 0.8).abs() < 1e-12);
        let z = total_loss(&batch, &LossConfig { lambda: 0.0, gamma: 1.0 }).unwrap();
        assert_eq!(z.total, z.cls);
        assert!(total_loss(&[], &cfg).is_err());
    }

    fn toy() -> (PotentialModel, Dataset, LossConfig, SparseSym) {
        let cfg = GradCheckConfig::default();
        let (m, d, l) = gradcheck_instance(&cfg, 3).unwrap();
        let lap = default_laplacian(cfg.grid).unwrap();
        (m, d, l, lap)
    }

    #[test]
    fn taped_forward_matches_plain() {
        let (model, data, loss, lap) = toy();
        let xs: Vec<&FeatureGrid> = data.samples.iter().collect();
        let rollout = RolloutConfig::default();
        let (_, outcomes) = batch_gradients(&model, &xs, &data.labels, &lap, &rollout, &loss).unwrap();
        let plain = score_dataset(&data, &model, &lap, &rollout).unwrap();
        assert_eq!(outcomes, plain);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (model, data, loss, lap) = toy();
        let xs: Vec<&FeatureGrid> = data.samples.iter().collect();
        let cfg = TrainConfig {
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            loss,
            d_phy: 8,
            ..TrainConfig::default()
        };
        let mut m2 = model.clone();
        let mut opt = OptimState::new(&m2, cfg.adam);
        train_step(&mut m2, &xs, &data.labels, &lap, &mut opt, &cfg).unwrap();
        assert_eq!(m2, model);
    }

    #[test]
    fn dead_hinge_has_zero_gradient() {
        let (model, data, _, lap) = toy();
        let fakes: Vec<&FeatureGrid> = data
            .samples
            .iter()
            .zip(&data.labels)
            .filter(|(_, &y)| y == 1)
            .map(|(x, _)| x)
            .collect();
        let ys = vec![1u8; fakes.len()];
        let mut m = model.clone();
        m.classifier = Classifier::zeros();
        // with a zero classifier the classification term only reaches the
        // classifier itself, so the heads see the hinge alone
        let loss = LossConfig { lambda: 1.0, gamma: 1e-9 };
        let (grads, outcomes) = batch_gradients(&m, &fakes, &ys, &lap, &RolloutConfig::default(), &loss).unwrap();
        assert!(outcomes.iter().all(|o| o.stats.s > loss.gamma));
        for (g, (name, _)) in grads.iter().zip(m.params()) {
            if !name.starts_with("classifier") {
                assert_eq!(g.max_abs(), 0.0, "{name}");
            }
        }
    }

    #[test]
    fn small_step_descends() {
        let (model, data, loss, lap) = toy();
        let xs: Vec<&FeatureGrid> = data.samples.iter().collect();
        let rollout = RolloutConfig::default();
        let (grads, outcomes) = batch_gradients(&model, &xs, &data.labels, &lap, &rollout, &loss).unwrap();
        let base = total_loss(&outcomes, &loss).unwrap().total;
        let descended = (2..=8).any(|k| {
            let alpha = 10f64.powi(-k);
            let mut m = model.clone();
            for (p, g) in m.params_mut().into_iter().zip(&grads) {
                p.axpy(-alpha, g);
            }
            batch_loss(&m, &xs, &data.labels, &lap, &rollout, &loss).unwrap().total < base
        });
        assert!(descended);
    }

    #[test]
    fn corrupted_gradient_is_caught_by_group() {
        let cfg = GradCheckConfig {
            seeds: 1,
            ..GradCheckConfig::default()
        };
        let hook = |name: &str, g: &mut Mat| {
            if name == "mass.w2" {
                g.data_mut()[0] += 1.0;
            }
        };
        let report = gradcheck(&cfg, Some(&hook)).unwrap();
        assert_eq!(report.failing(), vec!["mass"]);
        let groups: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
        assert_eq!(groups, ["head_q", "head_n", "head_rho", "head_l", "mass", "classifier"]);
    }

    #[test]
    fn train_rejects_single_class_and_zero_epochs_is_init() {
        let grid = PatchGrid::new(2, 2);
        let x = FeatureGrid::new(grid, Mat::filled(4, 3, 0.5)).unwrap();
        let single = Dataset::new(grid, vec![x.clone(), x.clone()], vec![0, 0]).unwrap();
        assert!(matches!(train(&single, None, &TrainConfig::default()), Err(TrainError::Config(_))));

        let (_, data, _, _) = toy();
        let cfg = TrainConfig {
            epochs: 0,
            d_phy: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let out = train(&data, None, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, PotentialModel::init(3, 8, PotentialConfig::default(), 11));
    }

    #[test]
    fn training_is_deterministic() {
        let (_, data, _, _) = toy();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            d_phy: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, None, &cfg).unwrap();
        let b = train(&data, None, &cfg).unwrap();
        assert_eq!(a, b);
        for h in &a.history {
            let l = h.loss;
            assert!((l.total - (l.cls + cfg.loss.lambda * (l.real_term + l.fake_term))).abs() < 1e-12);
        }
    }
}
