//! Synthetic real/fake feature grids, detection metrics and the desk-scale
//! experiments (benchmark run, solver comparison, parameter sweeps).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, rollout_field, AnalyticPotential, Integrator, RolloutConfig, UnitMass};
use crate::feature::FeatureGrid;
use crate::graphlap::{default_laplacian, PatchGrid};
use crate::numcore::Mat;
use crate::potential::PotentialModel;
use crate::training::{score_dataset, train, Dataset, EpochLog, SampleOutcome, TrainConfig, TrainError};
use crate::trajstats::{histogram_csv, median};

/// Box-filter passes applied to real fields.
pub const SMOOTH_PASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub h_p: usize,
    pub w_p: usize,
    pub d_in: usize,
    /// Box-filter radius in patches.
    pub smooth_len: usize,
    /// Fraction of patches covered by the spliced rectangle.
    pub artifact_frac: f64,
    /// Amplitude of the spliced noise.
    pub artifact_gain: f64,
    /// Fraction of feature channels the splice disrupts (the leading ones).
    pub artifact_channels: f64,
    /// Upper bound of the per-sample white-noise level added to the channels
    /// the splice leaves alone.
    pub noise_floor: f64,
    /// Overall scale applied to every generated grid.
    pub amplitude: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Replace every fake by an independent real draw.
    pub null_control: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            h_p: 8,
            w_p: 8,
            d_in: 32,
            smooth_len: 1,
            artifact_frac: 0.15,
            artifact_gain: 1.0,
            artifact_channels: 0.5,
            noise_floor: 0.8,
            amplitude: 0.6,
            n_train: 400,
            n_val: 200,
            seed: 7,
            null_control: false,
        }
    }
}

impl SynthConfig {
    pub fn grid(&self) -> PatchGrid {
        PatchGrid::new(self.h_p, self.w_p)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.h_p == 0 || self.w_p == 0 || self.h_p * self.w_p < 2 {
            return Err(BenchError::Config("grid needs at least two patches".into()));
        }
        if self.d_in == 0 {
            return Err(BenchError::Config("feature width must be positive".into()));
        }
        if self.smooth_len < 1 {
            return Err(BenchError::Config("smooth_len must be at least 1".into()));
        }
        if !(self.artifact_frac > 0.0 && self.artifact_frac <= 1.0) {
            return Err(BenchError::Config(format!(
                "artifact_frac must lie in (0, 1], got {}",
                self.artifact_frac
            )));
        }
        if !(self.artifact_gain >= 0.0) || !self.artifact_gain.is_finite() {
            return Err(BenchError::Config("artifact_gain must be finite and ≥ 0".into()));
        }
        if !(self.artifact_channels > 0.0 && self.artifact_channels <= 1.0) {
            return Err(BenchError::Config(format!(
                "artifact_channels must lie in (0, 1], got {}",
                self.artifact_channels
            )));
        }
        if !(self.noise_floor >= 0.0) || !self.noise_floor.is_finite() {
            return Err(BenchError::Config("noise_floor must be finite and ≥ 0".into()));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(BenchError::Config("amplitude must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Number of leading channels the splice disrupts.
    pub fn artifact_channel_count(&self) -> usize {
        ((self.artifact_channels * self.d_in as f64).ceil() as usize).clamp(1, self.d_in)
    }

    /// Rectangle `(rows, cols)` covering about `artifact_frac` of the grid.
    pub fn rect_size(&self) -> Result<(usize, usize), BenchError> {
        let side = self.artifact_frac.sqrt();
        let rows = ((side * self.h_p as f64).ceil() as usize).max(1);
        let cols = ((side * self.w_p as f64).ceil() as usize).max(1);
        if rows > self.h_p || cols > self.w_p {
            return Err(BenchError::Config("artifact region larger than grid".into()));
        }
        Ok((rows, cols))
    }
}

fn sample_rng(cfg: &SynthConfig, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(stream));
    rng
}

fn box_filter(grid: PatchGrid, x: &Mat, radius: usize) -> Mat {
    let (h, w) = (grid.h_p, grid.w_p);
    let d = x.cols();
    let mut out = Mat::zeros(x.rows(), d);
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            let count = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            let dst = r * w + c;
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let src = x.row(rr * w + cc);
                    for (o, v) in out.row_mut(dst).iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            for o in out.row_mut(dst) {
                *o /= count;
            }
        }
    }
    out
}

fn standardize_channels(x: &mut Mat) {
    let (n, d) = x.shape();
    for c in 0..d {
        let mean = (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for r in 0..n {
            let v = x.get(r, c) - mean;
            x.set(r, c, if sd > 0.0 { v / sd } else { 0.0 });
        }
    }
}

fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Mat::from_vec(rows, cols, data).expect("shape")
}

/// Smoothed field before the per-sample noise floor.
fn smooth_field(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Mat {
    let grid = cfg.grid();
    let mut x = normal_mat(rng, grid.n(), cfg.d_in);
    for _ in 0..SMOOTH_PASSES {
        x = box_filter(grid, &x, cfg.smooth_len);
    }
    standardize_channels(&mut x);
    x
}

/// Smooth "real" grid: box-filtered Gaussian noise, standardised per channel,
/// plus white noise of a per-sample level drawn from `[0, noise_floor)` on the
/// channels outside the artifact set.
pub fn gen_real(cfg: &SynthConfig, index: u64) -> Result<FeatureGrid, BenchError> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg, index, 0);
    let mut x = smooth_field(cfg, &mut rng);
    if cfg.noise_floor > 0.0 {
        let level = rng.random_range(0.0..cfg.noise_floor);
        let first = cfg.artifact_channel_count();
        for r in 0..x.rows() {
            for v in &mut x.row_mut(r)[first..] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += level * z;
            }
        }
    }
    if cfg.amplitude != 1.0 {
        x = x.scale(cfg.amplitude);
    }
    Ok(FeatureGrid::new(cfg.grid(), x).expect("finite by construction"))
}

/// Location of the spliced rectangle for sample `index`: `(row0, col0, rows, cols)`.
pub fn artifact_rect(cfg: &SynthConfig, index: u64) -> Result<(usize, usize, usize, usize), BenchError> {
    cfg.validate()?;
    let (rows, cols) = cfg.rect_size()?;
    let mut rng = sample_rng(cfg, index, 1);
    let r0 = rng.random_range(0..=cfg.h_p - rows);
    let c0 = rng.random_range(0..=cfg.w_p - cols);
    Ok((r0, c0, rows, cols))
}

/// A [`gen_real`] draw whose rectangle is overwritten, on the artifact
/// channels, by unsmoothed noise scaled by `artifact_gain`.
pub fn gen_fake(cfg: &SynthConfig, index: u64) -> Result<FeatureGrid, BenchError> {
    let base = gen_real(cfg, index)?;
    let (r0, c0, rows, cols) = artifact_rect(cfg, index)?;
    let mut rng = sample_rng(cfg, index, 2);
    let mut x = base.features().clone();
    let k = cfg.artifact_channel_count();
    for r in r0..r0 + rows {
        for c in c0..c0 + cols {
            for v in &mut x.row_mut(r * cfg.w_p + c)[..k] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = cfg.amplitude * cfg.artifact_gain * z;
            }
        }
    }
    Ok(FeatureGrid::new(cfg.grid(), x).expect("finite by construction"))
}

/// `count` samples starting at global index `start`, alternating real/fake.
/// Under `null_control` the fake slots hold independent real draws.
pub fn gen_split(cfg: &SynthConfig, start: u64, count: usize) -> Result<Dataset, BenchError> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count as u64 {
        let index = start + k;
        let label = (index % 2) as u8;
        let x = if label == 1 && !cfg.null_control {
            gen_fake(cfg, index)?
        } else {
            gen_real(cfg, index)?
        };
        samples.push(x);
        labels.push(label);
    }
    Ok(Dataset::new(cfg.grid(), samples, labels)?)
}

/// Training and validation splits; validation indices follow training ones.
pub fn gen_splits(cfg: &SynthConfig) -> Result<(Dataset, Dataset), BenchError> {
    let train = gen_split(cfg, 0, cfg.n_train)?;
    let val = gen_split(cfg, cfg.n_train as u64, cfg.n_val)?;
    Ok((train, val))
}

/// Exact pairwise AUC with label 1 as the positive class; ties count ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, BenchError> {
    if scores.len() != labels.len() {
        return Err(BenchError::Metric("scores and labels differ in length".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(BenchError::Metric("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Fraction of correct decisions at threshold 0.5.
pub fn accuracy(outcomes: &[SampleOutcome]) -> f64 {
    let labeled: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.label <= 1).collect();
    if labeled.is_empty() {
        return 0.0;
    }
    let correct = labeled.iter().filter(|o| (o.prob >= 0.5) == (o.label == 1)).count();
    correct as f64 / labeled.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub auc: f64,
    pub acc: f64,
    /// AUC of the action statistic alone.
    pub s_auc: f64,
    pub median_s_real: f64,
    pub median_s_fake: f64,
    pub median_d_real: f64,
    pub median_d_fake: f64,
    pub runtime_secs: f64,
}

impl BenchReport {
    /// Metrics from scored, fully labeled outcomes.
    pub fn from_outcomes(outcomes: &[SampleOutcome], runtime_secs: f64) -> Result<Self, BenchError> {
        let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
        let s: Vec<f64> = outcomes.iter().map(|o| o.stats.s).collect();
        let labels: Vec<u8> = outcomes.iter().map(|o| o.label).collect();
        let class = |y: u8, f: fn(&SampleOutcome) -> f64| -> Vec<f64> {
            outcomes.iter().filter(|o| o.label == y).map(f).collect()
        };
        let (sr, sf) = (class(0, |o| o.stats.s), class(1, |o| o.stats.s));
        let (dr, df) = (class(0, |o| o.stats.d), class(1, |o| o.stats.d));
        if sr.is_empty() || sf.is_empty() {
            return Err(BenchError::Metric("report needs both classes".into()));
        }
        Ok(BenchReport {
            auc: auc(&probs, &labels)?,
            acc: accuracy(outcomes),
            s_auc: auc(&s, &labels)?,
            median_s_real: median(&sr),
            median_s_fake: median(&sf),
            median_d_real: median(&dr),
            median_d_fake: median(&df),
            runtime_secs,
        })
    }

    /// Report as `key,value` CSV; `runtime_secs` last.
    pub fn to_csv(&self) -> String {
        format!(
            "key,value\nauc,{}\nacc,{}\ns_auc,{}\nmedian_s_real,{}\nmedian_s_fake,{}\nmedian_d_real,{}\nmedian_d_fake,{}\nruntime_secs,{}\n",
            self.auc,
            self.acc,
            self.s_auc,
            self.median_s_real,
            self.median_s_fake,
            self.median_d_real,
            self.median_d_fake,
            self.runtime_secs
        )
    }
}

/// Everything produced by one benchmark run.
#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub model: PotentialModel,
    pub history: Vec<EpochLog>,
    pub val_outcomes: Vec<SampleOutcome>,
    pub histogram_csv: String,
    /// Trajectory CSV of the first real and first fake validation sample.
    pub trajectory_real_csv: String,
    pub trajectory_fake_csv: String,
}

/// Generates the splits, trains and evaluates on validation.
pub fn run_benchmark(cfg: &SynthConfig, train_cfg: &TrainConfig) -> Result<BenchRun, BenchError> {
    let start = Instant::now();
    let (train_set, val) = gen_splits(cfg)?;
    let outcome = train(&train_set, Some(&val), train_cfg)?;
    let lap = default_laplacian(cfg.grid()).map_err(TrainError::from)?;
    let val_outcomes = score_dataset(&val, &outcome.model, &lap, &train_cfg.rollout)?;
    let s: Vec<f64> = val_outcomes.iter().map(|o| o.stats.s).collect();
    let histogram = histogram_csv(&s, &val.labels);
    let first = |y: u8| -> Result<String, BenchError> {
        let i = val.labels.iter().position(|&l| l == y).expect("both classes present");
        let traj = dynamics::rollout(&val.samples[i], &outcome.model, &lap, &train_cfg.rollout)
            .map_err(TrainError::from)?;
        Ok(traj.to_csv())
    };
    let trajectory_real_csv = first(0)?;
    let trajectory_fake_csv = first(1)?;
    let report = BenchReport::from_outcomes(&val_outcomes, start.elapsed().as_secs_f64())?;
    Ok(BenchRun {
        report,
        model: outcome.model,
        history: outcome.history,
        val_outcomes,
        histogram_csv: histogram,
        trajectory_real_csv,
        trajectory_fake_csv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverRow {
    pub integrator: Integrator,
    pub auc: f64,
    pub grad_evals: usize,
    pub wall_secs: f64,
    /// `max_t |H_t − H_0|` on the frozen oscillator.
    pub max_drift: f64,
}

/// Steps of the frozen harmonic oscillator used for the drift column.
pub const DRIFT_STEPS: usize = 1000;
/// Step size of the drift oscillator.
pub const DRIFT_ETA: f64 = 0.1;

/// Max energy drift of `½q² + ½p²` from `q = 1, p = 0`.
pub fn oscillator_drift(integrator: Integrator, steps: usize, eta: f64) -> Result<f64, BenchError> {
    let field = AnalyticPotential::Quadratic {
        k: 1.0,
        center: Mat::zeros(1, 1),
    };
    let cfg = RolloutConfig {
        steps,
        eta,
        integrator,
        mass_mode: dynamics::MassMode::Identity,
    };
    let traj = rollout_field(Mat::scalar(1.0), &field, &UnitMass, &cfg).map_err(TrainError::from)?;
    let h0 = traj.hamiltonian[0];
    Ok(traj.hamiltonian.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max))
}

/// Evaluates `model` on `val` under each integrator. Wall time is the best of
/// `repeats` timed passes over the validation rollouts.
pub fn solver_comparison(
    model: &PotentialModel,
    val: &Dataset,
    base: &RolloutConfig,
    repeats: usize,
) -> Result<Vec<SolverRow>, BenchError> {
    let lap = default_laplacian(val.grid).map_err(TrainError::from)?;
    let mut rows = Vec::new();
    for integrator in Integrator::ALL {
        let cfg = RolloutConfig { integrator, ..*base };
        let outcomes = score_dataset(val, model, &lap, &cfg)?;
        let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
        let auc = auc(&probs, &val.labels)?;
        let mut grad_evals = 0;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let mut evals = 0;
            for x in &val.samples {
                evals += dynamics::rollout(x, model, &lap, &cfg).map_err(TrainError::from)?.grad_evals;
            }
            best = best.min(t0.elapsed().as_secs_f64());
            grad_evals = evals;
        }
        rows.push(SolverRow {
            integrator,
            auc,
            grad_evals,
            wall_secs: best,
            max_drift: oscillator_drift(integrator, DRIFT_STEPS, DRIFT_ETA)?,
        });
    }
    Ok(rows)
}

pub fn solver_csv(rows: &[SolverRow]) -> String {
    let mut s = String::from("integrator,auc,grad_evals,wall_secs,max_drift\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.integrator, r.auc, r.grad_evals, r.wall_secs, r.max_drift
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Steps,
    Eta,
    Lambda,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Steps => "steps",
            SweepParam::Eta => "eta",
            SweepParam::Lambda => "lambda",
        })
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steps" | "T" | "t" => Ok(SweepParam::Steps),
            "eta" => Ok(SweepParam::Eta),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(format!("unknown sweep parameter `{other}` (steps | eta | lambda)")),
        }
    }
}

/// Applies one sweep value to a training configuration.
pub fn apply_sweep(param: SweepParam, value: f64, cfg: &TrainConfig) -> Result<TrainConfig, BenchError> {
    let mut c = *cfg;
    match param {
        SweepParam::Steps => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(BenchError::Config(format!("steps must be a positive integer, got {value}")));
            }
            c.rollout.steps = value as usize;
        }
        SweepParam::Eta => c.rollout.eta = value,
        SweepParam::Lambda => c.loss.lambda = value,
    }
    Ok(c)
}

/// Retrains once per value; returns `(value, validation AUC)` rows.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    synth: &SynthConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Config("sweep needs at least one value".into()));
    }
    let (train_set, val) = gen_splits(synth)?;
    let lap = default_laplacian(synth.grid()).map_err(TrainError::from)?;
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let cfg = apply_sweep(param, v, train_cfg)?;
        let model = train(&train_set, None, &cfg)?.model;
        let outcomes = score_dataset(&val, &model, &lap, &cfg.rollout)?;
        let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
        out.push((v, auc(&probs, &val.labels)?));
    }
    Ok(out)
}

pub fn sweep_csv(param: SweepParam, rows: &[(f64, f64)]) -> String {
    let mut s = format!("{param},auc\n");
    for (v, a) in rows {
        s.push_str(&format!("{v},{a}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajstats::roughness_map;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 20,
            n_val: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.3, 0.2, 0.4], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        assert_eq!(gen_real(&cfg, 3).unwrap(), gen_real(&cfg, 3).unwrap());
        assert_eq!(gen_fake(&cfg, 4).unwrap(), gen_fake(&cfg, 4).unwrap());
        assert_ne!(gen_real(&cfg, 3).unwrap(), gen_real(&cfg, 5).unwrap());
    }

    #[test]
    fn heavy_smoothing_flattens_real_fields() {
        let cfg = SynthConfig {
            smooth_len: 1,
            noise_floor: 0.0,
            ..small()
        };
        let grid = cfg.grid();
        let mut rng = sample_rng(&cfg, 0, 0);
        let mut x = normal_mat(&mut rng, grid.n(), cfg.d_in);
        let lap = default_laplacian(grid).unwrap();
        let before = roughness_map(&FeatureGrid::new(grid, x.clone()).unwrap(), &lap).unwrap();
        for _ in 0..300 {
            x = box_filter(grid, &x, cfg.smooth_len);
        }
        let after = roughness_map(&FeatureGrid::new(grid, x).unwrap(), &lap).unwrap();
        let (b, a): (f64, f64) = (before.iter().sum(), after.iter().sum());
        assert!(a < 1e-3 * b, "{a} vs {b}");
    }

    #[test]
    fn fakes_are_rougher_and_localised() {
        let cfg = SynthConfig::default();
        let lap = default_laplacian(cfg.grid()).unwrap();
        let mean_rough = |x: &FeatureGrid| roughness_map(x, &lap).unwrap().iter().sum::<f64>() / x.n() as f64;
        let (mut real, mut fake, mut inside) = (0.0, 0.0, 0);
        for i in 0..100u64 {
            real += mean_rough(&gen_real(&cfg, i).unwrap());
            let f = gen_fake(&cfg, i).unwrap();
            fake += mean_rough(&f);
            let r = roughness_map(&f, &lap).unwrap();
            let arg = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            let (r0, c0, h, w) = artifact_rect(&cfg, i).unwrap();
            let (y, x) = cfg.grid().coord(arg);
            if (r0..r0 + h).contains(&y) && (c0..c0 + w).contains(&x) {
                inside += 1;
            }
        }
        assert!(real < fake);
        assert!(inside >= 90, "argmax inside rectangle in {inside}/100");
    }

    #[test]
    fn full_artifact_is_pure_noise() {
        let cfg = SynthConfig {
            artifact_frac: 1.0,
            ..small()
        };
        assert_eq!(cfg.rect_size().unwrap(), (8, 8));
        assert_eq!(artifact_rect(&cfg, 1).unwrap(), (0, 0, 8, 8));
        let bad = SynthConfig {
            artifact_frac: 1.5,
            ..small()
        };
        assert!(gen_fake(&bad, 0).is_err());
    }

    #[test]
    fn splits_alternate_labels() {
        let (tr, va) = gen_splits(&small()).unwrap();
        assert_eq!((tr.len(), va.len()), (20, 10));
        assert_eq!(&tr.labels[..4], &[0, 1, 0, 1]);
        assert!(tr.has_both_classes() && va.has_both_classes());
    }

    #[test]
    fn drift_ordering_on_oscillator() {
        let euler = oscillator_drift(Integrator::Euler, 1000, 0.1).unwrap();
        let sympl = oscillator_drift(Integrator::SymplecticEuler, 1000, 0.1).unwrap();
        assert!(euler > 10.0 * sympl);
    }

    #[test]
    fn sweep_rejects_empty_and_fractional_steps() {
        let cfg = TrainConfig::default();
        assert!(sweep(SweepParam::Steps, &[], &small(), &cfg).is_err());
        assert!(apply_sweep(SweepParam::Steps, 1.5, &cfg).is_err());
        assert_eq!(apply_sweep(SweepParam::Steps, 1.0, &cfg).unwrap().rollout.steps, 1);
        assert_eq!(sweep_csv(SweepParam::Eta, &[(0.4, 0.9)]), "eta,auc\n0.4,0.9\n");
    }
}
