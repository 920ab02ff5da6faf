use std::fs;
use std::io::Write;
use std::path::Path;

use haad::dynamics::{
    self, jacobian_det_probe, landscape_slice, landscape_slice_field, omitted_term_ratio, AnalyticPotential,
    Integrator, PhysState, RolloutConfig,
};
use haad::graphlap::default_laplacian;
use haad::potential::param_group;
use haad::synthbench::{
    gen_split, gen_splits, oscillator_drift, run_benchmark, solver_comparison, solver_csv, sweep, sweep_csv,
    BenchReport, SynthConfig, DRIFT_ETA, DRIFT_STEPS,
};
use haad::training::{
    gradcheck, history_csv, score_dataset, train, AdamConfig, Dataset, GradCheckConfig, LossConfig, SampleOutcome,
    TrainConfig, TrainError,
};
use haad::trajstats::{histogram_csv, median};
use haad::{GridShape, Mat, PotentialConfig, PotentialModel, SparseSym};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::*;
use crate::checkpoint::Checkpoint;
use crate::error::CliError;
use crate::featfile::{self, FeatureFile};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn shape_str(s: &GridShape) -> String {
    format!("{}x{}x{}", s.h_p, s.w_p, s.d_in)
}

fn check_shape(expected: &GridShape, file: &FeatureFile, path: &Path) -> Result<()> {
    if *expected != file.shape {
        return Err(CliError::Usage(format!(
            "shape mismatch: checkpoint expects {} (HxWxD), {} has {}",
            shape_str(expected),
            path.display(),
            shape_str(&file.shape)
        )));
    }
    Ok(())
}

fn laplacian_for(shape: &GridShape) -> Result<SparseSym> {
    Ok(default_laplacian(shape.patch_grid()).map_err(TrainError::from)?)
}

impl ModelArgs {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            loss: LossConfig {
                lambda: self.lambda,
                gamma: self.gamma,
            },
            rollout: RolloutConfig {
                steps: self.steps,
                eta: self.eta,
                integrator: self.integrator,
                mass_mode: self.mass_mode,
            },
            potential: PotentialConfig {
                lambda_geo: self.lambda_geo,
                lambda_photo: self.lambda_photo,
            },
            d_phy: self.d_phy,
            seed,
        }
    }
}

pub fn gen(a: &GenArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let cfg = a.synth.config(a.seed, a.n, a.n_val);
    let main = gen_split(&cfg, 0, a.n)?;
    let file = FeatureFile::from_dataset(&main).map_err(|e| CliError::Usage(e.to_string()))?;
    featfile::write(&a.out, &file)?;
    println!("wrote {} ({} samples, {})", a.out.display(), file.len(), shape_str(&file.shape));
    if let Some(val_out) = &a.val_out {
        if a.n_val == 0 {
            return Err(CliError::Usage("--n-val must be at least 1".into()));
        }
        let val = gen_split(&cfg, a.n as u64, a.n_val)?;
        let file = FeatureFile::from_dataset(&val).map_err(|e| CliError::Usage(e.to_string()))?;
        featfile::write(val_out, &file)?;
        println!("wrote {} ({} samples, {})", val_out.display(), file.len(), shape_str(&file.shape));
    }
    Ok(())
}

fn labeled_dataset(file: FeatureFile, path: &Path) -> Result<Dataset> {
    let data = file.into_dataset();
    if !data.has_both_classes() {
        return Err(CliError::Usage(format!(
            "{} needs both real (0) and fake (1) samples",
            path.display()
        )));
    }
    Ok(data)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let file = featfile::read(&a.data)?;
    let shape = file.shape;
    let data = labeled_dataset(file, &a.data)?;
    let val = match &a.val {
        Some(p) => {
            let f = featfile::read(p)?;
            if f.shape != shape {
                return Err(CliError::Usage(format!(
                    "shape mismatch: {} is {}, {} is {}",
                    a.data.display(),
                    shape_str(&shape),
                    p.display(),
                    shape_str(&f.shape)
                )));
            }
            Some(labeled_dataset(f, p)?)
        }
        None => None,
    };
    let cfg = a.model.train_config(a.seed);
    let outcome = train(&data, val.as_ref(), &cfg)?;
    let ckpt = Checkpoint::from_model(&outcome.model, shape, a.seed, cfg.rollout, cfg.loss);
    ckpt.save(&a.out)?;
    write_file(&a.history, history_csv(&outcome.history))?;
    match outcome.history.last() {
        Some(h) => println!(
            "epoch {}: loss {:.6} (cls {:.6}, phy {:.6}), auc {:.4}",
            h.epoch, h.loss.total, h.loss.cls, h.loss.phy, h.auc
        ),
        None => println!("0 epochs: checkpoint holds the seeded initialisation"),
    }
    println!("wrote {} and {}", a.out.display(), a.history.display());
    Ok(())
}

fn scores_csv(outcomes: &[SampleOutcome]) -> String {
    let mut s = String::from("index,label,S,D,prob\n");
    for (i, o) in outcomes.iter().enumerate() {
        s.push_str(&format!("{i},{},{},{},{}\n", o.label, o.stats.s, o.stats.d, o.prob));
    }
    s
}

fn print_report(r: &BenchReport) {
    println!("auc            {:.6}", r.auc);
    println!("acc            {:.6}", r.acc);
    println!("s_auc          {:.6}", r.s_auc);
    println!("median_s_real  {:.6}", r.median_s_real);
    println!("median_s_fake  {:.6}", r.median_s_fake);
    println!("median_d_real  {:.6}", r.median_d_real);
    println!("median_d_fake  {:.6}", r.median_d_fake);
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let file = featfile::read(&a.data)?;
    check_shape(&ckpt.shape, &file, &a.data)?;
    let labeled = file.is_labeled();
    let data = file.into_dataset();
    let lap = laplacian_for(&ckpt.shape)?;
    let outcomes = score_dataset(&data, &model, &lap, &ckpt.rollout)?;
    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("scores.csv"), scores_csv(&outcomes))?;
    if !labeled || !data.has_both_classes() {
        println!(
            "scored {} samples; metrics need both labeled classes and are suppressed",
            data.len()
        );
        println!("wrote {}", a.out_dir.join("scores.csv").display());
        return Ok(());
    }
    let report = BenchReport::from_outcomes(&outcomes, 0.0)?;
    print_report(&report);
    let s: Vec<f64> = outcomes.iter().map(|o| o.stats.s).collect();
    write_file(&a.out_dir.join("histogram.csv"), histogram_csv(&s, &data.labels))?;
    for (label, name) in [(0u8, "trajectory_real.csv"), (1, "trajectory_fake.csv")] {
        let i = data.labels.iter().position(|&y| y == label).expect("both classes present");
        let traj = dynamics::rollout(&data.samples[i], &model, &lap, &ckpt.rollout)?;
        write_file(&a.out_dir.join(name), traj.to_csv())?;
    }
    println!("wrote scores, histogram and trajectory CSVs to {}", a.out_dir.display());
    Ok(())
}

pub fn rollout_cmd(a: &RolloutArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let file = featfile::read(&a.data)?;
    check_shape(&ckpt.shape, &file, &a.data)?;
    if a.index >= file.len() {
        return Err(CliError::Usage(format!(
            "index {} out of range: {} holds {} samples",
            a.index,
            a.data.display(),
            file.len()
        )));
    }
    let mut cfg = ckpt.rollout;
    if let Some(t) = a.steps {
        cfg.steps = t;
    }
    let lap = laplacian_for(&ckpt.shape)?;
    let traj = dynamics::rollout(&file.samples[a.index], &model, &lap, &cfg)?;
    let csv = traj.to_csv();
    match &a.out {
        Some(p) => write_file(p, csv)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

/// Random closed-form potential and state with `2·rows·cols ≤ 8`.
fn random_probe(rng: &mut ChaCha8Rng) -> (AnalyticPotential, PhysState, f64, f64) {
    let rows = rng.random_range(1..=2usize);
    let cols = rng.random_range(1..=2usize);
    let draw = |rng: &mut ChaCha8Rng| {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .expect("sized")
    };
    let field = if rng.random_bool(0.5) {
        AnalyticPotential::Quadratic {
            k: rng.random_range(0.1..3.0),
            center: draw(rng),
        }
    } else {
        AnalyticPotential::LinearSlope { g: draw(rng) }
    };
    let state = PhysState { q: draw(rng), p: draw(rng) };
    let eta = rng.random_range(0.01..0.5);
    let inv_mass = rng.random_range(0.2..3.0);
    (field, state, eta, inv_mass)
}

fn probe_section(probes: usize, seed: u64) {
    println!("jacobian determinant probes ({probes} per integrator)");
    for integrator in Integrator::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ok = 0usize;
        let mut max_dev = 0.0f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..probes {
            let (field, state, eta, inv_mass) = random_probe(&mut rng);
            match jacobian_det_probe(integrator, &field, &state, eta, inv_mass) {
                Ok(det) => {
                    ok += 1;
                    max_dev = max_dev.max((det - 1.0).abs());
                    lo = lo.min(det);
                    hi = hi.max(det);
                }
                Err(e) => println!("  {integrator} probe {k}: failed: {e}"),
            }
        }
        if ok == 0 {
            println!("  {:<17} no successful probes", integrator.to_string());
        } else {
            println!(
                "  {:<17} {ok}/{probes} ok, max |det-1| = {max_dev:.3e}, det in [{lo:.6}, {hi:.6}]",
                integrator.to_string()
            );
        }
    }
}

fn solver_section(model: &PotentialModel, val: &Dataset, rollout: &RolloutConfig, repeats: usize) {
    println!("solver comparison (T = {}, eta = {})", rollout.steps, rollout.eta);
    match solver_comparison(model, val, rollout, repeats) {
        Ok(rows) => {
            println!("  {:<17} {:>16} {:>8} {:>12} {:>12}", "integrator", "grad_evals/roll", "auc", "wall_s", "max_drift");
            let n = val.len().max(1);
            for r in &rows {
                println!(
                    "  {:<17} {:>16} {:>8.4} {:>12.4e} {:>12.4e}",
                    r.integrator.to_string(),
                    r.grad_evals / n,
                    r.auc,
                    r.wall_secs,
                    r.max_drift
                );
            }
        }
        Err(e) => println!("  solver comparison failed: {e}"),
    }
}

fn analytic_solver_section(rollout: &RolloutConfig) {
    println!("solver comparison on the unit oscillator (T = {})", rollout.steps);
    println!("  {:<17} {:>16} {:>12}", "integrator", "grad_evals/roll", "max_drift");
    let field = AnalyticPotential::Quadratic {
        k: 1.0,
        center: Mat::zeros(1, 1),
    };
    for integrator in Integrator::ALL {
        let cfg = RolloutConfig {
            integrator,
            mass_mode: dynamics::MassMode::Identity,
            ..*rollout
        };
        let evals = dynamics::rollout_field(Mat::scalar(1.0), &field, &dynamics::UnitMass, &cfg).map(|t| t.grad_evals);
        let drift = oscillator_drift(integrator, DRIFT_STEPS, DRIFT_ETA);
        match (evals, drift) {
            (Ok(ev), Ok(d)) => println!("  {:<17} {:>16} {:>12.4e}", integrator.to_string(), ev, d),
            (Err(e), _) => println!("  {integrator}: failed: {e}"),
            (_, Err(e)) => println!("  {integrator}: failed: {e}"),
        }
    }
}

/// Largest validation subset used for the omitted-term sweep.
const OMITTED_SAMPLES: usize = 64;

fn omitted_section(model: &PotentialModel, val: &Dataset, lap: &SparseSym, rollout: &RolloutConfig) {
    println!("omitted momentum-term ratio over rollouts");
    let mut at_zero = 0.0f64;
    let mut later = Vec::new();
    let mut failures = 0usize;
    for x in val.samples.iter().take(OMITTED_SAMPLES) {
        let traj = match dynamics::rollout(x, model, lap, rollout) {
            Ok(t) => t,
            Err(e) => {
                failures += 1;
                println!("  rollout failed: {e}");
                continue;
            }
        };
        for (t, s) in traj.states.iter().enumerate() {
            match omitted_term_ratio(s, model, lap, rollout) {
                Ok(r) if t == 0 => at_zero = at_zero.max(r),
                Ok(r) => later.push(r),
                Err(e) => {
                    failures += 1;
                    println!("  step {t}: failed: {e}");
                }
            }
        }
    }
    println!("  t=0      {at_zero}");
    if later.is_empty() {
        println!("  t>=1     no values");
    } else {
        let max = later.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("  t>=1     median {:.6e}, max {:.6e} over {} states", median(&later), max, later.len());
    }
    if failures > 0 {
        println!("  {failures} evaluations failed");
    }
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    if a.checkpoint.is_none() && !a.analytic {
        return Err(CliError::Usage("diagnose needs --checkpoint or --analytic".into()));
    }
    probe_section(a.probes, a.seed);

    if a.analytic && a.checkpoint.is_none() {
        let rollout = RolloutConfig::default();
        analytic_solver_section(&rollout);
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let center = Mat::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized");
        let field = AnalyticPotential::Quadratic {
            k: 1.0,
            center: center.clone(),
        };
        return write_slice(landscape_slice_field(&center, &field, a.slice_extent, a.slice_points, a.seed), &a.slice_out);
    }

    let ckpt = Checkpoint::load(a.checkpoint.as_ref().expect("checked above"))?;
    let model = ckpt.to_model()?;
    let val = match &a.data {
        Some(p) => {
            let f = featfile::read(p)?;
            check_shape(&ckpt.shape, &f, p)?;
            f.into_dataset()
        }
        None => {
            let cfg = SynthConfig {
                h_p: ckpt.shape.h_p,
                w_p: ckpt.shape.w_p,
                d_in: ckpt.shape.d_in,
                seed: a.seed,
                ..SynthConfig::default()
            };
            gen_split(&cfg, 0, OMITTED_SAMPLES)?
        }
    };
    if val.is_empty() {
        println!("no samples to diagnose");
        return Ok(());
    }
    let lap = laplacian_for(&ckpt.shape)?;
    solver_section(&model, &val, &ckpt.rollout, a.repeats);
    omitted_section(&model, &val, &lap, &ckpt.rollout);
    write_slice(
        landscape_slice(&val.samples[0], &model, &lap, a.slice_extent, a.slice_points, a.seed),
        &a.slice_out,
    )
}

fn write_slice(slice: std::result::Result<dynamics::LandscapeSlice, dynamics::DynError>, path: &Path) -> Result<()> {
    match slice {
        Ok(s) => {
            write_file(path, s.to_csv())?;
            println!("landscape slice: {} points written to {}", s.points.len(), path.display());
        }
        Err(e) => println!("landscape slice failed: {e}"),
    }
    Ok(())
}

/// Names of the trainable parameter groups.
fn group_names() -> Vec<String> {
    let model = PotentialModel::init(1, 1, PotentialConfig::default(), 0);
    let mut out: Vec<String> = Vec::new();
    for (name, _) in model.params() {
        let g = param_group(name).to_string();
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

pub fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if !(a.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", a.tol)));
    }
    if let Some(g) = &a.corrupt {
        let groups = group_names();
        if !groups.contains(g) {
            return Err(CliError::Usage(format!("unknown group `{g}` (one of {})", groups.join(", "))));
        }
    }
    let cfg = GradCheckConfig {
        seeds: a.seeds,
        tolerance: a.tol,
        ..GradCheckConfig::default()
    };
    let target = a.corrupt.clone();
    let hook = move |name: &str, g: &mut Mat| {
        if Some(param_group(name)) == target.as_deref() {
            for v in g.data_mut() {
                *v += 1e-3 * (1.0 + v.abs());
            }
        }
    };
    let report = gradcheck(&cfg, a.corrupt.as_ref().map(|_| &hook as &dyn Fn(&str, &mut Mat)))?;
    println!("gradient check over {} seeds, tolerance {:e}", a.seeds, a.tol);
    for g in &report.groups {
        println!(
            "  {:<11} max rel err {:.3e}  {}",
            g.group,
            g.max_rel_err,
            if g.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("all groups pass");
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed for: {}", report.failing().join(", "))))
    }
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let synth = a.synth.config(a.seed, a.n_train, a.n_val);
    let cfg = a.model.train_config(a.train_seed);
    let run = run_benchmark(&synth, &cfg)?;
    create_dir(&a.out_dir)?;
    let dir = &a.out_dir;
    write_file(&dir.join("report.csv"), run.report.to_csv())?;
    write_file(&dir.join("history.csv"), history_csv(&run.history))?;
    write_file(&dir.join("histogram.csv"), &run.histogram_csv)?;
    write_file(&dir.join("trajectory_real.csv"), &run.trajectory_real_csv)?;
    write_file(&dir.join("trajectory_fake.csv"), &run.trajectory_fake_csv)?;
    write_file(&dir.join("scores.csv"), scores_csv(&run.val_outcomes))?;
    let shape = GridShape {
        h_p: synth.h_p,
        w_p: synth.w_p,
        d_in: synth.d_in,
    };
    Checkpoint::from_model(&run.model, shape, a.train_seed, cfg.rollout, cfg.loss).save(&dir.join("checkpoint.json"))?;
    if a.solvers {
        let (_, val) = gen_splits(&synth)?;
        let rows = solver_comparison(&run.model, &val, &cfg.rollout, 3)?;
        write_file(&dir.join("solvers.csv"), solver_csv(&rows))?;
    }
    print_report(&run.report);
    println!("runtime_secs   {:.2}", run.report.runtime_secs);
    println!("wrote results to {}", dir.display());
    Ok(())
}

pub fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let synth = a.synth.config(a.seed, a.n_train, a.n_val);
    let cfg = a.model.train_config(a.train_seed);
    let rows = sweep(a.param, &a.values, &synth, &cfg)?;
    let csv = sweep_csv(a.param, &rows);
    match &a.out {
        Some(p) => {
            write_file(p, &csv)?;
            println!("wrote {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
