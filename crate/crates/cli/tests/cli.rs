use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haad::{GridShape, Mat, PatchGrid, PotentialConfig, PotentialModel};
use haad_cli::checkpoint::Checkpoint;
use haad_cli::featfile::{self, FeatureFile};
use tempfile::TempDir;

fn haad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn haad")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

fn small_files(dir: &Path) {
    ok(haad(
        dir,
        &["gen", "--n", "48", "--seed", "3", "--out", "tr.haad", "--val-out", "va.haad", "--n-val", "24"],
    ));
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

fn metric(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(key).filter(|r| r.starts_with(' ')))
        .unwrap_or_else(|| panic!("no `{key}` in\n{out}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn gen_writes_requested_header() {
    let dir = TempDir::new().unwrap();
    ok(haad(dir.path(), &["gen", "--grid", "8x8", "--din", "32", "--n", "600", "--seed", "7"]));
    let bytes = fs::read(dir.path().join("features.haad")).unwrap();
    assert_eq!(&bytes[..8], b"HAADFT01");
    let words: Vec<u32> = (0..4)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()))
        .collect();
    assert_eq!(words, vec![8, 8, 32, 600]);
}

#[test]
fn gen_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(haad(dir.path(), &["gen", "--n", "40", "--seed", "5", "--out", "a.haad"]));
    ok(haad(dir.path(), &["gen", "--n", "40", "--seed", "5", "--out", "b.haad"]));
    assert_eq!(fs::read(dir.path().join("a.haad")).unwrap(), fs::read(dir.path().join("b.haad")).unwrap());
}

#[test]
fn gen_rejects_zero_samples() {
    let dir = TempDir::new().unwrap();
    let o = haad(dir.path(), &["gen", "--n", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--n"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(haad(dir.path(), &["gen", "--bogus", "1"]).status.code(), Some(2));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), "# experiment\nn = 10\ngrid = 4x4\nout = cfg.haad\n").unwrap();
    ok(haad(dir.path(), &["gen", "--config", "run.cfg", "--n", "6"]));
    let f = featfile::read(&dir.path().join("cfg.haad")).unwrap();
    assert_eq!(f.len(), 6);
    assert_eq!((f.shape.h_p, f.shape.w_p), (4, 4));

    fs::write(dir.path().join("bad.cfg"), "n 10\n").unwrap();
    assert_eq!(haad(dir.path(), &["gen", "--config", "bad.cfg"]).status.code(), Some(2));
    assert_eq!(haad(dir.path(), &["gen", "--config", "missing.cfg"]).status.code(), Some(3));
}

#[test]
fn zero_epochs_keep_seeded_initialisation() {
    let dir = TempDir::new().unwrap();
    small_files(dir.path());
    ok(haad(dir.path(), &["train", "--data", "tr.haad", "--epochs", "0", "--seed", "9", "--d-phy", "6"]));
    let model = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap().to_model().unwrap();
    assert_eq!(model, PotentialModel::init(32, 6, PotentialConfig::default(), 9));
}

#[test]
fn zero_lambda_history_keeps_breakdown_identity() {
    let dir = TempDir::new().unwrap();
    small_files(dir.path());
    ok(haad(
        dir.path(),
        &["train", "--data", "tr.haad", "--epochs", "2", "--lambda", "0", "--d-phy", "8"],
    ));
    let h = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let (total, cls, phy) = (csv_column(&h, "total"), csv_column(&h, "cls"), csv_column(&h, "phy"));
    assert_eq!(total.len(), 2);
    for i in 0..2 {
        assert!(phy[i] > 0.0);
        assert!((total[i] - (cls[i] + 0.0 * phy[i])).abs() <= 1e-12, "{h}");
    }
}

#[test]
fn train_requires_both_classes() {
    let dir = TempDir::new().unwrap();
    let grid = PatchGrid::new(2, 2);
    let x = haad::FeatureGrid::new(grid, Mat::zeros(4, 3)).unwrap();
    let f = FeatureFile::new(GridShape { h_p: 2, w_p: 2, d_in: 3 }, vec![0, 0], vec![x.clone(), x]).unwrap();
    featfile::write(&dir.path().join("one.haad"), &f).unwrap();
    let o = haad(dir.path(), &["train", "--data", "one.haad"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("both real"), "{}", stderr(&o));
}

#[test]
fn default_run_converges_and_train_set_is_not_worse() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(haad(p, &["gen", "--n", "400", "--out", "tr.haad", "--val-out", "va.haad", "--n-val", "200"]));
    ok(haad(p, &["train", "--data", "tr.haad", "--val", "va.haad"]));
    let h = fs::read_to_string(p.join("history.csv")).unwrap();
    let last = *csv_column(&h, "auc").last().unwrap();
    assert!(last >= 0.95, "last validation AUC {last}");

    let val = stdout(&ok(haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--out-dir", "v"])));
    let tr = stdout(&ok(haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "tr.haad", "--out-dir", "t"])));
    let (va, ta) = (metric(&val, "auc"), metric(&tr, "auc"));
    assert!(ta >= va - 0.05, "train {ta} vs val {va}");
}

#[test]
fn eval_is_deterministic_and_writes_csvs() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "1", "--d-phy", "8"]));
    let a = ok(haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--out-dir", "a"]));
    let b = ok(haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--out-dir", "b"]));
    for key in ["auc", "acc", "median_s_real", "median_s_fake", "median_d_real", "median_d_fake"] {
        metric(&stdout(&a), key);
    }
    assert_eq!(stdout(&a).replace("to a", ""), stdout(&b).replace("to b", ""));
    for name in ["scores.csv", "histogram.csv", "trajectory_real.csv", "trajectory_fake.csv"] {
        assert_eq!(
            fs::read(p.join("a").join(name)).unwrap(),
            fs::read(p.join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unlabeled_eval_suppresses_metrics() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "0", "--d-phy", "8"]));
    let mut f = featfile::read(&p.join("va.haad")).unwrap();
    f.labels = vec![255; f.len()];
    featfile::write(&p.join("unl.haad"), &f).unwrap();
    let o = ok(haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "unl.haad", "--out-dir", "u"]));
    assert!(!stdout(&o).contains("auc"), "{}", stdout(&o));
    let scores = fs::read_to_string(p.join("u/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), f.len() + 1);
    assert!(!p.join("u/histogram.csv").exists());
}

#[test]
fn eval_shape_mismatch_names_both_shapes() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "0", "--d-phy", "8"]));
    ok(haad(p, &["gen", "--grid", "4x4", "--din", "16", "--n", "4", "--out", "small.haad"]));
    let o = haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", "small.haad"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("8x8x32") && e.contains("4x4x16"), "{e}");
}

#[test]
fn rollout_exports_steps_from_rest() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "1", "--d-phy", "8"]));
    let o = ok(haad(p, &["rollout", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--index", "5"]));
    let csv = stdout(&o);
    assert!(csv.starts_with("step,H,T_kin,V,q_norm,p_norm\n"));
    assert_eq!(csv.lines().count(), 1 + 5);
    assert_eq!(csv_column(&csv, "p_norm")[0], 0.0);

    let o = haad(p, &["rollout", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--index", "24"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of range"));
}

#[test]
fn zero_geometric_weight_gives_constant_energy() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "0", "--lambda-geo", "0", "--d-phy", "8"]));
    ok(haad(p, &["rollout", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--out", "r.csv"]));
    let h = csv_column(&fs::read_to_string(p.join("r.csv")).unwrap(), "H");
    assert_eq!(h.len(), 5);
    assert!(h.iter().all(|&v| v == h[0]), "{h:?}");
}

fn det_dev(out: &str, integrator: &str) -> f64 {
    let line = out
        .lines()
        .find(|l| l.trim_start().starts_with(integrator) && l.contains("|det-1|"))
        .unwrap();
    line.split("|det-1| = ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap()
}

fn evals_column(out: &str) -> Vec<(String, usize)> {
    let mut lines = out.lines().skip_while(|l| !l.contains("grad_evals/roll")).skip(1);
    (0..3)
        .map(|_| {
            let mut w = lines.next().unwrap().split_whitespace();
            (w.next().unwrap().to_string(), w.next().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn diagnose_reports_volume_evals_and_ratio() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "1", "--d-phy", "8", "--steps", "3"]));
    let o = ok(haad(
        p,
        &["diagnose", "--checkpoint", "checkpoint.json", "--data", "va.haad", "--probes", "30", "--repeats", "1"],
    ));
    let out = stdout(&o);
    assert!(det_dev(&out, "symplectic_euler") < 1e-8, "{out}");
    assert!(det_dev(&out, "euler ") > 1e-3, "{out}");
    let evals = evals_column(&out);
    assert_eq!(
        evals,
        vec![("euler".into(), 3), ("symplectic_euler".into(), 3), ("rk4".into(), 12)]
    );
    let t0 = out.lines().find(|l| l.trim_start().starts_with("t=0")).unwrap();
    assert_eq!(t0.split_whitespace().nth(1), Some("0"), "{out}");
    let slice = fs::read_to_string(p.join("landscape.csv")).unwrap();
    assert!(slice.starts_with("a,b,V\n"));
    assert_eq!(slice.lines().count(), 1 + 21 * 21);
}

#[test]
fn analytic_diagnose_needs_no_files() {
    let dir = TempDir::new().unwrap();
    let out = stdout(&ok(haad(dir.path(), &["diagnose", "--analytic", "--probes", "10"])));
    assert!(det_dev(&out, "symplectic_euler") < 1e-8);
    let evals = evals_column(&out);
    assert_eq!(evals.iter().map(|e| e.1).collect::<Vec<_>>(), vec![4, 4, 16]);
    assert!(dir.path().join("landscape.csv").exists());
    assert_eq!(haad(dir.path(), &["diagnose"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_lists_every_group() {
    let dir = TempDir::new().unwrap();
    let out = stdout(&ok(haad(dir.path(), &["gradcheck", "--seeds", "3"])));
    for g in ["head_q", "head_n", "head_rho", "head_l", "mass", "classifier"] {
        let line = out.lines().find(|l| l.trim_start().starts_with(g)).unwrap_or_else(|| panic!("{g}"));
        assert!(line.ends_with("PASS"), "{line}");
    }
}

#[test]
fn corrupted_gradient_fails_naming_group() {
    let dir = TempDir::new().unwrap();
    let o = haad(dir.path(), &["gradcheck", "--seeds", "2", "--corrupt", "head_rho"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("head_rho"));
    assert!(!stderr(&o).contains("head_q"));
}

fn corrupt(dir: &Path, name: &str, f: impl Fn(&mut Vec<u8>)) -> PathBuf {
    let mut bytes = fs::read(dir.join("va.haad")).unwrap();
    f(&mut bytes);
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn bad_feature_files_get_distinct_messages() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "0", "--d-phy", "8"]));
    corrupt(p, "magic.haad", |b| b[0] = b'X');
    corrupt(p, "short.haad", |b| b.truncate(b.len() - 3));
    corrupt(p, "nan.haad", |b| {
        let at = 24 + 24 + 8;
        b[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    });
    let mut msgs = Vec::new();
    for f in ["magic.haad", "short.haad", "nan.haad", "absent.haad"] {
        let o = haad(p, &["eval", "--checkpoint", "checkpoint.json", "--data", f]);
        assert_eq!(o.status.code(), Some(3), "{f}");
        msgs.push(stderr(&o));
    }
    assert!(msgs[0].contains("magic"));
    assert!(msgs[1].contains("truncated"));
    assert!(msgs[2].contains("non-finite"));
    assert!(msgs[3].contains("absent.haad"));
}

#[test]
fn checkpoint_file_roundtrips_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    small_files(p);
    ok(haad(p, &["train", "--data", "tr.haad", "--epochs", "1", "--d-phy", "8"]));
    let text = fs::read_to_string(p.join("checkpoint.json")).unwrap();
    let c = Checkpoint::from_json(&text).unwrap();
    assert_eq!(c.to_json().unwrap(), text);
}
