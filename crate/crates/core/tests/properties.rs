use proptest::prelude::*;

use haad::dynamics::{
    jacobian_det_probe, rollout, rollout_field, AnalyticPotential, Integrator, MassMode, PhysState,
    RolloutConfig, UnitMass,
};
use haad::graphlap::{build_knn_graph, default_laplacian, laplacian, PatchGrid};
use haad::numcore::{evaluate, finite_diff_grad, forward_backward, spmul, Tape, Var};
use haad::potential::{
    grad_v, mass_inv_column, project_photo, project_state, v_geo, v_photo, v_total, PhotoBasis,
};
use haad::synthbench::{gen_fake, gen_real, SynthConfig};
use haad::training::{total_loss, LossConfig, SampleOutcome};
use haad::trajstats::{action_score, dissipation, dissipation_from_h, TrajStats};
use haad::{FeatureGrid, Mat, PotentialConfig, PotentialModel, SparseSym};

fn mat(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Mat::from_vec(rows, cols, d).unwrap())
}

fn grid() -> impl Strategy<Value = PatchGrid> {
    (1usize..6, 1usize..6)
        .prop_filter("at least two patches", |(h, w)| h * w >= 2)
        .prop_map(|(h, w)| PatchGrid::new(h, w))
}

fn graph_instance() -> impl Strategy<Value = (SparseSym, Mat)> {
    (grid(), prop::sample::select(vec![4usize, 8]), 0.5f64..16.0, 1usize..4).prop_flat_map(|(g, k, sigma, d)| {
        let lap = laplacian(&build_knn_graph(g, k, sigma).unwrap());
        (Just(lap), mat(g.n(), d, -2.0, 2.0))
    })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    diff / scale
}

/// Smooth composition touching most tape operations.
fn composite<'g>(t: &mut Tape<'g>, v: &[Var], l: &'g SparseSym) -> Var {
    let (a, w, b, c) = (v[0], v[1], v[2], v[3]);
    let h = t.matmul(a, w);
    let h = t.add_row(h, b);
    let s = t.sigmoid(h);
    let sp = t.softplus(h);
    let prod = t.mul(s, sp);
    let lq = t.spmul(l, prod);
    let e = t.dot(prod, lq);
    let normed = t.row_normalize(h);
    let var = t.variance(normed);
    let sq = t.square(c);
    let mc = t.mul_col(h, sq);
    let m = t.mean_rows(mc);
    let ms = t.sum(m);
    let tr = t.transpose(h);
    let trm = t.mean(tr);
    let x = t.add(e, var);
    let x = t.add(x, ms);
    let x = t.sub(x, trm);
    t.scale(x, 0.5)
}

fn composite_inputs() -> impl Strategy<Value = Vec<Mat>> {
    (mat(4, 3, -1.0, 1.0), mat(3, 3, -1.0, 1.0), mat(1, 3, -0.5, 0.5), mat(4, 1, -1.0, 1.0))
        .prop_map(|(a, w, b, c)| vec![a, w, b, c])
}

fn flatten(ms: &[Mat]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().to_vec()).collect()
}

fn unflatten(flat: &[f64], like: &[Mat]) -> Vec<Mat> {
    let mut off = 0;
    like.iter()
        .map(|m| {
            let n = m.len();
            let out = Mat::from_vec(m.rows(), m.cols(), flat[off..off + n].to_vec()).unwrap();
            off += n;
            out
        })
        .collect()
}

fn path_laplacian(n: usize) -> SparseSym {
    laplacian(&build_knn_graph(PatchGrid::new(1, n), 4, 8.0).unwrap())
}

fn model_for(d_in: usize, d_phy: usize, seed: u64) -> PotentialModel {
    PotentialModel::init(d_in, d_phy, PotentialConfig::default(), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tape_gradient_matches_finite_differences(inputs in composite_inputs()) {
        let l = path_laplacian(4);
        let (_, grads) = forward_backward(&inputs, |t, v| composite(t, v, &l)).unwrap();
        let fd = finite_diff_grad(
            |flat| evaluate(&unflatten(flat, &inputs), |t, v| composite(t, v, &l)).unwrap(),
            &flatten(&inputs),
            1e-5,
        )
        .unwrap();
        prop_assert!(rel_err(&flatten(&grads), &fd) < 1e-6);
    }

    #[test]
    fn kinked_ops_match_finite_differences_away_from_kinks(
        a in mat(3, 2, -1.0, 1.0).prop_filter("away from 0", |m| m.data().iter().all(|v| v.abs() > 1e-2)),
        k in mat(3, 2, -1.0, 1.0),
    ) {
        let program = |t: &mut Tape<'_>, v: &[Var]| {
            let r = t.relu(v[0]);
            let b = t.abs(v[0]);
            let s = t.add(r, b);
            t.dot(s, v[1])
        };
        let inputs = vec![a.clone(), k.clone()];
        let (_, grads) = forward_backward(&inputs, program).unwrap();
        let fd = finite_diff_grad(
            |flat| evaluate(&unflatten(flat, &inputs), program).unwrap(),
            &flatten(&inputs),
            1e-5,
        )
        .unwrap();
        prop_assert!(rel_err(&flatten(&grads), &fd) < 1e-6);
    }

    #[test]
    fn recording_does_not_change_forward_values(inputs in composite_inputs()) {
        let l = path_laplacian(4);
        let (recorded, _) = forward_backward(&inputs, |t, v| composite(t, v, &l)).unwrap();
        let plain = evaluate(&inputs, |t, v| composite(t, v, &l)).unwrap();
        prop_assert_eq!(recorded.to_bits(), plain.to_bits());
    }

    #[test]
    fn spmul_matches_dense(
        diag in prop::collection::vec(0.0f64..4.0, 8),
        weights in prop::collection::vec(-2.0f64..2.0, 28),
        keep in prop::collection::vec(any::<bool>(), 28),
        q in mat(8, 3, -3.0, 3.0),
    ) {
        let mut upper = Vec::new();
        let mut idx = 0;
        for i in 0..8 {
            for j in i + 1..8 {
                if keep[idx] {
                    upper.push((i, j, weights[idx]));
                }
                idx += 1;
            }
        }
        let l = SparseSym::new(8, diag, upper).unwrap();
        let sparse = spmul(&l, &q).unwrap();
        let dense = l.to_dense().matmul(&q);
        prop_assert!(sparse.sub(&dense).max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_matrix_is_symmetric((l, _q) in graph_instance()) {
        let dense = l.to_dense();
        let n = l.dim();
        for i in 0..n {
            prop_assert!(dense.row(i).iter().sum::<f64>().abs() < 1e-12);
            for j in 0..n {
                prop_assert_eq!(dense.get(i, j).to_bits(), dense.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn laplacian_is_positive_semidefinite((l, q) in graph_instance()) {
        let quad = q.dot(&spmul(&l, &q).unwrap());
        prop_assert!(quad >= -1e-10);
    }

    #[test]
    fn constant_state_has_zero_energy((l, q) in graph_instance()) {
        let row = Mat::from_vec(1, q.cols(), q.row(0).to_vec()).unwrap();
        let constant = row.tile_rows(q.rows());
        prop_assert!(constant.dot(&spmul(&l, &constant).unwrap()).abs() < 1e-12);
        prop_assert!(v_geo(&l, &constant).unwrap().abs() < 1e-12);
    }

    #[test]
    fn edge_sum_identity(g in grid(), k in prop::sample::select(vec![4usize, 8]), sigma in 0.5f64..16.0, q in mat(25, 2, -2.0, 2.0)) {
        let graph = build_knn_graph(g, k, sigma).unwrap();
        let l = laplacian(&graph);
        let n = g.n();
        let q = Mat::from_vec(n, 2, q.data()[..2 * n].to_vec()).unwrap();
        let quad = q.dot(&spmul(&l, &q).unwrap()) / n as f64;
        let edges: f64 = graph
            .edges()
            .iter()
            .map(|&(i, j, w)| w * q.row(i).iter().zip(q.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        prop_assert!((quad - edges).abs() < 1e-10);
    }

    #[test]
    fn v_geo_is_nonnegative((l, q) in graph_instance()) {
        prop_assert!(v_geo(&l, &q).unwrap() >= -1e-12);
    }

    #[test]
    fn v_photo_is_permutation_invariant(
        raw_n in mat(6, 3, -1.0, 1.0),
        rho in mat(6, 1, 0.01, 0.99),
        light in mat(1, 3, -2.0, 2.0),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let n = Mat::from_vec(6, 3, (0..6).flat_map(|r| {
            let row = raw_n.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            row.iter().map(|v| v / norm).collect::<Vec<_>>()
        }).collect()).unwrap();
        let b = PhotoBasis { n: n.clone(), rho: rho.clone(), l: light.clone(), degenerate_normals: 0 };
        let pn = Mat::from_vec(6, 3, perm.iter().flat_map(|&i| n.row(i).to_vec()).collect()).unwrap();
        let pr = Mat::from_vec(6, 1, perm.iter().map(|&i| rho.get(i, 0)).collect()).unwrap();
        let pb = PhotoBasis { n: pn, rho: pr, l: light, degenerate_normals: 0 };
        let (a, c) = (v_photo(&b), v_photo(&pb));
        prop_assert!(a >= 0.0);
        prop_assert!((a - c).abs() < 1e-15);
    }

    #[test]
    fn mass_inverse_exceeds_epsilon(seed in any::<u64>(), q in mat(5, 4, -50.0, 50.0)) {
        let model = model_for(3, 4, seed);
        let m = mass_inv_column(&q, &model.mass);
        prop_assert!(m.data().iter().all(|&v| v > model.mass.epsilon));
    }

    #[test]
    fn symplectic_step_preserves_volume(
        dims in prop::sample::select(vec![(1usize, 1usize), (1, 2), (2, 2), (1, 4)]),
        eta in 0.01f64..0.5,
        inv_mass in 0.2f64..3.0,
        k in 0.1f64..4.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = dims;
        let mut draw = || Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let field = AnalyticPotential::Quadratic { k, center: draw() };
        let state = PhysState { q: draw(), p: draw() };
        let det = jacobian_det_probe(Integrator::SymplecticEuler, &field, &state, eta, inv_mass).unwrap();
        prop_assert!((det - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_slope_kinetic_growth_is_quadratic(g in mat(2, 3, -2.0, 2.0), eta in 0.01f64..0.5) {
        let cfg = RolloutConfig { steps: 10, eta, integrator: Integrator::SymplecticEuler, mass_mode: MassMode::Identity };
        let c2 = g.sum_squares();
        let traj = rollout_field(Mat::zeros(2, 3), &AnalyticPotential::LinearSlope { g }, &UnitMass, &cfg).unwrap();
        for (t, &kin) in traj.kinetic.iter().enumerate() {
            let expect = 0.5 * c2 * (t as f64 * eta).powi(2);
            prop_assert!((kin - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn constant_h_has_zero_dissipation(h in -5.0f64..5.0, len in 2usize..12, n in 1usize..64) {
        prop_assert_eq!(dissipation_from_h(&vec![h; len], n).value, 0.0);
    }

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), index in 0u64..1000) {
        let cfg = SynthConfig { h_p: 4, w_p: 4, d_in: 6, seed, ..SynthConfig::default() };
        prop_assert_eq!(gen_real(&cfg, index).unwrap(), gen_real(&cfg, index).unwrap());
        prop_assert_eq!(gen_fake(&cfg, index).unwrap(), gen_fake(&cfg, index).unwrap());
    }

    #[test]
    fn breakdown_identity(
        s in prop::collection::vec(0.0f64..3.0, 1..20),
        lambda in 0.0f64..4.0,
        gamma in 0.1f64..3.0,
        labels_seed in any::<u64>(),
    ) {
        let batch: Vec<SampleOutcome> = s
            .iter()
            .enumerate()
            .map(|(i, &v)| SampleOutcome {
                stats: TrajStats { s: v, d: v * 0.1 },
                prob: 0.3 + 0.02 * i as f64,
                label: ((labels_seed >> (i % 64)) & 1) as u8,
            })
            .collect();
        let b = total_loss(&batch, &LossConfig { lambda, gamma }).unwrap();
        prop_assert_eq!(b.total, b.cls + lambda * (b.real_term + b.fake_term));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grad_v_matches_finite_differences(
        (l, q) in graph_instance(),
        lambda_geo in 0.0f64..3.0,
        lambda_photo in 0.0f64..3.0,
    ) {
        let cfg = PotentialConfig { lambda_geo, lambda_photo };
        let basis = PhotoBasis {
            n: Mat::from_rows(&[&[0.0, 0.0, 1.0]]).unwrap().tile_rows(q.rows()),
            rho: Mat::filled(q.rows(), 1, 0.5),
            l: Mat::from_rows(&[&[0.1, 0.2, 0.9]]).unwrap(),
            degenerate_normals: 0,
        };
        let analytic = grad_v(&l, &q, &cfg).unwrap();
        let fd = finite_diff_grad(
            |flat| v_total(&l, &Mat::from_vec(q.rows(), q.cols(), flat.to_vec()).unwrap(), &basis, &cfg).unwrap(),
            q.data(),
            1e-5,
        )
        .unwrap();
        prop_assert!(rel_err(analytic.data(), &fd) < 1e-6);
    }
}

fn small_sample(seed: u64) -> (FeatureGrid, PotentialModel, SparseSym) {
    let cfg = SynthConfig { h_p: 3, w_p: 3, d_in: 5, seed, ..SynthConfig::default() };
    let x = if seed % 2 == 0 { gen_real(&cfg, 0).unwrap() } else { gen_fake(&cfg, 0).unwrap() };
    let lap = default_laplacian(cfg.grid()).unwrap();
    (x, model_for(5, 6, seed), lap)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn v_total_is_replication_invariant(seed in any::<u64>(), k in 2usize..4) {
        let (x, model, lap) = small_sample(seed);
        let v = |x: &FeatureGrid, l: &SparseSym| {
            v_total(l, &project_state(x, &model.heads).unwrap(), &project_photo(x, &model.heads).unwrap(), &model.potential).unwrap()
        };
        let (v1, vk) = (v(&x, &lap), v(&x.replicate(k), &lap.block_repeat(k)));
        prop_assert!((v1 - vk).abs() <= 1e-12 * v1.abs().max(1.0));
    }

    #[test]
    fn rest_at_equilibrium_stays_at_rest(seed in any::<u64>(), integrator in prop::sample::select(Integrator::ALL.to_vec())) {
        let (x, mut model, lap) = small_sample(seed);
        model.heads.wq = Mat::zeros(model.heads.wq.rows(), model.heads.wq.cols());
        model.heads.bq = Mat::zeros(1, model.heads.bq.cols());
        let cfg = RolloutConfig { integrator, ..RolloutConfig::default() };
        let q0 = project_state(&x, &model.heads).unwrap();
        prop_assert!(grad_v(&lap, &q0, &model.potential).unwrap().max_abs() < 1e-12);
        let traj = rollout(&x, &model, &lap, &cfg).unwrap();
        let first = &traj.states[0];
        for s in &traj.states {
            prop_assert_eq!(s, first);
        }
    }

    #[test]
    fn zero_geometric_weight_gives_zero_dissipation(seed in any::<u64>()) {
        let (x, mut model, lap) = small_sample(seed);
        model.potential.lambda_geo = 0.0;
        let traj = rollout(&x, &model, &lap, &RolloutConfig::default()).unwrap();
        prop_assert_eq!(dissipation(&traj, x.n()).value, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// S and D pick up the replication factor through the per-patch
    /// normalisation and the N-scaled force, so this does not hold.
    #[test]
    #[ignore = "known deviation: S and D change under k-fold replication"]
    fn action_and_dissipation_are_replication_invariant(seed in any::<u64>(), k in 2usize..4) {
        let (x, model, lap) = small_sample(seed);
        let cfg = RolloutConfig::default();
        let t1 = rollout(&x, &model, &lap, &cfg).unwrap();
        let xk = x.replicate(k);
        let tk = rollout(&xk, &model, &lap.block_repeat(k), &cfg).unwrap();
        let (s1, sk) = (action_score(&t1, x.n()), action_score(&tk, xk.n()));
        let (d1, dk) = (dissipation(&t1, x.n()).value, dissipation(&tk, xk.n()).value);
        prop_assert!((s1 - sk).abs() <= 1e-12 * s1.abs().max(1.0));
        prop_assert!((d1 - dk).abs() <= 1e-12 * d1.abs().max(1.0));
    }
}
