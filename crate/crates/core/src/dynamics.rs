//! Phase-space integrators, rollouts from rest and the stability diagnostics
//! built on them (Jacobian determinant probe, omitted variable-mass term,
//! potential landscape slices).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::FeatureGrid;
use crate::numcore::{Mat, NumError, SparseSym, Tape, Var};
use crate::potential::{
    self, force_scale, grad_v, mass_inv_column, project_photo, project_state, v_geo, v_photo,
    MassNet, ParamVars, PotentialConfig, PotentialError, PotentialModel,
};

/// Default rollout length.
pub const DEFAULT_STEPS: usize = 4;
/// Default step size.
pub const DEFAULT_ETA: f64 = 0.4;
/// Central-difference step of the Jacobian probe.
pub const JACOBIAN_FD_STEP: f64 = 1e-6;
/// Largest phase-space dimension accepted by the Jacobian probe.
pub const JACOBIAN_MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynError {
    #[error("non-finite force at step {step}")]
    NonFiniteForce { step: usize },
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    #[error("probe fault: {0}")]
    Probe(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Position/momentum pair, both N×D.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysState {
    pub q: Mat,
    pub p: Mat,
}

impl PhysState {
    /// State at rest: `p = 0`.
    pub fn at_rest(q: Mat) -> Self {
        let p = Mat::zeros(q.rows(), q.cols());
        PhysState { q, p }
    }

    pub fn kinetic(&self) -> f64 {
        kinetic(&self.p)
    }
}

#[inline]
fn kinetic(p: &Mat) -> f64 {
    p.sum_squares() * 0.5
}

/// `½·Σ p² + V`.
pub fn hamiltonian(s: &PhysState, v_val: f64) -> f64 {
    s.kinetic() + v_val
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    SymplecticEuler,
    Euler,
    Rk4,
}

impl Integrator {
    pub const ALL: [Integrator; 3] = [Integrator::Euler, Integrator::SymplecticEuler, Integrator::Rk4];

    /// Force evaluations per step.
    pub fn evals_per_step(self) -> usize {
        match self {
            Integrator::Rk4 => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::SymplecticEuler => "symplectic_euler",
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        })
    }
}

impl FromStr for Integrator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symplectic_euler" | "symplectic" => Ok(Integrator::SymplecticEuler),
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!("unknown integrator `{other}` (symplectic_euler | euler | rk4)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMode {
    Learned,
    Identity,
}

impl fmt::Display for MassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MassMode::Learned => "learned",
            MassMode::Identity => "identity",
        })
    }
}

impl FromStr for MassMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" => Ok(MassMode::Learned),
            "identity" => Ok(MassMode::Identity),
            other => Err(format!("unknown mass mode `{other}` (learned | identity)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub steps: usize,
    pub eta: f64,
    pub integrator: Integrator,
    pub mass_mode: MassMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            steps: DEFAULT_STEPS,
            eta: DEFAULT_ETA,
            integrator: Integrator::SymplecticEuler,
            mass_mode: MassMode::Learned,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), DynError> {
        if self.steps == 0 {
            return Err(DynError::Config("rollout needs at least one step".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(DynError::Config(format!("step size must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Recorded rollout: `steps + 1` states with their energies.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<PhysState>,
    pub hamiltonian: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    pub grad_evals: usize,
}

impl Trajectory {
    /// Number of integration steps `T`.
    pub fn steps(&self) -> usize {
        self.hamiltonian.len() - 1
    }

    /// Per-step CSV: `step,H,T_kin,V,q_norm,p_norm`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,H,T_kin,V,q_norm,p_norm\n");
        for (t, st) in self.states.iter().enumerate() {
            s.push_str(&format!(
                "{t},{},{},{},{},{}\n",
                self.hamiltonian[t],
                self.kinetic[t],
                self.potential[t],
                st.q.frobenius_norm(),
                st.p.frobenius_norm()
            ));
        }
        s
    }
}

/// A potential that can be evaluated and differentiated in `q`.
pub trait ForceField {
    fn potential(&self, q: &Mat) -> Result<f64, DynError>;
    fn gradient(&self, q: &Mat) -> Result<Mat, DynError>;
}

/// Per-patch inverse mass as an N×1 column.
pub trait InverseMass {
    fn inv_mass(&self, q: &Mat) -> Mat;
}

/// `M⁻¹ = I`.
pub struct UnitMass;

impl InverseMass for UnitMass {
    fn inv_mass(&self, q: &Mat) -> Mat {
        Mat::filled(q.rows(), 1, 1.0)
    }
}

/// State-independent scalar inverse mass.
pub struct ConstantMass(pub f64);

impl InverseMass for ConstantMass {
    fn inv_mass(&self, q: &Mat) -> Mat {
        Mat::filled(q.rows(), 1, self.0)
    }
}

impl InverseMass for MassNet {
    fn inv_mass(&self, q: &Mat) -> Mat {
        mass_inv_column(q, self)
    }
}

/// Closed-form test potentials.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticPotential {
    /// `V(q) = Σ g ⊙ q`, constant gradient `g`.
    LinearSlope { g: Mat },
    /// `V(q) = ½·k·‖q − center‖²`.
    Quadratic { k: f64, center: Mat },
}

impl ForceField for AnalyticPotential {
    fn potential(&self, q: &Mat) -> Result<f64, DynError> {
        Ok(match self {
            AnalyticPotential::LinearSlope { g } => g.dot(q),
            AnalyticPotential::Quadratic { k, center } => 0.5 * k * q.sub(center).sum_squares(),
        })
    }

    fn gradient(&self, q: &Mat) -> Result<Mat, DynError> {
        Ok(match self {
            AnalyticPotential::LinearSlope { g } => g.clone(),
            AnalyticPotential::Quadratic { k, center } => q.sub(center).scale(*k),
        })
    }
}

/// The learned potential of one sample. The photometric value is fixed by the
/// features, so only the geometric term depends on `q`.
pub struct LearnedField<'a> {
    pub laplacian: &'a SparseSym,
    pub config: PotentialConfig,
    pub photo: f64,
}

impl<'a> LearnedField<'a> {
    pub fn for_sample(x: &FeatureGrid, model: &PotentialModel, laplacian: &'a SparseSym) -> Result<Self, DynError> {
        model.potential.validate()?;
        let photo = v_photo(&project_photo(x, &model.heads)?);
        Ok(LearnedField {
            laplacian,
            config: model.potential,
            photo,
        })
    }
}

impl ForceField for LearnedField<'_> {
    fn potential(&self, q: &Mat) -> Result<f64, DynError> {
        Ok(self.config.combine(v_geo(self.laplacian, q)?, self.photo))
    }

    fn gradient(&self, q: &Mat) -> Result<Mat, DynError> {
        Ok(grad_v(self.laplacian, q, &self.config)?)
    }
}

fn force(field: &impl ForceField, q: &Mat, step: usize) -> Result<Mat, DynError> {
    let f = field.gradient(q)?.scale(-1.0);
    if !f.is_finite() {
        return Err(DynError::NonFiniteForce { step });
    }
    Ok(f)
}

/// Semi-implicit Euler: momentum first with `F = −∇V(q_t)`, then position
/// with the updated momentum. One force evaluation.
pub fn step_symplectic(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
) -> Result<PhysState, DynError> {
    symplectic_at(s, field, mass, eta, 0)
}

fn symplectic_at(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
    step: usize,
) -> Result<PhysState, DynError> {
    let f = force(field, &s.q, step)?;
    let p = s.p.add(&f.scale(eta));
    let m = mass.inv_mass(&s.q);
    let q = s.q.add(&p.mul_col(&m).scale(eta));
    Ok(PhysState { q, p })
}

/// Explicit Euler: both updates read the old state. One force evaluation.
pub fn step_euler(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
) -> Result<PhysState, DynError> {
    euler_at(s, field, mass, eta, 0)
}

fn euler_at(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
    step: usize,
) -> Result<PhysState, DynError> {
    let f = force(field, &s.q, step)?;
    let m = mass.inv_mass(&s.q);
    let q = s.q.add(&s.p.mul_col(&m).scale(eta));
    let p = s.p.add(&f.scale(eta));
    Ok(PhysState { q, p })
}

/// Classical RK4 on `q̇ = M⁻¹p, ṗ = −∇V` with `M⁻¹` frozen at the start of
/// the step. Four force evaluations.
pub fn step_rk4(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
) -> Result<PhysState, DynError> {
    rk4_at(s, field, mass, eta, 0)
}

fn rk4_at(
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
    step: usize,
) -> Result<PhysState, DynError> {
    let m = mass.inv_mass(&s.q);
    let half = 0.5 * eta;

    let k1q = s.p.mul_col(&m);
    let k1p = force(field, &s.q, step)?;
    let q2 = s.q.add(&k1q.scale(half));
    let p2 = s.p.add(&k1p.scale(half));
    let k2q = p2.mul_col(&m);
    let k2p = force(field, &q2, step)?;
    let q3 = s.q.add(&k2q.scale(half));
    let p3 = s.p.add(&k2p.scale(half));
    let k3q = p3.mul_col(&m);
    let k3p = force(field, &q3, step)?;
    let q4 = s.q.add(&k3q.scale(eta));
    let p4 = s.p.add(&k3p.scale(eta));
    let k4q = p4.mul_col(&m);
    let k4p = force(field, &q4, step)?;

    let sixth = eta / 6.0;
    let dq = k1q.add(&k2q.scale(2.0)).add(&k3q.scale(2.0)).add(&k4q);
    let dp = k1p.add(&k2p.scale(2.0)).add(&k3p.scale(2.0)).add(&k4p);
    Ok(PhysState {
        q: s.q.add(&dq.scale(sixth)),
        p: s.p.add(&dp.scale(sixth)),
    })
}

fn step_with(
    integrator: Integrator,
    s: &PhysState,
    field: &impl ForceField,
    mass: &impl InverseMass,
    eta: f64,
    step: usize,
) -> Result<PhysState, DynError> {
    match integrator {
        Integrator::SymplecticEuler => symplectic_at(s, field, mass, eta, step),
        Integrator::Euler => euler_at(s, field, mass, eta, step),
        Integrator::Rk4 => rk4_at(s, field, mass, eta, step),
    }
}

/// Rolls `q0` forward from rest under `field`, recording every state.
pub fn rollout_field(
    q0: Mat,
    field: &impl ForceField,
    mass: &impl InverseMass,
    cfg: &RolloutConfig,
) -> Result<Trajectory, DynError> {
    cfg.validate()?;
    let mut state = PhysState::at_rest(q0);
    let cap = cfg.steps + 1;
    let mut traj = Trajectory {
        states: Vec::with_capacity(cap),
        hamiltonian: Vec::with_capacity(cap),
        kinetic: Vec::with_capacity(cap),
        potential: Vec::with_capacity(cap),
        grad_evals: 0,
    };
    let record = |traj: &mut Trajectory, s: PhysState| -> Result<(), DynError> {
        let v = field.potential(&s.q)?;
        let k = s.kinetic();
        traj.kinetic.push(k);
        traj.potential.push(v);
        traj.hamiltonian.push(k + v);
        traj.states.push(s);
        Ok(())
    };
    record(&mut traj, state.clone())?;
    for t in 1..=cfg.steps {
        state = step_with(cfg.integrator, &state, field, mass, cfg.eta, t)?;
        traj.grad_evals += cfg.integrator.evals_per_step();
        record(&mut traj, state.clone())?;
    }
    Ok(traj)
}

/// Rollout of one sample under a learned model.
pub fn rollout(
    x: &FeatureGrid,
    model: &PotentialModel,
    laplacian: &SparseSym,
    cfg: &RolloutConfig,
) -> Result<Trajectory, DynError> {
    let q0 = project_state(x, &model.heads)?;
    let field = LearnedField::for_sample(x, model, laplacian)?;
    match cfg.mass_mode {
        MassMode::Learned => rollout_field(q0, &field, &model.mass, cfg),
        MassMode::Identity => rollout_field(q0, &field, &UnitMass, cfg),
    }
}

/// Determinant of the one-step map's Jacobian on `(q, p)`, assembled by
/// central differences with a constant inverse mass.
pub fn jacobian_det_probe(
    integrator: Integrator,
    field: &AnalyticPotential,
    state: &PhysState,
    eta: f64,
    inv_mass: f64,
) -> Result<f64, DynError> {
    let (rows, cols) = state.q.shape();
    let d = rows * cols;
    if 2 * d > JACOBIAN_MAX_DIM {
        return Err(DynError::Probe(format!(
            "phase dimension {} exceeds {JACOBIAN_MAX_DIM}",
            2 * d
        )));
    }
    let mass = ConstantMass(inv_mass);
    let map = |z: &[f64]| -> Result<Vec<f64>, DynError> {
        let s = PhysState {
            q: Mat::from_vec(rows, cols, z[..d].to_vec())?,
            p: Mat::from_vec(rows, cols, z[d..].to_vec())?,
        };
        let out = if eta == 0.0 {
            s
        } else {
            step_with(integrator, &s, field, &mass, eta, 0)?
        };
        let mut v = out.q.into_data();
        v.extend(out.p.into_data());
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DynError::Probe("non-finite image in difference stencil".into()));
        }
        Ok(v)
    };

    let mut z: Vec<f64> = state.q.data().to_vec();
    z.extend_from_slice(state.p.data());
    let n = 2 * d;
    let h = JACOBIAN_FD_STEP;
    let mut jac = Mat::zeros(n, n);
    for j in 0..n {
        let orig = z[j];
        z[j] = orig + h;
        let plus = map(&z)?;
        z[j] = orig - h;
        let minus = map(&z)?;
        z[j] = orig;
        for i in 0..n {
            jac.set(i, j, (plus[i] - minus[i]) / (2.0 * h));
        }
    }
    let det = determinant(&jac);
    if !det.is_finite() {
        return Err(DynError::Probe("non-finite determinant".into()));
    }
    Ok(det)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &Mat) -> f64 {
    assert_eq!(m.rows(), m.cols(), "determinant of non-square matrix");
    let n = m.rows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
            .expect("non-empty range");
        if a.get(pivot, col) == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, tmp);
            }
            det = -det;
        }
        let p = a.get(col, col);
        det *= p;
        for r in col + 1..n {
            let f = a.get(r, col) / p;
            if f != 0.0 {
                for c in col..n {
                    a.set(r, c, a.get(r, c) - f * a.get(col, c));
                }
            }
        }
    }
    det
}

/// Size of the variable-mass momentum term the integrator omits,
/// `‖½·∂(Σᵢ M⁻¹ᵢ(q)‖pᵢ‖²)/∂q‖`, relative to `‖∇V(q)‖`.
///
/// Returns exactly 0 when the numerator vanishes (`p = 0` or identity mass)
/// and `+∞` when `‖∇V‖ < 1e-300`.
pub fn omitted_term_ratio(
    s: &PhysState,
    model: &PotentialModel,
    laplacian: &SparseSym,
    cfg: &RolloutConfig,
) -> Result<f64, DynError> {
    let numerator = match cfg.mass_mode {
        MassMode::Identity => 0.0,
        MassMode::Learned if s.p.data().iter().all(|&v| v == 0.0) => 0.0,
        MassMode::Learned => {
            let p_sq = Mat::col_vector(
                &(0..s.p.rows())
                    .map(|r| s.p.row(r).iter().map(|v| v * v).sum())
                    .collect::<Vec<f64>>(),
            );
            let mut tape = Tape::new();
            let params = ParamVars::record(&mut tape, model);
            let q = tape.leaf(s.q.clone());
            let c = tape.leaf(p_sq);
            let m = potential::taped::mass_inv_column(&mut tape, &params, q);
            let e = tape.dot(m, c);
            let half = tape.scale(e, 0.5);
            let grads = tape.backward(half)?;
            grads.wrt(q, s.q.shape()).frobenius_norm()
        }
    };
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let gv = grad_v(laplacian, &s.q, &model.potential)?.frobenius_norm();
    if gv < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(numerator / gv)
}

/// Potential heights over a 2-D slice through `q0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSlice {
    pub u: Mat,
    pub v: Mat,
    /// `(a, b, V(q0 + a·u + b·v))`, row-major over `a` then `b`.
    pub points: Vec<(f64, f64, f64)>,
}

impl LandscapeSlice {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,V\n");
        for (a, b, v) in &self.points {
            s.push_str(&format!("{a},{b},{v}\n"));
        }
        s
    }
}

/// Two seeded orthonormal directions shaped like `shape` (Gram–Schmidt on
/// Gaussian draws).
pub fn orthonormal_pair(shape: (usize, usize), seed: u64) -> (Mat, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.0 * shape.1;
    loop {
        let a: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u = Mat::from_vec(shape.0, shape.1, a).expect("shape");
        let un = u.frobenius_norm();
        if un == 0.0 {
            continue;
        }
        let u = u.scale(1.0 / un);
        let mut v = Mat::from_vec(shape.0, shape.1, b).expect("shape");
        // two passes keep u·v at rounding level
        for _ in 0..2 {
            let proj = u.dot(&v);
            v.axpy(-proj, &u);
        }
        let vn = v.frobenius_norm();
        if vn == 0.0 {
            continue;
        }
        return (u, v.scale(1.0 / vn));
    }
}

/// Landscape slice for an arbitrary field.
pub fn landscape_slice_field(
    q0: &Mat,
    field: &impl ForceField,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeSlice, DynError> {
    if resolution < 2 {
        return Err(DynError::Config("landscape resolution must be at least 2".into()));
    }
    let (u, v) = orthonormal_pair(q0.shape(), seed);
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64;
    let mut points = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let a = coord(i);
        for j in 0..resolution {
            let b = coord(j);
            let mut q = q0.clone();
            q.axpy(a, &u);
            q.axpy(b, &v);
            points.push((a, b, field.potential(&q)?));
        }
    }
    Ok(LandscapeSlice { u, v, points })
}

/// Landscape slice of the learned potential around a sample's `q₀`.
pub fn landscape_slice(
    x: &FeatureGrid,
    model: &PotentialModel,
    laplacian: &SparseSym,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeSlice, DynError> {
    let q0 = project_state(x, &model.heads)?;
    let field = LearnedField::for_sample(x, model, laplacian)?;
    landscape_slice_field(&q0, &field, extent, resolution, seed)
}

/// Taped rollout of a learned model, recording `H_0 … H_T` on the tape.
pub mod taped {
    use super::*;
    use crate::potential::taped as pt;

    /// Per-step Hamiltonian nodes, index 0 is the rest state.
    pub struct TapedRollout {
        pub hamiltonian: Vec<Var>,
    }

    struct Ctx<'p> {
        params: &'p ParamVars,
        pot: PotentialConfig,
        force_scale: f64,
        mass_mode: MassMode,
        ones: Option<Var>,
    }

    fn neg_grad<'g>(t: &mut Tape<'g>, ctx: &Ctx<'_>, lq: Var) -> Var {
        let g = t.scale(lq, ctx.force_scale);
        t.scale(g, -1.0)
    }

    fn inv_mass<'g>(t: &mut Tape<'g>, ctx: &Ctx<'_>, q: Var) -> Var {
        match ctx.mass_mode {
            MassMode::Learned => pt::mass_inv_column(t, ctx.params, q),
            MassMode::Identity => ctx.ones.expect("identity mass column"),
        }
    }

    fn energy<'g>(t: &mut Tape<'g>, ctx: &Ctx<'_>, q: Var, p: Var, lq: Var, photo: Var) -> Var {
        let sq = t.square(p);
        let ss = t.sum(sq);
        let kin = t.scale(ss, 0.5);
        let geo = pt::dirichlet_from(t, q, lq);
        let geo = t.scale(geo, ctx.pot.lambda_geo);
        let ph = t.scale(photo, ctx.pot.lambda_photo);
        let v = t.add(geo, ph);
        t.add(kin, v)
    }

    /// Records the full rollout of features `x` (a leaf already on the tape).
    pub fn rollout<'g>(
        t: &mut Tape<'g>,
        params: &ParamVars,
        x: Var,
        laplacian: &'g SparseSym,
        pot: &PotentialConfig,
        cfg: &RolloutConfig,
    ) -> TapedRollout {
        let n = t.value(x).rows();
        let ones = match cfg.mass_mode {
            MassMode::Identity => Some(t.leaf(Mat::filled(n, 1, 1.0))),
            MassMode::Learned => None,
        };
        let ctx = Ctx {
            params,
            pot: *pot,
            force_scale: force_scale(pot, n),
            mass_mode: cfg.mass_mode,
            ones,
        };
        let eta = cfg.eta;
        let half = 0.5 * eta;

        let mut q = pt::project_state(t, params, x);
        let photo = pt::v_photo(t, params, x);
        let shape = t.value(q).shape();
        let mut p = t.leaf(Mat::zeros(shape.0, shape.1));
        let mut lq = t.spmul(laplacian, q);
        let mut hamiltonian = Vec::with_capacity(cfg.steps + 1);
        hamiltonian.push(energy(t, &ctx, q, p, lq, photo));

        for _ in 0..cfg.steps {
            let (nq, np) = match cfg.integrator {
                Integrator::SymplecticEuler => {
                    let f = neg_grad(t, &ctx, lq);
                    let df = t.scale(f, eta);
                    let p1 = t.add(p, df);
                    let m = inv_mass(t, &ctx, q);
                    let pm = t.mul_col(p1, m);
                    let dq = t.scale(pm, eta);
                    (t.add(q, dq), p1)
                }
                Integrator::Euler => {
                    let f = neg_grad(t, &ctx, lq);
                    let m = inv_mass(t, &ctx, q);
                    let pm = t.mul_col(p, m);
                    let dq = t.scale(pm, eta);
                    let q1 = t.add(q, dq);
                    let df = t.scale(f, eta);
                    (q1, t.add(p, df))
                }
                Integrator::Rk4 => {
                    let m = inv_mass(t, &ctx, q);
                    let k1q = t.mul_col(p, m);
                    let k1p = neg_grad(t, &ctx, lq);
                    let a = t.scale(k1q, half);
                    let q2 = t.add(q, a);
                    let b = t.scale(k1p, half);
                    let p2 = t.add(p, b);
                    let k2q = t.mul_col(p2, m);
                    let lq2 = t.spmul(laplacian, q2);
                    let k2p = neg_grad(t, &ctx, lq2);
                    let a = t.scale(k2q, half);
                    let q3 = t.add(q, a);
                    let b = t.scale(k2p, half);
                    let p3 = t.add(p, b);
                    let k3q = t.mul_col(p3, m);
                    let lq3 = t.spmul(laplacian, q3);
                    let k3p = neg_grad(t, &ctx, lq3);
                    let a = t.scale(k3q, eta);
                    let q4 = t.add(q, a);
                    let b = t.scale(k3p, eta);
                    let p4 = t.add(p, b);
                    let k4q = t.mul_col(p4, m);
                    let lq4 = t.spmul(laplacian, q4);
                    let k4p = neg_grad(t, &ctx, lq4);

                    let sixth = eta / 6.0;
                    let comb = |t: &mut Tape<'g>, k1: Var, k2: Var, k3: Var, k4: Var| {
                        let k2s = t.scale(k2, 2.0);
                        let s = t.add(k1, k2s);
                        let k3s = t.scale(k3, 2.0);
                        let s = t.add(s, k3s);
                        let s = t.add(s, k4);
                        t.scale(s, sixth)
                    };
                    let dq = comb(t, k1q, k2q, k3q, k4q);
                    let dp = comb(t, k1p, k2p, k3p, k4p);
                    (t.add(q, dq), t.add(p, dp))
                }
            };
            q = nq;
            p = np;
            lq = t.spmul(laplacian, q);
            hamiltonian.push(energy(t, &ctx, q, p, lq, photo));
        }
        TapedRollout { hamiltonian }
    }
}
