//! Learnable potential surface: state/photometric projection heads, the
//! geometric (Dirichlet) and photometric (shading variance) terms, the
//! analytic force and the inverse-mass network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::FeatureGrid;
use crate::numcore::{normalize_rows, relu, softplus, spmul, Mat, NumError, SparseSym, Tape, Var};
use crate::training::Classifier;

/// Latent state width.
pub const DEFAULT_D_PHY: usize = 64;
/// Hidden width of the inverse-mass MLP.
pub const MASS_HIDDEN: usize = 64;
/// Floor added after the Softplus of the inverse-mass MLP.
pub const MASS_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid potential configuration: {0}")]
    Config(String),
}

/// Weights of the two potential terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub lambda_geo: f64,
    pub lambda_photo: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            lambda_geo: 1.0,
            lambda_photo: 1.0,
        }
    }
}

impl PotentialConfig {
    pub fn validate(&self) -> Result<(), PotentialError> {
        for (name, v) in [("lambda_geo", self.lambda_geo), ("lambda_photo", self.lambda_photo)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PotentialError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    /// `λ_geo·v_geo + λ_photo·v_photo`.
    #[inline]
    pub fn combine(&self, v_geo: f64, v_photo: f64) -> f64 {
        self.lambda_geo * v_geo + self.lambda_photo * v_photo
    }
}

/// The four affine heads applied row-wise to patch features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    pub wq: Mat,
    pub bq: Mat,
    pub wn: Mat,
    pub bn: Mat,
    pub wr: Mat,
    pub br: Mat,
    pub wl: Mat,
    pub bl: Mat,
}

impl ProjectionHeads {
    pub fn zeros(d_in: usize, d_phy: usize) -> Self {
        ProjectionHeads {
            wq: Mat::zeros(d_in, d_phy),
            bq: Mat::zeros(1, d_phy),
            wn: Mat::zeros(d_in, 3),
            bn: Mat::zeros(1, 3),
            wr: Mat::zeros(d_in, 1),
            br: Mat::zeros(1, 1),
            wl: Mat::zeros(d_in, 3),
            bl: Mat::zeros(1, 3),
        }
    }

    pub fn init(d_in: usize, d_phy: usize, rng: &mut impl Rng) -> Self {
        ProjectionHeads {
            wq: uniform_fan_in(d_in, d_phy, rng),
            wn: uniform_fan_in(d_in, 3, rng),
            wr: uniform_fan_in(d_in, 1, rng),
            wl: uniform_fan_in(d_in, 3, rng),
            ..Self::zeros(d_in, d_phy)
        }
    }

    pub fn d_in(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_phy(&self) -> usize {
        self.wq.cols()
    }
}

/// Two-layer MLP producing a positive per-patch inverse mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassNet {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub epsilon: f64,
}

impl MassNet {
    pub fn zeros(d_phy: usize) -> Self {
        MassNet {
            w1: Mat::zeros(d_phy, MASS_HIDDEN),
            b1: Mat::zeros(1, MASS_HIDDEN),
            w2: Mat::zeros(MASS_HIDDEN, 1),
            b2: Mat::zeros(1, 1),
            epsilon: MASS_EPSILON,
        }
    }

    pub fn init(d_phy: usize, rng: &mut impl Rng) -> Self {
        MassNet {
            w1: uniform_fan_in(d_phy, MASS_HIDDEN, rng),
            w2: uniform_fan_in(MASS_HIDDEN, 1, rng),
            ..Self::zeros(d_phy)
        }
    }
}

/// Photometric decomposition of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotoBasis {
    /// N×3 unit normals.
    pub n: Mat,
    /// N×1 albedo in (0, 1).
    pub rho: Mat,
    /// 1×3 global light.
    pub l: Mat,
    /// Number of normal rows that were zero before normalisation.
    pub degenerate_normals: usize,
}

/// Every trainable parameter plus the fixed potential weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub heads: ProjectionHeads,
    pub mass: MassNet,
    pub classifier: Classifier,
    pub potential: PotentialConfig,
}

impl PotentialModel {
    /// Seeded initialisation: weights uniform in ±1/√fan_in, biases zero,
    /// classifier zero.
    pub fn init(d_in: usize, d_phy: usize, potential: PotentialConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = ProjectionHeads::init(d_in, d_phy, &mut rng);
        let mass = MassNet::init(d_phy, &mut rng);
        PotentialModel {
            heads,
            mass,
            classifier: Classifier::zeros(),
            potential,
        }
    }

    pub fn d_in(&self) -> usize {
        self.heads.d_in()
    }

    pub fn d_phy(&self) -> usize {
        self.heads.d_phy()
    }

    /// Parameters in a fixed order, named `group.field`.
    pub fn params(&self) -> Vec<(&'static str, &Mat)> {
        let h = &self.heads;
        let m = &self.mass;
        let c = &self.classifier;
        vec![
            ("head_q.w", &h.wq),
            ("head_q.b", &h.bq),
            ("head_n.w", &h.wn),
            ("head_n.b", &h.bn),
            ("head_rho.w", &h.wr),
            ("head_rho.b", &h.br),
            ("head_l.w", &h.wl),
            ("head_l.b", &h.bl),
            ("mass.w1", &m.w1),
            ("mass.b1", &m.b1),
            ("mass.w2", &m.w2),
            ("mass.b2", &m.b2),
            ("classifier.w", &c.w),
            ("classifier.b", &c.b),
        ]
    }

    /// Mutable view in the same order as [`PotentialModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let h = &mut self.heads;
        let m = &mut self.mass;
        let c = &mut self.classifier;
        vec![
            &mut h.wq, &mut h.bq, &mut h.wn, &mut h.bn, &mut h.wr, &mut h.br, &mut h.wl,
            &mut h.bl, &mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2, &mut c.w, &mut c.b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Parameter-group name of a `group.field` parameter name.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn uniform_fan_in(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Mat {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Mat::from_vec(fan_in, fan_out, data).expect("length matches")
}

fn check_d_in(x: &FeatureGrid, heads: &ProjectionHeads) -> Result<(), NumError> {
    if x.d_in() != heads.d_in() {
        return Err(NumError::Shape(format!(
            "features have {} channels, heads expect {}",
            x.d_in(),
            heads.d_in()
        )));
    }
    Ok(())
}

/// Latent position `q = x·W_q + b_q`.
pub fn project_state(x: &FeatureGrid, heads: &ProjectionHeads) -> Result<Mat, NumError> {
    check_d_in(x, heads)?;
    Ok(x.features().matmul(&heads.wq).add_row(&heads.bq))
}

/// Normals (row L2-normalised), albedo (sigmoid) and global light (patch mean).
pub fn project_photo(x: &FeatureGrid, heads: &ProjectionHeads) -> Result<PhotoBasis, NumError> {
    check_d_in(x, heads)?;
    let f = x.features();
    let (n, degenerate) = normalize_rows(&f.matmul(&heads.wn).add_row(&heads.bn));
    let rho = f.matmul(&heads.wr).add_row(&heads.br).map(crate::numcore::sigmoid);
    let l = f.matmul(&heads.wl).add_row(&heads.bl).mean_rows();
    Ok(PhotoBasis {
        n,
        rho,
        l,
        degenerate_normals: degenerate.into_iter().filter(|&d| d).count(),
    })
}

fn check_graph(l: &SparseSym, q: &Mat) -> Result<(), NumError> {
    if l.dim() != q.rows() || q.rows() == 0 {
        return Err(NumError::Shape(format!(
            "Laplacian of dimension {} paired with a state of {} rows",
            l.dim(),
            q.rows()
        )));
    }
    Ok(())
}

/// Dirichlet energy `(1/N)·tr(qᵀLq)`.
pub fn v_geo(l: &SparseSym, q: &Mat) -> Result<f64, NumError> {
    check_graph(l, q)?;
    let lq = spmul(l, q)?;
    Ok(dirichlet_from(q, &lq))
}

#[inline]
pub(crate) fn dirichlet_from(q: &Mat, lq: &Mat) -> f64 {
    q.dot(lq) * (1.0 / q.rows() as f64)
}

/// Per-patch shading `ρᵢ·ReLU(nᵢ·l)` as an N×1 column.
pub fn shading(b: &PhotoBasis) -> Mat {
    b.n.matmul(&b.l.transpose()).map(relu).hadamard(&b.rho)
}

/// Population variance of the shading field.
pub fn v_photo(b: &PhotoBasis) -> f64 {
    shading(b).variance()
}

/// `λ_geo·v_geo + λ_photo·v_photo`.
pub fn v_total(l: &SparseSym, q: &Mat, b: &PhotoBasis, cfg: &PotentialConfig) -> Result<f64, PotentialError> {
    cfg.validate()?;
    Ok(cfg.combine(v_geo(l, q)?, v_photo(b)))
}

/// `∇_q V = λ_geo·(2/N)·L·q`. The photometric term is projected from the
/// features rather than from `q`, so it contributes no force.
pub fn grad_v(l: &SparseSym, q: &Mat, cfg: &PotentialConfig) -> Result<Mat, NumError> {
    check_graph(l, q)?;
    Ok(spmul(l, q)?.scale(force_scale(cfg, q.rows())))
}

#[inline]
pub(crate) fn force_scale(cfg: &PotentialConfig, n: usize) -> f64 {
    cfg.lambda_geo * (2.0 / n as f64)
}

/// Per-patch inverse mass `Softplus(MLP(qᵢ)) + ε` as an N×1 column.
pub fn mass_inv_column(q: &Mat, net: &MassNet) -> Mat {
    q.matmul(&net.w1)
        .add_row(&net.b1)
        .map(relu)
        .matmul(&net.w2)
        .add_row(&net.b2)
        .map(softplus)
        .add_scalar(net.epsilon)
}

/// Inverse mass broadcast to the shape of `q`.
pub fn mass_inv(q: &Mat, net: &MassNet) -> Mat {
    mass_inv_column(q, net).broadcast_col(q.cols())
}

/// Tape handles for every model parameter.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub wq: Var,
    pub bq: Var,
    pub wn: Var,
    pub bn: Var,
    pub wr: Var,
    pub br: Var,
    pub wl: Var,
    pub bl: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub cw: Var,
    pub cb: Var,
    pub mass_epsilon: f64,
}

impl ParamVars {
    /// Places every parameter of `model` on `tape` as a leaf.
    pub fn record(tape: &mut Tape<'_>, model: &PotentialModel) -> Self {
        let p = model.params();
        let v: Vec<Var> = p.iter().map(|(_, m)| tape.leaf((*m).clone())).collect();
        ParamVars {
            wq: v[0],
            bq: v[1],
            wn: v[2],
            bn: v[3],
            wr: v[4],
            br: v[5],
            wl: v[6],
            bl: v[7],
            w1: v[8],
            b1: v[9],
            w2: v[10],
            b2: v[11],
            cw: v[12],
            cb: v[13],
            mass_epsilon: model.mass.epsilon,
        }
    }

    /// Leaves in the order of [`PotentialModel::params`].
    pub fn ordered(&self) -> [Var; 14] {
        [
            self.wq, self.bq, self.wn, self.bn, self.wr, self.br, self.wl, self.bl, self.w1,
            self.b1, self.w2, self.b2, self.cw, self.cb,
        ]
    }
}

/// Taped counterparts of the plain functions above; each records exactly the
/// kernel sequence of its plain twin.
pub mod taped {
    use super::*;

    pub fn project_state(t: &mut Tape<'_>, p: &ParamVars, x: Var) -> Var {
        let xw = t.matmul(x, p.wq);
        t.add_row(xw, p.bq)
    }

    /// Photometric potential `Var(ρ ⊙ ReLU(n·l))`.
    pub fn v_photo(t: &mut Tape<'_>, p: &ParamVars, x: Var) -> Var {
        let nw = t.matmul(x, p.wn);
        let nraw = t.add_row(nw, p.bn);
        let n = t.row_normalize(nraw);
        let rw = t.matmul(x, p.wr);
        let rraw = t.add_row(rw, p.br);
        let rho = t.sigmoid(rraw);
        let lw = t.matmul(x, p.wl);
        let lraw = t.add_row(lw, p.bl);
        let l = t.mean_rows(lraw);
        let lt = t.transpose(l);
        let nl = t.matmul(n, lt);
        let lit = t.relu(nl);
        let s = t.mul(lit, rho);
        t.variance(s)
    }

    /// Dirichlet energy given `q` and a precomputed `L·q`.
    pub fn dirichlet_from(t: &mut Tape<'_>, q: Var, lq: Var) -> Var {
        let n = t.value(q).rows();
        let d = t.dot(q, lq);
        t.scale(d, 1.0 / n as f64)
    }

    pub fn mass_inv_column(t: &mut Tape<'_>, p: &ParamVars, q: Var) -> Var {
        let h = t.matmul(q, p.w1);
        let h = t.add_row(h, p.b1);
        let h = t.relu(h);
        let o = t.matmul(h, p.w2);
        let o = t.add_row(o, p.b2);
        let o = t.softplus(o);
        t.add_scalar(o, p.mass_epsilon)
    }
}
