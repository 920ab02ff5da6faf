//! Readout statistics of a rollout (action and dissipation) and the
//! per-patch roughness diagnostic.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::feature::FeatureGrid;
use crate::numcore::{spmul, NumError, SparseSym, Tape, Var};

/// `[S, D]` for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajStats {
    pub s: f64,
    pub d: f64,
}

/// Dissipation value plus the flag raised when `T = 1` leaves it undefined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dissipation {
    pub value: f64,
    pub single_step: bool,
}

/// `S = (1/(T·N))·Σ_{t=1..T} H_t`; `H_0` is excluded.
pub fn action_from_h(h: &[f64], n: usize) -> f64 {
    assert!(h.len() >= 2, "action needs at least one step");
    let t = h.len() - 1;
    h[1..].iter().sum::<f64>() * (1.0 / (t * n) as f64)
}

/// `D = (1/((T−1)·N))·Σ_{t=1..T−1} |H_{t+1} − H_t|`, 0 with a flag at `T = 1`.
pub fn dissipation_from_h(h: &[f64], n: usize) -> Dissipation {
    assert!(h.len() >= 2, "dissipation needs at least one step");
    let t = h.len() - 1;
    if t == 1 {
        return Dissipation {
            value: 0.0,
            single_step: true,
        };
    }
    let total: f64 = h[1..].windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Dissipation {
        value: total * (1.0 / ((t - 1) * n) as f64),
        single_step: false,
    }
}

pub fn action_score(traj: &Trajectory, n: usize) -> f64 {
    action_from_h(&traj.hamiltonian, n)
}

pub fn dissipation(traj: &Trajectory, n: usize) -> Dissipation {
    dissipation_from_h(&traj.hamiltonian, n)
}

pub fn phys_features(traj: &Trajectory, n: usize) -> TrajStats {
    TrajStats {
        s: action_score(traj, n),
        d: dissipation(traj, n).value,
    }
}

/// Taped `S` and `D` over Hamiltonian nodes `H_0 … H_T`, recording the same
/// arithmetic as the plain versions.
pub fn taped_stats(t: &mut Tape<'_>, h: &[Var], n: usize) -> (Var, Var) {
    assert!(h.len() >= 2, "statistics need at least one step");
    let steps = h.len() - 1;
    let mut acc = h[1];
    for &v in &h[2..] {
        acc = t.add(acc, v);
    }
    let s = t.scale(acc, 1.0 / (steps * n) as f64);
    let d = if steps == 1 {
        t.leaf(crate::numcore::Mat::scalar(0.0))
    } else {
        let mut acc = None;
        for w in h[1..].windows(2) {
            let diff = t.sub(w[1], w[0]);
            let a = t.abs(diff);
            acc = Some(match acc {
                None => a,
                Some(prev) => t.add(prev, a),
            });
        }
        t.scale(acc.expect("at least one difference"), 1.0 / ((steps - 1) * n) as f64)
    };
    (s, d)
}

/// Per-patch `‖(L·x)_i‖` over the raw feature rows.
pub fn roughness_map(x: &FeatureGrid, l: &SparseSym) -> Result<Vec<f64>, NumError> {
    Ok(spmul(l, x.features())?.row_norms().into_data())
}

/// Roughness CSV with grid coordinates: `patch,row,col,roughness`.
pub fn roughness_csv(x: &FeatureGrid, values: &[f64]) -> String {
    let grid = x.grid();
    let mut s = String::from("patch,row,col,roughness\n");
    for (i, v) in values.iter().enumerate() {
        let (r, c) = grid.coord(i);
        s.push_str(&format!("{i},{r},{c},{v}\n"));
    }
    s
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `S − median(S_real)` per sample with its label: `index,label,s_centered`.
/// Unlabeled samples (255) are kept; the median uses label 0 only and falls
/// back to all samples when no real sample is present.
pub fn histogram_csv(s: &[f64], labels: &[u8]) -> String {
    let real: Vec<f64> = s
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 0)
        .map(|(&v, _)| v)
        .collect();
    let center = if real.is_empty() {
        if s.is_empty() {
            0.0
        } else {
            median(s)
        }
    } else {
        median(&real)
    };
    let mut out = String::from("index,label,s_centered\n");
    for (i, (&v, &y)) in s.iter().zip(labels).enumerate() {
        out.push_str(&format!("{i},{y},{}\n", v - center));
    }
    out
}
