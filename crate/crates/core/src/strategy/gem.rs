//! Gradient episodic memory: replay sampling and gradient projection.

use log::warn;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Outcome of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub gradient: Vec<f64>,
    /// At least one constraint was violated by the raw gradient.
    pub projected: bool,
    /// The solver did not converge and the raw gradient was kept.
    pub fell_back: bool,
}

const MAX_SWEEPS: usize = 100_000;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `g` onto `{x : ⟨x, g_k⟩ ≥ margin ∀k}` in the Euclidean norm by
/// solving the dual `min_{v ≥ 0} ½vᵀGGᵀv + vᵀ(Gg − margin·1)` and returning
/// `g + Gᵀv`. The raw gradient is returned untouched when it already
/// satisfies every constraint.
pub fn gem_project(g: &[f64], memory: &[Vec<f64>], margin: f64) -> Result<Projection> {
    if let Some(bad) = memory.iter().find(|m| m.len() != g.len()) {
        return Err(Error::FlatLength {
            expected: g.len(),
            got: bad.len(),
        });
    }
    let k = memory.len();
    let b: Vec<f64> = memory.iter().map(|gk| dot(gk, g) - margin).collect();
    if b.iter().all(|&v| v >= 0.0) {
        return Ok(Projection {
            gradient: g.to_vec(),
            projected: false,
            fell_back: false,
        });
    }
    let q: Vec<Vec<f64>> = memory.iter().map(|a| memory.iter().map(|c| dot(a, c)).collect()).collect();
    let scale = q.iter().enumerate().map(|(i, r)| r[i]).fold(0.0f64, f64::max).max(1e-300);

    let gnorm = dot(g, g).sqrt().max(1e-300);
    // projected coordinate descent on the dual
    let mut v = vec![0.0; k];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0f64;
        for i in 0..k {
            if q[i][i] <= 1e-14 * scale {
                continue;
            }
            let grad = dot(&q[i], &v) + b[i];
            let nv = (v[i] - grad / q[i][i]).max(0.0);
            delta = delta.max((nv - v[i]).abs() * q[i][i].sqrt());
            v[i] = nv;
        }
        if delta <= 1e-14 * gnorm {
            converged = true;
            break;
        }
    }
    if let Some(exact) = polish(&q, &b, &v) {
        v = exact;
        converged = true;
    }

    let mut x = g.to_vec();
    for (vk, gk) in v.iter().zip(memory) {
        for (xi, gi) in x.iter_mut().zip(gk) {
            *xi += vk * gi;
        }
    }
    let tol = 1e-9 * (1.0 + gnorm) * scale.sqrt();
    let feasible = memory.iter().all(|gk| dot(&x, gk) - margin >= -tol);
    if !converged || !feasible || x.iter().any(|v| !v.is_finite()) {
        warn!("GEM projection did not converge; keeping the raw gradient");
        return Ok(Projection {
            gradient: g.to_vec(),
            projected: true,
            fell_back: true,
        });
    }
    Ok(Projection {
        gradient: x,
        projected: true,
        fell_back: false,
    })
}

/// Re-solves the dual exactly on the support of `v` and accepts the result
/// when it satisfies the KKT conditions.
fn polish(q: &[Vec<f64>], b: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let n = active.len();
    let mut a: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| {
            let mut row: Vec<f64> = active.iter().map(|&j| q[i][j]).collect();
            row.push(-b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * q[active[col]][active[col]].abs().max(1e-300) {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let mut out = vec![0.0; v.len()];
    for (r, &i) in active.iter().enumerate() {
        let vi = a[r][n] / a[r][r];
        if vi < 0.0 {
            return None;
        }
        out[i] = vi;
    }
    let scale = q.iter().enumerate().map(|(i, r)| r[i]).fold(0.0f64, f64::max).max(1e-300);
    for i in 0..v.len() {
        let grad = dot(&q[i], &out) + b[i];
        if grad < -1e-10 * scale * (1.0 + out.iter().sum::<f64>()) {
            return None;
        }
    }
    Some(out)
}

/// Uniform sample without replacement of `min(budget, |examples|)` entries.
pub fn gem_sample_memory<R: Rng + ?Sized>(examples: &[(usize, usize)], budget: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if examples.is_empty() {
        return Err(Error::Empty("GEM memory from an empty task"));
    }
    if budget == 0 {
        return Err(Error::Config("GEM memory budget must be at least 1".into()));
    }
    let m = budget.min(examples.len());
    let mut picks = sample(rng, examples.len(), m).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| examples[i]).collect())
}
