//! Closed-form likelihood quantities: binary entropy, angle fractions, the
//! analytic negative log-likelihood and the signum random-hyperplane hash.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cosine, dot, RealVector};
use crate::rng::{tag, CounterRng};

/// Per-bit negative log-likelihood summary for a pair of vectors or an
/// analytic `(k, n)` configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllReport {
    pub angle_fraction: f64,
    pub nll_per_bit: f64,
    pub hamming_count: Option<u64>,
    pub hyperplane_count: Option<u64>,
}

/// `0 * log2(0)` taken as 0.
fn xlog2x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary entropy `H2(theta)` in bits.
pub fn h2(theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("h2 argument {theta} outside [0, 1]")));
    }
    // Values above 1/2 carry only 53 fractional bits, so `1 - theta` and
    // `theta` do not always round-trip. Evaluating on that grid makes
    // `h2(theta) == h2(1 - theta)` hold bit for bit; the absolute error this
    // costs stays below 1e-15 except for arguments under about 1e-12.
    const GRID: f64 = (1u64 << 53) as f64;
    let p = if theta <= 0.5 { theta } else { 1.0 - theta };
    let p = (p * GRID).round_ties_even() / GRID;
    Ok(-xlog2x(p) - xlog2x(1.0 - p))
}

/// `(1/pi) * arccos(cos(w, w'))`: 0 for equal directions, 1 for antipodal.
pub fn angle_fraction(w: &[f64], w_prime: &[f64]) -> Result<f64> {
    Ok(cosine(w, w_prime)?.acos() / PI)
}

/// `-(1/n) log2(theta^k (1 - theta)^(n-k))`, the per-bit NLL of `k`
/// disagreements out of `n` hash bits at disagreement rate `theta`.
pub fn nll_at(k: u64, n: u64, theta: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::domain(format!(
            "need 0 <= k <= n and n >= 1, got k={k}, n={n}"
        )));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("theta {theta} outside [0, 1]")));
    }
    let term = |count: u64, p: f64| {
        if count == 0 {
            0.0
        } else {
            count as f64 * p.log2()
        }
    };
    Ok(-(term(k, theta) + term(n - k, 1.0 - theta)) / n as f64)
}

/// The maximum-likelihood solution `theta0 = k/n` and its per-bit NLL.
///
/// The NLL is evaluated from the likelihood itself and cross-checked against
/// `h2(k/n)`; the two agree to rounding.
pub fn analytic_nll(k: u64, n: u64) -> Result<NllReport> {
    if n == 0 || k > n {
        return Err(Error::domain(format!(
            "need 0 <= k <= n and n >= 1, got k={k}, n={n}"
        )));
    }
    let theta0 = k as f64 / n as f64;
    let nll = nll_at(k, n, theta0)?;
    debug_assert!((nll - h2(theta0)?).abs() < 1e-12);
    Ok(NllReport {
        angle_fraction: theta0,
        nll_per_bit: nll,
        hamming_count: Some(k),
        hyperplane_count: Some(n),
    })
}

/// `n` random hyperplane normals in `R^k`, regenerable from the seed alone.
///
/// Rows hold raw standard-normal entries; the sign hash is scale invariant,
/// so normalizing them would change nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneSet {
    seed: u64,
    dim: usize,
    rows: Vec<f64>,
}

impl HyperplaneSet {
    pub fn generate(seed: u64, count: usize, dim: usize) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::domain(
                "hyperplane set needs count >= 1 and dim >= 1",
            ));
        }
        let stream = CounterRng::from_path(seed, &[tag::HYPERPLANES]);
        let mut rows = vec![0.0; count * dim];
        rows.par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, row)| stream.child(i as u64).fill_normals(row));
        Ok(Self { seed, dim, rows })
    }

    /// Builds a set from explicit rows (for hand-made fixtures).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::domain(
                "hyperplane set needs at least one non-empty row",
            ));
        }
        for r in &rows {
            check_dim(dim, r.len())?;
        }
        Ok(Self {
            seed: 0,
            dim,
            rows: rows.concat(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }
}

#[inline]
fn sgn(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// `h_i(w) = sgn(v_i . w)` for every hyperplane, with `sgn(0) = +1`.
pub fn signum_hash(w: &RealVector, planes: &HyperplaneSet) -> Result<Vec<i8>> {
    check_dim(planes.dim(), w.dim())?;
    Ok(planes.rows().map(|v| sgn(dot(v, w.as_slice()))).collect())
}

/// Number of hash bits on which `w` and `w'` disagree, as an estimate of
/// their angle fraction.
pub fn hamming_fraction(
    w: &RealVector,
    w_prime: &RealVector,
    planes: &HyperplaneSet,
) -> Result<NllReport> {
    check_dim(planes.dim(), w.dim())?;
    check_dim(planes.dim(), w_prime.dim())?;
    let count = planes
        .rows()
        .filter(|v| sgn(dot(v, w.as_slice())) != sgn(dot(v, w_prime.as_slice())))
        .count() as u64;
    let n = planes.len() as u64;
    let fraction = count as f64 / n as f64;
    Ok(NllReport {
        angle_fraction: fraction,
        nll_per_bit: h2(fraction)?,
        hamming_count: Some(count),
        hyperplane_count: Some(n),
    })
}
