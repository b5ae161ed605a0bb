//! Eigenvalues, eigenvalue counting and the integrated density of states.
//!
//! Two routes count eigenvalues: the dense symmetric eigensolver (reference
//! path, full spectra) and spectrum slicing, which counts the negative pivots
//! of an `LDLᵀ` factorization of `H - σ` (Sylvester's law of inertia). Slicing
//! exploits the envelope of the periodic stencil and is used for large `n`
//! where only interval counts are needed.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{AlloyModel, DiscreteHamiltonian, GridSpec, DENSE_CAP};
use crate::sparse::CsrMatrix;
use crate::stats;

/// Above this dimension [`CountBackend::Auto`] switches to spectrum slicing.
pub const SLICING_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Nondecreasing.
    pub eigenvalues: Vec<f64>,
    pub grid: GridSpec,
    pub seed: u64,
}

impl SpectralSummary {
    /// `N^l(E) = l^{-d} #{i : λ_i < E}`.
    pub fn counting(&self, energy: f64) -> f64 {
        self.count_below(energy) as f64 / self.grid.volume()
    }

    /// `#{i : λ_i < E}`.
    pub fn count_below(&self, energy: f64) -> usize {
        self.eigenvalues.partition_point(|&l| l < energy)
    }

    /// `#{i : λ_i ≤ E}`.
    pub fn count_at_most(&self, energy: f64) -> usize {
        self.eigenvalues.partition_point(|&l| l <= energy)
    }

    /// `Tr P([E₁, E₂]) = #{i : E₁ ≤ λ_i ≤ E₂}` (closed interval).
    pub fn trace_projection(&self, e1: f64, e2: f64) -> Result<usize> {
        check_interval(e1, e2)?;
        Ok(self.count_at_most(e2) - self.count_below(e1))
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_interval(e1: f64, e2: f64) -> Result<()> {
    if e1 > e2 || e1.is_nan() || e2.is_nan() {
        return Err(Error::Precondition(format!("interval [{e1}, {e2}] is empty or invalid")));
    }
    Ok(())
}

fn dense(h: &DiscreteHamiltonian) -> Result<DMatrix<f64>> {
    if h.len() > DENSE_CAP {
        return Err(Error::SizeOverflow { n: h.len(), cap: DENSE_CAP });
    }
    let m = h.matrix().to_dense();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    Ok(m)
}

/// Full spectrum by the dense symmetric eigensolver, sorted ascending.
pub fn eigenvalues(h: &DiscreteHamiltonian, seed: u64) -> Result<SpectralSummary> {
    let m = dense(h)?;
    let mut eigenvalues: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    eigenvalues.sort_by(f64::total_cmp);
    Ok(SpectralSummary { eigenvalues, grid: *h.grid(), seed })
}

/// Eigenvalues (ascending) with their normalized eigenvectors as columns.
pub fn eigenpairs(h: &DiscreteHamiltonian) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = dense(h)?;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100_000).ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((values, vectors))
}

/// Numbers of negative and nonnegative eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub nonnegative: usize,
}

/// Inertia of `H - σ` from an envelope `LDLᵀ` factorization without pivoting.
///
/// Pivots smaller than `ε ‖H‖∞` are replaced by `+ε ‖H‖∞`, so an eigenvalue
/// exactly at `σ` counts as positive.
pub fn inertia(matrix: &CsrMatrix, sigma: f64) -> Inertia {
    let n = matrix.n();
    let first = matrix.first_columns();
    let tiny = f64::EPSILON * (matrix.max_abs_row_sum() + sigma.abs()).max(f64::MIN_POSITIVE);
    // rows of L within the envelope: lower[i][k - first[i]] = l_{ik}
    let mut lower: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut negative = 0;
    for i in 0..n {
        let fi = first[i];
        let mut s = vec![0.0; i - fi];
        for (c, v) in matrix.row(i) {
            if c < i {
                s[c - fi] = v;
            }
        }
        let mut diag = matrix.get(i, i) - sigma;
        // s[k - fi] holds l_ik d_k once column k has been eliminated
        for j in fi..i {
            let fj = first[j];
            let lj = &lower[j];
            let mut acc = s[j - fi];
            for k in fi.max(fj)..j {
                acc -= s[k - fi] * lj[k - fj];
            }
            s[j - fi] = acc;
            diag -= acc * acc / d[j];
        }
        let row: Vec<f64> = (fi..i).map(|k| s[k - fi] / d[k]).collect();
        if diag.abs() < tiny {
            diag = tiny;
        }
        if diag < 0.0 {
            negative += 1;
        }
        d.push(diag);
        lower.push(row);
    }
    Inertia { negative, nonnegative: n - negative }
}

/// How to count eigenvalues in intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBackend {
    Dense,
    Slicing,
    #[default]
    Auto,
}

impl CountBackend {
    pub fn resolve(self, n: usize) -> CountBackend {
        match self {
            CountBackend::Auto if n > SLICING_THRESHOLD => CountBackend::Slicing,
            CountBackend::Auto => CountBackend::Dense,
            other => other,
        }
    }
}

/// Eigenvalue counts of one Hamiltonian, from either backend.
pub enum Counter {
    Spectrum(SpectralSummary),
    Slicing(CsrMatrix),
}

impl Counter {
    pub fn new(h: &DiscreteHamiltonian, backend: CountBackend, seed: u64) -> Result<Self> {
        Ok(match backend.resolve(h.len()) {
            CountBackend::Slicing => Counter::Slicing(h.matrix().clone()),
            _ => Counter::Spectrum(eigenvalues(h, seed)?),
        })
    }

    pub fn count_below(&self, energy: f64) -> usize {
        match self {
            Counter::Spectrum(s) => s.count_below(energy),
            Counter::Slicing(m) => inertia(m, energy).negative,
        }
    }

    pub fn count_at_most(&self, energy: f64) -> usize {
        match self {
            Counter::Spectrum(s) => s.count_at_most(energy),
            // an eigenvalue exactly at the shift counts as nonnegative, so nudge past it
            Counter::Slicing(m) => {
                let shift = energy + 4.0 * f64::EPSILON * (m.max_abs_row_sum() + energy.abs());
                inertia(m, shift).negative
            }
        }
    }

    /// `#{i : E₁ ≤ λ_i ≤ E₂}`.
    pub fn trace_projection(&self, e1: f64, e2: f64) -> Result<usize> {
        check_interval(e1, e2)?;
        Ok(self.count_at_most(e2) - self.count_below(e1))
    }
    /// Smallest eigenvalue; bisection on inertia counts for the slicing backend.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Counter::Spectrum(s) => s.min(),
            Counter::Slicing(m) => {
                let radius = m.max_abs_row_sum();
                let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
                while hi - lo > 1e-12 * (1.0 + radius) {
                    let mid = 0.5 * (lo + hi);
                    if inertia(m, mid).negative > 0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Spectrum slicing count of `#{i : E₁ ≤ λ_i ≤ E₂}`.
pub fn trace_projection_slicing(h: &DiscreteHamiltonian, e1: f64, e2: f64) -> Result<usize> {
    Counter::Slicing(h.matrix().clone()).trace_projection(e1, e2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdsEstimate {
    pub energies: Vec<f64>,
    /// Mean of `N_ω^l(E)` over the samples, per energy.
    pub mean_n: Vec<f64>,
    /// Sample standard deviation per energy; `None` for a single sample.
    pub std_n: Option<Vec<f64>>,
    pub side: usize,
    pub samples: usize,
    /// `N_ω^l(E)` for every sample (rows) and energy (columns).
    pub per_sample: Vec<Vec<f64>>,
}

/// Monte Carlo estimate of the finite-volume IDS; sample `i` uses seed `seed + i`.
pub fn ids_estimate(
    model: &AlloyModel,
    energies: &[f64],
    samples: usize,
    seed: u64,
    backend: CountBackend,
) -> Result<IdsEstimate> {
    if samples == 0 {
        return Err(Error::InsufficientData("at least one sample is required".into()));
    }
    let volume = model.grid.volume();
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let h = model.realize(s)?;
            let counter = Counter::new(&h, backend, s)?;
            Ok(energies.iter().map(|&e| counter.count_below(e) as f64 / volume).collect())
        })
        .collect::<Result<_>>()?;
    let column = |e: usize| per_sample.iter().map(|row| row[e]).collect::<Vec<f64>>();
    let mean_n = (0..energies.len()).map(|e| stats::mean(&column(e))).collect();
    let std_n = (samples > 1).then(|| (0..energies.len()).map(|e| stats::std_dev(&column(e))).collect());
    Ok(IdsEstimate {
        energies: energies.to_vec(),
        mean_n,
        std_n,
        side: model.grid.side,
        samples,
        per_sample,
    })
}
