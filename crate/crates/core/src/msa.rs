//! Multiscale-analysis diagnostics.
//!
//! A box of side `l` is `(γ, E)`-good when `‖χ⁺ (H - E)^{-1} χ⁻‖ ≤ e^{-γ l}`,
//! with `χ⁺` the indicator of the outermost layer of cells and `χ⁻` that of
//! the centred sub-box of side `l/3` (rounded to whole cells).
//!
//! The geometric resolvent identity is checked in its exact discrete form:
//! for `Λ ⊂ Λ'`, `H^Λ` the restriction of `H^{Λ'}` to the mesh points of `Λ`,
//! `J` the zero extension and `φ` a cutoff vanishing on the outer cell layer
//! of `Λ`,
//!
//! ```text
//! (H^Λ - z)^{-1} J*φ = J*φ (H^{Λ'} - z)^{-1} + (H^Λ - z)^{-1} J* [φ, H^{Λ'}] (H^{Λ'} - z)^{-1}.
//! ```

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{AlloyModel, DiscreteHamiltonian, GridSpec};
use crate::spectral;
use crate::stats;

/// Energies closer than this to an eigenvalue are rejected.
pub const RESONANCE_TOLERANCE: f64 = 1e-8;

/// Minimum sample count for [`good_box_probability`].
pub const MIN_PROBABILITY_SAMPLES: usize = 100;

fn cells_where(grid: &GridSpec, keep: impl Fn(&[i64]) -> bool) -> Vec<usize> {
    (0..grid.len()).filter(|&p| keep(&grid.cell_and_local(p).0)).collect()
}

/// Mesh points of the outermost cell layer (`χ⁺`).
pub fn collar_points(grid: &GridSpec) -> Vec<usize> {
    let last = grid.side as i64 - 1;
    cells_where(grid, |c| c.iter().any(|&x| x == 0 || x == last))
}

/// Mesh points of the centred sub-box of side `round(l/3)` (`χ⁻`).
pub fn core_points(grid: &GridSpec) -> Vec<usize> {
    let l = grid.side;
    let s = ((l as f64 / 3.0).round() as usize).max(1);
    let start = ((l - s) / 2) as i64;
    cells_where(grid, |c| c.iter().all(|&x| x >= start && x < start + s as i64))
}

fn check_resonance(h: &DiscreteHamiltonian, energy: f64) -> Result<()> {
    let s = spectral::eigenvalues(h, 0)?;
    let distance = s.eigenvalues.iter().map(|l| (l - energy).abs()).fold(f64::INFINITY, f64::min);
    if distance < RESONANCE_TOLERANCE {
        return Err(Error::EnergyResonant { energy, distance });
    }
    Ok(())
}

/// `‖χ⁺ (H - E)^{-1} χ⁻‖`, the largest singular value of the collar-by-core
/// block of the resolvent, whose columns come from LU solves.
pub fn good_box_norm(h: &DiscreteHamiltonian, energy: f64) -> Result<f64> {
    let grid = h.grid();
    if grid.side < 3 {
        return Err(Error::Precondition(format!("good-box norm needs l >= 3, got {}", grid.side)));
    }
    check_resonance(h, energy)?;
    let n = h.len();
    let m = h.matrix().to_dense() - DMatrix::identity(n, n) * energy;
    let core = core_points(grid);
    let collar = collar_points(grid);
    let mut rhs = DMatrix::zeros(n, core.len());
    for (c, &p) in core.iter().enumerate() {
        rhs[(p, c)] = 1.0;
    }
    let cols = m.lu().solve(&rhs).ok_or(Error::EnergyResonant { energy, distance: 0.0 })?;
    let block = DMatrix::from_fn(collar.len(), core.len(), |r, c| cols[(collar[r], c)]);
    Ok(block.singular_values().max())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodBoxReport {
    pub energy: f64,
    pub gamma: f64,
    pub l: usize,
    pub offdiag_norm: f64,
    pub good: bool,
    pub seed: u64,
}

pub fn good_box_report(model: &AlloyModel, energy: f64, gamma: f64, seed: u64) -> Result<GoodBoxReport> {
    let offdiag_norm = good_box_norm(&model.realize(seed)?, energy)?;
    let l = model.grid.side;
    Ok(GoodBoxReport {
        energy,
        gamma,
        l,
        offdiag_norm,
        good: offdiag_norm <= (-gamma * l as f64).exp(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxProbability {
    pub energy: f64,
    pub gamma: f64,
    pub l: usize,
    pub p_hat: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub samples: usize,
}

fn proportion(energy: f64, gamma: f64, l: usize, hits: &[bool]) -> BoxProbability {
    let n = hits.len() as f64;
    let p = hits.iter().filter(|&&g| g).count() as f64 / n;
    BoxProbability {
        energy,
        gamma,
        l,
        p_hat: p,
        half_width: stats::Z95 * (p * (1.0 - p) / n).sqrt(),
        samples: hits.len(),
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_PROBABILITY_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_PROBABILITY_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Fraction of `(γ, E)`-good boxes at the single energy `E`.
pub fn good_box_probability(
    model: &AlloyModel,
    energy: f64,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<BoxProbability> {
    check_samples(samples)?;
    let hits: Vec<bool> = (0..samples)
        .into_par_iter()
        .map(|i| good_box_report(model, energy, gamma, seed.wrapping_add(i as u64)).map(|r| r.good))
        .collect::<Result<_>>()?;
    Ok(proportion(energy, gamma, model.grid.side, &hits))
}

/// Fraction of draws in which at least one of two independent boxes is
/// `(γ, E)`-good; the boxes use seeds `seed + 2i` and `seed + 2i + 1`.
pub fn two_box_probability(
    model: &AlloyModel,
    energy: f64,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<BoxProbability> {
    check_samples(samples)?;
    let hits: Vec<bool> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(2 * i as u64);
            Ok(good_box_report(model, energy, gamma, s)?.good
                || good_box_report(model, energy, gamma, s.wrapping_add(1))?.good)
        })
        .collect::<Result<_>>()?;
    Ok(proportion(energy, gamma, model.grid.side, &hits))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// `-d log‖χ⁺ R χ⁻‖ / dl`.
    pub rate: f64,
    pub r_squared: f64,
    pub sizes: Vec<usize>,
    pub norms: Vec<f64>,
}

/// Exponential decay rate of the good-box norm over box sizes, for the
/// realization with the given seed.
pub fn decay_rate(model: &AlloyModel, energy: f64, sizes: &[usize], seed: u64) -> Result<DecayFit> {
    if sizes.len() < 3 {
        return Err(Error::InsufficientData("decay fit needs at least 3 box sizes".into()));
    }
    let norms: Vec<f64> = sizes
        .iter()
        .map(|&l| good_box_norm(&model.with_side(l)?.realize(seed)?, energy))
        .collect::<Result<_>>()?;
    let design: Vec<Vec<f64>> = sizes.iter().map(|&l| vec![1.0, l as f64]).collect();
    let y: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    let fit = stats::least_squares(&design, &y)?;
    Ok(DecayFit { rate: -fit.coefficients[1], r_squared: fit.r_squared, sizes: sizes.to_vec(), norms })
}

/// A sub-box `Λ` of the box carrying an outer Hamiltonian, in whole cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBox {
    pub origin: Vec<usize>,
    pub side: usize,
}

impl SubBox {
    fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.origin.len() != grid.dim {
            return Err(Error::IndexMismatch { expected: grid.dim, got: self.origin.len() });
        }
        if self.side < 3 || self.origin.iter().any(|o| o + self.side > grid.side) {
            return Err(Error::Precondition(format!(
                "sub-box at {:?} with side {} must have side >= 3 and fit in a box of side {}",
                self.origin, self.side, grid.side
            )));
        }
        Ok(())
    }

    fn contains(&self, cell: &[i64]) -> bool {
        cell.iter().zip(&self.origin).all(|(&c, &o)| c >= o as i64 && c < (o + self.side) as i64)
    }

    fn interior_contains(&self, cell: &[i64]) -> bool {
        cell.iter()
            .zip(&self.origin)
            .all(|(&c, &o)| c > o as i64 && c < (o + self.side) as i64 - 1)
    }

    /// Mesh points of the outer grid inside this box, ascending.
    pub fn points(&self, grid: &GridSpec) -> Vec<usize> {
        cells_where(grid, |c| self.contains(c))
    }
}

/// `C^∞` cutoff on the outer mesh: 1 at distance `≥ 2` from `∂Λ`, 0 on the
/// outer cell layer of `Λ` and outside it.
pub fn smooth_cutoff(grid: &GridSpec, sub: &SubBox) -> Vec<f64> {
    fn e(t: f64) -> f64 {
        if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() }
    }
    fn step(t: f64) -> f64 {
        e(t) / (e(t) + e(1.0 - t))
    }
    (0..grid.len())
        .map(|p| {
            grid.position(p)
                .iter()
                .zip(&sub.origin)
                .map(|(&x, &o)| {
                    let (a, b) = ((o + 1) as f64, (o + sub.side - 1) as f64);
                    step(x - a) * step(b - x)
                })
                .product()
        })
        .collect()
}

type CMatrix = DMatrix<Complex<f64>>;

fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex::new(x, 0.0))
}

/// Largest relative residual of the discrete geometric resolvent identity
/// over `vectors` random real test vectors.
pub fn resolvent_identity_residual(
    outer: &DiscreteHamiltonian,
    sub: &SubBox,
    phi: &[f64],
    z: Complex<f64>,
    vectors: usize,
    seed: u64,
) -> Result<f64> {
    let grid = outer.grid();
    sub.validate(grid)?;
    if phi.len() != outer.len() {
        return Err(Error::IndexMismatch { expected: outer.len(), got: phi.len() });
    }
    for (p, &v) in phi.iter().enumerate() {
        if v != 0.0 && !sub.interior_contains(&grid.cell_and_local(p).0) {
            return Err(Error::Precondition(
                "φ must vanish on the outer cell layer of the sub-box and outside it".into(),
            ));
        }
    }
    let inner = sub.points(grid);
    let h_outer = outer.matrix().to_dense();
    let h_inner = DMatrix::from_fn(inner.len(), inner.len(), |r, c| h_outer[(inner[r], inner[c])]);
    if z.im.abs() < RESONANCE_TOLERANCE {
        for m in [&h_outer, &h_inner] {
            let distance = m
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .map(|l| (l - z.re).abs())
                .fold(f64::INFINITY, f64::min);
            if distance < RESONANCE_TOLERANCE {
                return Err(Error::EnergyResonant { energy: z.re, distance });
            }
        }
    }
    let shift = |m: &DMatrix<f64>| complexify(m) - CMatrix::identity(m.nrows(), m.nrows()) * z;
    let lu_outer = shift(&h_outer).lu();
    let lu_inner = shift(&h_inner).lu();
    let commutator = DMatrix::from_fn(outer.len(), outer.len(), |a, b| (phi[a] - phi[b]) * h_outer[(a, b)]);
    let restrict = |v: &DVector<Complex<f64>>| DVector::from_iterator(inner.len(), inner.iter().map(|&p| v[p]));
    let times_phi = |v: &DVector<Complex<f64>>| DVector::from_fn(v.len(), |p, _| v[p] * phi[p]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..vectors {
        let v = DVector::from_fn(outer.len(), |_, _| Complex::new(rng.random::<f64>() - 0.5, 0.0));
        let u = lu_outer.solve(&v).ok_or(Error::EnergyResonant { energy: z.re, distance: 0.0 })?;
        let lhs = lu_inner
            .solve(&restrict(&times_phi(&v)))
            .ok_or(Error::EnergyResonant { energy: z.re, distance: 0.0 })?;
        let correction = lu_inner
            .solve(&restrict(&(complexify(&commutator) * &u)))
            .ok_or(Error::EnergyResonant { energy: z.re, distance: 0.0 })?;
        let rhs = restrict(&times_phi(&u)) + correction;
        let scale = lhs.norm().max(rhs.norm());
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).norm() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityModel;
    use crate::operator::{assemble_hamiltonian, Background, CouplingSource, SingleSitePotential};
    use crate::toeplitz::ConvolutionVector;

    fn free(side: usize, mesh: usize) -> DiscreteHamiltonian {
        let grid = GridSpec::new(1, side, mesh).unwrap();
        assemble_hamiltonian(&vec![0.0; grid.len()], &grid).unwrap()
    }

    fn random_model(side: usize) -> AlloyModel {
        AlloyModel::new(
            GridSpec::new(1, side, 4).unwrap(),
            SingleSitePotential::indicator(ConvolutionVector::one_dim(&[1.0, -0.5]).unwrap()),
            Background::Zero,
            CouplingSource::Random { density: DensityModel::triangular() },
        )
        .unwrap()
    }

    #[test]
    fn collar_and_core_are_disjoint() {
        let grid = GridSpec::new(2, 6, 2).unwrap();
        let (collar, core) = (collar_points(&grid), core_points(&grid));
        assert_eq!(collar.len(), (36 - 16) * 4);
        assert_eq!(core.len(), 4 * 4);
        assert!(collar.iter().all(|p| !core.contains(p)));
    }

    #[test]
    fn far_below_spectrum_is_bounded_by_resolvent_norm() {
        let h = free(9, 4);
        let norm = good_box_norm(&h, -10.0).unwrap();
        assert!(norm <= 0.1 + 1e-12);
    }

    #[test]
    fn resonant_energy_rejected() {
        // the free periodic Laplacian has eigenvalue 0
        assert!(matches!(good_box_norm(&free(6, 2), 0.0), Err(Error::EnergyResonant { .. })));
    }

    #[test]
    fn free_decay_rate_is_positive() {
        let grid = GridSpec::new(1, 6, 4).unwrap();
        let model = AlloyModel::new(
            grid,
            SingleSitePotential::indicator(ConvolutionVector::one_dim(&[1.0]).unwrap()),
            Background::Zero,
            CouplingSource::Constant { value: 0.0 },
        )
        .unwrap();
        let fit = decay_rate(&model, -0.5, &[6, 9, 12, 15], 0).unwrap();
        assert!(fit.rate > 0.0 && fit.r_squared > 0.99, "{fit:?}");
    }

    #[test]
    fn deep_below_spectrum_every_box_is_good() {
        let p = good_box_probability(&random_model(6), -200.0, 0.01, 100, 3).unwrap();
        assert_eq!(p.p_hat, 1.0);
        let p = good_box_probability(&random_model(6), -200.0, 200.0, 100, 3).unwrap();
        assert_eq!(p.p_hat, 0.0);
        assert!(good_box_probability(&random_model(6), -200.0, 0.01, 10, 3).is_err());
    }

    #[test]
    fn identity_residual_small_and_trivial_cases() {
        let model = random_model(8);
        let h = model.realize(4).unwrap();
        let sub = SubBox { origin: vec![2], side: 5 };
        let phi = smooth_cutoff(h.grid(), &sub);
        let z = Complex::new(3.0, 0.1);
        assert!(resolvent_identity_residual(&h, &sub, &phi, z, 10, 1).unwrap() <= 1e-8);
        let zero = vec![0.0; h.len()];
        assert_eq!(resolvent_identity_residual(&h, &sub, &zero, z, 3, 1).unwrap(), 0.0);
        let ones = vec![1.0; h.len()];
        assert!(matches!(
            resolvent_identity_residual(&h, &sub, &ones, z, 3, 1),
            Err(Error::Precondition(_))
        ));
    }
}
