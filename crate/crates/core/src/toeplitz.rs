//! Finite-section convolution transforms on the enlarged index set Λ⁺.
//!
//! A convolution vector `α = (α_k)_{k∈Γ}` induces the matrix
//! `A = {α_{j-k}}_{j,k∈Λ⁺}`, which maps the iid coupling constants `ω` to
//! the transformed coordinates `η = Aω`. Its inverse `B` carries `η` back to
//! `ω`. For admissible vectors (`α* < |α₀|`) the row-sum norm of `B` is
//! bounded by `1 / (|α₀| - α*)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice point of `ℤ^d`.
pub type Site = Vec<i64>;

/// Condition estimates above this make `|det B|` meaningless as a density factor.
pub const SINGULARITY_THRESHOLD: f64 = 1e12;

/// Coefficients `α_k` of a generalized step function, on a finite support `Γ ⊂ ℤ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConvolutionSpec", into = "ConvolutionSpec")]
pub struct ConvolutionVector {
    dim: usize,
    entries: Vec<(Site, f64)>,
}

/// Serialized form: `{"dim": 1, "entries": [[[0], 1.0], [[1], -0.5]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionSpec {
    pub dim: usize,
    pub entries: Vec<(Site, f64)>,
}

impl TryFrom<ConvolutionSpec> for ConvolutionVector {
    type Error = Error;

    fn try_from(spec: ConvolutionSpec) -> Result<Self> {
        ConvolutionVector::new(spec.dim, spec.entries)
    }
}

impl From<ConvolutionVector> for ConvolutionSpec {
    fn from(v: ConvolutionVector) -> Self {
        ConvolutionSpec { dim: v.dim, entries: v.entries }
    }
}

impl ConvolutionVector {
    pub fn new(dim: usize, mut entries: Vec<(Site, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConvolution("dimension must be positive".into()));
        }
        for (site, value) in &entries {
            if site.len() != dim {
                return Err(Error::InvalidConvolution(format!(
                    "offset {site:?} does not have dimension {dim}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidConvolution(format!("non-finite coefficient at {site:?}")));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidConvolution("duplicate offset".into()));
        }
        let origin = vec![0; dim];
        match entries.iter().find(|(s, _)| *s == origin) {
            Some((_, a0)) if *a0 != 0.0 => {}
            Some(_) => return Err(Error::InvalidConvolution("alpha_0 must be nonzero".into())),
            None => return Err(Error::InvalidConvolution("0 must belong to Gamma".into())),
        }
        Ok(Self { dim, entries })
    }

    /// One-dimensional vector with `α_k = coefficients[k]` for `k = 0, 1, …`.
    pub fn one_dim(coefficients: &[f64]) -> Result<Self> {
        let entries = coefficients
            .iter()
            .enumerate()
            .map(|(k, &a)| (vec![k as i64], a))
            .collect();
        Self::new(1, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Offsets and coefficients, sorted lexicographically by offset.
    pub fn entries(&self) -> &[(Site, f64)] {
        &self.entries
    }

    pub fn offsets(&self) -> impl Iterator<Item = &Site> {
        self.entries.iter().map(|(s, _)| s)
    }

    pub fn coefficient(&self, offset: &[i64]) -> f64 {
        self.entries
            .iter()
            .find(|(s, _)| s.as_slice() == offset)
            .map_or(0.0, |(_, a)| *a)
    }

    pub fn alpha0(&self) -> f64 {
        self.coefficient(&vec![0; self.dim])
    }

    /// `α* = Σ_{k≠0} |α_k|`.
    pub fn alpha_star(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(s, _)| s.iter().any(|&c| c != 0))
            .map(|(_, a)| a.abs())
            .sum()
    }

    pub fn admissible(&self) -> bool {
        self.alpha_star() < self.alpha0().abs()
    }

    /// `|α₀|⁻¹ (1 - α*/|α₀|)⁻¹`, the admissible-case bound on `‖B‖`.
    pub fn norm_bound(&self) -> Result<f64> {
        let a0 = self.alpha0().abs();
        let star = self.alpha_star();
        if star >= a0 {
            return Err(Error::NotAdmissible { alpha_star: star, alpha0_abs: a0 });
        }
        Ok(1.0 / (a0 - star))
    }
}

/// The cube `Λ = [0, l[^d` with its lattice points and the enlarged set `Λ⁺ = Λ̃ - Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBox {
    dim: usize,
    side: usize,
    lattice: Vec<Site>,
    plus_set: Vec<Site>,
    index: HashMap<Site, usize>,
}

impl IndexBox {
    pub fn new(side: usize, alpha: &ConvolutionVector) -> Result<Self> {
        if side == 0 {
            return Err(Error::Precondition("box side must be positive".into()));
        }
        let dim = alpha.dim();
        let lattice = cube_sites(dim, side);
        let mut plus_set: Vec<Site> = lattice
            .iter()
            .flat_map(|lambda| {
                alpha
                    .offsets()
                    .map(move |gamma| lambda.iter().zip(gamma).map(|(a, b)| a - b).collect())
            })
            .collect();
        plus_set.sort();
        plus_set.dedup();
        let index = plus_set.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Self { dim, side, lattice, plus_set, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// `Λ̃ = Λ ∩ ℤ^d` in lexicographic order.
    pub fn lattice(&self) -> &[Site] {
        &self.lattice
    }

    /// `Λ⁺` in lexicographic order.
    pub fn plus_set(&self) -> &[Site] {
        &self.plus_set
    }

    /// `L = |Λ⁺|`.
    pub fn len(&self) -> usize {
        self.plus_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus_set.is_empty()
    }

    pub fn position(&self, site: &[i64]) -> Option<usize> {
        self.index.get(site).copied()
    }

    /// Positions of the lattice points `Λ̃` inside the ordering of `Λ⁺`.
    pub fn lattice_positions(&self) -> Vec<usize> {
        self.lattice.iter().map(|s| self.index[s]).collect()
    }
}

/// All points of `{0, …, side-1}^dim` in lexicographic order.
pub fn cube_sites(dim: usize, side: usize) -> Vec<Site> {
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            let mut site = vec![0i64; dim];
            for c in site.iter_mut().rev() {
                *c = (flat % side) as i64;
                flat /= side;
            }
            site
        })
        .collect()
}

/// `A = {α_{j-k}}` on `Λ⁺`, its inverse `B`, and the quantities the Wegner proof uses.
#[derive(Debug, Clone)]
pub struct ToeplitzTransform {
    index_box: IndexBox,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    log_abs_det_a: f64,
    row_sum_norm_b: f64,
    condition: f64,
}

impl ToeplitzTransform {
    pub fn build(alpha: &ConvolutionVector, index_box: &IndexBox) -> Result<Self> {
        if alpha.dim() != index_box.dim() {
            return Err(Error::InvalidConvolution(format!(
                "convolution dimension {} does not match box dimension {}",
                alpha.dim(),
                index_box.dim()
            )));
        }
        let sites = index_box.plus_set();
        let n = sites.len();
        let mut a = DMatrix::zeros(n, n);
        for (row, j) in sites.iter().enumerate() {
            for (offset, value) in alpha.entries() {
                let k: Site = j.iter().zip(offset).map(|(x, g)| x - g).collect();
                if let Some(col) = index_box.position(&k) {
                    a[(row, col)] = *value;
                }
            }
        }

        let lu = a.clone().lu();
        let log_abs_det_a: f64 = lu.u().diagonal().iter().map(|u| u.abs().ln()).sum();
        let b = lu
            .try_inverse()
            .ok_or(Error::SingularTransform { condition: f64::INFINITY })?;
        let row_sum_norm_b = row_sum_norm(&b);
        let condition = row_sum_norm(&a) * row_sum_norm_b;
        if !condition.is_finite() || condition > SINGULARITY_THRESHOLD {
            return Err(Error::SingularTransform { condition });
        }
        Ok(Self {
            index_box: index_box.clone(),
            a,
            b,
            log_abs_det_a,
            row_sum_norm_b,
            condition,
        })
    }

    /// Transform for the identity convolution `Γ = {0}, α₀ = 1` on a box.
    pub fn identity(dim: usize, side: usize) -> Result<Self> {
        let alpha = ConvolutionVector::new(dim, vec![(vec![0; dim], 1.0)])?;
        Self::build(&alpha, &IndexBox::new(side, &alpha)?)
    }

    pub fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `det A`; may overflow to infinity on large boxes, see [`Self::log_abs_det_a`].
    pub fn det_a(&self) -> f64 {
        self.a.clone().lu().determinant()
    }

    pub fn log_abs_det_a(&self) -> f64 {
        self.log_abs_det_a
    }

    /// `|det B| = 1 / |det A|`.
    pub fn abs_det_b(&self) -> f64 {
        (-self.log_abs_det_a).exp()
    }

    pub fn row_sum_norm_b(&self) -> f64 {
        self.row_sum_norm_b
    }

    /// `‖A‖∞ ‖B‖∞`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `Σ_k |b_{k,j}|`, the column sum entering the gradient bound.
    pub fn column_abs_sum(&self, j: usize) -> f64 {
        self.b.column(j).iter().map(|x| x.abs()).sum()
    }

    /// `η = A ω`.
    pub fn forward_coordinates(&self, omega: &[f64]) -> Result<Vec<f64>> {
        apply(&self.a, omega)
    }

    /// `ω = B η`.
    pub fn inverse_coordinates(&self, eta: &[f64]) -> Result<Vec<f64>> {
        apply(&self.b, eta)
    }
}

fn apply(m: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.ncols() {
        return Err(Error::IndexMismatch { expected: m.ncols(), got: x.len() });
    }
    Ok((0..m.nrows())
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect())
}

/// Maximum over rows of the sum of absolute entries.
pub fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    pub bound: f64,
    pub actual: f64,
    pub holds: bool,
}

/// Compare `‖B‖` against `|α₀|⁻¹ (1 - α*/|α₀|)⁻¹`.
pub fn verify_norm_bound(t: &ToeplitzTransform, alpha: &ConvolutionVector) -> Result<NormBoundReport> {
    let bound = alpha.norm_bound()?;
    let actual = t.row_sum_norm_b();
    Ok(NormBoundReport { bound, actual, holds: actual <= bound + 1e-9 })
}

/// Largest absolute entry of `A B - I`.
pub fn inverse_residual(t: &ToeplitzTransform) -> f64 {
    let mut p = &t.a * &t.b;
    for i in 0..p.nrows() {
        p[(i, i)] -= 1.0;
    }
    p.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_difference(l: usize) -> ToeplitzTransform {
        let alpha = ConvolutionVector::one_dim(&[1.0, -1.0]).unwrap();
        ToeplitzTransform::build(&alpha, &IndexBox::new(l, &alpha).unwrap()).unwrap()
    }

    #[test]
    fn plus_set_in_one_dimension() {
        let alpha = ConvolutionVector::one_dim(&[1.0, -1.0]).unwrap();
        let bx = IndexBox::new(3, &alpha).unwrap();
        let expected: Vec<Site> = (-1..=2).map(|k| vec![k]).collect();
        assert_eq!(bx.plus_set(), expected.as_slice());
        assert_eq!(bx.lattice_positions(), vec![1, 2, 3]);
    }

    #[test]
    fn lattice_contained_in_plus_set() {
        let alpha =
            ConvolutionVector::new(2, vec![(vec![0, 0], 2.0), (vec![1, 0], 0.5), (vec![0, -1], 0.3)])
                .unwrap();
        let bx = IndexBox::new(4, &alpha).unwrap();
        for s in bx.lattice() {
            assert!(bx.position(s).is_some());
        }
        assert!(bx.plus_set().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unit_difference_inverse_is_lower_triangular_ones() {
        let t = unit_difference(3);
        assert_eq!(t.len(), 4);
        for j in 0..4 {
            for k in 0..4 {
                let expected = if j >= k { 1.0 } else { 0.0 };
                assert!((t.b()[(j, k)] - expected).abs() < 1e-14);
            }
        }
        assert_eq!(t.row_sum_norm_b(), 4.0);
        assert!((t.abs_det_b() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_transform() {
        let t = ToeplitzTransform::identity(1, 5).unwrap();
        assert_eq!(t.b(), &DMatrix::identity(5, 5));
        assert_eq!(t.row_sum_norm_b(), 1.0);
    }

    #[test]
    fn geometric_inverse_for_half_coupling() {
        let alpha = ConvolutionVector::one_dim(&[1.0, -0.5]).unwrap();
        let t = ToeplitzTransform::build(&alpha, &IndexBox::new(3, &alpha).unwrap()).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                let expected = if j >= k { 0.5f64.powi((j - k) as i32) } else { 0.0 };
                assert!((t.b()[(j, k)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn row_sum_norm_of_identity() {
        for n in [1, 3, 10] {
            assert_eq!(row_sum_norm(&DMatrix::identity(n, n)), 1.0);
        }
    }

    #[test]
    fn norm_bound_half_coupling() {
        let alpha = ConvolutionVector::one_dim(&[1.0, -0.5]).unwrap();
        let t = ToeplitzTransform::build(&alpha, &IndexBox::new(8, &alpha).unwrap()).unwrap();
        let r = verify_norm_bound(&t, &alpha).unwrap();
        assert_eq!(r.bound, 2.0);
        assert!(r.actual <= 2.0 && r.holds);
    }

    #[test]
    fn norm_bound_zero_coupling() {
        let alpha = ConvolutionVector::one_dim(&[1.0, 0.0]).unwrap();
        let t = ToeplitzTransform::build(&alpha, &IndexBox::new(8, &alpha).unwrap()).unwrap();
        let r = verify_norm_bound(&t, &alpha).unwrap();
        assert_eq!(r.bound, 1.0);
        assert_eq!(r.actual, 1.0);
    }

    #[test]
    fn norm_bound_rejects_unit_difference() {
        let alpha = ConvolutionVector::one_dim(&[1.0, -1.0]).unwrap();
        assert!(!alpha.admissible());
        let t = unit_difference(4);
        assert!(matches!(verify_norm_bound(&t, &alpha), Err(Error::NotAdmissible { .. })));
    }

    #[test]
    fn unit_difference_coordinates() {
        let t = unit_difference(3);
        let eta = t.forward_coordinates(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(eta, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.inverse_coordinates(&eta).unwrap(), vec![1.0; 4]);
        assert_eq!(t.forward_coordinates(&[0.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(
            t.forward_coordinates(&[0.0; 3]),
            Err(Error::IndexMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn invalid_vectors_rejected() {
        assert!(ConvolutionVector::one_dim(&[0.0, 1.0]).is_err());
        assert!(ConvolutionVector::new(1, vec![(vec![1], 1.0)]).is_err());
        assert!(ConvolutionVector::new(1, vec![(vec![0], 1.0), (vec![0], 2.0)]).is_err());
        assert!(ConvolutionVector::new(2, vec![(vec![0], 1.0)]).is_err());
    }

    #[test]
    fn singular_transform_detected() {
        // Λ⁺ = {-1, …, 3}: the 5x5 all-ones tridiagonal matrix has eigenvalue 1 + 2cos(2π/3) = 0.
        let alpha = ConvolutionVector::new(1, vec![(vec![-1], 1.0), (vec![0], 1.0), (vec![1], 1.0)])
            .unwrap();
        assert!(ToeplitzTransform::build(&alpha, &IndexBox::new(2, &alpha).unwrap()).is_ok());
        assert!(matches!(
            ToeplitzTransform::build(&alpha, &IndexBox::new(3, &alpha).unwrap()),
            Err(Error::SingularTransform { .. })
        ));
    }
}
