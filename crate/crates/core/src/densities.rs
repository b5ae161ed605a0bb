//! Push-forward of the product density under the Toeplitz transform.
//!
//! With `η = Aω` and `ω` iid with density `f`, the transformed coordinates have
//! the common density `k(η) = |det B| Π_{k∈Λ⁺} f((Bη)_k)`. This module evaluates
//! `k`, its one-dimensional marginals `g_j` and conditional densities
//! `ρ_j = k / g_j`, and the integral `∫ |∂_j k|` that enters the Wegner bound.
//!
//! `k` is piecewise polynomial: the kinks lie on the hyperplanes where some
//! `(Bη)_k` hits a breakpoint of `f`. All integrals here split along those
//! hyperplanes, so they are exact up to rounding for the built-in densities.

use serde::Serialize;

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::quadrature::{self, gauss_legendre, mapped_rule, Tolerance};
use crate::toeplitz::ToeplitzTransform;

/// Largest `L` for which marginals are computed.
pub const MARGINAL_MAX_LEN: usize = 12;
/// Largest `L` for the gradient integral.
pub const GRADIENT_MAX_LEN: usize = 6;
/// Largest `L` for nested box integration.
pub const BOX_MAX_LEN: usize = 4;
/// Marginals below this make the conditional density undefined.
pub const MARGINAL_FLOOR: f64 = 1e-14;

const SUPPORT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CommonDensity {
    transform: ToeplitzTransform,
    base: DensityModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marginal {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalDensityReport {
    pub j: usize,
    pub eta: Vec<f64>,
    pub k_value: f64,
    pub marginal_g: f64,
    /// `None` when the marginal is below [`MARGINAL_FLOOR`].
    pub rho: Option<f64>,
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientIntegralReport {
    pub j: usize,
    pub value: f64,
    pub error_estimate: f64,
    /// `‖f'‖_{L¹} Σ_k |b_{k,j}|`
    pub bound: f64,
    pub holds: bool,
}

impl CommonDensity {
    pub fn new(transform: ToeplitzTransform, base: DensityModel) -> Self {
        Self { transform, base }
    }

    pub fn transform(&self) -> &ToeplitzTransform {
        &self.transform
    }

    pub fn base(&self) -> &DensityModel {
        &self.base
    }

    /// `L = |Λ⁺|`.
    pub fn len(&self) -> usize {
        self.transform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transform.is_empty()
    }

    fn check_len(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.len() {
            return Err(Error::IndexMismatch { expected: self.len(), got: eta.len() });
        }
        Ok(())
    }

    /// `k(η) = |det B| Π f((Bη)_k)`.
    pub fn eval(&self, eta: &[f64]) -> Result<f64> {
        let omega = self.transform.inverse_coordinates(eta)?;
        Ok(self.eval_at_omega(&omega))
    }

    fn eval_at_omega(&self, omega: &[f64]) -> f64 {
        self.eval_at_omega_with_det(omega, self.transform.abs_det_b())
    }

    /// `|det B| ‖f‖∞^L`, attained at `η = A ω*` for any maximiser `ω*` of `F`.
    pub fn supremum(&self) -> f64 {
        self.transform.abs_det_b() * self.base.norm_inf().powi(self.len() as i32)
    }

    /// Restriction of `k` to the line `t ↦ η + (t - η_j) e_j`.
    ///
    /// Returns `ω` at `t = 0`, the column `B e_j`, and the sorted `t`-values
    /// where some factor crosses a breakpoint of `f`, clipped to the support.
    fn line(&self, j: usize, eta: &[f64]) -> Result<Option<LineRestriction>> {
        self.check_len(eta)?;
        if j >= self.len() {
            return Err(Error::IndexMismatch { expected: self.len(), got: j + 1 });
        }
        let mut base_eta = eta.to_vec();
        base_eta[j] = 0.0;
        let omega0 = self.transform.inverse_coordinates(&base_eta)?;
        let column: Vec<f64> = self.transform.b().column(j).iter().copied().collect();
        let (a, b) = self.base.support();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (w, c) in omega0.iter().zip(&column) {
            if *c == 0.0 {
                if *w < a - SUPPORT_SLACK || *w > b + SUPPORT_SLACK {
                    return Ok(None);
                }
            } else {
                let (t1, t2) = ((a - w) / c, (b - w) / c);
                lo = lo.max(t1.min(t2));
                hi = hi.min(t1.max(t2));
            }
        }
        if !(lo < hi) {
            return Ok(None);
        }
        let mut points = vec![lo, hi];
        let breaks = self.base.breakpoints();
        for (w, c) in omega0.iter().zip(&column) {
            if *c != 0.0 {
                points.extend(breaks.iter().map(|p| (p - w) / c).filter(|t| *t > lo && *t < hi));
            }
        }
        points.sort_by(f64::total_cmp);
        points.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + x.abs()));
        Ok(Some(LineRestriction { omega0, column, points }))
    }

    /// Sorted `η_j`-values bounding the support of `k` along the line through
    /// `η` in direction `e_j`, including every kink in between; empty when the
    /// line misses the support. The `j`-th entry of `eta` is ignored.
    pub fn line_breakpoints(&self, j: usize, eta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.line(j, eta)?.map(|l| l.points).unwrap_or_default())
    }

    /// `g_j(η) = ∫ k(η) dη_j`; the `j`-th entry of `eta` is ignored.
    pub fn marginal(&self, j: usize, eta: &[f64]) -> Result<Marginal> {
        if self.len() > MARGINAL_MAX_LEN {
            return Err(Error::Precondition(format!(
                "marginal requires L <= {MARGINAL_MAX_LEN}, got {}",
                self.len()
            )));
        }
        let Some(line) = self.line(j, eta)? else {
            return Ok(Marginal { value: 0.0, error: 0.0 });
        };
        let det = self.transform.abs_det_b();
        let mut omega = line.omega0.clone();
        let integrand = |t: f64| {
            for (k, w) in omega.iter_mut().enumerate() {
                *w = line.omega0[k] + t * line.column[k];
            }
            self.eval_at_omega_with_det(&omega, det)
        };
        let tol = Tolerance { abs: 0.0, rel: 1e-10, max_intervals: 4000 };
        let r = quadrature::integrate_partition(integrand, &line.points, tol)?;
        if r.error > 1e-8 * r.value.abs() && r.error > 1e-300 {
            return Err(Error::QuadratureFailure(format!(
                "marginal error {:.3e} exceeds 1e-8 relative of {:.6e}",
                r.error, r.value
            )));
        }
        Ok(Marginal { value: r.value, error: r.error })
    }

    fn eval_at_omega_with_det(&self, omega: &[f64], det: f64) -> f64 {
        let mut value = det;
        for &w in omega {
            value *= self.base.eval(w);
            if value == 0.0 {
                break;
            }
        }
        value
    }

    /// `ρ_j(η) = k(η) / g_j(η)`, conditional on the other coordinates in `Λ⁺`.
    pub fn conditional(&self, j: usize, eta: &[f64]) -> Result<ConditionalDensityReport> {
        let k_value = self.eval(eta)?;
        let g = self.marginal(j, eta)?;
        let rho = (g.value >= MARGINAL_FLOOR).then(|| (k_value / g.value).max(0.0));
        Ok(ConditionalDensityReport {
            j,
            eta: eta.to_vec(),
            k_value,
            marginal_g: g.value,
            rho,
            quadrature_error: g.error,
        })
    }

    /// `sup_{η_j} k(η)` along the line through `η` in direction `e_j`.
    ///
    /// On each polynomial piece the maximum is searched on a fine grid and
    /// polished by golden-section search.
    pub fn line_supremum(&self, j: usize, eta: &[f64]) -> Result<f64> {
        let Some(line) = self.line(j, eta)? else {
            return Ok(0.0);
        };
        let det = self.transform.abs_det_b();
        let mut omega = line.omega0.clone();
        let mut value = |t: f64| {
            for (k, w) in omega.iter_mut().enumerate() {
                *w = line.omega0[k] + t * line.column[k];
            }
            self.eval_at_omega_with_det(&omega, det)
        };
        let mut best = 0.0f64;
        for w in line.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let steps = 64;
            let mut arg = a;
            for s in 0..=steps {
                let t = a + (b - a) * s as f64 / steps as f64;
                let v = value(t);
                if v > best {
                    best = v;
                    arg = t;
                }
            }
            let h = (b - a) / steps as f64;
            let (mut lo, mut hi) = ((arg - h).max(a), (arg + h).min(b));
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let x1 = hi - phi * (hi - lo);
                let x2 = lo + phi * (hi - lo);
                if value(x1) < value(x2) {
                    lo = x1;
                } else {
                    hi = x2;
                }
            }
            best = best.max(value(0.5 * (lo + hi)));
        }
        Ok(best)
    }

    /// `∫_{ℝ^L} |∂_j k(η)| dη`, computed in `ω`-coordinates as
    /// `∫ |Σ_k b_{k,j} f'(ω_k) Π_{i≠k} f(ω_i)| dω` with tensor Gauss–Legendre
    /// rules on every cell of the breakpoint grid.
    pub fn gradient_integral(&self, j: usize, nodes_per_axis: usize) -> Result<GradientIntegralReport> {
        let l = self.len();
        if l > GRADIENT_MAX_LEN {
            return Err(Error::Precondition(format!(
                "gradient integral requires L <= {GRADIENT_MAX_LEN}, got {l}"
            )));
        }
        if j >= l {
            return Err(Error::IndexMismatch { expected: l, got: j + 1 });
        }
        let norm = self.base.norm_derivative_l1()?;
        let column: Vec<f64> = self.transform.b().column(j).iter().copied().collect();
        let min_nodes = self.base.degree().div_ceil(2) + 1;
        let coarse = self.tensor_gradient(&column, nodes_per_axis.max(min_nodes));
        let fine = self.tensor_gradient(&column, 2 * nodes_per_axis.max(min_nodes));
        let error_estimate = (fine - coarse).abs();
        if !fine.is_finite() {
            return Err(Error::QuadratureFailure("non-finite gradient integral".into()));
        }
        let bound = norm * self.transform.column_abs_sum(j);
        Ok(GradientIntegralReport { j, value: fine, error_estimate, bound, holds: fine <= bound + 1e-6 })
    }

    fn tensor_gradient(&self, column: &[f64], n: usize) -> f64 {
        let l = column.len();
        let (x, w) = gauss_legendre(n);
        // per piece: nodes, weights, f and f' at the nodes
        let tables: Vec<Vec<(f64, f64, f64)>> = self
            .base
            .pieces()
            .iter()
            .map(|p| {
                mapped_rule(&x, &w, p.lo, p.hi)
                    .map(|(t, wt)| (wt, p.eval(t).max(0.0), p.derivative(t)))
                    .collect()
            })
            .collect();
        let pieces = tables.len();
        let per_axis = pieces * n;
        let total = per_axis.pow(l as u32);
        let mut sum = 0.0;
        let mut idx = vec![0usize; l];
        for _ in 0..total {
            let mut weight = 1.0;
            let mut fs = [0.0f64; GRADIENT_MAX_LEN];
            let mut ds = [0.0f64; GRADIENT_MAX_LEN];
            for (axis, &i) in idx.iter().enumerate() {
                let (wt, fv, dv) = tables[i / n][i % n];
                weight *= wt;
                fs[axis] = fv;
                ds[axis] = dv;
            }
            let mut g = 0.0;
            for k in 0..l {
                if column[k] == 0.0 {
                    continue;
                }
                let mut term = column[k] * ds[k];
                for (i, f) in fs.iter().enumerate().take(l) {
                    if i != k {
                        term *= f;
                    }
                }
                g += term;
            }
            sum += weight * g.abs();
            for axis in (0..l).rev() {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
            }
        }
        sum
    }

    /// Bounding box of the support of `k` in `η`-coordinates.
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.base.support();
        let am = self.transform.a();
        let lower = (0..self.len())
            .map(|i| am.row(i).iter().map(|c| (c * a).min(c * b)).sum())
            .collect();
        let upper = (0..self.len())
            .map(|i| am.row(i).iter().map(|c| (c * a).max(c * b)).sum())
            .collect();
        (lower, upper)
    }

    /// `∫_{[lower, upper]} k(η) dη` by nested Gauss–Legendre integration.
    ///
    /// At each level the integrand is polynomial between the projections of
    /// the vertices of the arrangement formed by the hyperplanes
    /// `(Bη)_k = breakpoint` and `η_i = lower_i, upper_i`, so a rule of
    /// sufficient order on each of those intervals is exact.
    pub fn integrate_box(&self, lower: &[f64], upper: &[f64]) -> Result<f64> {
        let l = self.len();
        if l > BOX_MAX_LEN {
            return Err(Error::Precondition(format!(
                "box integration requires L <= {BOX_MAX_LEN}, got {l}"
            )));
        }
        self.check_len(lower)?;
        self.check_len(upper)?;
        let (sl, su) = self.support_box();
        let lower: Vec<f64> = lower.iter().zip(&sl).map(|(x, s)| x.max(*s)).collect();
        let upper: Vec<f64> = upper.iter().zip(&su).map(|(x, s)| x.min(*s)).collect();
        if lower.iter().zip(&upper).any(|(a, b)| a >= b) {
            return Ok(0.0);
        }
        let b = self.transform.b();
        let mut planes = Vec::new();
        for k in 0..l {
            let row: Vec<f64> = b.row(k).iter().copied().collect();
            for p in self.base.breakpoints() {
                planes.push((row.clone(), p));
            }
        }
        for i in 0..l {
            let mut row = vec![0.0; l];
            row[i] = 1.0;
            planes.push((row.clone(), lower[i]));
            planes.push((row, upper[i]));
        }
        let order = (self.base.degree() * l + l).div_ceil(2) + 1;
        let rule = gauss_legendre(order);
        let ctx = BoxIntegration { density: self, lower: &lower, upper: &upper, planes: &planes, rule: &rule };
        let mut eta = vec![0.0; l];
        Ok(ctx.level(0, &mut eta))
    }
}

struct LineRestriction {
    omega0: Vec<f64>,
    column: Vec<f64>,
    points: Vec<f64>,
}

struct BoxIntegration<'a> {
    density: &'a CommonDensity,
    lower: &'a [f64],
    upper: &'a [f64],
    planes: &'a [(Vec<f64>, f64)],
    rule: &'a (Vec<f64>, Vec<f64>),
}

impl BoxIntegration<'_> {
    fn level(&self, i: usize, eta: &mut [f64]) -> f64 {
        let l = eta.len();
        if i == l {
            return self.density.eval(eta).unwrap_or(0.0);
        }
        let mut cuts = vec![self.lower[i], self.upper[i]];
        cuts.extend(self.vertex_projections(i, eta));
        cuts.retain(|t| *t >= self.lower[i] && *t <= self.upper[i]);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-13 * (1.0 + x.abs()));
        let (nodes, weights) = self.rule;
        let mut total = 0.0;
        for w in cuts.windows(2) {
            for (t, wt) in mapped_rule(nodes, weights, w[0], w[1]) {
                eta[i] = t;
                total += wt * self.level(i + 1, eta);
            }
        }
        eta[i] = 0.0;
        total
    }

    /// Values of `η_i` at the vertices of the arrangement inside the slice where
    /// `η_0, …, η_{i-1}` are fixed.
    fn vertex_projections(&self, i: usize, eta: &[f64]) -> Vec<f64> {
        let l = eta.len();
        let free = l - i;
        let mut out = Vec::new();
        let mut chosen = Vec::with_capacity(free);
        self.choose(0, free, &mut chosen, &mut |set: &[usize]| {
            let mut m = nalgebra::DMatrix::zeros(free, free);
            let mut rhs = nalgebra::DVector::zeros(free);
            for (r, &p) in set.iter().enumerate() {
                let (row, c) = &self.planes[p];
                let fixed: f64 = (0..i).map(|q| row[q] * eta[q]).sum();
                for q in 0..free {
                    m[(r, q)] = row[i + q];
                }
                rhs[r] = c - fixed;
            }
            if let Some(sol) = m.lu().solve(&rhs) {
                let mut point = eta.to_vec();
                point[i..].copy_from_slice(sol.as_slice());
                if self.inside(&point) {
                    out.push(point[i]);
                }
            }
        });
        out
    }

    fn choose(&self, start: usize, k: usize, chosen: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if chosen.len() == k {
            visit(chosen);
            return;
        }
        for p in start..self.planes.len() {
            chosen.push(p);
            self.choose(p + 1, k, chosen, visit);
            chosen.pop();
        }
    }

    fn inside(&self, eta: &[f64]) -> bool {
        let tol = 1e-9;
        if eta
            .iter()
            .zip(self.lower.iter().zip(self.upper))
            .any(|(x, (lo, hi))| *x < lo - tol || *x > hi + tol)
        {
            return false;
        }
        let (a, b) = self.density.base.support();
        match self.density.transform.inverse_coordinates(eta) {
            Ok(omega) => omega.iter().all(|w| *w >= a - tol && *w <= b + tol),
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toeplitz::{ConvolutionVector, IndexBox};

    fn density(coeffs: &[f64], l: usize, f: DensityModel) -> CommonDensity {
        let alpha = ConvolutionVector::one_dim(coeffs).unwrap();
        let t = ToeplitzTransform::build(&alpha, &IndexBox::new(l, &alpha).unwrap()).unwrap();
        CommonDensity::new(t, f)
    }

    #[test]
    fn identity_at_origin() {
        let cd = density(&[1.0], 4, DensityModel::triangular());
        assert_eq!(cd.eval(&[0.0; 4]).unwrap(), 16.0);
        let g = cd.marginal(2, &[0.0; 4]).unwrap();
        assert!((g.value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn half_difference_common_density_is_one() {
        let cd = density(&[1.0, -0.5], 4, DensityModel::uniform(0.0, 1.0).unwrap());
        // Λ⁺ = {-1..3}; position of site j is j + 1
        for v in [0.0, 0.3, 1.0] {
            let mut eta = vec![0.0; 5];
            eta[3] = v;
            assert_eq!(cd.eval(&eta).unwrap(), 1.0);
        }
    }

    #[test]
    fn unit_difference_origin_value() {
        let cd = density(&[1.0, -1.0], 2, DensityModel::triangular());
        assert_eq!(cd.eval(&[0.0; 3]).unwrap(), 8.0);
    }

    #[test]
    fn conditional_reduces_to_f_for_identity() {
        let f = DensityModel::smooth_bump(-1.0, 1.0).unwrap();
        let cd = density(&[1.0], 3, f.clone());
        let eta = [0.2, -0.7, 0.5];
        for j in 0..3 {
            let r = cd.conditional(j, &eta).unwrap();
            assert!((r.rho.unwrap() - f.eval(eta[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_undefined_outside_support() {
        let cd = density(&[1.0], 2, DensityModel::triangular());
        let r = cd.conditional(0, &[0.0, 3.0]).unwrap();
        assert_eq!(r.marginal_g, 0.0);
        assert!(r.rho.is_none());
    }

    #[test]
    fn gradient_integral_identity_equality() {
        let cd = density(&[1.0], 3, DensityModel::triangular());
        let r = cd.gradient_integral(1, 2).unwrap();
        assert!((r.value - 4.0).abs() < 1e-12);
        assert!((r.bound - 4.0).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn gradient_integral_scales_with_alpha0() {
        let cd = density(&[2.0], 2, DensityModel::triangular());
        let r = cd.gradient_integral(0, 2).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!((r.bound - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_integral_rejects_uniform() {
        let cd = density(&[1.0], 2, DensityModel::uniform(0.0, 1.0).unwrap());
        assert!(matches!(cd.gradient_integral(0, 2), Err(Error::NotDifferentiable(_))));
    }

    #[test]
    fn normalization_identity_and_unit_difference() {
        let cd = density(&[1.0], 3, DensityModel::triangular());
        let (lo, hi) = cd.support_box();
        assert!((cd.integrate_box(&lo, &hi).unwrap() - 1.0).abs() < 1e-12);
        let cd = density(&[1.0, -1.0], 2, DensityModel::triangular());
        let (lo, hi) = cd.support_box();
        assert!((cd.integrate_box(&lo, &hi).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn supremum_formula() {
        let cd = density(&[1.0, -0.5], 2, DensityModel::triangular());
        assert!((cd.supremum() - 8.0).abs() < 1e-12);
        assert!((cd.eval(&[0.0; 3]).unwrap() - cd.supremum()).abs() < 1e-12);
    }

    #[test]
    fn size_caps() {
        let cd = density(&[1.0, -0.5], 12, DensityModel::triangular());
        assert!(matches!(cd.marginal(0, &[0.0; 13]), Err(Error::Precondition(_))));
        assert!(matches!(cd.gradient_integral(0, 2), Err(Error::Precondition(_))));
        assert!(matches!(cd.integrate_box(&[0.0; 13], &[1.0; 13]), Err(Error::Precondition(_))));
    }
}
