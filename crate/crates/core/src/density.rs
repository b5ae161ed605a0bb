//! Single-site probability densities `f` of the coupling constants.
//!
//! Every built-in family is piecewise polynomial with monotone pieces, so
//! `∫f`, `‖f‖∞` and `‖f'‖_{L¹}` are computed exactly from the pieces and the
//! breakpoints are available to breakpoint-aware quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A polynomial `Σ c_i x^i` restricted to `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
    }

    fn antiderivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + c / (i + 1) as f64)
            * x
    }

    /// `∫_{lo}^{x} p`.
    pub fn integral_to(&self, x: f64) -> f64 {
        self.antiderivative(x) - self.antiderivative(self.lo)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// `∫_{lo}^{hi} x^k p(x) dx`.
    fn moment(&self, k: usize) -> f64 {
        let mut shifted = vec![0.0; k];
        shifted.extend_from_slice(&self.coeffs);
        let p = Piece { lo: self.lo, hi: self.hi, coeffs: shifted };
        p.integral_to(self.hi)
    }
}

/// Built-in density families, selected by name in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityFamily {
    /// `f(x) = 2 - 4|x|` on `[-1/2, 1/2]`.
    Triangular,
    /// `f = χ_{[a,b]} / (b-a)`; not weakly differentiable.
    Uniform {
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        b: Option<f64>,
    },
    /// `f(x) = c (1 - t²)²` with `t` the affine image of `[a, b]` on `[-1, 1]`.
    SmoothBump { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityFamily", into = "DensityFamily")]
pub struct DensityModel {
    family: DensityFamily,
    pieces: Vec<Piece>,
    cdf_at_piece_start: Vec<f64>,
}

impl TryFrom<DensityFamily> for DensityModel {
    type Error = Error;

    fn try_from(family: DensityFamily) -> Result<Self> {
        DensityModel::new(family)
    }
}

impl From<DensityModel> for DensityFamily {
    fn from(d: DensityModel) -> Self {
        d.family
    }
}

impl DensityModel {
    pub fn new(family: DensityFamily) -> Result<Self> {
        let pieces = match &family {
            DensityFamily::Triangular => vec![
                Piece { lo: -0.5, hi: 0.0, coeffs: vec![2.0, 4.0] },
                Piece { lo: 0.0, hi: 0.5, coeffs: vec![2.0, -4.0] },
            ],
            DensityFamily::Uniform { a, b } => {
                let (a, b) = (a.unwrap_or(0.0), b.unwrap_or(1.0));
                check_interval(a, b)?;
                vec![Piece { lo: a, hi: b, coeffs: vec![1.0 / (b - a)] }]
            }
            DensityFamily::SmoothBump { a, b } => {
                let (a, b) = (*a, *b);
                check_interval(a, b)?;
                // t = (2x - a - b)/(b - a) = s x + r
                let s = 2.0 / (b - a);
                let r = -(a + b) / (b - a);
                let c = 15.0 / (8.0 * (b - a));
                // (1 - t²)² = 1 - 2t² + t⁴ expanded in x
                let t = [r, s];
                let t2 = poly_mul(&t, &t);
                let t4 = poly_mul(&t2, &t2);
                let mut coeffs = vec![0.0; 5];
                coeffs[0] += 1.0;
                for (i, v) in t2.iter().enumerate() {
                    coeffs[i] -= 2.0 * v;
                }
                for (i, v) in t4.iter().enumerate() {
                    coeffs[i] += v;
                }
                let coeffs: Vec<f64> = coeffs.iter().map(|v| c * v).collect();
                let mid = 0.5 * (a + b);
                vec![
                    Piece { lo: a, hi: mid, coeffs: coeffs.clone() },
                    Piece { lo: mid, hi: b, coeffs },
                ]
            }
        };
        let mut cdf_at_piece_start = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            cdf_at_piece_start.push(acc);
            acc += p.integral_to(p.hi);
        }
        Ok(Self { family, pieces, cdf_at_piece_start })
    }

    pub fn triangular() -> Self {
        Self::new(DensityFamily::Triangular).expect("built-in density")
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(DensityFamily::Uniform { a: Some(a), b: Some(b) })
    }

    pub fn smooth_bump(a: f64, b: f64) -> Result<Self> {
        Self::new(DensityFamily::SmoothBump { a, b })
    }

    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    /// Stable identifier used in outputs.
    pub fn id(&self) -> String {
        match &self.family {
            DensityFamily::Triangular => "triangular".into(),
            DensityFamily::Uniform { .. } => {
                let (a, b) = self.support();
                format!("uniform[{a},{b}]")
            }
            DensityFamily::SmoothBump { a, b } => format!("smooth_bump[{a},{b}]"),
        }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn support(&self) -> (f64, f64) {
        (self.pieces[0].lo, self.pieces[self.pieces.len() - 1].hi)
    }

    /// Piece boundaries including both ends of the support.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        v.push(self.support().1);
        v
    }

    /// Highest polynomial degree over the pieces.
    pub fn degree(&self) -> usize {
        self.pieces.iter().map(Piece::degree).max().unwrap_or(0)
    }

    /// `f(x)`; the support is closed, so the endpoints carry the one-sided limit.
    pub fn eval(&self, x: f64) -> f64 {
        match self.piece_for(x) {
            Some(p) => p.eval(x).max(0.0),
            None => 0.0,
        }
    }

    /// `f'(x)` away from the breakpoints (one-sided at them), zero outside the support.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.piece_for(x) {
            Some(p) => p.derivative(x),
            None => 0.0,
        }
    }

    fn piece_for(&self, x: f64) -> Option<&Piece> {
        let (a, b) = self.support();
        if !(a..=b).contains(&x) {
            return None;
        }
        let idx = self.pieces.partition_point(|p| p.hi < x);
        self.pieces.get(idx.min(self.pieces.len() - 1))
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.integral_to(p.hi)).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| [p.eval(p.lo), p.eval(p.hi)])
            .fold(0.0, f64::max)
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.family, DensityFamily::Uniform { .. })
    }

    /// `‖f'‖_{L¹}`, the total variation of `f`; pieces are monotone.
    pub fn norm_derivative_l1(&self) -> Result<f64> {
        if !self.is_differentiable() {
            return Err(Error::NotDifferentiable(self.id()));
        }
        Ok(self.pieces.iter().map(|p| (p.eval(p.hi) - p.eval(p.lo)).abs()).sum())
    }

    pub fn mean(&self) -> f64 {
        self.pieces.iter().map(|p| p.moment(1)).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pieces.iter().map(|p| p.moment(2)).sum::<f64>() - m * m
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let idx = self.pieces.partition_point(|p| p.hi < x).min(self.pieces.len() - 1);
        self.cdf_at_piece_start[idx] + self.pieces[idx].integral_to(x)
    }

    /// Inverse-CDF sampler: maps a uniform variate `u ∈ [0, 1)` into the support.
    pub fn sample(&self, u: f64) -> f64 {
        let (a, b) = self.support();
        if u <= 0.0 {
            return a;
        }
        if u >= 1.0 {
            return b;
        }
        match self.family {
            DensityFamily::Triangular => {
                if u < 0.5 {
                    -0.5 + (u / 2.0).sqrt()
                } else {
                    0.5 - ((1.0 - u) / 2.0).sqrt()
                }
            }
            DensityFamily::Uniform { .. } => a + u * (b - a),
            DensityFamily::SmoothBump { .. } => self.invert_cdf(u),
        }
    }

    fn invert_cdf(&self, u: f64) -> f64 {
        let idx = self
            .cdf_at_piece_start
            .partition_point(|&c| c <= u)
            .saturating_sub(1);
        let piece = &self.pieces[idx];
        let target = u - self.cdf_at_piece_start[idx];
        let (mut lo, mut hi) = (piece.lo, piece.hi);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if piece.integral_to(mid) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..2 {
            let slope = piece.eval(x);
            if slope > 0.0 {
                x = (x - (piece.integral_to(x) - target) / slope).clamp(piece.lo, piece.hi);
            }
        }
        x
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidDensity(format!("support [{a}, {b}] is not a proper interval")));
    }
    Ok(())
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_exact_quantities() {
        let f = DensityModel::triangular();
        assert!((f.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(f.norm_inf(), 2.0);
        // |f'| = 4 on two pieces of length 1/2
        assert_eq!(f.norm_derivative_l1().unwrap(), 4.0);
        assert!(f.mean().abs() < 1e-15);
        assert!((f.variance() - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(f.eval(0.0), 2.0);
        assert_eq!(f.eval(0.25), 1.0);
        assert_eq!(f.eval(-0.25), 1.0);
        assert_eq!(f.eval(0.6), 0.0);
        assert_eq!(f.derivative(-0.1), 4.0);
        assert_eq!(f.derivative(0.1), -4.0);
    }

    #[test]
    fn uniform_is_flagged() {
        let f = DensityModel::uniform(0.0, 1.0).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(1.0 + 1e-12), 0.0);
        assert!(matches!(f.norm_derivative_l1(), Err(Error::NotDifferentiable(_))));
    }

    #[test]
    fn smooth_bump_exact_quantities() {
        let f = DensityModel::smooth_bump(-1.0, 2.0).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 1e-13);
        let c = 15.0 / (8.0 * 3.0);
        assert!((f.norm_inf() - c).abs() < 1e-13);
        assert!((f.norm_derivative_l1().unwrap() - 2.0 * c).abs() < 1e-13);
        assert!((f.mean() - 0.5).abs() < 1e-13);
        assert!(f.eval(-1.0).abs() < 1e-13 && f.eval(2.0).abs() < 1e-13);
        // C¹ at the ends
        assert!(f.derivative(-1.0).abs() < 1e-12 && f.derivative(2.0).abs() < 1e-12);
    }

    #[test]
    fn samplers_invert_the_cdf() {
        for f in [
            DensityModel::triangular(),
            DensityModel::uniform(-2.0, 3.0).unwrap(),
            DensityModel::smooth_bump(0.0, 1.0).unwrap(),
        ] {
            for i in 0..=100 {
                let u = i as f64 / 100.0;
                let x = f.sample(u);
                let (a, b) = f.support();
                assert!(x >= a && x <= b);
                assert!((f.cdf(x) - u).abs() < 1e-12, "{} u={u}", f.id());
            }
        }
    }

    #[test]
    fn invalid_support_rejected() {
        assert!(DensityModel::uniform(1.0, 1.0).is_err());
        assert!(DensityModel::smooth_bump(2.0, 1.0).is_err());
    }
}
