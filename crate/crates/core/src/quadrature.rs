//! One-dimensional quadrature: globally adaptive 7/15-point Gauss–Kronrod and
//! fixed-order Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-12, rel: 1e-10, max_intervals: 2000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, ..Self::default() }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

/// One 15-point Kronrod evaluation, returning `(kronrod, |kronrod - gauss|)`.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (i, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kron += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Fails with [`Error::QuadratureFailure`] when the interval budget is exhausted
/// before the error estimate meets the tolerance.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (value, error) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let (mut total, mut total_err) = (value, error);
    let mut evaluations = 15;
    while total_err > tol.target(total) {
        if heap.len() >= tol.max_intervals {
            return Err(Error::QuadratureFailure(format!(
                "no convergence on [{a}, {b}]: estimate {total:.6e}, error {total_err:.3e}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to drop the running-update rounding
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    if error > tol.target(value) * 10.0 && error > 1e-14 * value.abs().max(1.0) {
        return Err(Error::QuadratureFailure(format!(
            "interval [{a}, {b}] exhausted floating-point resolution (error {error:.3e})"
        )));
    }
    Ok(QuadResult { value, error, evaluations })
}

/// Integrate over consecutive pieces `[p_0, p_1], [p_1, p_2], …` of a sorted partition.
pub fn integrate_partition<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    let mut out = QuadResult { value: 0.0, error: 0.0, evaluations: 0 };
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let r = integrate(&mut f, w[0], w[1], tol)?;
        out.value += r.value;
        out.error += r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn mapped_rule<'a>(
    nodes: &'a [f64],
    weights: &'a [f64],
    a: f64,
    b: f64,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    nodes.iter().zip(weights).map(move |(x, w)| (c + h * x, h * w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| x.powi(10) - 3.0 * x, -1.0, 2.0, Tolerance::default()).unwrap();
        let exact = (2f64.powi(11) + 1.0) / 11.0 - 1.5 * (4.0 - 1.0);
        assert!((r.value - exact).abs() < 1e-12);
        assert_eq!(r.evaluations, 15);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let r = integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, Tolerance::new(1e-12, 1e-12)).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-11);
    }

    #[test]
    fn partition_integration_exact_for_piecewise() {
        let f = |x: f64| if x < 0.3 { 1.0 } else { x * x };
        let r = integrate_partition(f, &[0.0, 0.3, 1.0], Tolerance::default()).unwrap();
        assert!((r.value - (0.3 + (1.0 - 0.027) / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn failure_is_reported() {
        let tol = Tolerance { abs: 1e-15, rel: 0.0, max_intervals: 4 };
        assert!(matches!(
            integrate(|x: f64| (1.0 / x).sin(), 1e-3, 1.0, tol),
            Err(Error::QuadratureFailure(_))
        ));
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 8, 13] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((approx - exact).abs() < 1e-13, "n={n}");
        }
    }
}
