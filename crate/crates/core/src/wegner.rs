//! Monte Carlo checks of the Wegner estimate `E[Tr P_ω^l([E-ε, E])] ≤ C ε l^d`
//! and of the two inequalities its proof rests on: spectral averaging in one
//! transformed coordinate, and the resulting single-site bound
//! `E⟨φ, χ_j P(I) χ_j φ⟩ ≤ |I| ‖f'‖₁ Σ_k |b_{k,j}| / κ`.
//!
//! Every sample `i` of a run uses seed `seed + i`, and the same samples are
//! reused for all `ε` of a box size, so sweep curves are monotone in `ε` by
//! construction and independent of thread scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::CommonDensity;
use crate::error::{Error, Result};
use crate::operator::{AlloyModel, CouplingSource, DiscreteHamiltonian};
use crate::quadrature::{self, Tolerance};
use crate::spectral::{eigenpairs, CountBackend, Counter};
use crate::stats;
use crate::toeplitz::{ConvolutionVector, IndexBox, ToeplitzTransform};

/// Resamples used by [`fit_scaling`].
pub const BOOTSTRAP_RESAMPLES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub mean: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub samples: usize,
}

fn trace_estimate(counts: &[f64]) -> TraceEstimate {
    TraceEstimate { mean: stats::mean(counts), half_width: stats::half_width95(counts), samples: counts.len() }
}

fn counters(model: &AlloyModel, samples: usize, seed: u64, backend: CountBackend) -> Result<Vec<Counter>> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            Counter::new(&model.realize(s)?, backend, s)
        })
        .collect()
}

/// Monte Carlo mean of `Tr P_ω^l([E-ε, E])`.
pub fn expected_trace(
    model: &AlloyModel,
    energy: f64,
    eps: f64,
    samples: usize,
    seed: u64,
    backend: CountBackend,
) -> Result<TraceEstimate> {
    if !(eps >= 0.0) || samples == 0 {
        return Err(Error::Precondition(format!("need eps >= 0 and samples >= 1 (eps={eps}, samples={samples})")));
    }
    let counts: Vec<f64> = counters(model, samples, seed, backend)?
        .iter()
        .map(|c| c.trace_projection(energy - eps, energy).map(|n| n as f64))
        .collect::<Result<_>>()?;
    Ok(trace_estimate(&counts))
}

/// Eigenvalues pooled over `samples` draws on every box size in `sizes`, sorted.
pub fn pilot_spectrum(model: &AlloyModel, sizes: &[usize], samples: usize, seed: u64) -> Result<Vec<f64>> {
    let mut pooled = Vec::new();
    for &l in sizes {
        let m = model.with_side(l)?;
        for c in counters(&m, samples, seed, CountBackend::Dense)? {
            if let Counter::Spectrum(s) = c {
                pooled.extend(s.eigenvalues);
            }
        }
    }
    if pooled.is_empty() {
        return Err(Error::InsufficientData("pilot run produced no eigenvalues".into()));
    }
    pooled.sort_by(f64::total_cmp);
    Ok(pooled)
}

/// Energy at quantile `q` of the [`pilot_spectrum`].
pub fn pilot_energy(model: &AlloyModel, sizes: &[usize], samples: usize, seed: u64, q: f64) -> Result<f64> {
    Ok(stats::quantile(&pilot_spectrum(model, sizes, samples, seed)?, q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WegnerSweepConfig {
    pub energy: f64,
    /// Positive and strictly decreasing.
    pub epsilons: Vec<f64>,
    pub box_sizes: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub backend: CountBackend,
}

impl WegnerSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Precondition("epsilons must be positive and finite".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Precondition("epsilons must be strictly decreasing".into()));
        }
        if self.box_sizes.is_empty() || self.box_sizes.contains(&0) {
            return Err(Error::Precondition("box sizes must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Precondition("samples must be positive".into()));
        }
        Ok(())
    }

    /// `count` log-spaced values from `hi` down to `lo`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![hi];
        }
        (0..count)
            .map(|i| (hi.ln() + (lo.ln() - hi.ln()) * i as f64 / (count - 1) as f64).exp())
            .collect()
    }
}

/// The `ε` range over which `E[Tr P]` is expected to be linear in `ε`.
///
/// The upper edge is `WINDOW_UPPER_FRACTION` of the distance from `E` to the
/// pooled bottom of the spectrum, short enough that the density of states is
/// nearly constant across `[E-ε, E]`; the lower edge is ten pooled mean level spacings near `E`
/// (spacing of the eigenvalues of all samples together), i.e. about ten
/// expected events per cell.
pub const WINDOW_UPPER_FRACTION: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearWindow {
    pub l: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub pooled_min_eigenvalue: f64,
}

impl LinearWindow {
    pub fn contains(&self, eps: f64) -> bool {
        eps >= self.eps_min && eps <= self.eps_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub energy: f64,
    pub eps: f64,
    pub l: usize,
    pub samples: usize,
    pub mean: f64,
    pub half_width: f64,
    pub in_window: bool,
    /// `Tr P_ω^l([E-ε, E])` for each sample, in seed order.
    #[serde(skip)]
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub dim: usize,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
    pub windows: Vec<LinearWindow>,
}

impl SweepResult {
    /// `E[Tr P]` is nondecreasing in `ε` for every box size.
    pub fn is_monotone(&self) -> bool {
        self.windows.iter().all(|w| {
            let mut cells: Vec<&SweepCell> = self.cells.iter().filter(|c| c.l == w.l).collect();
            cells.sort_by(|a, b| a.eps.total_cmp(&b.eps));
            cells.windows(2).all(|p| p[0].mean <= p[1].mean)
        })
    }
}

/// Run every `(ε, l)` cell of the sweep.
pub fn sweep(model: &AlloyModel, config: &WegnerSweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let energy = config.energy;
    let mut cells = Vec::new();
    let mut windows = Vec::new();
    for &l in &config.box_sizes {
        let m = model.with_side(l)?;
        let counters = counters(&m, config.samples, config.seed, config.backend)?;
        let lambda_min = counters.iter().map(Counter::min_eigenvalue).fold(f64::INFINITY, f64::min);
        let eps_max = (energy - lambda_min) * WINDOW_UPPER_FRACTION;
        let eps_min = if eps_max > 0.0 {
            let near = counters
                .iter()
                .map(|c| c.trace_projection(energy - eps_max, energy + eps_max))
                .sum::<Result<usize>>()?;
            if near == 0 { f64::INFINITY } else { 10.0 * 2.0 * eps_max / near as f64 }
        } else {
            f64::INFINITY
        };
        let window = LinearWindow { l, eps_min, eps_max, pooled_min_eigenvalue: lambda_min };
        for &eps in &config.epsilons {
            let counts = counters
                .iter()
                .map(|c| c.trace_projection(energy - eps, energy).map(|n| n as u32))
                .collect::<Result<Vec<u32>>>()?;
            let as_f64: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
            let est = trace_estimate(&as_f64);
            cells.push(SweepCell {
                energy,
                eps,
                l,
                samples: config.samples,
                mean: est.mean,
                half_width: est.half_width,
                in_window: window.contains(eps),
                counts,
            });
        }
        windows.push(window);
    }
    Ok(SweepResult { dim: model.grid.dim, seed: config.seed, cells, windows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFitResult {
    pub slope_eps: f64,
    pub slope_vol: f64,
    pub intercept: f64,
    /// 95% bootstrap percentile intervals.
    pub ci_eps: (f64, f64),
    pub ci_vol: (f64, f64),
    pub half_width_eps: f64,
    pub half_width_vol: f64,
    pub r_squared: f64,
    /// `max mean / (ε l^d)` over the fitted cells.
    pub wegner_constant: f64,
    pub cells_used: usize,
    pub resamples: usize,
}

/// Weighted by the total event count of each cell: the log of a Poisson-like
/// mean over `n` samples has variance about `1 / (n · mean)`.
fn joint_fit(points: &[(f64, usize, f64)], samples: usize) -> Result<stats::LeastSquares> {
    let design: Vec<Vec<f64>> =
        points.iter().map(|(eps, l, _)| vec![1.0, eps.ln(), (*l as f64).ln()]).collect();
    let y: Vec<f64> = points.iter().map(|(_, _, m)| m.ln()).collect();
    let w: Vec<f64> = points.iter().map(|(_, _, m)| m * samples as f64).collect();
    stats::weighted_least_squares(&design, &y, &w)
}

fn distinct<T: PartialEq + Copy>(values: impl Iterator<Item = T>) -> usize {
    let mut seen: Vec<T> = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.len()
}

/// Joint weighted least-squares fit `log E[Tr P] = c + p log ε + q log l` over the cells
/// inside their linear windows, with bootstrap intervals from resampling the
/// realizations of each box size.
pub fn fit_scaling(result: &SweepResult, resamples: usize) -> Result<ScalingFitResult> {
    let used: Vec<&SweepCell> = result.cells.iter().filter(|c| c.in_window && c.mean > 0.0).collect();
    if distinct(used.iter().map(|c| c.eps.to_bits())) < 3 || distinct(used.iter().map(|c| c.l)) < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 epsilons and 3 box sizes inside the linear window, have {} cells",
            used.len()
        )));
    }
    let points: Vec<(f64, usize, f64)> = used.iter().map(|c| (c.eps, c.l, c.mean)).collect();
    let samples = used.iter().map(|c| c.counts.len()).min().unwrap_or(1);
    let fit = joint_fit(&points, samples)?;
    let d = result.dim as i32;
    let wegner_constant = used
        .iter()
        .map(|c| c.mean / (c.eps * (c.l as f64).powi(d)))
        .fold(0.0, f64::max);

    let sizes: Vec<usize> = result.windows.iter().map(|w| w.l).collect();
    let boot: Vec<(f64, f64)> = (0..resamples)
        .into_par_iter()
        .filter_map(|b| {
            let seed = result.seed ^ 0x5eed_b007_0000_0000 ^ b as u64;
            let draws: Vec<Vec<usize>> = sizes
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let n = used.iter().find(|c| c.l == *l).map_or(0, |c| c.counts.len());
                    stats::bootstrap_indices(n.max(1), 1, seed.wrapping_add(i as u64)).remove(0)
                })
                .collect();
            let pts: Vec<(f64, usize, f64)> = used
                .iter()
                .filter_map(|c| {
                    let idx = &draws[sizes.iter().position(|l| *l == c.l)?];
                    let mean = idx.iter().map(|&i| f64::from(c.counts[i])).sum::<f64>() / idx.len() as f64;
                    (mean > 0.0).then_some((c.eps, c.l, mean))
                })
                .collect();
            joint_fit(&pts, samples).ok().map(|f| (f.coefficients[1], f.coefficients[2]))
        })
        .collect();
    if boot.len() < resamples / 2 {
        return Err(Error::InsufficientData(format!("only {} of {resamples} bootstrap fits succeeded", boot.len())));
    }
    let (pe, pv): (Vec<f64>, Vec<f64>) = boot.iter().copied().unzip();
    let ci = |v: &[f64]| (stats::quantile(v, 0.025), stats::quantile(v, 0.975));
    let (ci_eps, ci_vol) = (ci(&pe), ci(&pv));
    Ok(ScalingFitResult {
        slope_eps: fit.coefficients[1],
        slope_vol: fit.coefficients[2],
        intercept: fit.coefficients[0],
        ci_eps,
        ci_vol,
        half_width_eps: 0.5 * (ci_eps.1 - ci_eps.0),
        half_width_vol: 0.5 * (ci_vol.1 - ci_vol.0),
        r_squared: fit.r_squared,
        wegner_constant,
        cells_used: used.len(),
        resamples: boot.len(),
    })
}

/// Log-log slope `q` of `‖B_l‖` against `l`; the dependent-coupling bound
/// grows like `ε l^{q+d}`.
pub fn norm_growth_exponent(alpha: &ConvolutionVector, sizes: &[usize]) -> Result<f64> {
    if sizes.len() < 2 {
        return Err(Error::InsufficientData("need at least two box sizes".into()));
    }
    let mut design = Vec::new();
    let mut y = Vec::new();
    for &l in sizes {
        let t = ToeplitzTransform::build(alpha, &IndexBox::new(l, alpha)?)?;
        design.push(vec![1.0, (l as f64).ln()]);
        y.push(t.row_sum_norm_b().ln());
    }
    if y.iter().all(|v| (v - y[0]).abs() < 1e-12) {
        return Ok(0.0);
    }
    // least_squares needs more rows than columns
    if sizes.len() == 2 {
        return Ok((y[1] - y[0]) / (design[1][1] - design[0][1]));
    }
    Ok(stats::least_squares(&design, &y)?.coefficients[1])
}

/// `⟨φ, χ_j P(I) χ_j φ⟩` for the cell points `cell` of `H`.
fn projected_weight(h: &DiscreteHamiltonian, phi: &[f64], cell: &[usize], e1: f64, e2: f64) -> Result<f64> {
    let (values, vectors) = eigenpairs(h)?;
    let mut chi_phi = DVector::zeros(phi.len());
    for &p in cell {
        chi_phi[p] = phi[p];
    }
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= e1 && l <= e2)
        .map(|(i, _)| vectors.column(i).dot(&chi_phi).powi(2))
        .sum())
}

fn check_phi(model: &AlloyModel, phi: &[f64]) -> Result<()> {
    if phi.len() != model.grid.len() {
        return Err(Error::IndexMismatch { expected: model.grid.len(), got: phi.len() });
    }
    let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("φ must be normalized, |φ| = {norm}")));
    }
    Ok(())
}

/// A normalized vector with iid standard normal entries.
pub fn random_unit_vector(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|_| {
            // Box–Muller
            let (u1, u2): (f64, f64) = (rng.random::<f64>().max(f64::MIN_POSITIVE), rng.random());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn random_density(model: &AlloyModel) -> Result<&crate::density::DensityModel> {
    match &model.coupling {
        CouplingSource::Random { density } => Ok(density),
        CouplingSource::Constant { .. } => {
            Err(Error::Precondition("a random coupling density is required".into()))
        }
    }
}

/// Mesh points of the cell carrying the transformed coordinate `j`; empty when
/// that site lies outside the box.
fn coordinate_cell(model: &AlloyModel, j: usize) -> Vec<usize> {
    let site = &model.index_box().plus_set()[j];
    if site.iter().all(|&c| c >= 0 && (c as usize) < model.grid.side) {
        model.cell_points(site)
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpavReport {
    pub lhs: f64,
    pub rhs: f64,
    pub sup_k: f64,
    pub quadrature_error: f64,
    pub holds: bool,
}

/// One instance of the spectral averaging inequality
/// `∫ k(η) ⟨φ, χ_j P_{Bη}(I) χ_j φ⟩ dη_j ≤ |I| sup_{η_j} k(η) / κ`.
#[derive(Debug, Clone)]
pub struct SpavInstance {
    pub model: AlloyModel,
    /// Index into `Λ⁺` of the averaged coordinate.
    pub j: usize,
    /// The other coordinates; entry `j` is ignored.
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    pub interval: (f64, f64),
}

/// Largest box dimension `L` for [`spectral_averaging_check`].
pub const SPAV_MAX_LEN: usize = 3;

/// `lhs` is integrated adaptively between the kinks of `k` and the values of
/// `η_j` where an eigenvalue crosses an endpoint of `I`; eigenvalues are
/// nondecreasing in `η_j` because `w ≥ 0`, so those crossings are found by
/// bisection on eigenvalue counts.
pub fn spectral_averaging_check(inst: &SpavInstance) -> Result<SpavReport> {
    let model = &inst.model;
    let (e1, e2) = inst.interval;
    if model.grid.dim != 1 {
        return Err(Error::Precondition("spectral averaging check is one-dimensional".into()));
    }
    if e1 > e2 {
        return Err(Error::Precondition(format!("interval [{e1}, {e2}] is empty")));
    }
    let transform = model.transform()?;
    if transform.len() > SPAV_MAX_LEN {
        return Err(Error::Precondition(format!("L = {} exceeds {SPAV_MAX_LEN}", transform.len())));
    }
    if inst.j >= transform.len() {
        return Err(Error::IndexMismatch { expected: transform.len(), got: inst.j + 1 });
    }
    check_phi(model, &inst.phi)?;
    let kappa = model.single_site.bump.kappa();
    let k = CommonDensity::new(transform, random_density(model)?.clone());
    let sup_k = k.line_supremum(inst.j, &inst.eta)?;
    let rhs = (e2 - e1) * sup_k / kappa;
    let cell = coordinate_cell(model, inst.j);
    let kinks = k.line_breakpoints(inst.j, &inst.eta)?;
    if cell.is_empty() || kinks.len() < 2 {
        return Ok(SpavReport { lhs: 0.0, rhs, sup_k, quadrature_error: 0.0, holds: true });
    }

    let at = |t: f64| {
        let mut eta = inst.eta.clone();
        eta[inst.j] = t;
        eta
    };
    let hamiltonian = |t: f64| model.hamiltonian_from_eta(&at(t));
    let counts = |t: f64| -> Result<(usize, usize)> {
        let s = crate::spectral::eigenvalues(&hamiltonian(t)?, 0)?;
        Ok((s.count_below(e1), s.count_at_most(e2)))
    };
    let (lo, hi) = (kinks[0], kinks[kinks.len() - 1]);
    let mut points = kinks.clone();
    let (c_lo, c_hi) = (counts(lo)?, counts(hi)?);
    crossings(&counts, lo, hi, c_lo, c_hi, &mut points)?;
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut failure = None;
    let integrand = |t: f64| {
        let weight = hamiltonian(t).and_then(|h| projected_weight(&h, &inst.phi, &cell, e1, e2));
        match (k.eval(&at(t)), weight) {
            (Ok(kv), Ok(s)) => kv * s,
            (Err(e), _) | (_, Err(e)) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let r = quadrature::integrate_partition(integrand, &points, Tolerance::new(1e-12, 1e-9))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(SpavReport {
        lhs: r.value,
        rhs,
        sup_k,
        quadrature_error: r.error,
        holds: r.value <= rhs * (1.0 + 1e-3),
    })
}

/// Bisect `[a, b]` until every change of the monotone `counts` is bracketed
/// to rounding, pushing the bracket midpoints onto `out`.
fn crossings<F>(counts: &F, a: f64, b: f64, ca: (usize, usize), cb: (usize, usize), out: &mut Vec<f64>) -> Result<()>
where
    F: Fn(f64) -> Result<(usize, usize)>,
{
    if ca == cb {
        return Ok(());
    }
    let mid = 0.5 * (a + b);
    if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) || mid <= a || mid >= b {
        out.push(mid);
        return Ok(());
    }
    let cm = counts(mid)?;
    crossings(counts, a, mid, ca, cm, out)?;
    crossings(counts, mid, b, cm, cb, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MainEstimateReport {
    pub lhs_mean: f64,
    pub lhs_half_width: f64,
    /// `|I| ‖f'‖₁ Σ_k |b_{k,j}| / κ`.
    pub rhs: f64,
    pub samples: usize,
    pub holds: bool,
}

/// Monte Carlo `E⟨φ, χ_j P_ω(I) χ_j φ⟩` against its closed-form bound.
///
/// The bound uses the column sum `Σ_k |b_{k,j}|`, which is what the gradient
/// integral actually controls; in one dimension it coincides with `‖B‖`.
pub fn main_estimate_check(
    model: &AlloyModel,
    j: usize,
    phi: &[f64],
    interval: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<MainEstimateReport> {
    let (e1, e2) = interval;
    if e1 > e2 || samples == 0 {
        return Err(Error::Precondition("need a nonempty interval and at least one sample".into()));
    }
    let transform = model.transform()?;
    if j >= transform.len() {
        return Err(Error::IndexMismatch { expected: transform.len(), got: j + 1 });
    }
    check_phi(model, phi)?;
    let density = random_density(model)?;
    let rhs = (e2 - e1) * density.norm_derivative_l1()? * transform.column_abs_sum(j)
        / model.single_site.bump.kappa();
    let cell = coordinate_cell(model, j);
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            if cell.is_empty() {
                return Ok(0.0);
            }
            let h = model.realize(seed.wrapping_add(i as u64))?;
            projected_weight(&h, phi, &cell, e1, e2)
        })
        .collect::<Result<_>>()?;
    let est = trace_estimate(&values);
    Ok(MainEstimateReport {
        lhs_mean: est.mean,
        lhs_half_width: est.half_width,
        rhs,
        samples,
        holds: est.mean <= rhs,
    })
}

/// Seeded generator for instance sweeps.
pub fn instance_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityModel;
    use crate::operator::{Background, GridSpec, SingleSitePotential};

    fn model(coeffs: &[f64], side: usize, mesh: usize) -> AlloyModel {
        let alpha = ConvolutionVector::one_dim(coeffs).unwrap();
        AlloyModel::new(
            GridSpec::new(1, side, mesh).unwrap(),
            SingleSitePotential::indicator(alpha),
            Background::Zero,
            CouplingSource::Random { density: DensityModel::triangular() },
        )
        .unwrap()
    }

    #[test]
    fn empty_interval_below_spectrum() {
        let m = model(&[1.0, -0.5], 6, 4);
        let t = expected_trace(&m, -100.0, 1.0, 8, 3, CountBackend::Auto).unwrap();
        assert_eq!(t.mean, 0.0);
        assert!(expected_trace(&m, 0.0, -1.0, 8, 3, CountBackend::Auto).is_err());
    }

    #[test]
    fn trace_is_reproducible_and_slicing_agrees() {
        let m = model(&[1.0, -0.5], 8, 4);
        let a = expected_trace(&m, 20.0, 5.0, 10, 7, CountBackend::Dense).unwrap();
        let b = expected_trace(&m, 20.0, 5.0, 10, 7, CountBackend::Dense).unwrap();
        let c = expected_trace(&m, 20.0, 5.0, 10, 7, CountBackend::Slicing).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.mean, c.mean);
    }

    #[test]
    fn sweep_is_monotone_in_eps() {
        let m = model(&[1.0, -0.5], 6, 4);
        let config = WegnerSweepConfig {
            energy: 5.0,
            epsilons: WegnerSweepConfig::log_spaced(0.05, 2.0, 5),
            box_sizes: vec![4, 6],
            samples: 20,
            seed: 1,
            backend: CountBackend::Auto,
        };
        let r = sweep(&m, &config).unwrap();
        assert_eq!(r.cells.len(), 10);
        assert!(r.is_monotone());
    }

    #[test]
    fn sweep_config_validation() {
        let mut c = WegnerSweepConfig {
            energy: 0.0,
            epsilons: vec![0.1, 0.2],
            box_sizes: vec![4],
            samples: 1,
            seed: 0,
            backend: CountBackend::Auto,
        };
        assert!(c.validate().is_err());
        c.epsilons = vec![0.2, 0.1];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn fit_needs_three_sizes() {
        let m = model(&[1.0, -0.5], 6, 4);
        let config = WegnerSweepConfig {
            energy: 5.0,
            epsilons: vec![1.0, 0.5, 0.25],
            box_sizes: vec![4, 6],
            samples: 10,
            seed: 1,
            backend: CountBackend::Auto,
        };
        let r = sweep(&m, &config).unwrap();
        assert!(matches!(fit_scaling(&r, 50), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn norm_growth_of_unit_difference_is_linear() {
        let alpha = ConvolutionVector::one_dim(&[1.0, -1.0]).unwrap();
        let q = norm_growth_exponent(&alpha, &[16, 32, 64]).unwrap();
        // ‖B_l‖ = l + 1
        let exact = ((65.0f64).ln() - (17.0f64).ln()) / (4.0f64).ln();
        assert!((q - exact).abs() < 0.01, "q = {q}");
        let admissible = ConvolutionVector::one_dim(&[1.0, -0.5]).unwrap();
        // ‖B_l‖ = 2 - 2^{-l}
        assert!(norm_growth_exponent(&admissible, &[8, 16, 32]).unwrap().abs() < 1e-2);
    }

    #[test]
    fn spav_empty_interval_and_bound() {
        let m = model(&[1.0, -0.5], 2, 4);
        let mut rng = instance_rng(5);
        let phi = random_unit_vector(m.grid.len(), &mut rng);
        let inst = SpavInstance { model: m.clone(), j: 1, eta: vec![0.2, 0.0, -0.1], phi: phi.clone(), interval: (-50.0, -40.0) };
        let r = spectral_averaging_check(&inst).unwrap();
        assert_eq!(r.lhs, 0.0);
        let inst = SpavInstance { interval: (0.0, 30.0), ..inst };
        let r = spectral_averaging_check(&inst).unwrap();
        assert!(r.lhs > 0.0 && r.holds, "{r:?}");
    }

    #[test]
    fn main_estimate_identity_rhs() {
        let m = model(&[1.0], 3, 4);
        let mut rng = instance_rng(2);
        let phi = random_unit_vector(m.grid.len(), &mut rng);
        let r = main_estimate_check(&m, 1, &phi, (0.0, 0.5), 20, 0).unwrap();
        assert!((r.rhs - 0.5 * 4.0).abs() < 1e-12);
        assert!(r.holds);
        let r = main_estimate_check(&m, 1, &phi, (-100.0, -100.0), 5, 0).unwrap();
        assert_eq!(r.lhs_mean, 0.0);
    }
}
