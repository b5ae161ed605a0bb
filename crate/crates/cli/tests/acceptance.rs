//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use alloy_lab::densities::CommonDensity;
use alloy_lab::density::DensityModel;
use alloy_lab::msa::{resolvent_identity_residual, smooth_cutoff, SubBox};
use alloy_lab::operator::{assemble_hamiltonian, GridSpec};
use alloy_lab::spectral::eigenvalues;
use alloy_lab::toeplitz::{inverse_residual, verify_norm_bound, ConvolutionVector, IndexBox, ToeplitzTransform};
use alloy_lab::wegner::spectral_averaging_check;
use alloy_lab_cli::commands::{self, deterministic_decay, unit_difference_rows, half_difference_curve, random_admissible};
use alloy_lab_cli::config::default_for;
use alloy_lab_cli::run;
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok { Ok(detail) } else { Err(detail) }
}

fn toeplitz_inverse_and_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_residual, mut worst_gap, mut two_dim) = (0.0f64, f64::NEG_INFINITY, 0);
    for _ in 0..1000 {
        let (alpha, side) = random_admissible(&mut rng, 16);
        two_dim += usize::from(alpha.dim() == 2);
        let bx = IndexBox::new(side, &alpha).map_err(|e| e.to_string())?;
        let t = ToeplitzTransform::build(&alpha, &bx).map_err(|e| e.to_string())?;
        worst_residual = worst_residual.max(inverse_residual(&t));
        let r = verify_norm_bound(&t, &alpha).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max(r.actual - r.bound);
    }
    verdict(
        worst_residual <= 1e-10 && worst_gap <= 1e-9,
        format!("1000 cases ({two_dim} in 2D): max ||AB - I|| = {worst_residual:.2e}, max(||B|| - bound) = {worst_gap:.2e}"),
    )
}

fn unit_difference_norms() -> Check {
    let alpha = ConvolutionVector::one_dim(&[1.0, -1.0]).unwrap();
    let mut bad = Vec::new();
    for l in 2..=64 {
        let t = ToeplitzTransform::build(&alpha, &IndexBox::new(l, &alpha).unwrap()).unwrap();
        let b = t.b();
        let shape = (0..t.len()).all(|j| (0..t.len()).all(|k| b[(j, k)] == f64::from(u8::from(j >= k))));
        if !shape || t.row_sum_norm_b() != (l + 1) as f64 {
            bad.push(l);
        }
    }
    verdict(bad.is_empty(), format!("||B_l|| = l + 1 and B lower triangular ones for l = 2..64; failing sizes {bad:?}"))
}

fn unit_difference_conditionals() -> Check {
    let rows = unit_difference_rows(8).map_err(|e| e.to_string())?;
    let even: Vec<_> = rows.iter().filter(|(l, j, _)| (*l as i64 - j) % 2 == 0).collect();
    let worst = even.iter().map(|(l, j, rho)| (rho - (*l as i64 - j + 1) as f64).abs()).fold(0.0, f64::max);
    verdict(worst <= 1e-4, format!("{} coordinates with l - j even, l <= 8: max |rho - (l - j + 1)| = {worst:.2e}", even.len()))
}

fn half_difference_divergence() -> Check {
    let curve = half_difference_curve(10).map_err(|e| e.to_string())?;
    let increasing = curve.windows(2).all(|w| w[1].2 > w[0].2);
    let last = curve.last().unwrap().2;
    verdict(increasing && last > 100.0, format!("rho strictly increasing: {increasing}, rho at m = 10: {last}"))
}

fn gradient_bound() -> Check {
    let (mut count, mut failures, mut slack) = (0, 0, f64::INFINITY);
    for (coeffs, side) in commands::GRADIENT_SHAPES {
        let alpha = ConvolutionVector::one_dim(coeffs).unwrap();
        for f in [DensityModel::triangular(), DensityModel::smooth_bump(-0.5, 0.5).unwrap()] {
            let t = ToeplitzTransform::build(&alpha, &IndexBox::new(side, &alpha).unwrap()).unwrap();
            let k = CommonDensity::new(t, f);
            if k.len() > 6 {
                return Err(format!("shape {coeffs:?} side {side} has L = {}", k.len()));
            }
            for j in 0..k.len() {
                let r = k.gradient_integral(j, 4).map_err(|e| e.to_string())?;
                count += 1;
                failures += usize::from(!r.holds);
                slack = slack.min(r.bound - r.value);
            }
        }
    }
    verdict(failures == 0, format!("{count} coordinates with L <= 6: {failures} violations, min slack {slack:.3e}"))
}

fn spectral_averaging() -> Check {
    let base = default_for("spav").unwrap().model().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut violations, mut ratio) = (0, 0.0f64);
    for _ in 0..100 {
        let inst = commands::random_spav_instance(&base, &mut rng).map_err(|e| e.to_string())?;
        if inst.eta.len() > 3 {
            return Err(format!("instance with L = {}", inst.eta.len()));
        }
        let r = spectral_averaging_check(&inst).map_err(|e| e.to_string())?;
        violations += usize::from(!r.holds);
        if r.rhs > 0.0 {
            ratio = ratio.max(r.lhs / r.rhs);
        }
    }
    verdict(violations == 0, format!("100 instances with L <= 3: {violations} violations, max lhs/rhs {ratio:.3}"))
}

fn wegner_scaling() -> (Check, Check) {
    let config = default_for("wegner").unwrap();
    let outcome = match commands::execute(&config) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let report = &outcome.reports.iter().find(|(n, _)| n == "wegner_fit").unwrap().1;
    let fit = &report["fit"];
    if fit.is_null() {
        let msg = format!("no fit: {}", report["fit_error"]);
        return (Err(msg.clone()), Err(msg));
    }
    let f = |k: &str| fit[k].as_f64().unwrap();
    let ci = |k: &str| (fit[k][0].as_f64().unwrap(), fit[k][1].as_f64().unwrap());
    let (p, ci_p, q, ci_q) = (f("slope_eps"), ci("ci_eps"), f("slope_vol"), ci("ci_vol"));
    let monotone = report["monotone"].as_bool().unwrap();
    let energy = report["energy"].as_f64().unwrap();
    let eps = verdict(
        (p - 1.0).abs() <= 0.15 && ci_p.0 <= 1.0 && 1.0 <= ci_p.1 && monotone,
        format!("E = {energy:.4}: slope in eps {p:.4}, 95% CI ({:.4}, {:.4}), monotone {monotone}", ci_p.0, ci_p.1),
    );
    let vol = verdict(
        (q - 1.0).abs() <= 0.2,
        format!("slope in l {q:.4} (d = 1), 95% CI ({:.4}, {:.4}), r2 {:.4}", ci_q.0, ci_q.1, f("r_squared")),
    );
    (eps, vol)
}

fn ids_self_averaging() -> Check {
    let outcome = commands::execute(&default_for("ids").unwrap()).map_err(|e| e.to_string())?;
    verdict(outcome.passed, outcome.summary.join("; "))
}

fn fourier(n: usize, h: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| (2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / (h * h)).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn free_spectrum() -> Check {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (dim, side, mesh) in [(1, 1, 2), (1, 5, 3), (1, 16, 8), (1, 37, 4), (1, 64, 8), (2, 4, 3), (2, 8, 2), (2, 6, 4)] {
        let grid = GridSpec::new(dim, side, mesh).unwrap();
        let h = assemble_hamiltonian(&vec![0.0; grid.len()], &grid).map_err(|e| e.to_string())?;
        let s = eigenvalues(&h, 0).map_err(|e| e.to_string())?;
        let axis = fourier(grid.points_per_axis(), grid.h());
        let mut exact = if dim == 1 { axis.clone() } else { axis.iter().flat_map(|a| axis.iter().map(move |b| a + b)).collect() };
        exact.sort_by(f64::total_cmp);
        worst = s.eigenvalues.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        cases += 1;
    }
    verdict(worst <= 1e-10, format!("{cases} grids up to n = 512 (1D) and 24x24 (2D): max deviation {worst:.2e}"))
}

fn deterministic_decay_check() -> Check {
    let config = default_for("msa").unwrap();
    let model = config.model().map_err(|e| e.to_string())?;
    let fits = deterministic_decay(&model, config.density.mean(), 0.5, None, &[6, 9, 12, 15, 18]).map_err(|e| e.to_string())?;
    let (fine, coarse) = (&fits[0], &fits[1]);
    let (a, b) = (fine.2.rate, coarse.2.rate);
    verdict(
        a > 0.0 && (a - b).abs() <= 0.2 * a,
        format!("E = lambda_min - 0.5: rate {a:.5} at mesh {}, {b:.5} at mesh {}", fine.0, coarse.0),
    )
}

fn resolvent_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = rng.random_range(1..=2usize);
        let mut config = default_for("msa").unwrap();
        let side = if dim == 1 { rng.random_range(5..12) } else { rng.random_range(4..7) };
        config.grid.dim = dim;
        config.grid.side = side;
        config.grid.mesh = Some(if dim == 1 { 4 } else { 2 });
        config.model.alpha = ConvolutionVector::new(dim, vec![(vec![0; dim], 1.0), (vec![1; dim], -0.5)]).unwrap();
        let h = config.model().map_err(|e| e.to_string())?.realize(rng.random()).map_err(|e| e.to_string())?;
        let sub_side = rng.random_range(3..=side);
        let origin = (0..dim).map(|_| rng.random_range(0..=side - sub_side)).collect();
        let sub = SubBox { origin, side: sub_side };
        let phi = smooth_cutoff(h.grid(), &sub);
        let z = Complex::new(rng.random_range(-2.0..30.0), rng.random_range(0.05..1.0));
        let r = resolvent_identity_residual(&h, &sub, &phi, z, 10, rng.random()).map_err(|e| e.to_string())?;
        worst = worst.max(r);
    }
    verdict(worst <= 1e-8, format!("50 random nested boxes in 1D and 2D: max relative residual {worst:.2e}"))
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for c in ["wegner", "ids", "msa", "spav", "toeplitz-check"] {
        let mut config = default_for(c).unwrap();
        config.experiment.smoke();
        let a = run(&config, &tmp.path().join("w1"), 1).map_err(|e| e.to_string())?;
        let b = run(&config, &tmp.path().join("w4"), 4).map_err(|e| e.to_string())?;
        let hash = &a.manifest.config_hash;
        let (x, y) = (csvs(&tmp.path().join("w1").join(hash)), csvs(&tmp.path().join("w4").join(hash)));
        if x.is_empty() || x != y || hash != &b.manifest.config_hash {
            return Err(format!("{c}: outputs differ between 1 and 4 workers"));
        }
        compared += x.len();
    }
    Ok(format!("{compared} CSV files identical between 1 and 4 workers"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, started: Instant, check: Check| {
        let secs = started.elapsed().as_secs_f64();
        match check {
            Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    report(1, "toeplitz inverse and norm bound", t, toeplitz_inverse_and_bound());
    let t = Instant::now();
    report(2, "alpha = (1, -1) norms", t, unit_difference_norms());
    let t = Instant::now();
    report(3, "alpha = (1, -1) conditional densities", t, unit_difference_conditionals());
    let t = Instant::now();
    report(4, "alpha = (1, -1/2) divergence", t, half_difference_divergence());
    let t = Instant::now();
    report(5, "gradient integral bound", t, gradient_bound());
    let t = Instant::now();
    report(6, "spectral averaging", t, spectral_averaging());
    let t = Instant::now();
    let (eps, vol) = wegner_scaling();
    report(7, "wegner: linear in eps", t, eps);
    report(8, "wegner: linear in volume", t, vol);
    let t = Instant::now();
    report(9, "ids self-averaging", t, ids_self_averaging());
    let t = Instant::now();
    report(10, "free spectrum against Fourier modes", t, free_spectrum());
    let t = Instant::now();
    report(11, "mesh-stable resolvent decay", t, deterministic_decay_check());
    let t = Instant::now();
    report(12, "geometric resolvent identity", t, resolvent_identity());
    let t = Instant::now();
    report(13, "worker-count determinism", t, determinism());
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
