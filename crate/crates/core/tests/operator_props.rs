use alloy_lab::density::DensityModel;
use alloy_lab::operator::{
    AlloyModel, Background, BaseBump, CouplingField, CouplingSource, GridSpec, SingleSitePotential,
};
use alloy_lab::spectral::eigenvalues;
use alloy_lab::toeplitz::ConvolutionVector;
use proptest::prelude::*;

fn model(coeffs: &[f64], side: usize, mesh: usize, bump: BaseBump) -> AlloyModel {
    AlloyModel::new(
        GridSpec::new(1, side, mesh).unwrap(),
        SingleSitePotential::new(ConvolutionVector::one_dim(coeffs).unwrap(), bump).unwrap(),
        Background::Cosine { amplitude: 0.4 },
        CouplingSource::Random { density: DensityModel::triangular() },
    )
    .unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    (proptest::collection::vec(-1.0f64..1.0, 0..3), 0.5f64..2.0).prop_map(|(mut rest, a0)| {
        rest.insert(0, a0);
        rest
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_and_eta_routes_agree(c in coeffs(), side in 2usize..8, seed in any::<u64>()) {
        let m = model(&c, side, 3, BaseBump::Step { subdivisions: 3, values: vec![1.0, 0.5, 2.0] });
        let field = m.field(seed);
        let eta = m.transform().unwrap().forward_coordinates(&field.values).unwrap();
        let direct = m.hamiltonian(&field).unwrap();
        let via_eta = m.hamiltonian_from_eta(&eta).unwrap();
        for (a, b) in direct.potential().iter().zip(via_eta.potential()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn cyclic_shift_preserves_the_spectrum(side in 2usize..9, shift in 1usize..8, seed in any::<u64>()) {
        // with Γ = {0} the box carries a full periodic alloy potential
        let m = model(&[1.0], side, 4, BaseBump::default());
        let field = m.field(seed);
        let mut rotated = field.values.clone();
        rotated.rotate_right(shift % side);
        let a = eigenvalues(&m.hamiltonian(&field).unwrap(), 0).unwrap();
        let b = eigenvalues(&m.hamiltonian(&CouplingField { values: rotated, ..field }).unwrap(), 0).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn eigenvalues_increase_with_each_eta(c in coeffs(), side in 2usize..6, seed in any::<u64>(), j in 0usize..6, dt in 0.0f64..2.0) {
        let m = model(&c, side, 3, BaseBump::default());
        let field = m.field(seed);
        let mut eta = m.transform().unwrap().forward_coordinates(&field.values).unwrap();
        let j = j % eta.len();
        let before = eigenvalues(&m.hamiltonian_from_eta(&eta).unwrap(), 0).unwrap();
        eta[j] += dt;
        let after = eigenvalues(&m.hamiltonian_from_eta(&eta).unwrap(), 0).unwrap();
        for (x, y) in before.eigenvalues.iter().zip(&after.eigenvalues) {
            prop_assert!(*y >= x - 1e-10);
        }
    }
}
