mod common;

use common::{binary, lossy, measure};
use fragwave::levy::{
    laplace_exponent_psi, laplace_spot_check, largest_root_psi, mc_first_passage, scale_function,
    tagged_law, DEFAULT_SCALE_DX,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tagged_law_reconstructs_phi(nu in measure()) {
        let law = tagged_law(&nu);
        for &p in &[0.0, 0.5, 1.0, 2.0, 5.0] {
            prop_assert!((law.laplace_exponent(p) - nu.phi(p).unwrap()).abs() < 1e-12 * nu.total_rate().max(1.0));
        }
        prop_assert!(law.jumps.windows(2).all(|w| w[0].size < w[1].size));
        prop_assert!(law.jumps.iter().all(|j| j.size > 0.0 && j.rate > 0.0));
    }

    #[test]
    fn scale_table_is_strictly_increasing(nu in measure(), c in 0.3f64..4.0) {
        let t = scale_function(&nu, c, 3.0, 1.0 / 128.0).unwrap();
        prop_assert_eq!(t.values[0], 1.0 / c);
        prop_assert!(t.values.windows(2).all(|w| w[1] > w[0]));
        for &(x, h) in &[(0.0, 0.5), (0.5, 1.0), (1.0, 2.0)] {
            let p = t.two_sided_exit(x, h).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }

    #[test]
    fn psi_grows_like_the_drift(nu in measure(), c in 0.3f64..4.0) {
        for &beta in &[1e3, 1e4] {
            let ratio = laplace_exponent_psi(&nu, c, beta).unwrap() / beta;
            prop_assert!((ratio - c).abs() <= 0.01 * c + nu.total_rate() / beta);
        }
    }
}

#[test]
fn refinement_changes_far_value_little() {
    for (nu, c) in [(binary(), 1.0), (lossy(), 0.7), (lossy(), 2.0)] {
        let coarse = scale_function(&nu, c, 10.0, DEFAULT_SCALE_DX).unwrap();
        let fine = scale_function(&nu, c, 10.0, DEFAULT_SCALE_DX / 2.0).unwrap();
        let (a, b) = (*coarse.values.last().unwrap(), *fine.values.last().unwrap());
        assert!(((a - b) / b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn laplace_transform_matches_inverse_psi() {
    for (nu, c) in [(binary(), 1.0), (lossy(), 0.5), (lossy(), 2.0)] {
        let table = scale_function(&nu, c, 20.0, 0.01).unwrap();
        let growth = largest_root_psi(&nu, c).unwrap();
        for beta in [growth + 1.0, growth + 3.0] {
            let check = laplace_spot_check(&nu, &table, beta).unwrap();
            assert!(check.rel_err < 0.01, "{check:?}");
        }
    }
}

#[test]
fn first_passage_agrees_with_scale_function() {
    let nu = lossy();
    let c = 0.9;
    let table = scale_function(&nu, c, 3.0, DEFAULT_SCALE_DX).unwrap();
    for (x, h) in [(0.0, 1.0), (0.5, 0.5), (2.0, 1.0)] {
        let mc = mc_first_passage(&nu, c, x, h, 40_000, 5).unwrap();
        let exact = table.two_sided_exit(x, h).unwrap();
        assert!(
            (exact - mc.point).abs() <= 3.0 * mc.std_error,
            "x = {x}, h = {h}: {exact} vs {mc:?}"
        );
    }
}

#[test]
fn first_passage_is_deterministic() {
    let a = mc_first_passage(&binary(), 1.0, 1.0, 1.0, 5000, 17).unwrap();
    let b = mc_first_passage(&binary(), 1.0, 1.0, 1.0, 5000, 17).unwrap();
    assert_eq!(a, b);
}
