use gaborcnn::gabor::{
    gabor_value, make_gabor_bank, make_gabor_kernel, BankParams, GaborOverrides, GaborParams,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = GaborParams> {
    (0.0f64..180.0, 2.0f64..8.0, 0.8f64..4.0, 0.3f64..1.5, -90.0f64..90.0, prop::sample::select(vec![3usize, 5, 7]))
        .prop_map(|(theta_deg, wavelength, sigma, gamma, psi_deg, size)| GaborParams {
            theta_deg,
            wavelength,
            sigma,
            gamma,
            psi_deg,
            size,
        })
}

proptest! {
    #[test]
    fn kernels_are_normalised(p in params()) {
        let k = make_gabor_kernel(&p).unwrap();
        let sum: f64 = k.data().iter().sum();
        let sq: f64 = k.data().iter().map(|v| v * v).sum();
        prop_assert!(sum.abs() < 1e-6);
        prop_assert!((sq - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synthesis_is_deterministic(p in params()) {
        prop_assert_eq!(make_gabor_kernel(&p).unwrap(), make_gabor_kernel(&p).unwrap());
    }

    #[test]
    fn quarter_turn_swaps_axes(x in -3.0f64..3.0, y in -3.0f64..3.0, lam in 2.0f64..8.0, s in 0.8f64..4.0) {
        let base = GaborParams { theta_deg: 0.0, wavelength: lam, sigma: s, gamma: 1.0, psi_deg: 0.0, size: 5 };
        let turned = GaborParams { theta_deg: 90.0, ..base };
        prop_assert!((gabor_value(&turned, x, y) - gabor_value(&base, y, -x)).abs() < 1e-12);
    }

    #[test]
    fn banks_are_equally_spaced(k in 1usize..40) {
        let bank = make_gabor_bank(k, BankParams::default()).unwrap();
        let t = bank.thetas();
        prop_assert_eq!(t[0], 0.0);
        for w in t.windows(2) {
            prop_assert!((w[1] - w[0] - 180.0 / k as f64).abs() < 1e-9);
        }
        prop_assert!(*t.last().unwrap() < 180.0);
    }

    #[test]
    fn halving_the_bank_keeps_even_entries(k in 1usize..20) {
        let small = make_gabor_bank(k, BankParams::default()).unwrap();
        let big = make_gabor_bank(2 * k, BankParams::default()).unwrap();
        for (i, e) in small.entries().iter().enumerate() {
            let id = big.find_orientation(e.theta_deg).unwrap();
            prop_assert_eq!(id.0, 2 * i);
            prop_assert_eq!(&big.entry(id).unwrap().kernel, &e.kernel);
        }
    }
}

#[test]
fn overrides_replace_only_named_fields() {
    let base = BankParams::for_size(5);
    assert_eq!(GaborOverrides::default().apply(base), base);
    let o = GaborOverrides { sigma: Some(1.0), ..Default::default() };
    let p = o.apply(base);
    assert_eq!((p.sigma, p.wavelength, p.size), (1.0, base.wavelength, 5));
}

#[test]
fn pgm_export_writes_one_tile_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let bank = make_gabor_bank(6, BankParams::default()).unwrap();
    let paths = bank.export_pgm(&dir.path().join("tiles")).unwrap();
    assert_eq!(paths.len(), 6);
    for p in &paths {
        let text = std::fs::read_to_string(p).unwrap();
        let mut tok = text.split_whitespace();
        assert_eq!(tok.next(), Some("P2"));
        let dims: Vec<usize> = tok.by_ref().take(3).map(|t| t.parse().unwrap()).collect();
        assert_eq!(dims, [5, 5, 255]);
        let px: Vec<u32> = tok.map(|t| t.parse().unwrap()).collect();
        assert_eq!(px.len(), 25);
        assert_eq!((px.iter().min(), px.iter().max()), (Some(&0), Some(&255)));
    }
}
