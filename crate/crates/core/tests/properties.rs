use ndarray::Axis;
use proptest::prelude::*;
use trilinear_amp::model::{
    forward_model, gen_bernoulli_mask, gen_correlation_matrix, resolve_diagonal_ambiguity,
    sigma_from_snr, snr_from_sigma, ChannelEnsemble, FrameRealization, SystemConfig,
};
use trilinear_amp::rng::StreamSeeds;
use trilinear_amp::{CMat, C64};

fn small(m: usize, n: usize, k: usize, t: usize, t_p: usize, rho: f64, seed: u64) -> SystemConfig {
    SystemConfig {
        m,
        n,
        k,
        t,
        t_p,
        rho,
        sigma2: 0.0,
        seeds: StreamSeeds::uniform(seed),
        ..SystemConfig::desk()
    }
}

/// Hermitian eigenvalues via the real embedding `[[A, -B], [B, A]]`.
fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let d = a.nrows();
    let r = nalgebra::DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let v = a[[i % d, j % d]];
        match (i < d, j < d) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    });
    r.symmetric_eigenvalues().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn received_signal_decomposes(
        m in 1usize..6, n in 1usize..6, k in 1usize..4, t in 1usize..8,
        rho in 0.0f64..=1.0, sigma2 in 0.0f64..2.0, seed in any::<u64>(),
    ) {
        let mut cfg = small(m, n, k, t, t.min(2), rho, seed);
        cfg.sigma2 = sigma2;
        let fr = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
        let mut manual = CMat::zeros((m, t));
        for i in 0..m {
            for j in 0..t {
                let mut z = fr.w[[i, j]];
                for kk in 0..k {
                    z += fr.h[[i, kk]] * fr.x[[kk, j]];
                    for r in 0..n {
                        if fr.s[[r, j]] {
                            z += fr.g[[i, r]] * fr.f[[r, kk]] * fr.x[[kk, j]];
                        }
                    }
                }
                manual[[i, j]] = z;
            }
        }
        let err = (&manual - &fr.y).iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
        if sigma2 == 0.0 {
            prop_assert!(fr.w.iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn diagonal_rescaling_leaves_y_unchanged(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        prop_assume!(re * re + im * im > 0.01);
        let cfg = small(4, 3, 2, 5, 1, 0.6, seed);
        let fr = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
        let scales: Vec<C64> = (0..3).map(|i| C64::new(re + i as f64 * 0.1, im)).collect();
        let mut g = fr.g.clone();
        let mut f = fr.f.clone();
        for (i, a) in scales.iter().enumerate() {
            g.column_mut(i).mapv_inplace(|v| v * a);
            f.row_mut(i).mapv_inplace(|v| v / a);
        }
        let (y, _) = forward_model(&g, &f, &fr.h, &fr.x, &fr.s, 0.0, 0).unwrap();
        let (y0, _) = forward_model(&fr.g, &fr.f, &fr.h, &fr.x, &fr.s, 0.0, 0).unwrap();
        prop_assert!((&y - &y0).iter().all(|v| v.norm() < 1e-10));
        let res = resolve_diagonal_ambiguity(&g, &f, &fr.g, &fr.f);
        prop_assert!((&res.g - &fr.g).iter().all(|v| v.norm() < 1e-10));
        prop_assert!((&res.f - &fr.f).iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn correlation_matrices_are_psd(dim in 1usize..12, r in 0.0f64..0.99, phase in 0.0f64..6.3) {
        let c = C64::from_polar(r, phase);
        let a = gen_correlation_matrix(dim, c).unwrap();
        for i in 0..dim {
            prop_assert_eq!(a[[i, i]], C64::new(1.0, 0.0));
            for j in 0..dim {
                prop_assert!((a[[i, j]] - a[[j, i]].conj()).norm() < 1e-14);
            }
        }
        prop_assert!(hermitian_eigenvalues(&a).iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn snr_round_trip(snr in -20.0f64..60.0, rho in 0.0f64..1.0, q_h in 0.0f64..2.0) {
        let mut cfg = SystemConfig::desk();
        cfg.rho = rho;
        cfg.q_h = q_h;
        prop_assume!(rho > 0.0 || q_h > 0.0);
        let s = sigma_from_snr(&cfg, snr);
        prop_assert!(s > 0.0);
        prop_assert!((snr_from_sigma(&cfg, s) - snr).abs() < 1e-9);
    }

    #[test]
    fn masks_respect_degenerate_rates(n in 1usize..10, t in 1usize..20, seed in any::<u64>()) {
        prop_assert!(gen_bernoulli_mask(n, t, 0.0, seed).iter().all(|&b| !b));
        prop_assert!(gen_bernoulli_mask(n, t, 1.0, seed).iter().all(|&b| b));
    }

    #[test]
    fn pilots_lead_the_frame(t in 1usize..20, tp in 0usize..20, seed in any::<u64>()) {
        let t_p = tp.min(t);
        let cfg = small(2, 2, 2, t, t_p, 0.5, seed);
        let fr = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
        prop_assert_eq!(fr.x_pilot().len_of(Axis(1)), t_p);
        prop_assert_eq!(fr.x_data().len_of(Axis(1)), t - t_p);
        let same = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
        prop_assert_eq!(fr, same);
    }
}

#[test]
fn correlated_ensemble_rows_match_iid_draws_times_correlation() {
    let cfg = small(5, 4, 2, 3, 1, 0.5, 9);
    let corr = ChannelEnsemble::reference_correlated();
    let fr = FrameRealization::generate(&cfg, &corr).unwrap();
    let iid = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
    let ChannelEnsemble::Correlated { c_f, .. } = corr else { unreachable!() };
    let cf = gen_correlation_matrix(4, c_f).unwrap();
    let want = cf.dot(&iid.f);
    assert!((&fr.f - &want).iter().all(|v| v.norm() < 1e-12));
}
