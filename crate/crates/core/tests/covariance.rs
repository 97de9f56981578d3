use nalgebra::DMatrix;
use panelq::covariance::{
    density_weights, hall_sheather_bandwidth, residual_scores, sandwich_dependent, sandwich_iid,
    DEFAULT_HS_ALPHA,
};
use panelq::dist::{normal_pdf, normal_quantile, ErrorDist};
use panelq::linalg::eigen_range;
use panelq::qr::{fit_qr_triple, DesignMatrix};
use panelq::simulation::{generate_panel, population_oracle, replication_rng, Dependence, DgpSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn location_sample(t: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..t).map(|k| (k % 97) as f64 / 9.7).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| {
            let u: f64 = StandardNormal.sample(&mut rng);
            1.0 + 0.5 * v + u
        })
        .collect();
    (DesignMatrix::with_intercept(t, 1, &x).unwrap(), y)
}

#[test]
fn density_weights_estimate_normal_density() {
    let t = 100_000;
    let (design, y) = location_sample(t, 3);
    for tau in [0.25, 0.5] {
        let d_t = hall_sheather_bandwidth(tau, t, DEFAULT_HS_ALPHA)
            .unwrap()
            .d_t;
        let fits = fit_qr_triple(&design, &y, tau, d_t).unwrap();
        let dw = density_weights(&design, &fits[0], &fits[2], d_t);
        let mean = dw.weights.iter().sum::<f64>() / t as f64;
        let target = normal_pdf(normal_quantile(tau));
        assert!(
            (mean / target - 1.0).abs() < 0.05,
            "tau {tau}: {mean} vs {target}"
        );
        assert_eq!(dw.n_truncated, 0);
    }
}

/// One instance carries roughly 10% sampling noise in `v_hat`, so the
/// ratio to the population matrix is averaged over ten individuals.
#[test]
fn sandwich_matches_quadrature_oracle() {
    let (n, t) = (10, 10_000);
    let lambda = 0.5;
    let tau = 0.25;
    let spec = DgpSpec::new(n, t, lambda, ErrorDist::Normal);
    let panel = generate_panel(&spec, &mut replication_rng(17, 0, 0))
        .unwrap()
        .panel;
    let pops = population_oracle(lambda, ErrorDist::Normal, tau, n).unwrap();
    let d_t = hall_sheather_bandwidth(tau, t, DEFAULT_HS_ALPHA)
        .unwrap()
        .d_t;
    let mut ratio = [0.0; 2];
    for (i, pop) in pops.iter().enumerate() {
        let design = panel.design(i).unwrap();
        let y = panel.response(i);
        let fits = fit_qr_triple(&design, y, tau, d_t).unwrap();
        let cov = sandwich_iid(&design, y, &fits, tau, d_t).unwrap();
        for (j, r) in ratio.iter_mut().enumerate() {
            *r += cov.v_hat[(j, j)] / pop.v[(j, j)] / n as f64;
        }
    }
    for (j, r) in ratio.iter().enumerate() {
        assert!((r - 1.0).abs() < 0.10, "v[{j},{j}] mean ratio {r}");
    }
}

#[test]
fn lag_terms_vanish_for_independent_data() {
    let t = 10_000;
    let (design, y) = location_sample(t, 5);
    let tau = 0.5;
    let d_t = hall_sheather_bandwidth(tau, t, DEFAULT_HS_ALPHA)
        .unwrap()
        .d_t;
    let fits = fit_qr_triple(&design, &y, tau, d_t).unwrap();
    let iid = sandwich_iid(&design, &y, &fits, tau, d_t).unwrap();
    let dep = sandwich_dependent(&design, &y, &fits, tau, d_t, 3).unwrap();
    let gap = (&dep.a_hat - &iid.a_hat).norm();
    assert!(gap <= 0.05 * iid.a_hat.norm(), "{gap}");
    assert_eq!(dep.m_t, 3);
}

#[test]
fn zero_lags_equal_iid_bitwise() {
    let (design, y) = location_sample(300, 9);
    let d_t = 0.1;
    let fits = fit_qr_triple(&design, &y, 0.3, d_t).unwrap();
    let iid = sandwich_iid(&design, &y, &fits, 0.3, d_t).unwrap();
    let dep = sandwich_dependent(&design, &y, &fits, 0.3, d_t, 0).unwrap();
    assert_eq!(iid.a_hat, dep.a_hat);
    assert_eq!(iid.v_hat, dep.v_hat);
    assert_eq!(iid.w_hat, dep.w_hat);
}

/// Sample long-run variance of `1{u ≤ 0}` for a Gaussian AR(1) path,
/// averaging autocovariances over a long simulated series.
fn brute_force_lrv(rho: f64, tau: f64, len: usize, lags: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let innovation = (1.0 - rho * rho).sqrt();
    let mut u: f64 = StandardNormal.sample(&mut rng);
    let q = normal_quantile(tau);
    let w: Vec<f64> = (0..len)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            u = rho * u + innovation * e;
            tau - if u <= q { 1.0 } else { 0.0 }
        })
        .collect();
    let mean = w.iter().sum::<f64>() / len as f64;
    let acov = |j: usize| {
        (0..len - j)
            .map(|k| (w[k] - mean) * (w[k + j] - mean))
            .sum::<f64>()
            / len as f64
    };
    acov(0) + 2.0 * (1..=lags).map(acov).sum::<f64>()
}

#[test]
fn dependent_sandwich_recovers_long_run_variance() {
    let rho = 0.5;
    let tau = 0.5;
    let t = 100_000;
    let lags = 40;
    let mut spec = DgpSpec::new(1, t, 0.0, ErrorDist::Normal);
    spec.dependence = Dependence::Ar1(rho);
    let errors = generate_panel(&spec, &mut replication_rng(99, 0, 0))
        .unwrap()
        .errors;
    let design = DesignMatrix::intercept_only(t).unwrap();
    let d_t = hall_sheather_bandwidth(tau, t, DEFAULT_HS_ALPHA)
        .unwrap()
        .d_t;
    let fits = fit_qr_triple(&design, &errors, tau, d_t).unwrap();
    let cov = sandwich_dependent(&design, &errors, &fits, tau, d_t, lags).unwrap();
    let oracle = brute_force_lrv(rho, tau, 1_000_000, lags);
    // closed form for the median: 1/4 + 2 Σ arcsin(ρ^j) / (2π)
    let exact = 0.25
        + 2.0 * (1..=200).map(|j| rho.powi(j).asin()).sum::<f64>() / (2.0 * std::f64::consts::PI);
    assert!(
        (oracle / exact - 1.0).abs() < 0.03,
        "oracle {oracle} exact {exact}"
    );
    let a = cov.a_hat[(0, 0)];
    assert!((a / oracle - 1.0).abs() < 0.10, "a_hat {a} oracle {oracle}");
}

#[test]
fn scale_consistency() {
    let (design, y) = location_sample(400, 21);
    let tau = 0.4;
    let d_t = 0.12;
    let c = 3.0;
    let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
    let base_fits = fit_qr_triple(&design, &y, tau, d_t).unwrap();
    let up_fits = fit_qr_triple(&design, &scaled, tau, d_t).unwrap();
    for (b, u) in base_fits.iter().zip(&up_fits) {
        assert!((u.objective - c * b.objective).abs() <= 1e-9 * (1.0 + u.objective));
    }
    let base = sandwich_iid(&design, &y, &base_fits, tau, d_t).unwrap();
    let up = sandwich_iid(&design, &scaled, &up_fits, tau, d_t).unwrap();

    let wb = density_weights(&design, &base_fits[0], &base_fits[2], d_t).weights;
    let wu = density_weights(&design, &up_fits[0], &up_fits[2], d_t).weights;
    for (b, u) in wb.iter().zip(&wu) {
        assert!((u * c / b - 1.0).abs() < 1e-8);
    }
    assert!((&up.b_hat * c - &base.b_hat).norm() < 1e-8 * base.b_hat.norm());
    let vb = base.v_hat[(1, 1)];
    let vu = up.v_hat[(1, 1)];
    assert!((vu / (c * c * vb) - 1.0).abs() < 1e-8);
}

#[test]
fn scores_nearly_balance_at_the_fit() {
    let t = 500;
    let (design, y) = location_sample(t, 8);
    let tau = 0.3;
    let fits = fit_qr_triple(&design, &y, tau, 0.1).unwrap();
    let scores = residual_scores(&design, &y, &fits[1], tau);
    let zmax = (0..t).map(|k| design.row(k).norm()).fold(0.0, f64::max);
    for j in 0..2 {
        let mean = scores.column(j).sum() / t as f64;
        assert!(mean.abs() <= 2.0 * zmax / t as f64, "column {j}: {mean}");
    }
}

#[test]
fn sandwich_outputs_are_symmetric_and_psd() {
    let spec = DgpSpec::new(6, 60, 1.0, ErrorDist::T3);
    let panel = generate_panel(&spec, &mut replication_rng(3, 1, 2))
        .unwrap()
        .panel;
    let tau = 0.75;
    let d_t = hall_sheather_bandwidth(tau, 60, DEFAULT_HS_ALPHA)
        .unwrap()
        .d_t;
    for i in 0..panel.n() {
        let design = panel.design(i).unwrap();
        let fits = fit_qr_triple(&design, panel.response(i), tau, d_t).unwrap();
        for cov in [
            sandwich_iid(&design, panel.response(i), &fits, tau, d_t).unwrap(),
            sandwich_dependent(&design, panel.response(i), &fits, tau, d_t, 2).unwrap(),
        ] {
            for m in [&cov.a_hat, &cov.b_hat, &cov.v_hat, &cov.w_hat] {
                let asym: f64 = (m - m.transpose()).amax();
                assert!(asym <= 1e-10 * (1.0 + m.amax()));
            }
            assert!(eigen_range(&cov.a_hat).0 >= -1e-12);
            assert!(eigen_range(&cov.v_hat).0 > 0.0);
            assert!(eigen_range(&cov.w_hat).0 > 0.0);
        }
    }
}

#[test]
fn iid_a_hat_is_scaled_gram_matrix() {
    let (design, y) = location_sample(200, 4);
    let tau = 0.6;
    let fits = fit_qr_triple(&design, &y, tau, 0.1).unwrap();
    let cov = sandwich_iid(&design, &y, &fits, tau, 0.1).unwrap();
    let z = design.matrix();
    let gram: DMatrix<f64> = z.tr_mul(z) / 200.0;
    assert!((&cov.a_hat - gram * (tau * (1.0 - tau))).amax() < 1e-14);
    assert_eq!(cov.m_t, 0);
}
