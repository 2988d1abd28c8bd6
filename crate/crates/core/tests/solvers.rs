mod common;

use std::time::Instant;

use common::*;
use scorepnp::solvers::{
    dpir_hqs, pnp_admm, red, GammaRule, Init, Method, Preset, RedVariant, SigmaSchedule, SolverConfig,
};

fn fixed(method: Method, sigma: f64, iterations: usize) -> SolverConfig {
    let mut c = SolverConfig::preset(method, Preset::Sbm);
    c.sigma = Some(SigmaSchedule::Fixed(sigma));
    c.iterations = iterations;
    c
}

#[test]
fn admm_reaches_the_quadratic_fixed_point() {
    let (sigma, rho, gamma) = (0.3, 0.3, 1.0);
    for seed in 0..5 {
        let inst = deblur_instance(100 + seed);
        let d = gaussian_denoiser(&inst.mu, rho);
        let mut c = fixed(Method::PnpAdmm, sigma, 500);
        c.gamma = Some(GammaRule::Fixed(gamma));
        let st = pnp_admm(&inst.dt, &d, &c, None).unwrap();
        let want = quadratic_oracle(&inst, gamma, sigma * sigma / (rho * rho));
        let err = l2_error(st.estimate(), &want);
        assert!(err <= 1e-6, "instance {seed}: {err}");
        assert!(st.trace[499].residual <= 1e-6);
    }
}

#[test]
fn red_reaches_its_fixed_points() {
    let (sigma, rho, gamma, tau) = (0.3, 0.3, 0.5, 1.0);
    let a = rho * rho / (rho * rho + sigma * sigma);
    for seed in 0..5 {
        let inst = deblur_instance(200 + seed);
        let d = gaussian_denoiser(&inst.mu, rho);
        let mut c = fixed(Method::Red, sigma, 500);
        c.gamma = Some(GammaRule::Fixed(gamma));
        c.tau = Some(tau);

        // denoiser applied to s_{k−1}: ∇g(s) + τ(s − D(s)) = 0
        c.red_variant = RedVariant::Gradient;
        let st = red(&inst.dt, &d, &c, None).unwrap();
        let want = quadratic_oracle(&inst, 1.0, tau * (1.0 - a));
        let err = l2_error(&st.s, &want);
        assert!(err <= 1e-6, "gradient variant, instance {seed}: {err}");

        // denoiser applied to x_k = s − γ∇g(s):
        // (1 + τaγ)∇g(s) + τ(1 − a)(s − μ) = 0 and x = s − γ∇g(s)
        c.red_variant = RedVariant::Step;
        let st = red(&inst.dt, &d, &c, None).unwrap();
        let s_star = quadratic_oracle(&inst, 1.0, tau * (1.0 - a) / (1.0 + tau * a * gamma));
        let x_star = {
            let ata = inst.a.transpose() * &inst.a;
            let aty = inst.a.transpose() * nalgebra::DVector::from_column_slice(inst.dt.y().as_slice());
            &s_star - gamma * (ata * &s_star - aty)
        };
        let err = l2_error(st.estimate(), &x_star);
        assert!(err <= 1e-6, "denoise-the-step variant, instance {seed}: {err}");
    }
}

#[test]
fn hqs_reaches_the_quadratic_fixed_point() {
    let (sigma, rho, lambda) = (0.3, 0.3, 0.09);
    let a = rho * rho / (rho * rho + sigma * sigma);
    let gamma = sigma * sigma / lambda;
    for seed in 0..5 {
        let inst = deblur_instance(300 + seed);
        let d = gaussian_denoiser(&inst.mu, rho);
        let mut c = fixed(Method::Dpir, sigma, 500);
        c.lambda = Some(lambda);
        let st = dpir_hqs(&inst.dt, &d, &c, None).unwrap();
        let x_star = quadratic_oracle(&inst, gamma, 1.0 - a);
        assert!(l2_error(&st.x, &x_star) <= 1e-6);
        let z_star = a * &x_star + (1.0 - a) * nalgebra::DVector::from_column_slice(&inst.mu);
        let err = l2_error(st.estimate(), &z_star);
        assert!(err <= 1e-6, "instance {seed}: {err}");
    }
}

#[test]
fn zero_init_reaches_the_same_fixed_point() {
    let inst = deblur_instance(400);
    let d = gaussian_denoiser(&inst.mu, 0.3);
    let mut c = fixed(Method::PnpAdmm, 0.3, 500);
    c.gamma = Some(GammaRule::Fixed(1.0));
    let a = pnp_admm(&inst.dt, &d, &c, None).unwrap();
    c.init = Init::Zeros;
    let b = pnp_admm(&inst.dt, &d, &c, None).unwrap();
    assert!(a.z.distance(&b.z).unwrap() <= 1e-9);
}

#[test]
fn diffpir_conjugate_mean() {
    let started = Instant::now();
    let samples = diffpir_conjugate_samples(2000, 1000, 0.9);
    let (m, se) = mean_and_standard_error(&samples);
    assert!(
        (m - CONJUGATE_POSTERIOR_MEAN).abs() <= 3.0 * se,
        "mean {m}, standard error {se}"
    );
    eprintln!("2000 runs in {:?}", started.elapsed());
}

#[test]
fn diffpir_without_fresh_noise_is_seed_independent() {
    let samples = diffpir_conjugate_samples(3, 200, 0.0);
    assert_eq!(samples[0].to_bits(), samples[1].to_bits());
    assert_eq!(samples[0].to_bits(), samples[2].to_bits());
}
