use std::sync::Arc;

use scorepnp::adaptation::{AdaptedDenoiser, RangePolicy};
use scorepnp::imaging::{ImageTensor, LinearOperator, Shape};
use scorepnp::rng::GaussianStream;
use scorepnp::solvers::{pnp_admm, GammaRule, Method, Preset, QuadraticDataTerm, SigmaSchedule, SolverConfig};
use scorepnp::toy::*;

fn short(seed: u64, steps: usize) -> DsmTrainConfig {
    DsmTrainConfig {
        steps,
        seed,
        ..Default::default()
    }
}

#[test]
fn gradients_of_the_default_architecture_match_finite_differences() {
    let prior = toy_gmm();
    let data = draw_samples(&prior, 64, 3);
    for sched in [toy_ve_schedule(), toy_vp_schedule()] {
        let mut net = MlpScoreNet::new(2, &[64, 64], sched.clone(), 5).unwrap();
        let mut rng = GaussianStream::new(6);
        // give the output layer weight so every layer carries gradient
        let n = net.parameter_count();
        for p in &mut net.params_mut()[n - 130..] {
            *p = 0.1 * rng.normal();
        }
        let batch = DsmBatch::draw(&data, &sched, &mut rng).unwrap();
        for w in [Weighting::Unit, Weighting::SigmaSquared] {
            let err = grad_check(&net, &batch, w, 1e-5).unwrap();
            assert!(err <= 1e-4, "{:?} {w:?}: {err}", sched.kind());
        }
    }
}

#[test]
fn seeds_agree_on_held_out_loss() {
    let prior = toy_gmm();
    let data = draw_samples(&prior, 20_000, 1);
    let sched = toy_ve_schedule();
    let runs: Vec<_> = (0..3)
        .map(|seed| train_toy_score(&data, &sched, &short(seed, 6_000)).unwrap().net)
        .collect();
    assert_ne!(runs[0].params(), runs[1].params());
    let losses: Vec<f64> = runs
        .iter()
        .map(|net| compare_with_analytic(net, &prior, 100_000, Weighting::SigmaSquared, 77).unwrap().net)
        .collect();
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(0.0, f64::max);
    assert!(hi / lo - 1.0 <= 0.05, "{losses:?}");
}

#[test]
fn trained_net_runs_through_pnp_admm() {
    let prior = toy_gmm();
    let data = draw_samples(&prior, 10_000, 2);
    let net = train_toy_score(&data, &toy_vp_schedule(), &short(4, 1_000)).unwrap().net;
    let d = AdaptedDenoiser::new(Arc::new(net), None, RangePolicy::Strict).unwrap();

    // eight 2-D points stored as one 1×16 image, half the entries observed
    let s = Shape::new(1, 16, 1);
    let truth = ImageTensor::new(s, draw_samples(&prior, 8, 9).concat()).unwrap();
    let mask: Vec<f64> = (0..16).map(|i| (i % 4 < 2) as u8 as f64).collect();
    let op = LinearOperator::mask(s, mask).unwrap();
    let mut y = op.forward(&truth).unwrap();
    y.axpy(0.05, &ImageTensor::new(s, GaussianStream::new(3).normal_vec(16)).unwrap()).unwrap();
    let dt = QuadraticDataTerm::new(op, y).unwrap();
    let mut cfg = SolverConfig::preset(Method::PnpAdmm, Preset::Sbm);
    cfg.gamma = Some(GammaRule::Fixed(1.0));
    cfg.sigma = Some(SigmaSchedule::LogSpaced { from: 0.5, to: 0.05 });
    let st = pnp_admm(&dt, &d, &cfg, Some(&truth)).unwrap();
    assert_eq!(st.trace.len(), 100);
    assert!(st.estimate().first_non_finite().is_none());
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let prior = toy_gmm();
    let data = draw_samples(&prior, 10_000, 2);
    let net = train_toy_score(&data, &toy_ve_schedule(), &short(1, 50)).unwrap().net;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.ckpt");
    save_checkpoint(&net, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), net);
}
