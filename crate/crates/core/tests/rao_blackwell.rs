use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streambp::experiments::tracker::{simulate_truth, RunnerObs};
use streambp::experiments::{RunnerModel, SsmFilter, TrackerConfig};
use streambp::oracles::{kalman_predict, kalman_update, DenseJoint, LinearSsm, NodeSpec, TreeSpec};
use streambp::{AffineEdge, Execution, Gaussian, ParticleCloud, SmcConfig};

fn ssm() -> LinearSsm {
    LinearSsm::random_walk(1.0, 2.0, Gaussian::scalar(1.0, 3.0).unwrap()).unwrap()
}

#[test]
fn exact_model_never_draws() {
    let ssm = ssm();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, ys) = ssm.simulate(100, &mut rng).unwrap();
    let model = SsmFilter { ssm: &ssm };
    let mut cloud = ParticleCloud::init(&model, SmcConfig::new(8), 1).unwrap();
    for y in ys {
        cloud.step(&Some(y)).unwrap();
    }
    assert!(cloud.particles().iter().all(|p| p.ctx.draw_count() == 0));
    assert_eq!(cloud.resample_count(), 0);
}

#[test]
fn exact_estimate_is_kalman_for_any_particle_count() {
    let ssm = ssm();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (_, ys) = ssm.simulate(50, &mut rng).unwrap();
    let model = SsmFilter { ssm: &ssm };
    for n in [1, 3, 17] {
        let mut cloud = ParticleCloud::init(&model, SmcConfig::new(n), 5).unwrap();
        let mut g = ssm.initial.clone();
        for y in &ys {
            g = kalman_predict(&g, &ssm.transition, &ssm.process_noise).unwrap();
            g = kalman_update(&g, &ssm.observation, &ssm.observation_noise, y)
                .unwrap()
                .0;
            cloud.step(&Some(y.clone())).unwrap();
            let (m, c) = cloud.estimate(|x| x).unwrap();
            assert!((m[0] - g.mean()[0]).abs() < 1e-8);
            assert!((c[(0, 0)] - g.cov()[(0, 0)]).abs() < 1e-8);
            assert!(cloud.weights().iter().all(|&w| w == cloud.weights()[0]));
        }
    }
}

/// Per particle, the speed after a step equals exact conditioning of the
/// speed prior on the speed reading and the sampled position.
#[test]
fn runner_speed_is_filtered_exactly() {
    let config = TrackerConfig {
        observe_every: 2,
        ..Default::default()
    };
    let truth = simulate_truth(&config, 3);
    let model = RunnerModel { config: &config };
    let smc = SmcConfig::new(10).with_execution(Execution::Sequential);
    let mut cloud = ParticleCloud::init(&model, smc, 3).unwrap();
    for obs in &truth.obs[..6] {
        cloud.step(obs).unwrap();
    }
    // Speed-only step so the weights stay comparable to the oracle.
    let obs = RunnerObs {
        speed: truth.obs[7].speed,
        altitude: None,
    };
    let before: Vec<(Gaussian, f64)> = cloud
        .particles_mut()
        .iter_mut()
        .map(|p| {
            let (m, c) = p.ctx.moments(&p.state.0).unwrap();
            let x = p.ctx.value_of(&mut p.state.1.clone()).unwrap()[0];
            (Gaussian::new(m, c).unwrap(), x)
        })
        .collect();
    let mut stepped = Vec::new();
    for p in cloud.particles_mut() {
        let (state, position) = model_step(&model, p, &obs);
        stepped.push((state, position));
    }
    for ((prior, x_old), (p, position)) in before.into_iter().zip(stepped) {
        let mut spec = TreeSpec::default();
        let s_old = spec.push(NodeSpec::Root(prior));
        let s_new = spec.push(NodeSpec::Child {
            parent: s_old,
            edge: AffineEdge::scalar(1.0, 0.0, config.sigma_s.powi(2)).unwrap(),
        });
        let reading = spec.push(NodeSpec::Child {
            parent: s_new,
            edge: AffineEdge::scalar(1.0, 0.0, config.sigma_t.powi(2)).unwrap(),
        });
        let x_new = spec.push(NodeSpec::Child {
            parent: s_old,
            edge: AffineEdge::scalar(1.0, x_old, config.sigma_x.powi(2)).unwrap(),
        });
        let dense = DenseJoint::build(&spec).unwrap();
        let one = |v: f64| DVector::from_element(1, v);
        let (dense, _) = dense.condition(reading, &one(obs.speed.unwrap())).unwrap();
        let (dense, _) = dense.condition(x_new, &one(position)).unwrap();
        let (m, c) = dense.marginal(s_new).unwrap();
        assert!((p.0 - m[0]).abs() < 1e-8, "{} vs {}", p.0, m[0]);
        assert!((p.1 - c[(0, 0)]).abs() < 1e-8);
    }
}

fn model_step(
    model: &RunnerModel,
    p: &mut streambp::smc::Particle<(streambp::RandomVar, streambp::RandomVar)>,
    obs: &RunnerObs,
) -> ((f64, f64), f64) {
    use streambp::Model;
    let (state, position) = model.step(&mut p.ctx, p.state.clone(), obs).unwrap();
    let (m, c) = p.ctx.moments(&state.0).unwrap();
    p.state = state;
    ((m[0], c[(0, 0)]), position)
}

#[test]
fn exact_speed_observation_gives_kalman_speed() {
    // Without position use, the speed chain is a scalar Kalman filter.
    let config = TrackerConfig::default();
    let mut ctx = streambp::Ctx::with_seed(9);
    let mut s = ctx
        .rand_normal(streambp::AffineExpr::scalar(0.0), config.sigma_s0.powi(2))
        .unwrap();
    let mut g = Gaussian::scalar(0.0, config.sigma_s0.powi(2)).unwrap();
    let one = |v: f64| DVector::from_element(1, v);
    let q = nalgebra::DMatrix::from_element(1, 1, config.sigma_s.powi(2));
    let r = nalgebra::DMatrix::from_element(1, 1, config.sigma_t.powi(2));
    let id = nalgebra::DMatrix::identity(1, 1);
    for t in 0..50 {
        s = ctx
            .rand_normal(ctx.expr(&s).unwrap(), config.sigma_s.powi(2))
            .unwrap();
        g = kalman_predict(&g, &id, &q).unwrap();
        let y = one(0.1 * t as f64);
        let reading = ctx
            .rand_normal(ctx.expr(&s).unwrap(), config.sigma_t.powi(2))
            .unwrap();
        ctx.observe_rv(&reading, &y).unwrap();
        g = kalman_update(&g, &id, &r, &y).unwrap().0;
        ctx.collect(&s);
        let (m, c) = ctx.moments(&s).unwrap();
        assert!((m[0] - g.mean()[0]).abs() < 1e-8);
        assert!((c[(0, 0)] - g.cov()[(0, 0)]).abs() < 1e-8);
    }
    assert_eq!(ctx.draw_count(), 0);
}
