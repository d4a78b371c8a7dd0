use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use super::ppo::ReturnScale;
use crate::control::Controller;
use crate::error::ArzError;
use crate::model::{make_steady_state, ModelParams};
use crate::solver::TrafficState;

fn small_env(scheme: Scheme) -> EnvConfig {
    EnvConfig {
        horizon: 10.0,
        grid: GridSpec {
            dx: 50.0,
            ..GridSpec::default()
        },
        ..EnvConfig::reference(scheme)
    }
}

fn toy_net(dims: &[usize], seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(dims, 1.0, &mut rng);
    for l in net.layers.iter_mut() {
        l.b.mapv_inplace(|_| 0.0);
        let mut k = 0.0;
        l.b.mapv_inplace(|_| {
            k += 0.1;
            k - 0.25
        });
    }
    net
}

fn toy_obs(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rand::Rng::random_range(&mut rng, -1.0..1.0))
}

/// Central differences of `f` over every parameter of `net`.
fn numeric_grad(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let n = net.params().count();
    (0..n)
        .map(|k| {
            let mut up = net.clone();
            *up.params_mut().nth(k).unwrap() += h;
            let mut dn = net.clone();
            *dn.params_mut().nth(k).unwrap() -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(analytic: &Mlp, numeric: &[f64]) {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
    for (a, n) in analytic.params().zip(numeric) {
        assert!(
            (a - n).abs() <= 1e-4 * scale,
            "analytic {a} vs numeric {n} (scale {scale})"
        );
    }
}

#[test]
fn evaluation_reset_matches_sinusoid() {
    let cfg = EnvConfig {
        randomize_initial: false,
        ..EnvConfig::reference(Scheme::Outlet)
    };
    let mut env = Env::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs = env.reset(&mut rng).unwrap();
    let ss = make_steady_state(0.12, &env.config.params).unwrap();
    let expected = TrafficState::sinusoidal(&ss, &env.grid, 0.1);
    assert_eq!(env.state, expected);
    assert_eq!(obs.len(), 102);
    assert_abs_diff_eq!(obs[0], 0.12 / 0.16, epsilon = 1e-15);
    assert_abs_diff_eq!(obs[51], 10.0 / 40.0, epsilon = 1e-15);
}

#[test]
fn zero_amplitude_observes_steady_state() {
    let mut env = Env::new(EnvConfig::reference(Scheme::Inlet)).unwrap();
    let obs = env.reset_to(0.12, 0.0).unwrap();
    for (i, o) in obs.iter().enumerate() {
        let expected = if i < 51 { 0.75 } else { 0.25 };
        assert_abs_diff_eq!(*o, expected, epsilon = 1e-15);
    }
}

#[test]
fn partial_knowledge_draws_are_uniform() {
    let cfg = EnvConfig {
        density: DensitySource::Uniform {
            values: vec![0.115, 0.12, 0.125],
        },
        ..small_env(Scheme::Outlet)
    };
    let mut env = Env::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; 3];
    for _ in 0..3000 {
        env.reset(&mut rng).unwrap();
        let k = [0.115, 0.12, 0.125]
            .iter()
            .position(|&r| r == env.truth.rho_star)
            .unwrap();
        counts[k] += 1;
    }
    for c in counts {
        assert!((c as f64 / 3000.0 - 1.0 / 3.0).abs() <= 0.03, "{counts:?}");
    }
}

#[test]
fn randomized_amplitude_range() {
    let mut env = Env::new(small_env(Scheme::Outlet)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut signs = [false; 2];
    for _ in 0..200 {
        env.reset(&mut rng).unwrap();
        let rel: Vec<f64> = env.state.rho.iter().map(|r| r / 0.12 - 1.0).collect();
        let peak = rel.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak <= 0.15 + 1e-12);
        let k = (0..rel.len()).find(|&i| rel[i].abs() > 1e-9).unwrap();
        signs[(rel[k] > 0.0) as usize] = true;
    }
    assert!(signs[0] && signs[1]);
}

#[test]
fn zero_action_at_steady_state_is_free() {
    let mut env = Env::new(EnvConfig::reference(Scheme::Both)).unwrap();
    env.reset_to(0.12, 0.0).unwrap();
    let before = env.state.clone();
    let out = env.step(&[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(out.reward, 0.0, epsilon = 1e-20);
    for i in 0..before.len() {
        assert_abs_diff_eq!(env.state.rho[i], before.rho[i], epsilon = 1e-15);
        assert_abs_diff_eq!(env.state.v[i], before.v[i], epsilon = 1e-12);
    }
}

#[test]
fn action_map_examples() {
    let p = ModelParams::reference();
    let light = make_steady_state(0.14, &p).unwrap();
    let cmd = map_action(Scheme::Inlet, &[1.0], &light, &p).unwrap();
    assert_abs_diff_eq!(cmd.inlet, 1.5 * light.q_star, epsilon = 1e-15);
    assert_abs_diff_eq!(cmd.outlet.value(), light.q_star, epsilon = 1e-15);
    let nominal = make_steady_state(0.12, &p).unwrap();
    let cmd = map_action(Scheme::Outlet, &[1.0], &nominal, &p).unwrap();
    assert_abs_diff_eq!(cmd.outlet.value(), 1.6, epsilon = 1e-15);
    assert_abs_diff_eq!(cmd.inlet, 1.2, epsilon = 1e-15);
    assert!(map_action(Scheme::Both, &[0.0], &nominal, &p).is_err());
}

#[test]
fn blow_up_ends_episode_with_penalty() {
    let mut env = Env::new(EnvConfig::reference(Scheme::Both)).unwrap();
    env.reset_to(0.12, 0.1).unwrap();
    let mut worst = reward(&env.state, &env.truth);
    let mut last = None;
    while !env.is_done() {
        let out = env.step(&[1.0, -1.0]).unwrap();
        if out.info.blow_up.is_none() {
            worst = worst.min(out.reward);
        }
        last = Some(out);
    }
    let last = last.unwrap();
    let (_, penalty) = last.info.blow_up.expect("jam must form");
    assert!(last.done);
    assert_eq!(last.reward, penalty);
    let remaining = (env.grid.n - 1) as f64 - (last.info.t - env.grid.dt) / env.grid.dt;
    assert_abs_diff_eq!(penalty, worst * remaining.round(), epsilon = 1e-9 * penalty.abs());
    assert!(matches!(env.step(&[0.0, 0.0]), Err(ArzError::Usage(_))));
}

#[test]
fn policy_input_is_zero_at_steady_state() {
    let p = ModelParams::reference();
    let ss = make_steady_state(0.12, &p).unwrap();
    let at_rest = observe(&TrafficState::uniform(3, ss.rho_star, ss.v_star), &p);
    for z in policy_input(&at_rest, &ss, &p, INPUT_DEVIATION_SCALE) {
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-12);
    }
    // ρ 10% above ρ*, v 5% below v*.
    let obs = [0.75 * 1.1, 0.75, 0.25 * 0.95, 0.25];
    let z = policy_input(&obs, &ss, &p, INPUT_DEVIATION_SCALE);
    let expected = [1.0, 0.0, -0.5, 0.0];
    for (a, b) in z.iter().zip(expected) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
}

#[test]
fn reward_examples() {
    let p = ModelParams::reference();
    let ss = make_steady_state(0.12, &p).unwrap();
    let mut s = TrafficState::uniform(51, 0.12, 10.0);
    assert_eq!(reward(&s, &ss), 0.0);
    s.rho[7] = 0.132;
    assert_abs_diff_eq!(reward(&s, &ss), -0.01, epsilon = 1e-12);
    let env = Env::new(EnvConfig::reference(Scheme::Outlet)).unwrap();
    let ic = TrafficState::sinusoidal(&ss, &env.grid, 0.1);
    assert_abs_diff_eq!(reward(&ic, &ss), -0.51, epsilon = 0.02);
    let brute: f64 = (0..51)
        .map(|i| 2.0 * 0.01 * (3.0 * std::f64::consts::PI * i as f64 / 50.0).sin().powi(2))
        .sum();
    assert_abs_diff_eq!(reward(&ic, &ss), -brute, epsilon = 1e-12);
    assert_abs_diff_eq!(brute, 0.5, epsilon = 1e-12);
}

#[test]
fn summed_reward_form_ignores_cancelling_deviations() {
    let ss = make_steady_state(0.12, &ModelParams::reference()).unwrap();
    let mut s = TrafficState::uniform(5, 0.12, 10.0);
    s.rho[1] = 0.132;
    s.rho[3] = 0.108;
    assert_abs_diff_eq!(reward_with(RewardForm::PerCell, &s, &ss), -0.02, epsilon = 1e-12);
    assert_abs_diff_eq!(reward_with(RewardForm::SummedDeviation, &s, &ss), 0.0, epsilon = 1e-24);
    s.v[0] = 11.0;
    s.v[2] = 11.0;
    assert_abs_diff_eq!(reward_with(RewardForm::SummedDeviation, &s, &ss), -0.04, epsilon = 1e-12);
}

#[test]
fn policy_forward_examples() {
    let net = Mlp::zeros(&[4, 3, 2]);
    let (mu, sigma) = policy_forward(&net, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!((mu, sigma), (vec![0.0], vec![1.0]));
    let net = toy_net(&[4, 5, 4], 2);
    let x = [0.3, -0.2, 0.5, 0.9];
    assert_eq!(policy_forward(&net, &x).unwrap(), policy_forward(&net, &x).unwrap());
    assert!(policy_forward(&net, &[0.0; 3]).is_err());
    let (_, sigma) = policy_forward(&net, &x).unwrap();
    assert!(sigma.iter().all(|s| (SIGMA_MIN..=SIGMA_MAX).contains(s)));
}

#[test]
fn forward_matches_finite_differences() {
    let net = toy_net(&[3, 4, 2], 5);
    let x = Array2::from_shape_vec((1, 3), vec![0.2, -0.7, 0.4]).unwrap();
    let weights = Array2::from_shape_vec((1, 2), vec![0.6, -1.3]).unwrap();
    let cache = net.forward_batch(&x);
    let grad = net.backward(&cache, &weights);
    let numeric = numeric_grad(&net, |n| {
        let out = n.forward(&[0.2, -0.7, 0.4]).unwrap();
        0.6 * out[0] - 1.3 * out[1]
    });
    assert_grad_close(&grad, &numeric);
}

#[test]
fn sampling_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mean = (0..n)
        .map(|_| sample_action(&[0.3], &[SIGMA_MIN], &mut rng).action[0])
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.3).abs() <= 3.0 * SIGMA_MIN / 100.0);

    let mu = [0.1, -0.4];
    let sigma = [0.5, 0.2];
    let expected = -(0.5f64.ln() + 0.2f64.ln()) - (2.0 * std::f64::consts::PI).ln();
    assert_abs_diff_eq!(gaussian_log_prob(&mu, &mu, &sigma), expected, epsilon = 1e-14);

    let a = sample_action(&mu, &sigma, &mut ChaCha8Rng::seed_from_u64(4));
    let b = sample_action(&mu, &sigma, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(a, b);
    assert_abs_diff_eq!(a.log_prob, gaussian_log_prob(&a.drawn, &mu, &sigma), epsilon = 1e-15);
    let wide = sample_action(&[0.9], &[1.0], &mut ChaCha8Rng::seed_from_u64(0));
    assert!(wide.action[0].abs() <= 1.0);
}

#[test]
fn discounted_return_examples() {
    assert_eq!(discounted_returns(&[1.0, -2.0, 3.0], 0.0), vec![1.0, -2.0, 3.0]);
    assert_eq!(discounted_returns(&[-1.0; 10], 1.0)[0], -10.0);
    assert_abs_diff_eq!(discounted_returns(&[1.0; 3], 0.99)[0], 2.9701, epsilon = 1e-12);
}

#[test]
fn advantage_examples() {
    let returns = [-3.0, -1.0, -4.0, -2.5];
    assert!(advantages(&returns, &returns).iter().all(|&a| a == 0.0));
    let adv = advantages(&returns, &[0.0; 4]);
    assert_eq!(adv, normalize(&returns));
    let mean = adv.iter().sum::<f64>() / 4.0;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() <= 1e-10);
    assert!((var - 1.0).abs() <= 1e-6);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let net = toy_net(&[3, 5, 4, 1], 9);
    let obs = toy_obs(6, 3, 1);
    let returns = Array1::from(vec![0.3, -0.1, 0.8, -1.2, 0.0, 0.5]);
    let (_, grad) = critic_loss_and_grad(&net, &obs, &returns).unwrap();
    let numeric = numeric_grad(&net, |n| critic_loss_and_grad(n, &obs, &returns).unwrap().0);
    assert_grad_close(&grad, &numeric);
}

#[test]
fn critic_at_targets_has_zero_gradient() {
    let net = toy_net(&[3, 4, 1], 2);
    let obs = toy_obs(5, 3, 2);
    let targets = net.forward_batch(&obs).output.column(0).to_owned();
    let (loss, grad) = critic_loss_and_grad(&net, &obs, &targets).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.params().all(|&g| g == 0.0));
    let mut moved = net.clone();
    let mut opt = Adam::new(&moved, 1e-3);
    critic_update(&mut moved, &mut opt, &obs, &targets, 3).unwrap();
    assert_eq!(moved, net);
}

#[test]
fn critic_loss_decreases() {
    let mut net = toy_net(&[3, 8, 8, 1], 4);
    let obs = toy_obs(16, 3, 3);
    let returns = Array1::from_iter((0..16).map(|i| (i as f64 * 0.37).sin()));
    let mut opt = Adam::new(&net, 1e-3);
    let losses = critic_update(&mut net, &mut opt, &obs, &returns, 50).unwrap();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
}

fn toy_batch(actor: &Mlp, seed: u64) -> ActorBatch {
    let obs = toy_obs(7, 3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = Array2::zeros((7, 2));
    let mut logp = Array1::zeros(7);
    for i in 0..7 {
        let row: Vec<f64> = obs.row(i).to_vec();
        let (mu, sigma) = policy_forward(actor, &row).unwrap();
        let s = sample_action(&mu, &sigma, &mut rng);
        drawn[[i, 0]] = s.drawn[0];
        drawn[[i, 1]] = s.drawn[1];
        logp[i] = s.log_prob;
    }
    let advantages = Array1::from(normalize(&[0.5, -1.0, 2.0, 0.1, -0.3, 1.1, -2.2]));
    ActorBatch {
        obs,
        drawn,
        old_log_prob: logp,
        advantages,
    }
}

/// μ for two actions, log σ kept inside (ln σ_min, ln σ_max).
fn toy_actor(seed: u64) -> Mlp {
    let mut net = toy_net(&[3, 6, 4], seed);
    let last = net.layers.len() - 1;
    net.layers[last].w.row_mut(2).mapv_inplace(|w| 0.1 * w);
    net.layers[last].w.row_mut(3).mapv_inplace(|w| 0.1 * w);
    net.layers[last].b[2] = -0.9;
    net.layers[last].b[3] = -1.4;
    net
}

#[test]
fn ratio_identity_at_old_policy() {
    let actor = toy_actor(1);
    let batch = toy_batch(&actor, 1);
    let (stats, _) = surrogate_and_grad(&actor, &batch, 0.2).unwrap();
    assert!(stats.max_ratio_deviation <= 1e-12);
    assert_abs_diff_eq!(stats.objective, batch.advantages.mean().unwrap(), epsilon = 1e-12);
    assert_eq!(stats.clip_fraction, 0.0);
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let behaviour = toy_actor(3);
    let batch = toy_batch(&behaviour, 3);
    // move away from the behaviour policy but stay inside the clip window
    let mut actor = behaviour.clone();
    for p in actor.params_mut() {
        *p *= 1.01;
    }
    let (stats, grad) = surrogate_and_grad(&actor, &batch, 0.2).unwrap();
    assert!(stats.max_ratio_deviation < 0.2);
    let numeric = numeric_grad(&actor, |n| surrogate_and_grad(n, &batch, 0.2).unwrap().0.objective);
    assert_grad_close(&grad, &numeric);
}

#[test]
fn active_clip_contributes_nothing() {
    let actor = toy_actor(5);
    let mut batch = toy_batch(&actor, 5);
    // ratio e^{1} > 1.2 with positive advantage on every sample
    batch.old_log_prob.mapv_inplace(|l| l - 1.0);
    batch.advantages.fill(1.0);
    let (stats, grad) = surrogate_and_grad(&actor, &batch, 0.2).unwrap();
    assert_eq!(stats.clip_fraction, 1.0);
    assert!(grad.params().all(|&g| g == 0.0));
    assert_abs_diff_eq!(stats.objective, 1.2, epsilon = 1e-12);
}

#[test]
fn actor_update_rejects_stale_log_probs() {
    let mut actor = toy_actor(6);
    let mut batch = toy_batch(&actor, 6);
    batch.old_log_prob.mapv_inplace(|l| l + 0.5);
    let mut opt = Adam::new(&actor, 3e-4);
    assert!(matches!(
        actor_update(&mut actor, &mut opt, &batch, 0.2, 2),
        Err(ArzError::Training(_))
    ));
}

#[test]
fn actor_update_raises_surrogate() {
    let mut actor = toy_actor(8);
    let batch = toy_batch(&actor, 8);
    let mut opt = Adam::new(&actor, 1e-3);
    let obj = actor_update(&mut actor, &mut opt, &batch, 0.2, 20).unwrap();
    assert!(obj.last().unwrap() > obj.first().unwrap());
}

fn tiny_train(seed: u64, workers: usize, episodes: usize) -> TrainOutcome {
    let cfg = TrainConfig {
        episodes,
        batch_episodes: 2,
        actor_epochs: 2,
        critic_epochs: 2,
        hidden: vec![8],
        average_window: 2,
        seed,
        workers,
        ..TrainConfig::default()
    };
    train(&small_env(Scheme::Outlet), &cfg).unwrap()
}

#[test]
fn zero_episodes_returns_initial_policy() {
    let out = tiny_train(1, 1, 0);
    assert!(out.curve.is_empty());
    assert_eq!(out.final_checkpoint.episodes, 0);
    assert_eq!(out.final_checkpoint.actor, out.best_checkpoint.actor);
}

#[test]
fn training_is_seed_deterministic() {
    let a = tiny_train(4, 1, 6);
    let b = tiny_train(4, 1, 6);
    let c = tiny_train(4, 2, 6);
    let bits = |o: &TrainOutcome| o.curve.iter().map(|p| p.cum_reward.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
    assert_eq!(a.final_checkpoint, b.final_checkpoint);
    assert_eq!(a.curve.len(), 6);
    assert_eq!(a.curve[5].episode, 6);
    assert_ne!(bits(&a), bits(&tiny_train(5, 1, 6)));
}

#[test]
fn checkpoint_round_trip_and_controller() {
    let out = tiny_train(2, 1, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    out.final_checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.final_checkpoint);

    let env = Env::new(small_env(Scheme::Outlet)).unwrap();
    let ss = make_steady_state(0.12, &env.config.params).unwrap();
    let obs = TrafficState::sinusoidal(&ss, &env.grid, 0.1);
    let mut a = RlController::from_checkpoint(&out.final_checkpoint, Scheme::Outlet).unwrap();
    let mut b = RlController::from_checkpoint(&loaded, Scheme::Outlet).unwrap();
    assert_eq!(a.command(&obs).unwrap(), b.command(&obs).unwrap());
    assert_eq!(a.command(&obs).unwrap(), a.command(&obs).unwrap());
    assert!(matches!(
        RlController::from_checkpoint(&loaded, Scheme::Inlet),
        Err(ArzError::Config(_))
    ));

    let mut text = std::fs::read_to_string(&path).unwrap();
    text = text.replacen("\"format_version\": 2", "\"format_version\": 99", 1);
    std::fs::write(&path, text).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn evaluation_matches_env_reward() {
    let out = tiny_train(3, 1, 2);
    let actor = out.final_checkpoint.actor().unwrap();
    let cfg = small_env(Scheme::Outlet);
    let ev = evaluate_policy(&actor, &cfg, 0.12).unwrap();
    let ss = make_steady_state(0.12, &cfg.params).unwrap();
    assert_eq!(ev.rewards.len(), ev.states.len() - 1);
    for (s, r) in ev.states[1..].iter().zip(&ev.rewards) {
        assert_eq!(reward(s, &ss), *r);
    }
    assert_abs_diff_eq!(ev.cum_reward, ev.rewards.iter().sum::<f64>(), epsilon = 1e-12);
}

#[test]
fn curve_envelope_spans_seeds() {
    let curves = vec![
        vec![
            CurvePoint { episode: 1, seed: 0, cum_reward: -3.0 },
            CurvePoint { episode: 2, seed: 0, cum_reward: -1.0 },
        ],
        vec![
            CurvePoint { episode: 1, seed: 1, cum_reward: -5.0 },
            CurvePoint { episode: 2, seed: 1, cum_reward: -2.0 },
        ],
    ];
    let env = curve_envelope(&curves);
    assert_eq!(env, vec![(1, -5.0, -4.0, -3.0), (2, -2.0, -1.5, -1.0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn emitted_flows_respect_capacity(u in -10.0f64..10.0, w in -10.0f64..10.0, rho in 0.085f64..0.155) {
        let p = ModelParams::reference();
        let ss = make_steady_state(rho, &p).unwrap();
        let cmd = map_action(Scheme::Both, &[u.clamp(-1.0, 1.0), w.clamp(-1.0, 1.0)], &ss, &p).unwrap();
        prop_assert!(cmd.inlet >= 0.0 && cmd.inlet <= p.capacity());
        prop_assert!(cmd.outlet.value() >= 0.0 && cmd.outlet.value() <= p.capacity());
    }

    #[test]
    fn sigma_stays_clamped(bias in -20.0f64..20.0) {
        let mut net = Mlp::zeros(&[2, 3, 2]);
        net.layers[1].b[1] = bias;
        let (_, sigma) = policy_forward(&net, &[0.5, 0.5]).unwrap();
        prop_assert!(sigma[0] >= SIGMA_MIN && sigma[0] <= SIGMA_MAX);
    }

    #[test]
    fn reward_is_nonpositive(
        rho in prop::collection::vec(0.01f64..0.16, 5),
        v in prop::collection::vec(0.0f64..40.0, 5),
    ) {
        let ss = make_steady_state(0.12, &ModelParams::reference()).unwrap();
        let s = TrafficState { rho, v, t: 0.0 };
        let r = reward(&s, &ss);
        prop_assert!(r <= 0.0);
        let at_steady = s.rho.iter().all(|&x| x == 0.12) && s.v.iter().all(|&x| x == ss.v_star);
        prop_assert_eq!(r == 0.0, at_steady);
    }
}

#[test]
fn return_scale_matches_batch_moments_and_folds() {
    let xs: Vec<f64> = (0..50).map(|i| -30.0 + (i as f64 * 0.37).sin() * 4.0).collect();
    let mut whole = ReturnScale::default();
    whole.update(&xs);
    let mut parts = ReturnScale::default();
    parts.update(&xs[..17]);
    parts.update(&xs[17..]);
    let mean = xs.iter().sum::<f64>() / 50.0;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
    for s in [whole, parts] {
        assert_abs_diff_eq!(s.mean(), mean, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std(), std, epsilon = 1e-12);
    }
    let z = whole.standardize(&xs);
    assert_abs_diff_eq!(z.mean().unwrap(), 0.0, epsilon = 1e-12);

    let critic = toy_net(&[3, 5, 1], 4);
    let folded = whole.fold(&critic);
    let obs = [0.2, -0.4, 0.9];
    let raw = critic.forward(&obs).unwrap()[0];
    assert_abs_diff_eq!(folded.forward(&obs).unwrap()[0], mean + std * raw, epsilon = 1e-12);
    assert_eq!(ReturnScale::default().fold(&critic), critic);
}
