use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stmarl_core::envs::{CompetitiveCartpoles, CompetitiveConfig, TwoPlayerEnv};
use stmarl_core::marl::{ReplayBuffer, Transition};
use stmarl_core::quadratic_games::QuadraticGame;
use stmarl_core::stackelberg::{
    angle_between, check_dse, iterate, total_derivative, CgSettings, DifferentiableGame, Dynamics, StackelbergConfig,
};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn game(seed: u64, d1: usize, d2: usize) -> QuadraticGame {
    QuadraticGame::random(&mut ChaCha8Rng::seed_from_u64(seed), d1, d2)
}

fn follower_hessian_norm(g: &QuadraticGame) -> f64 {
    (g.c() * 2.0).svd(false, false).singular_values.max()
}

fn exact_cg(d2: usize) -> CgSettings {
    CgSettings { iters: 4 * d2 + 10, tol: 1e-14 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn small_regularization_approaches_total_gradient(seed in any::<u64>(), d1 in 1usize..5, d2 in 1usize..5) {
        let g = game(seed, d1, d2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x1: Vec<f64> = (0..d1).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let x2: Vec<f64> = (0..d2).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let h = follower_hessian_norm(&g);
        let exact = total_derivative(&g, &x1, &x2, 0.0, exact_cg(d2)).unwrap();
        let reg = total_derivative(&g, &x1, &x2, 1e-8 * h, exact_cg(d2)).unwrap();
        let diff: Vec<f64> = reg.iter().zip(&exact).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-6 * norm(&exact).max(1e-12));
    }

    #[test]
    fn huge_regularization_aligns_with_partial(seed in any::<u64>(), d1 in 1usize..5, d2 in 1usize..5) {
        let g = game(seed, d1, d2);
        let x1 = vec![1.0; d1];
        let x2 = vec![-0.5; d2];
        let h = follower_hessian_norm(&g);
        let reg = total_derivative(&g, &x1, &x2, 1e12 * h, CgSettings::default()).unwrap();
        prop_assert!(angle_between(&reg, &g.grad1(&x1, &x2)) <= 1e-6);
    }

    #[test]
    fn analytic_dse_is_a_dse_and_beats_nash(seed in any::<u64>(), d1 in 1usize..5, d2 in 1usize..5) {
        let g = game(seed, d1, d2);
        let (s1, s2) = g.analytic_dse().unwrap();
        let report = check_dse(&g, &s1, &s2, 1e-8, 1e-5);
        prop_assert!(report.is_dse, "{report:?}");
        let (n1, n2) = g.analytic_nash().unwrap();
        prop_assert!(g.value(&s1, &s2) >= g.value(&n1, &n2) - 1e-9);
    }

    #[test]
    fn absorbing_falls_and_bounded_scores(seed in any::<u64>(), actions in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..400)) {
        let mut cfg = CompetitiveConfig::symmetric();
        cfg.horizon = 400;
        let mut env = CompetitiveCartpoles::new(cfg);
        env.reset(seed);
        let mut fallen = [false; 2];
        let mut score = 0.0;
        let mut steps = 0usize;
        for (a1, a2) in actions {
            let res = env.step(a1, a2).unwrap();
            for i in 0..2 {
                prop_assert!(!fallen[i] || res.info.fallen[i], "fall flag cleared");
                fallen[i] = res.info.fallen[i];
            }
            prop_assert!(res.reward == 0.0 || res.reward.abs() == 1.0);
            score += res.reward;
            steps += 1;
            if res.done {
                break;
            }
        }
        prop_assert!(score.abs() <= (steps as f64 - 1.0).max(0.0));
    }

    #[test]
    fn replay_buffer_keeps_the_newest(capacity in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(1, capacity);
        for k in 0..pushes {
            buf.push(Transition { s: vec![k as f64], a1: 0.0, a2: 0.0, r: k as f64, s2: vec![0.0], done: false });
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        if pushes > 0 {
            let oldest = pushes.saturating_sub(capacity) as f64;
            prop_assert_eq!(buf.oldest().unwrap().r, oldest);
            let b = buf.sample(64, &mut ChaCha8Rng::seed_from_u64(pushes as u64));
            prop_assert!(b.r.iter().all(|&r| r >= oldest && r < pushes as f64));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stackelberg_dynamics_converge_from_random_starts(seed in any::<u64>(), d1 in 1usize..4, d2 in 1usize..4) {
        let g = game(seed, d1, d2);
        let (lr1, lr2) = g.stackelberg_learning_rates().unwrap();
        let mut cfg = StackelbergConfig::new(lr1, lr2, 0.0);
        cfg.cg = exact_cg(d2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        // A random point inside the radius-10 ball.
        let mut start: Vec<f64> = (0..d1 + d2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let r = 10.0 * rand::Rng::random_range(&mut rng, 0.0..1.0) / norm(&start).max(1e-12);
        start.iter_mut().for_each(|v| *v *= r);
        let out = iterate(&g, &start[..d1], &start[d1..], Dynamics::Stackelberg(cfg), 400_000, 1e-13).unwrap();
        let (s1, s2) = g.analytic_dse().unwrap();
        for (x, y) in out.leader.iter().zip(&s1).chain(out.follower.iter().zip(&s2)) {
            prop_assert!((x - y).abs() <= 1e-6, "{x} vs {y} after {} steps", out.steps);
        }
    }
}
