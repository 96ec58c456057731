use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stmarl_core::envs::{AdversarialCartpole, AdversarialConfig, CompetitiveCartpoles, CompetitiveConfig, TwoPlayerEnv};

fn rollout<E: TwoPlayerEnv>(env: &mut E, steps: usize) -> f64 {
    env.reset(7);
    let mut total = 0.0;
    for t in 0..steps {
        let a = if t % 2 == 0 { 1.0 } else { -1.0 };
        let r = env.step(a, -a).unwrap();
        total += r.reward;
        if r.done {
            env.reset(t as u64);
        }
    }
    total
}

fn env_steps(c: &mut Criterion) {
    let mut sym = CompetitiveCartpoles::new(CompetitiveConfig::symmetric());
    c.bench_function("competitive_cartpoles_1000_steps", |b| b.iter(|| black_box(rollout(&mut sym, 1000))));
    let mut adv = AdversarialCartpole::new(AdversarialConfig::default());
    c.bench_function("adversarial_cartpole_1000_steps", |b| b.iter(|| black_box(rollout(&mut adv, 1000))));
}

criterion_group!(benches, env_steps);
criterion_main!(benches);
