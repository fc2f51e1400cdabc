//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use knobtune::agent::{AgentHyper, DdpgAgent};
use knobtune::nnet::{Activation, Mlp};
use knobtune::replay::Transition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

fn weighted_output(net: &Mlp, input: &[f64], upstream: &[f64]) -> f64 {
    net.forward(input).unwrap().iter().zip(upstream).map(|(y, c)| y * c).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest relative error between backpropagated gradients (parameters and
/// input) and central finite differences of `upstream . net(input)`.
pub fn gradcheck(net: &Mlp, input: &[f64], upstream: &[f64]) -> f64 {
    let (grads, input_grad) = net.backward(input, upstream).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.params().len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let up = weighted_output(&probe, input, upstream);
        probe.params_mut()[i] = orig - FD_STEP;
        let down = weighted_output(&probe, input, upstream);
        probe.params_mut()[i] = orig;
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * FD_STEP)));
    }
    let mut x = input.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = weighted_output(net, &x, upstream);
        x[i] = orig - FD_STEP;
        let down = weighted_output(net, &x, upstream);
        x[i] = orig;
        worst = worst.max(rel_err(input_grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Worst gradient-check error over `count` random networks up to [10, 64, 64, 4],
/// alternating sigmoid and identity outputs.
pub fn gradcheck_suite(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 0..count {
        let depth = rng.random_range(2..=4);
        let mut sizes = vec![rng.random_range(1..=10)];
        for _ in 0..depth - 2 {
            sizes.push(rng.random_range(1..=64));
        }
        sizes.push(rng.random_range(1..=4));
        if n == 0 {
            sizes = vec![10, 64, 64, 4];
        }
        let act = if n % 2 == 0 { Activation::Sigmoid } else { Activation::Identity };
        let net = Mlp::new(&sizes, act, 1.0, &mut rng).unwrap();
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(gradcheck(&net, &input, &upstream));
    }
    worst
}

/// Bellman MSE before and after 200 critic updates on a fixed batch with gamma 0.
pub fn critic_learning(seed: u64) -> (f64, f64) {
    let hyper = AgentHyper {
        gamma: 0.0,
        ..AgentHyper::default()
    };
    let mut agent = DdpgAgent::new(4, 2, hyper, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let batch: Vec<Transition> = (0..16)
        .map(|_| {
            let state: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            let action: Vec<f64> = (0..2).map(|_| rng.random()).collect();
            let reward = state[0] - action[1] + 0.5 * state[2] * action[0];
            Transition {
                next_state: (0..4).map(|_| rng.random()).collect(),
                state,
                action,
                reward,
            }
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let first = agent.update_critic(&refs).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = agent.update_critic(&refs).unwrap();
    }
    // loss after the 200th step
    let after = batch
        .iter()
        .map(|t| {
            let mut input = t.state.clone();
            input.extend(&t.action);
            (agent.critic.forward(&input).unwrap()[0] - t.reward).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64;
    assert!(last.is_finite());
    (first, after)
}

/// Largest distance of policy outputs from 0.7 after 500 actor updates
/// against the critic Q = -sum (a - 0.7)^2.
pub fn actor_learning(seed: u64) -> f64 {
    let mut agent = DdpgAgent::new(3, 2, AgentHyper::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let states: Vec<Vec<f64>> = (0..16).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
    for _ in 0..500 {
        agent
            .update_actor_with(&refs, |_, a| {
                let q = -a.iter().map(|x| (x - 0.7).powi(2)).sum::<f64>();
                Ok((q, a.iter().map(|x| -2.0 * (x - 0.7)).collect()))
            })
            .unwrap();
    }
    states
        .iter()
        .flat_map(|s| agent.policy(s).unwrap())
        .map(|a| (a - 0.7).abs())
        .fold(0.0, f64::max)
}

pub fn median(v: &[f64]) -> f64 {
    knobtune::harness::report::median(v)
}
