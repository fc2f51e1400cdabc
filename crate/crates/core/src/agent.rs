//! DDPG agent: deterministic actor with exploration noise, critic trained by
//! Bellman regression, target networks tracked by soft updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{soft_update, Activation, AdamState, Mlp};
use crate::replay::{ReplayBuffer, Transition};

/// Scale of the actor's last layer at initialization, keeping early actions near 0.5.
pub const ACTOR_FINAL_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentHyper {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub warmup_steps: usize,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    pub noise_decay_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.005,
            batch_size: 16,
            updates_per_step: 16,
            warmup_steps: 5,
            noise_sigma_start: 0.3,
            noise_sigma_end: 0.05,
            noise_decay_steps: 50,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
        }
    }
}

impl AgentHyper {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Definition(format!("agent hyperparameters: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.updates_per_step == 0 || self.replay_capacity == 0 {
            return bad("batch_size, updates_per_step and replay_capacity must be positive");
        }
        if self.noise_sigma_start < 0.0 || self.noise_sigma_end < 0.0 {
            return bad("noise sigmas must be non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    /// Exploration sigma after `step` acting steps: linear from start to end.
    pub fn sigma_at(&self, step: u64) -> f64 {
        if self.noise_decay_steps == 0 {
            return self.noise_sigma_end;
        }
        let frac = (step as f64 / self.noise_decay_steps as f64).min(1.0);
        self.noise_sigma_start * (1.0 - frac) + self.noise_sigma_end * frac
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnReport {
    pub updates: usize,
    /// Mean squared Bellman error before each critic step, averaged over updates.
    pub critic_loss: f64,
    /// Mean `Q(s, mu(s))` over the batch, averaged over updates.
    pub actor_objective: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub hyper: AgentHyper,
    pub step_count: u64,
    pub rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(state_dim: usize, action_dim: usize, hyper: AgentHyper, seed: u64) -> Result<Self> {
        hyper.check()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Architecture("state and action dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&hyper.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&hyper.hidden);
        critic_sizes.push(1);

        let actor = Mlp::new(&actor_sizes, Activation::Sigmoid, ACTOR_FINAL_SCALE, &mut rng)?;
        let critic = Mlp::new(&critic_sizes, Activation::Identity, 1.0, &mut rng)?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, hyper.actor_lr),
            critic_opt: AdamState::new(&critic, hyper.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            hyper,
            step_count: 0,
            rng,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Checks the structural invariants tying the four networks together.
    pub fn check_shapes(&self) -> Result<()> {
        let (k, m) = (self.state_dim(), self.action_dim());
        if !self.actor.same_architecture(&self.actor_target) || !self.critic.same_architecture(&self.critic_target) {
            return Err(Error::Architecture("target and online networks differ".into()));
        }
        if self.critic.input_dim() != k + m || self.critic.output_dim() != 1 {
            return Err(Error::Architecture(format!(
                "critic {:?} does not match actor {:?}",
                self.critic.sizes(),
                self.actor.sizes()
            )));
        }
        if self.actor_opt.m.len() != self.actor.params().len() || self.critic_opt.m.len() != self.critic.params().len() {
            return Err(Error::Architecture("optimizer state does not match network".into()));
        }
        Ok(())
    }

    pub fn current_sigma(&self) -> f64 {
        self.hyper.sigma_at(self.step_count)
    }

    /// The deterministic policy output.
    pub fn policy(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(state)
    }

    /// Chooses an action. Exploring calls count as environment steps: uniform
    /// during warmup, then the policy plus decaying gaussian noise.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::shape("state", self.state_dim(), state.len()));
        }
        if !explore {
            return self.policy(state);
        }
        let m = self.action_dim();
        let action = if self.step_count < self.hyper.warmup_steps as u64 {
            (0..m).map(|_| self.rng.random::<f64>()).collect()
        } else {
            let sigma = self.current_sigma();
            let mut a = self.policy(state)?;
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::Definition(e.to_string()))?;
                for x in &mut a {
                    *x = (*x + noise.sample(&mut self.rng)).clamp(0.0, 1.0);
                }
            }
            a
        };
        self.step_count += 1;
        Ok(action)
    }

    /// One Adam step on the mean squared Bellman error over `batch`; returns
    /// the loss before the step.
    pub fn update_critic(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = batch.len() as f64;
        let mut grads = vec![0.0; self.critic.params().len()];
        let mut loss = 0.0;
        for t in batch {
            let next_action = self.actor_target.forward(&t.next_state)?;
            let next_q = self.critic_target.forward(&concat(&t.next_state, &next_action))?[0];
            let target = t.reward + self.hyper.gamma * next_q;
            let input = concat(&t.state, &t.action);
            let q = self.critic.forward(&input)?[0];
            let err = q - target;
            loss += err * err / n;
            self.critic.backward_into(&input, &[2.0 * err / n], &mut grads)?;
        }
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// One Adam ascent step on the mean of `q_and_grad(s, mu(s))` over `states`.
    /// The closure returns the value and its gradient with respect to the action.
    pub fn update_actor_with<F>(&mut self, states: &[&[f64]], mut q_and_grad: F) -> Result<f64>
    where
        F: FnMut(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>,
    {
        if states.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = states.len() as f64;
        let mut grads = vec![0.0; self.actor.params().len()];
        let mut objective = 0.0;
        for s in states {
            let a = self.actor.forward(s)?;
            let (q, dq_da) = q_and_grad(s, &a)?;
            objective += q / n;
            let upstream: Vec<f64> = dq_da.iter().map(|g| -g / n).collect();
            self.actor.backward_into(s, &upstream, &mut grads)?;
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective)
    }

    /// Actor step through the current critic, held fixed.
    pub fn update_actor(&mut self, states: &[&[f64]]) -> Result<f64> {
        let critic = self.critic.clone();
        let k = self.state_dim();
        self.update_actor_with(states, |s, a| {
            let input = concat(s, a);
            let q = critic.forward(&input)?[0];
            let (_, input_grad) = critic.backward(&input, &[1.0])?;
            Ok((q, input_grad[k..].to_vec()))
        })
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        soft_update(&mut self.actor_target, &self.actor, self.hyper.tau)?;
        soft_update(&mut self.critic_target, &self.critic, self.hyper.tau)
    }

    /// `updates_per_step` rounds of: sample, critic step, actor step, target update.
    pub fn learn(&mut self, buffer: &ReplayBuffer) -> Result<LearnReport> {
        if buffer.is_empty() {
            log::warn!("learn called on an empty replay buffer; skipping");
            return Ok(LearnReport {
                skipped: true,
                ..LearnReport::default()
            });
        }
        let mut report = LearnReport::default();
        for _ in 0..self.hyper.updates_per_step {
            let batch: Vec<Transition> = buffer
                .sample(self.hyper.batch_size, &mut self.rng)?
                .into_iter()
                .cloned()
                .collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            report.critic_loss += self.update_critic(&refs)?;
            let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
            report.actor_objective += self.update_actor(&states)?;
            self.soft_update_targets()?;
            report.updates += 1;
        }
        let n = report.updates as f64;
        report.critic_loss /= n;
        report.actor_objective /= n;
        Ok(report)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}
