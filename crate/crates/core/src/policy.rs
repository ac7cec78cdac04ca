//! Policy interface and the episode rollout shared by training and
//! evaluation.

use crate::env::{EnvModel, EpisodeTrace, Observation};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// `‖h_t‖` for agents with a latent state.
    pub latent_norm: Option<f64>,
}

/// A causal controller: it sees one observation at a time, in order.
pub trait Policy {
    /// Clears any per-episode state.
    fn reset(&mut self);

    /// Decides the action for the current cycle from the newest observation
    /// and the reward of the previous cycle.
    fn act(&mut self, observation: &Observation, prev_reward: f64) -> Decision;
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn reset(&mut self) {
        (**self).reset()
    }

    fn act(&mut self, observation: &Observation, prev_reward: f64) -> Decision {
        (**self).act(observation, prev_reward)
    }
}

/// Always applies the same action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _: &Observation, _: f64) -> Decision {
        Decision {
            action: self.0,
            latent_norm: None,
        }
    }
}

/// Runs one episode to termination or truncation.
pub fn run_episode<P: Policy + ?Sized>(model: &EnvModel, policy: &mut P, seed: u64) -> Result<EpisodeTrace> {
    let (mut env, mut obs) = model.reset(seed)?;
    policy.reset();
    let mut trace = EpisodeTrace::new(obs, model.config().max_cycles);
    let mut prev_reward = 0.0;
    loop {
        let decision = policy.act(&obs, prev_reward);
        let step = env.step(decision.action)?;
        trace.push(decision.action, &step, decision.latent_norm);
        if step.terminated || step.truncated {
            return Ok(trace);
        }
        obs = step.observation;
        prev_reward = step.reward;
    }
}
