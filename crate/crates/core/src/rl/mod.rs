//! Reinforcement-learning boundary control: an MDP wrapper around the solver and a
//! Gaussian actor-critic trained with the PPO clipped surrogate.

mod checkpoint;
mod env;
mod net;
mod policy;
mod ppo;

pub use checkpoint::{
    evaluate_policy, rl_command, Checkpoint, Evaluation, Normalization, RlController,
    CHECKPOINT_FORMAT_VERSION,
};
pub use env::{
    map_action, observe, policy_input, reward, reward_with, DensitySource, Env, EnvConfig, GridSpec,
    INPUT_DEVIATION_SCALE,
    RewardForm, Scheme, StepInfo, StepOutcome,
};
pub use net::{Adam, ForwardCache, Layer, Mlp, SerialLayer, SerialMlp};
pub use policy::{
    critic_loss_and_grad, gaussian_log_prob, policy_forward, sample_action, surrogate_and_grad,
    ActionSample, ActorBatch, SurrogateStats, SIGMA_MAX, SIGMA_MIN,
};
pub use ppo::{
    actor_update, advantages, collect_episode, config_digest, critic_update, curve_envelope,
    discounted_returns, normalize, train, train_seeds, CurvePoint, EpisodeBuffer, TrainConfig,
    TrainOutcome, Transition,
};

#[cfg(test)]
mod tests;
