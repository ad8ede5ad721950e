use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{entropy, log_softmax, softmax, ActorCritic, Adam};
use super::{Environment, RlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub discount_gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Episodes per update; 0 means every episode the environment offers.
    pub rollout_clips: usize,
    pub updates: usize,
    /// Intervals per direction; the action set has `2C + 1` classes.
    pub classes: usize,
    pub max_offset_nm: i64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Initial output bias of the zero class, so search starts near the unmodified recipe.
    pub init_noop_logit: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            discount_gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            learning_rate: 3e-4,
            epochs_per_update: 4,
            minibatch_size: 64,
            rollout_clips: 0,
            updates: 30,
            classes: 4,
            max_offset_nm: 40,
            hidden: vec![64, 64],
            seed: 0,
            init_noop_logit: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn step_nm(&self) -> i64 {
        self.max_offset_nm / self.classes as i64
    }

    pub fn num_actions(&self) -> usize {
        2 * self.classes + 1
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(self.discount_gamma > 0.0 && self.discount_gamma <= 1.0) {
            return bad("discount_gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) || self.c1 < 0.0 || self.c2 < 0.0 || !(self.learning_rate > 0.0) {
            return bad("clip_eps and learning_rate must be positive, c1 and c2 non-negative");
        }
        if self.classes == 0 || self.max_offset_nm % self.classes as i64 != 0 {
            return bad("classes must divide max_offset_nm");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.hidden.is_empty() {
            return bad("epochs, minibatch size and hidden layers must be non-empty");
        }
        Ok(())
    }

    /// Action index for a class in `[-C, C]`.
    pub fn action_of_class(&self, class: i32) -> usize {
        (class + self.classes as i32) as usize
    }

    pub fn class_of_action(&self, action: usize) -> i32 {
        action as i32 - self.classes as i32
    }
}

/// `R_t = sum_k gamma^(k-t) r_k`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimates with `V(s_{T+1}) = 0`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// One environment step as stored for the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub policy_obs: Vec<f64>,
    pub value_obs: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    /// `clip - c1 * value + c2 * entropy`, to be maximized.
    pub combined: f64,
    pub clipped_fraction: f64,
}

/// Objective terms over a batch, and optionally the gradients of
/// `-combined` with respect to the policy and value parameters (added into
/// `grads`).
pub fn ppo_losses(ac: &ActorCritic, batch: &[&Sample], cfg: &PpoConfig, grads: Option<(&mut [f64], &mut [f64])>) -> PpoLosses {
    let n = batch.len() as f64;
    let eps = cfg.clip_eps;
    let mut out = PpoLosses::default();
    let mut grads = grads;
    for s in batch {
        let tape = ac.policy_tape(&s.policy_obs);
        let logits = tape.output();
        let probs = softmax(logits);
        let logp = log_softmax(logits);
        let ratio = (logp[s.action] - s.log_prob).exp();
        let a = s.advantage;
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        let surrogate = unclipped.min(clipped);
        debug_assert!(!(a > 0.0 && ratio > 1.0 + eps) || clipped <= unclipped);
        if surrogate != unclipped {
            out.clipped_fraction += 1.0;
        }
        let ent = entropy(&probs, &logp);
        let vtape = ac.value.forward(&s.value_obs);
        let v = vtape.output()[0];
        out.clip += surrogate;
        out.entropy += ent;
        out.value += (v - s.ret) * (v - s.ret);
        if let Some((gp, gv)) = grads.as_mut() {
            // d surrogate / d ratio is A while the unclipped branch is active.
            let ds_dr = if a >= 0.0 {
                if ratio < 1.0 + eps { a } else { 0.0 }
            } else if ratio > 1.0 - eps {
                a
            } else {
                0.0
            };
            let d_logits: Vec<f64> = (0..probs.len())
                .map(|k| {
                    let ind = if k == s.action { 1.0 } else { 0.0 };
                    let d_surr = ds_dr * ratio * (ind - probs[k]);
                    let d_ent = -probs[k] * (logp[k] + ent);
                    -(d_surr + cfg.c2 * d_ent) / n
                })
                .collect();
            ac.policy.backward(&tape, &d_logits, gp);
            ac.value.backward(&vtape, &[cfg.c1 * 2.0 * (v - s.ret) / n], gv);
        }
    }
    out.clip /= n;
    out.value /= n;
    out.entropy /= n;
    out.clipped_fraction /= n;
    out.combined = out.clip - cfg.c1 * out.value + cfg.c2 * out.entropy;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub episodes: usize,
    pub steps: usize,
    /// Mean over episodes of the summed reward.
    pub mean_episode_reward: f64,
    /// Mean reward of the last step of each episode.
    pub mean_final_reward: f64,
    pub losses: PpoLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub config: PpoConfig,
    pub net: ActorCritic,
    pub stats: Vec<UpdateStats>,
    /// Set when training stopped on a non-finite update.
    pub aborted: Option<String>,
}

impl PolicyCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> Result<String, RlError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let c: Self = serde_json::from_str(text)?;
        if c.version != Self::VERSION {
            return Err(RlError::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }

    /// Per-update reward trace as CSV.
    pub fn reward_trace_csv(&self) -> String {
        let mut s = String::from("update,episodes,steps,mean_episode_reward,mean_final_reward,policy_objective,value_loss,entropy\n");
        for u in &self.stats {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                u.update, u.episodes, u.steps, u.mean_episode_reward, u.mean_final_reward, u.losses.clip, u.losses.value, u.losses.entropy
            ));
        }
        s
    }
}

fn episode_seed(seed: u64, update: usize, episode: usize) -> u64 {
    seed ^ (update as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (episode as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn rollout(env: &dyn Environment, ac: &ActorCritic, cfg: &PpoConfig, update: usize, ep: usize) -> Result<Vec<Sample>, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, update, ep));
    let mut episode = env.start(ep)?;
    let mut samples = Vec::new();
    loop {
        let obs = episode.observe();
        let logits = ac.policy_tape(&obs.policy).output().to_vec();
        let probs = softmax(&logits);
        let action = sample_action(&probs, &mut rng);
        let log_prob = log_softmax(&logits)[action];
        let value = ac.value(&obs.value);
        let step = episode.step(action)?;
        samples.push(Sample { policy_obs: obs.policy, value_obs: obs.value, action, log_prob, reward: step.reward, value, advantage: 0.0, ret: 0.0 });
        if step.done {
            break;
        }
    }
    let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let adv = gae(&rewards, &values, cfg.discount_gamma, cfg.gae_lambda);
    let ret = discounted_returns(&rewards, cfg.discount_gamma);
    for (s, (a, r)) in samples.iter_mut().zip(adv.into_iter().zip(ret)) {
        s.advantage = a;
        s.ret = r;
    }
    Ok(samples)
}

/// Episodes used by one update: all of them, or a rotating window.
fn episodes_for_update(n: usize, per_update: usize, update: usize) -> Vec<usize> {
    if per_update == 0 || per_update >= n {
        (0..n).collect()
    } else {
        (0..per_update).map(|i| (update * per_update + i) % n).collect()
    }
}

/// Trains a fresh actor-critic on `env`. `on_update` sees each update's statistics.
pub fn train(env: &dyn Environment, cfg: &PpoConfig, mut on_update: impl FnMut(&UpdateStats)) -> Result<PolicyCheckpoint, RlError> {
    cfg.validate()?;
    if env.num_episodes() == 0 {
        return Err(RlError::Config("environment offers no episodes".into()));
    }
    if env.num_actions() != cfg.num_actions() {
        return Err(RlError::Config(format!("environment has {} actions, config {}", env.num_actions(), cfg.num_actions())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ac = ActorCritic::new(env.policy_dim(), env.value_dim(), &cfg.hidden, cfg.num_actions(), &mut rng);
    let noop = ac.policy.output_bias_offset() + cfg.action_of_class(0);
    ac.policy.params[noop] = cfg.init_noop_logit;
    let mut opt_p = Adam::new(ac.policy.params.len(), cfg.learning_rate);
    let mut opt_v = Adam::new(ac.value.params.len(), cfg.learning_rate);
    let mut stats = Vec::with_capacity(cfg.updates);
    let mut aborted = None;
    'updates: for update in 0..cfg.updates {
        let eps = episodes_for_update(env.num_episodes(), cfg.rollout_clips, update);
        let episodes: Vec<Vec<Sample>> =
            eps.par_iter().map(|&ep| rollout(env, &ac, cfg, update, ep)).collect::<Result<_, _>>()?;
        let mean_episode_reward = episodes.iter().map(|e| e.iter().map(|s| s.reward).sum::<f64>()).sum::<f64>() / episodes.len() as f64;
        let mean_final_reward = episodes.iter().filter_map(|e| e.last()).map(|s| s.reward).sum::<f64>() / episodes.len() as f64;
        let mut batch: Vec<Sample> = episodes.into_iter().flatten().collect();
        // Advantages normalized over the whole batch.
        let n = batch.len() as f64;
        let mean = batch.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = batch.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        batch.iter_mut().for_each(|s| s.advantage = (s.advantage - mean) / sd);

        let before = ac.clone();
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut last = PpoLosses::default();
        for _ in 0..cfg.epochs_per_update {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let mb: Vec<&Sample> = chunk.iter().map(|&i| &batch[i]).collect();
                let mut gp = vec![0.0; ac.policy.params.len()];
                let mut gv = vec![0.0; ac.value.params.len()];
                last = ppo_losses(&ac, &mb, cfg, Some((&mut gp, &mut gv)));
                if !last.combined.is_finite() || gp.iter().chain(&gv).any(|g| !g.is_finite()) {
                    ac = before;
                    aborted = Some(format!("non-finite update at update {update}"));
                    break 'updates;
                }
                opt_p.step(&mut ac.policy.params, &gp);
                opt_v.step(&mut ac.value.params, &gv);
            }
        }
        if !ac.is_finite() {
            ac = before;
            aborted = Some(format!("non-finite parameters after update {update}"));
            break;
        }
        let s = UpdateStats { update, episodes: eps.len(), steps: batch.len(), mean_episode_reward, mean_final_reward, losses: last };
        log::info!(
            "update {update}: mean episode reward {:.4}, final {:.4}, entropy {:.3}",
            s.mean_episode_reward,
            s.mean_final_reward,
            s.losses.entropy
        );
        on_update(&s);
        stats.push(s);
    }
    Ok(PolicyCheckpoint { version: PolicyCheckpoint::VERSION, config: cfg.clone(), net: ac, stats, aborted })
}
