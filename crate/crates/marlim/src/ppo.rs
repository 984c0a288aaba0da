//! PPO building blocks: training configuration and presets, generalized
//! advantage estimation, and the clipped actor/critic objective with KL and
//! entropy terms plus its analytic gradient.

use crate::error::{Error, Result};
use crate::net::{
    gaussian_head, gaussian_log_prob, sigmoid, HeadKind, MlpGrad, PolicyValueNet, LN_2PI,
};
use serde::{Deserialize, Serialize};

/// Policy head selection for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete,
    Continuous,
}

/// All knobs of a PPO run. Field defaults mirror the common training table;
/// presets override the per-agent specifics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_param: f64,
    pub vf_clip_param: f64,
    pub vf_loss_coeff: f64,
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub entropy_coeff: f64,
    pub lr: f64,
    pub horizon: usize,
    pub rollout_fragment_length: usize,
    pub train_batch_size: usize,
    pub sgd_minibatch_size: usize,
    pub num_sgd_iter: usize,
    pub grad_clip: f64,
    pub use_gae: bool,
    pub use_critic: bool,
    pub fcnet_hiddens: Vec<usize>,
    /// Accepted for preset fidelity; towers are always separate here.
    pub vf_share_layers: bool,
    pub normalize_actions: bool,
    pub normalize_advantages: bool,
    /// Training rewards are multiplied by this before entering GAE.
    pub reward_scale: f64,
    pub action_space: ActionSpace,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 1.0,
            clip_param: 0.3,
            vf_clip_param: 1e3,
            vf_loss_coeff: 1.0,
            kl_coeff: 0.2,
            kl_target: 0.01,
            entropy_coeff: 0.01,
            lr: 1e-4,
            horizon: 200,
            rollout_fragment_length: 200,
            train_batch_size: 8000,
            sgd_minibatch_size: 250,
            num_sgd_iter: 20,
            grad_clip: 40.0,
            use_gae: true,
            use_critic: true,
            fcnet_hiddens: vec![512, 512],
            vf_share_layers: false,
            normalize_actions: true,
            normalize_advantages: true,
            reward_scale: 1.0,
            action_space: ActionSpace::Continuous,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0,1): {}", self.gamma)));
        }
        if self.clip_param <= 0.0 {
            return Err(Error::Config("clip_param must be > 0".into()));
        }
        if self.horizon == 0 || self.train_batch_size == 0 || self.sgd_minibatch_size == 0 {
            return Err(Error::Config("horizon and batch sizes must be positive".into()));
        }
        Ok(())
    }
}

const PRESETS_JSON: &str = include_str!("../data/presets.json");

/// Look up a named preset (`ppo_d`, `ppo_c`, `ippo_n1/n2/n3` and the `_desk`
/// variants sized for laptop runs).
pub fn preset(name: &str) -> Result<PpoConfig> {
    let all: std::collections::BTreeMap<String, PpoConfig> = serde_json::from_str(PRESETS_JSON)?;
    all.get(name)
        .cloned()
        .ok_or_else(|| {
            let known: Vec<&String> = all.keys().collect();
            Error::Config(format!("unknown preset '{name}', known: {known:?}"))
        })
}

pub fn preset_names() -> Vec<String> {
    let all: std::collections::BTreeMap<String, PpoConfig> =
        serde_json::from_str(PRESETS_JSON).expect("embedded presets parse");
    all.keys().cloned().collect()
}

/// Discrete-head bucket stride for a given maximum order quantity.
pub fn bucket_stride(max_order: u32) -> u32 {
    if max_order <= 256 {
        1
    } else {
        max_order.div_ceil(256)
    }
}

/// Number of discrete actions for a maximum order and its stride.
pub fn discrete_actions(max_order: u32) -> usize {
    (max_order / bucket_stride(max_order)) as usize + 1
}

/// Advantage estimation over one complete episode fragment.
///
/// With `use_gae` this is the (gamma, lambda) exponential estimator over TD
/// residuals; lambda = 1 telescopes to discounted-returns-minus-baseline.
/// Without it, advantages are plain discounted returns minus the value
/// baseline. `bootstrap` is the value estimate at the truncation point.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
    use_gae: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut targets = vec![0.0; n];
    if use_gae {
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let v_next = if t + 1 < n { values[t + 1] } else { bootstrap };
            let delta = rewards[t] + gamma * v_next - values[t];
            acc = delta + gamma * lambda * acc;
            advantages[t] = acc;
            targets[t] = acc + values[t];
        }
    } else {
        let mut ret = bootstrap;
        for t in (0..n).rev() {
            ret = rewards[t] + gamma * ret;
            advantages[t] = ret - values[t];
            targets[t] = ret;
        }
    }
    (advantages, targets)
}

/// The action as recorded during rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionRec {
    /// Index into the bucketed discrete action set.
    Discrete(usize),
    /// Normalized continuous action (pre-rounding).
    Continuous(f64),
}

/// One minibatch element.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: ActionRec,
    pub logp_old: f64,
    pub adv: f64,
    pub value_target: f64,
    pub value_old: f64,
}

/// Mean per-sample values of the four objective components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Clipped surrogate (to maximize).
    pub actor: f64,
    /// Clipped squared value error (to minimize).
    pub critic: f64,
    /// KL(old || new), per-state mean.
    pub kl: f64,
    /// Policy entropy, per-state mean.
    pub entropy: f64,
    /// Unclipped surrogate, for the lower-bound check.
    pub actor_unclipped: f64,
}

/// Component weights for the combined objective
/// `maximize w_actor*actor - w_critic*critic - w_kl*kl + w_entropy*entropy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub actor: f64,
    pub critic: f64,
    pub kl: f64,
    pub entropy: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &PpoConfig, kl_coeff: f64) -> Self {
        Self {
            actor: 1.0,
            critic: cfg.vf_loss_coeff,
            kl: kl_coeff,
            entropy: cfg.entropy_coeff,
        }
    }
}

/// Scalar minimized by SGD for given component terms and weights.
pub fn combined_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    -w.actor * terms.actor + w.critic * terms.critic + w.kl * terms.kl - w.entropy * terms.entropy
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|&l| l - lse).collect()
}

/// Evaluate the four loss components and the gradient of the combined loss.
///
/// The returned gradient is d/dtheta of `combined_loss` (a descent direction
/// for minimization), unclipped; `ppo_loss` applies the norm clip.
pub fn loss_and_grad(
    net: &PolicyValueNet,
    old_net: &PolicyValueNet,
    batch: &[Sample],
    cfg: &PpoConfig,
    weights: &LossWeights,
) -> Result<(LossTerms, Vec<f64>)> {
    debug_assert!(!batch.is_empty());
    let m = batch.len() as f64;
    let mut terms = LossTerms::default();
    let mut actor_grad = MlpGrad::zeros_like(&net.actor);
    let mut critic_grad = MlpGrad::zeros_like(&net.critic);
    let eps = cfg.clip_param;

    for s in batch {
        let (acts, out) = net.actor.forward_cached(&s.obs);
        let out_old = old_net.actor.forward(&s.obs);
        // d(combined)/d(actor raw output)
        let mut dout = vec![0.0; out.len()];

        match (&net.arch.head, &s.action) {
            (HeadKind::Discrete { .. }, ActionRec::Discrete(a)) => {
                let logp_all = log_softmax(&out);
                let p: Vec<f64> = logp_all.iter().map(|l| l.exp()).collect();
                let logp_old_all = log_softmax(&out_old);
                let p_old: Vec<f64> = logp_old_all.iter().map(|l| l.exp()).collect();

                let logp = logp_all[*a];
                let ratio = (logp - s.logp_old).exp();
                let surr1 = ratio * s.adv;
                let surr2 = ratio.clamp(1.0 - eps, 1.0 + eps) * s.adv;
                terms.actor += surr1.min(surr2);
                terms.actor_unclipped += surr1;
                let active = if surr1 <= surr2 {
                    true
                } else {
                    ratio > 1.0 - eps && ratio < 1.0 + eps
                };
                let coeff = if active { ratio * s.adv } else { 0.0 };

                let kl: f64 = p_old
                    .iter()
                    .zip(&logp_old_all)
                    .zip(&logp_all)
                    .map(|((&po, &lo), &ln)| po * (lo - ln))
                    .sum();
                terms.kl += kl;
                let entropy: f64 = -p.iter().zip(&logp_all).map(|(&pi, &li)| pi * li).sum::<f64>();
                terms.entropy += entropy;

                for j in 0..out.len() {
                    let ind = if j == *a { 1.0 } else { 0.0 };
                    let dlogp = ind - p[j];
                    let dkl = p[j] - p_old[j];
                    let dent = p[j] * (-logp_all[j] - entropy);
                    dout[j] = (-weights.actor * coeff * dlogp
                        + weights.kl * dkl
                        - weights.entropy * dent)
                        / m;
                }
            }
            (HeadKind::Gaussian, ActionRec::Continuous(a)) => {
                let (mean, std) = gaussian_head(&out);
                let (mean_old, std_old) = gaussian_head(&out_old);
                let dstd_draw = sigmoid(out[1]);

                let logp = gaussian_log_prob(mean, std, *a);
                let ratio = (logp - s.logp_old).exp();
                let surr1 = ratio * s.adv;
                let surr2 = ratio.clamp(1.0 - eps, 1.0 + eps) * s.adv;
                terms.actor += surr1.min(surr2);
                terms.actor_unclipped += surr1;
                let active = if surr1 <= surr2 {
                    true
                } else {
                    ratio > 1.0 - eps && ratio < 1.0 + eps
                };
                let coeff = if active { ratio * s.adv } else { 0.0 };
                let z = *a - mean;
                let dlogp_dmean = z / (std * std);
                let dlogp_dstd = (z * z - std * std) / (std * std * std);

                let dmu = mean - mean_old;
                let kl = (std / std_old).ln()
                    + (std_old * std_old + dmu * dmu) / (2.0 * std * std)
                    - 0.5;
                terms.kl += kl;
                let dkl_dmean = dmu / (std * std);
                let dkl_dstd = 1.0 / std - (std_old * std_old + dmu * dmu) / (std * std * std);

                let entropy = std.ln() + 0.5 * (LN_2PI + 1.0);
                terms.entropy += entropy;
                let dent_dstd = 1.0 / std;

                dout[0] =
                    (-weights.actor * coeff * dlogp_dmean + weights.kl * dkl_dmean) / m;
                dout[1] = (-weights.actor * coeff * dlogp_dstd + weights.kl * dkl_dstd
                    - weights.entropy * dent_dstd)
                    * dstd_draw
                    / m;
            }
            _ => {
                return Err(Error::Config(
                    "action record does not match policy head".into(),
                ))
            }
        }
        net.actor.backward(&acts, &dout, &mut actor_grad);

        // critic: clipped squared error around the rollout-time value
        let (c_acts, c_out) = net.critic.forward_cached(&s.obs);
        let v = c_out[0];
        let e1 = (v - s.value_target).powi(2);
        let v_clip = s.value_old + (v - s.value_old).clamp(-cfg.vf_clip_param, cfg.vf_clip_param);
        let e2 = (v_clip - s.value_target).powi(2);
        terms.critic += e1.max(e2);
        let dv = if e1 >= e2 {
            2.0 * (v - s.value_target)
        } else if (v - s.value_old).abs() < cfg.vf_clip_param {
            2.0 * (v_clip - s.value_target)
        } else {
            0.0
        };
        let dcv = [weights.critic * dv / m];
        net.critic.backward(&c_acts, &dcv, &mut critic_grad);
    }

    terms.actor /= m;
    terms.actor_unclipped /= m;
    terms.critic /= m;
    terms.kl /= m;
    terms.entropy /= m;

    let mut grad = Vec::with_capacity(net.param_count());
    actor_grad.write_flat(&mut grad);
    critic_grad.write_flat(&mut grad);

    if !grad.iter().all(|g| g.is_finite()) || !terms.actor.is_finite() {
        return Err(Error::NonFinite("ppo loss/gradient"));
    }
    Ok((terms, grad))
}

/// Rescale a gradient in place so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= f;
        }
    }
    norm
}

/// Combined scalar loss and norm-clipped gradient under the config's
/// coefficients (`kl_coeff` is the current, possibly adapted, value).
pub fn ppo_loss(
    net: &PolicyValueNet,
    old_net: &PolicyValueNet,
    batch: &[Sample],
    cfg: &PpoConfig,
    kl_coeff: f64,
) -> Result<(f64, LossTerms, Vec<f64>)> {
    let w = LossWeights::from_config(cfg, kl_coeff);
    let (terms, mut grad) = loss_and_grad(net, old_net, batch, cfg, &w)?;
    clip_grad_norm(&mut grad, cfg.grad_clip);
    Ok((combined_loss(&terms, &w), terms, grad))
}

/// Log-probability of an action under the current policy; used at rollout.
pub fn action_log_prob(net: &PolicyValueNet, obs: &[f64], action: &ActionRec) -> f64 {
    let out = net.actor.forward(obs);
    match (&net.arch.head, action) {
        (HeadKind::Discrete { .. }, ActionRec::Discrete(a)) => log_softmax(&out)[*a],
        (HeadKind::Gaussian, ActionRec::Continuous(a)) => {
            let (mean, std) = gaussian_head(&out);
            gaussian_log_prob(mean, std, *a)
        }
        _ => f64::NEG_INFINITY,
    }
}

/// Sample an action from the policy. Returns the record and its log-prob.
pub fn sample_action(
    net: &PolicyValueNet,
    obs: &[f64],
    rng: &mut crate::rng::RngStream,
) -> (ActionRec, f64) {
    let out = net.actor.forward(obs);
    match net.arch.head {
        HeadKind::Discrete { .. } => {
            let logp_all = log_softmax(&out);
            let probs: Vec<f64> = logp_all.iter().map(|l| l.exp()).collect();
            let u = rng.uniform_open();
            let mut acc = 0.0;
            let mut idx = probs.len() - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u <= acc {
                    idx = i;
                    break;
                }
            }
            (ActionRec::Discrete(idx), logp_all[idx])
        }
        HeadKind::Gaussian => {
            let (mean, std) = gaussian_head(&out);
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            let a = mean + std * z;
            (ActionRec::Continuous(a), gaussian_log_prob(mean, std, a))
        }
    }
}

/// Greedy action: softmax argmax or the Gaussian mean.
pub fn greedy_action(net: &PolicyValueNet, obs: &[f64]) -> ActionRec {
    let out = net.actor.forward(obs);
    match net.arch.head {
        HeadKind::Discrete { .. } => {
            let idx = out
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            ActionRec::Discrete(idx)
        }
        HeadKind::Gaussian => ActionRec::Continuous(out[0]),
    }
}
