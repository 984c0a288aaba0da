//! Independent PPO over a shared-capacity cluster: one agent per item, joint
//! rollouts with a shared cluster-average reward, plus the reward
//! normalization used for learning curves and baseline reference lines.

use crate::baselines::{minmax_act, oracle_act};
use crate::env::{ClusterSpec, InventoryEnv};
use crate::error::Result;
use crate::eval::{replication_seed, EvalPolicy};
use crate::ppo::{greedy_action, PpoConfig};
use crate::rng::{channel, RngStream};
use crate::trainer::{to_order, train_joint_with, CurvePoint, TrainOptions, TrainResult};

/// IPPO training output: raw trainer result plus the curve re-expressed in
/// MinMax-normalized units (the MinMax reference line sits at -1).
#[derive(Debug)]
pub struct IppoResult {
    pub raw: TrainResult,
    pub normalized_curve: Vec<CurvePoint>,
    /// |mean MinMax per-episode return|; 0 disables normalization.
    pub normalizer: f64,
}

/// Mean per-episode return (sum over the horizon of the cluster-average
/// weighted reward) of a fixed policy over seeded replications.
pub fn mean_episode_return(
    cluster: &ClusterSpec,
    policy: &EvalPolicy,
    horizon: u64,
    replications: usize,
    root_seed: u64,
) -> Result<f64> {
    let n = cluster.items.len();
    let mut total = 0.0;
    for r in 0..replications as u64 {
        let seed = replication_seed(root_seed, r, cluster);
        let mut env = InventoryEnv::new(cluster.clone(), seed)?;
        let mut policy_rngs: Vec<RngStream> = (0..n as u64)
            .map(|i| RngStream::derive(seed, &[i, channel::POLICY]))
            .collect();
        for _ in 0..horizon {
            let actions: Vec<u32> = (0..n)
                .map(|i| match policy {
                    EvalPolicy::MinMax(ps) => minmax_act(&ps[i], env.state.levels[i] as f64),
                    EvalPolicy::Oracle(ps) => oracle_act(&ps[i], &mut policy_rngs[i]),
                    EvalPolicy::Zero => 0,
                    EvalPolicy::Net { nets, max_order } => {
                        to_order(&greedy_action(&nets[i], &env.observation(i)), *max_order)
                    }
                })
                .map(|a| a.min(env.cluster.capacity))
                .collect();
            let out = env.step(&actions)?;
            total += out.cluster_reward;
        }
    }
    Ok(total / replications as f64)
}

fn normalize(x: f64, normalizer: f64) -> f64 {
    if normalizer > 0.0 {
        x / normalizer
    } else {
        x
    }
}

/// Normalized mean per-episode return for each policy in `policies`, using
/// the same MinMax normalizer as the training curve. Order matches input.
pub fn baseline_reward_lines(
    cluster: &ClusterSpec,
    policies: &[EvalPolicy],
    horizon: u64,
    replications: usize,
    root_seed: u64,
) -> Result<Vec<(String, f64)>> {
    let minmax = crate::eval::minmax_set(cluster, crate::baselines::DEFAULT_SERVICE_LEVEL)?;
    let normalizer = mean_episode_return(cluster, &minmax, horizon, replications, root_seed)?.abs();
    policies
        .iter()
        .map(|p| {
            let raw = mean_episode_return(cluster, p, horizon, replications, root_seed)?;
            Ok((p.name().to_string(), normalize(raw, normalizer)))
        })
        .collect()
}

/// Train one independent PPO agent per cluster item. The normalized curve
/// divides episode returns by the MinMax baseline's absolute mean return, so
/// crossing -1 means beating MinMax. `on_iter` can stop training early based
/// on the normalized point.
pub fn ippo_train_with(
    cluster: &ClusterSpec,
    cfg: &PpoConfig,
    seed: u64,
    total_timesteps: u64,
    mut on_iter: impl FnMut(&CurvePoint) -> bool,
) -> Result<IppoResult> {
    let minmax = crate::eval::minmax_set(cluster, crate::baselines::DEFAULT_SERVICE_LEVEL)?;
    let normalizer =
        mean_episode_return(cluster, &minmax, cfg.horizon as u64, 20, seed ^ 0x5eed_11fe)?.abs();
    let mut env = InventoryEnv::new(cluster.clone(), seed)?;
    let opts = TrainOptions {
        cfg: cfg.clone(),
        seed,
        total_timesteps,
    };
    let raw = train_joint_with(&mut env, &opts, |p| {
        let norm_point = CurvePoint {
            mean_reward: normalize(p.mean_reward, normalizer),
            std_reward: normalize(p.std_reward, normalizer),
            ..*p
        };
        on_iter(&norm_point)
    })?;
    let normalized_curve = raw
        .curve
        .iter()
        .map(|p| CurvePoint {
            mean_reward: normalize(p.mean_reward, normalizer),
            std_reward: normalize(p.std_reward, normalizer),
            ..*p
        })
        .collect();
    Ok(IppoResult {
        raw,
        normalized_curve,
        normalizer,
    })
}

pub fn ippo_train(
    cluster: &ClusterSpec,
    cfg: &PpoConfig,
    seed: u64,
    total_timesteps: u64,
) -> Result<IppoResult> {
    ippo_train_with(cluster, cfg, seed, total_timesteps, |_| false)
}
