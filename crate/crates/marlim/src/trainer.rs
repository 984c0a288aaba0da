//! Rollout collection and the PPO/IPPO optimization loop. One policy-value
//! net, Adam state and adaptive KL coefficient per agent; a shared
//! environment steps all agents jointly.

use crate::env::InventoryEnv;
use crate::error::{Error, Result};
use crate::net::{AdamState, Arch, HeadKind, PolicyValueNet};
use crate::ppo::{
    bucket_stride, clip_grad_norm, combined_loss, compute_gae, discrete_actions, loss_and_grad,
    sample_action, ActionRec, ActionSpace, LossWeights, PpoConfig, Sample,
};
use crate::rng::{channel, RngStream};
use serde::{Deserialize, Serialize};

/// Environment surface the trainer needs: joint stepping of `n_agents`
/// controllers, each observing its own feature vector and ordering an
/// integer quantity in `0..=max_order`.
pub trait RolloutEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn max_order(&self) -> u32;
    fn reset(&mut self, seed: u64);
    fn observe(&self, agent: usize) -> Vec<f64>;
    /// Apply one order per agent; returns per-agent rewards.
    fn step(&mut self, actions: &[u32]) -> Result<Vec<f64>>;
}

impl RolloutEnv for InventoryEnv {
    fn n_agents(&self) -> usize {
        self.n_items()
    }

    fn obs_dim(&self) -> usize {
        InventoryEnv::obs_dim(self)
    }

    fn max_order(&self) -> u32 {
        self.cluster.capacity
    }

    fn reset(&mut self, seed: u64) {
        InventoryEnv::reset(self, seed);
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        self.observation(agent)
    }

    /// Cooperative reward sharing: every agent records the cluster-average
    /// reward, which for a singleton equals the item's own reward.
    fn step(&mut self, actions: &[u32]) -> Result<Vec<f64>> {
        let out = InventoryEnv::step(self, actions)?;
        Ok(vec![out.cluster_reward; self.n_items()])
    }
}

/// Map a sampled action record to an integer order quantity.
pub fn to_order(rec: &ActionRec, max_order: u32) -> u32 {
    match rec {
        ActionRec::Discrete(i) => (*i as u32 * bucket_stride(max_order)).min(max_order),
        ActionRec::Continuous(a) => (a.clamp(0.0, 1.0) * max_order as f64).round() as u32,
    }
}

/// Fresh policy-value net for one agent under a config.
pub fn agent_net(cfg: &PpoConfig, obs_dim: usize, max_order: u32, rng: &mut RngStream) -> PolicyValueNet {
    let head = match cfg.action_space {
        ActionSpace::Discrete => HeadKind::Discrete {
            n_actions: discrete_actions(max_order),
        },
        ActionSpace::Continuous => HeadKind::Gaussian,
    };
    PolicyValueNet::new(
        Arch {
            obs_dim,
            hidden: cfg.fcnet_hiddens.clone(),
            head,
        },
        rng,
    )
}

/// One learning-curve row, written once per optimization iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    /// Cumulative environment steps collected so far.
    pub timesteps: u64,
    /// Mean per-episode return (unscaled money-rewards, agent-averaged).
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Mean KL over agents after the last epoch.
    pub kl: f64,
    /// Mean policy entropy over agents.
    pub entropy: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub nets: Vec<PolicyValueNet>,
    pub curve: Vec<CurvePoint>,
    pub timesteps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub cfg: PpoConfig,
    pub seed: u64,
    pub total_timesteps: u64,
}

/// Serializable training artifact for one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Arch,
    pub params: Vec<f64>,
    pub max_order: u32,
    pub reward_scale: f64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_net(net: &PolicyValueNet, max_order: u32, reward_scale: f64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            arch: net.arch.clone(),
            params: net.to_flat(),
            max_order,
            reward_scale,
        }
    }

    pub fn to_net(&self) -> Result<PolicyValueNet> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut rng = RngStream::new(0);
        let mut net = PolicyValueNet::new(self.arch.clone(), &mut rng);
        net.from_flat(&self.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

struct AgentTraj {
    obs: Vec<Vec<f64>>,
    actions: Vec<ActionRec>,
    logps: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    bootstrap: f64,
}

/// Train one net per agent on a joint environment, sequentially
/// deterministic for a given seed. `on_iter` sees every curve point and can
/// return `true` to stop early.
pub fn train_joint_with<E: RolloutEnv>(
    env: &mut E,
    opts: &TrainOptions,
    mut on_iter: impl FnMut(&CurvePoint) -> bool,
) -> Result<TrainResult> {
    let cfg = &opts.cfg;
    cfg.validate()?;
    let n_agents = env.n_agents();
    let obs_dim = env.obs_dim();
    let max_order = env.max_order();

    let mut nets: Vec<PolicyValueNet> = (0..n_agents)
        .map(|a| {
            let mut rng = RngStream::derive(opts.seed, &[a as u64, channel::INIT]);
            agent_net(cfg, obs_dim, max_order, &mut rng)
        })
        .collect();
    let mut adams: Vec<AdamState> = nets.iter().map(|n| AdamState::new(n.param_count())).collect();
    let mut kl_coeffs = vec![cfg.kl_coeff; n_agents];
    let mut policy_rngs: Vec<RngStream> = (0..n_agents)
        .map(|a| RngStream::derive(opts.seed, &[a as u64, channel::POLICY]))
        .collect();
    let mut shuffle_rngs: Vec<RngStream> = (0..n_agents)
        .map(|a| RngStream::derive(opts.seed, &[a as u64, channel::SHUFFLE]))
        .collect();

    let mut curve = Vec::new();
    let mut timesteps: u64 = 0;
    let mut episode_counter: u64 = 0;
    let mut iteration: u64 = 0;

    'outer: while timesteps < opts.total_timesteps {
        iteration += 1;
        // --- collect a batch of complete episodes ---
        let mut trajs: Vec<Vec<AgentTraj>> = Vec::new();
        let mut episode_returns = Vec::new();
        let mut batch_steps = 0usize;
        while batch_steps < cfg.train_batch_size {
            env.reset(crate::rng::mix(opts.seed, &[episode_counter, channel::ENV]));
            episode_counter += 1;
            let mut ep: Vec<AgentTraj> = (0..n_agents)
                .map(|_| AgentTraj {
                    obs: Vec::with_capacity(cfg.horizon),
                    actions: Vec::with_capacity(cfg.horizon),
                    logps: Vec::with_capacity(cfg.horizon),
                    rewards: Vec::with_capacity(cfg.horizon),
                    values: Vec::with_capacity(cfg.horizon),
                    bootstrap: 0.0,
                })
                .collect();
            let mut ep_return = 0.0;
            for _ in 0..cfg.horizon {
                let mut orders = Vec::with_capacity(n_agents);
                for a in 0..n_agents {
                    let obs = env.observe(a);
                    let (rec, logp) = sample_action(&nets[a], &obs, &mut policy_rngs[a]);
                    let value = nets[a].value(&obs);
                    orders.push(to_order(&rec, max_order));
                    let traj = &mut ep[a];
                    traj.obs.push(obs);
                    traj.actions.push(rec);
                    traj.logps.push(logp);
                    traj.values.push(value);
                }
                let rewards = env.step(&orders)?;
                for a in 0..n_agents {
                    ep[a].rewards.push(rewards[a] * cfg.reward_scale);
                }
                ep_return += rewards.iter().sum::<f64>() / n_agents as f64;
                batch_steps += 1;
                timesteps += 1;
            }
            for (a, traj) in ep.iter_mut().enumerate() {
                traj.bootstrap = nets[a].value(&env.observe(a));
            }
            episode_returns.push(ep_return);
            trajs.push(ep);
        }

        // --- per-agent advantage estimation and optimization ---
        let mut mean_kl_over_agents = 0.0;
        let mut mean_entropy_over_agents = 0.0;
        for a in 0..n_agents {
            let mut batch: Vec<Sample> = Vec::with_capacity(batch_steps);
            for ep in &trajs {
                let traj = &ep[a];
                let (adv, targets) = compute_gae(
                    &traj.rewards,
                    &traj.values,
                    traj.bootstrap,
                    cfg.gamma,
                    cfg.gae_lambda,
                    cfg.use_gae,
                );
                for t in 0..traj.rewards.len() {
                    batch.push(Sample {
                        obs: traj.obs[t].clone(),
                        action: traj.actions[t],
                        logp_old: traj.logps[t],
                        adv: adv[t],
                        value_target: targets[t],
                        value_old: traj.values[t],
                    });
                }
            }
            if cfg.normalize_advantages {
                let m = batch.iter().map(|s| s.adv).sum::<f64>() / batch.len() as f64;
                let var = batch.iter().map(|s| (s.adv - m).powi(2)).sum::<f64>()
                    / batch.len() as f64;
                let sd = var.sqrt().max(1e-8);
                for s in &mut batch {
                    s.adv = (s.adv - m) / sd;
                }
            }

            let old_net = nets[a].clone();
            let mut params = nets[a].to_flat();
            let mut order: Vec<usize> = (0..batch.len()).collect();
            for _ in 0..cfg.num_sgd_iter {
                fisher_yates(&mut order, &mut shuffle_rngs[a]);
                for chunk in order.chunks(cfg.sgd_minibatch_size) {
                    let mini: Vec<Sample> = chunk.iter().map(|&i| batch[i].clone()).collect();
                    let w = LossWeights::from_config(cfg, kl_coeffs[a]);
                    let (terms, mut grad) = loss_and_grad(&nets[a], &old_net, &mini, cfg, &w)?;
                    let _ = combined_loss(&terms, &w);
                    clip_grad_norm(&mut grad, cfg.grad_clip);
                    adams[a].step(&mut params, &grad, cfg.lr);
                    nets[a].from_flat(&params)?;
                    if !nets[a].all_finite() {
                        return Err(Error::Diverged(format!(
                            "agent {a} parameters became non-finite at iteration {iteration}"
                        )));
                    }
                }
            }

            // full-batch KL/entropy after the update, for the curve and the
            // adaptive coefficient
            let w = LossWeights::from_config(cfg, kl_coeffs[a]);
            let (terms, _) = loss_and_grad(&nets[a], &old_net, &batch, cfg, &w)?;
            if terms.kl > 2.0 * cfg.kl_target {
                kl_coeffs[a] *= 2.0;
            } else if terms.kl < cfg.kl_target / 2.0 {
                kl_coeffs[a] *= 0.5;
            }
            mean_kl_over_agents += terms.kl / n_agents as f64;
            mean_entropy_over_agents += terms.entropy / n_agents as f64;
        }

        let m = episode_returns.iter().sum::<f64>() / episode_returns.len() as f64;
        let var = episode_returns.iter().map(|r| (r - m).powi(2)).sum::<f64>()
            / episode_returns.len() as f64;
        let point = CurvePoint {
            iteration,
            timesteps,
            mean_reward: m,
            std_reward: var.sqrt(),
            kl: mean_kl_over_agents,
            entropy: mean_entropy_over_agents,
        };
        curve.push(point);
        if on_iter(&point) {
            break 'outer;
        }
    }

    Ok(TrainResult {
        nets,
        curve,
        timesteps,
    })
}

pub fn train_joint<E: RolloutEnv>(env: &mut E, opts: &TrainOptions) -> Result<TrainResult> {
    train_joint_with(env, opts, |_| false)
}

/// Single-agent training is the one-agent joint loop, so the two paths are
/// identical by construction.
pub fn train_single<E: RolloutEnv>(env: &mut E, opts: &TrainOptions) -> Result<TrainResult> {
    if env.n_agents() != 1 {
        return Err(Error::Config(format!(
            "train_single expects a 1-agent environment, got {}",
            env.n_agents()
        )));
    }
    train_joint(env, opts)
}

/// Write a learning curve as CSV.
pub fn write_curve(points: &[CurvePoint], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "timesteps", "mean_reward", "std_reward", "kl", "entropy"])?;
    for p in points {
        w.write_record([
            p.iteration.to_string(),
            p.timesteps.to_string(),
            format!("{:.6}", p.mean_reward),
            format!("{:.6}", p.std_reward),
            format!("{:.6}", p.kl),
            format!("{:.6}", p.entropy),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Read a curve CSV written by `write_curve`.
pub fn read_curve(path: &std::path::Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for rec in r.deserialize() {
        let row: (u64, u64, f64, f64, f64, f64) = rec?;
        points.push(CurvePoint {
            iteration: row.0,
            timesteps: row.1,
            mean_reward: row.2,
            std_reward: row.3,
            kl: row.4,
            entropy: row.5,
        });
    }
    Ok(points)
}

fn fisher_yates(order: &mut [usize], rng: &mut RngStream) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
