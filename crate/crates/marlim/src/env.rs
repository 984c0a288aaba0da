//! The per-cluster inventory Markov game: order placement, stochastic
//! lead-times, arrival collection, shared-capacity overflow weighting, demand
//! satisfaction, backlog accumulation and cost/reward bookkeeping.
//!
//! One `InventoryEnv` models one cluster of items competing for a single
//! storage capacity. Instances are independent; run one per replication.

use crate::error::{Error, Result};
use crate::rng::{channel, RngStream};
use crate::stochastic::{sample_demand, sample_lead_time, DemandModel, LeadTimeModel};
use serde::{Deserialize, Serialize};

/// One product's stochastic parameters and unit costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: u32,
    pub demand: DemandModel,
    pub lead: LeadTimeModel,
    /// Money per unit ordered.
    pub cost_order: f64,
    /// Money per unit held per period.
    pub cost_hold: f64,
    /// Money per unit backlogged per period.
    pub cost_short: f64,
    /// Storage units per item unit.
    #[serde(default = "default_volume")]
    pub volume: f64,
}

fn default_volume() -> f64 {
    1.0
}

impl ItemSpec {
    /// Default per-item capacity: four lead-time-demands of headroom,
    /// ceil(4 * b*mu / p).
    pub fn default_capacity(&self) -> u32 {
        (4.0 * self.demand.mean() * self.lead.mean()).ceil() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.cost_order < 0.0 || self.cost_hold < 0.0 || self.cost_short < 0.0 {
            return Err(Error::Config(format!("item {}: negative cost", self.id)));
        }
        if !(self.volume > 0.0) {
            return Err(Error::Config(format!("item {}: volume must be > 0", self.id)));
        }
        Ok(())
    }
}

/// Convex weights trading off the three cost components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha_order: f64,
    pub alpha_hold: f64,
    pub alpha_short: f64,
}

impl CostWeights {
    pub fn new(alpha_order: f64, alpha_hold: f64, alpha_short: f64) -> Result<Self> {
        let w = Self {
            alpha_order,
            alpha_hold,
            alpha_short,
        };
        let sum = alpha_order + alpha_hold + alpha_short;
        if (sum - 1.0).abs() > 1e-12
            || [alpha_order, alpha_hold, alpha_short]
                .iter()
                .any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(Error::Config(format!("cost weights must be in [0,1] and sum to 1, got {w:?}")));
        }
        Ok(w)
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        let third = 1.0 / 3.0;
        Self {
            alpha_order: third,
            alpha_hold: third,
            alpha_short: 1.0 - 2.0 * third,
        }
    }
}

/// A group of items sharing one storage capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub items: Vec<ItemSpec>,
    /// Maximum storage units.
    pub capacity: u32,
    #[serde(default)]
    pub cost_weights: CostWeights,
    /// Per-item initial on-hand levels; default floor(capacity / (2*n)).
    #[serde(default)]
    pub initial_levels: Option<Vec<u32>>,
}

impl ClusterSpec {
    /// Single-item cluster with the item's own default capacity.
    pub fn single(item: ItemSpec) -> Self {
        let capacity = item.default_capacity();
        Self {
            items: vec![item],
            capacity,
            cost_weights: CostWeights::default(),
            initial_levels: None,
        }
    }

    /// Shared-capacity cluster; capacity defaults to the sum of per-item
    /// default capacities.
    pub fn shared(items: Vec<ItemSpec>) -> Self {
        let capacity = items.iter().map(|i| i.default_capacity()).sum();
        Self {
            items,
            capacity,
            cost_weights: CostWeights::default(),
            initial_levels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Config("cluster has no items".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("cluster capacity must be > 0".into()));
        }
        let mut ids: Vec<u32> = self.items.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.items.len() {
            return Err(Error::Config("duplicate item ids in cluster".into()));
        }
        for item in &self.items {
            item.validate()?;
        }
        if let Some(init) = &self.initial_levels {
            if init.len() != self.items.len() {
                return Err(Error::Config("initial_levels length mismatch".into()));
            }
            let used: f64 = init
                .iter()
                .zip(&self.items)
                .map(|(&x, it)| x as f64 * it.volume)
                .sum();
            if used > self.capacity as f64 {
                return Err(Error::Config(format!(
                    "initial levels occupy {used} storage units, capacity is {}",
                    self.capacity
                )));
            }
        }
        Ok(())
    }

    fn default_initial_levels(&self) -> Vec<u32> {
        let x0 = self.capacity / (2 * self.items.len() as u32);
        vec![x0; self.items.len()]
    }
}

/// An in-flight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingOrder {
    pub item_index: usize,
    pub quantity: u32,
    pub arrival_period: u64,
}

/// The Markov state of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryState {
    pub t: u64,
    /// On-hand units per item.
    pub levels: Vec<u32>,
    /// Cumulative unmet demand per item; never decreases.
    pub backlogs: Vec<u64>,
    pub pending: Vec<PendingOrder>,
    /// Raw arrival quantity received this period, per item.
    pub last_arrival: Vec<u32>,
    /// Most recent sampled lead-time per item; 0 before any order.
    pub last_lead: Vec<u64>,
}

/// Per-item unweighted cost components, in money.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawCost {
    pub order: f64,
    pub hold: f64,
    pub short: f64,
}

impl RawCost {
    pub fn total(&self) -> f64 {
        self.order + self.hold + self.short
    }
}

/// Everything produced by one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Raw arrivals rho per item (pre-weighting).
    pub arrivals: Vec<u32>,
    /// Overflow weights; all 1 when no overflow.
    pub weights: Vec<f64>,
    /// Units actually shelved: floor(w * rho).
    pub received: Vec<u32>,
    pub overflow: bool,
    /// Demand drawn this period.
    pub demands: Vec<u64>,
    /// Lead-time sampled for this period's order; 0 when no order was placed.
    pub leads: Vec<u64>,
    /// Weighted cost per item.
    pub costs: Vec<f64>,
    pub raw_costs: Vec<RawCost>,
    /// Per-item reward, -cost.
    pub rewards: Vec<f64>,
    /// Mean of per-item rewards.
    pub cluster_reward: f64,
    /// True where the backlog strictly increased.
    pub shortage_flags: Vec<bool>,
}

/// Overflow weights of a cluster. Returns (weights, overflow).
///
/// With no overflow every weight is 1. On overflow the weights are
/// shortage-cost proportional and satisfy `sum_i w_i * rho_i * v_i = delta`.
/// If every arriving item has zero shortage cost the split falls back to
/// arrival-proportional weights, which preserves the same identity.
pub fn overflow_weights(
    delta: f64,
    arrivals: &[u32],
    shortage_costs: &[f64],
    volumes: &[f64],
) -> (Vec<f64>, bool) {
    let volume_in: f64 = arrivals
        .iter()
        .zip(volumes)
        .map(|(&r, &v)| r as f64 * v)
        .sum();
    if volume_in <= delta {
        return (vec![1.0; arrivals.len()], false);
    }
    let denom: f64 = arrivals
        .iter()
        .zip(shortage_costs)
        .zip(volumes)
        .map(|((&r, &cs), &v)| cs * r as f64 * v)
        .sum();
    let weights = if denom > 0.0 {
        shortage_costs.iter().map(|&cs| delta * cs / denom).collect()
    } else {
        let denom2: f64 = arrivals
            .iter()
            .zip(volumes)
            .map(|(&r, &v)| (r as f64) * (r as f64) * v)
            .sum();
        arrivals
            .iter()
            .map(|&r| if denom2 > 0.0 { delta * r as f64 / denom2 } else { 0.0 })
            .collect()
    };
    (weights, true)
}

/// Weighted step cost and its raw components.
///
/// weighted = a_o*a*C_o + a_h*x*C_h + a_s*beta'*C_s where x is the post-update
/// level and beta' the post-update cumulative backlog.
pub fn step_cost(
    action: u32,
    level_after: u32,
    backlog_after: u64,
    spec: &ItemSpec,
    weights: &CostWeights,
) -> (f64, RawCost) {
    let raw = RawCost {
        order: action as f64 * spec.cost_order,
        hold: level_after as f64 * spec.cost_hold,
        short: backlog_after as f64 * spec.cost_short,
    };
    let weighted = weights.alpha_order * raw.order
        + weights.alpha_hold * raw.hold
        + weights.alpha_short * raw.short;
    (weighted, raw)
}

/// Arithmetic mean of per-item rewards.
pub fn cluster_reward(per_item: &[f64]) -> f64 {
    per_item.iter().sum::<f64>() / per_item.len() as f64
}

#[derive(Debug, Clone)]
pub struct InventoryEnv {
    pub cluster: ClusterSpec,
    pub state: InventoryState,
    /// When true, observations carry a fifth feature: free space / capacity.
    pub obs_free_space: bool,
    rng_demand: Vec<RngStream>,
    rng_lead: Vec<RngStream>,
}

impl InventoryEnv {
    pub fn new(cluster: ClusterSpec, seed: u64) -> Result<Self> {
        cluster.validate()?;
        let n = cluster.items.len();
        let mut env = Self {
            obs_free_space: n > 1,
            state: InventoryState {
                t: 0,
                levels: vec![0; n],
                backlogs: vec![0; n],
                pending: Vec::new(),
                last_arrival: vec![0; n],
                last_lead: vec![0; n],
            },
            rng_demand: Vec::new(),
            rng_lead: Vec::new(),
            cluster,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Reinitialize the state and per-item RNG substreams from a seed.
    pub fn reset(&mut self, seed: u64) {
        let n = self.cluster.items.len();
        let levels = self
            .cluster
            .initial_levels
            .clone()
            .unwrap_or_else(|| self.cluster.default_initial_levels());
        self.state = InventoryState {
            t: 0,
            levels,
            backlogs: vec![0; n],
            pending: Vec::new(),
            last_arrival: vec![0; n],
            last_lead: vec![0; n],
        };
        self.rng_demand = (0..n as u64)
            .map(|i| RngStream::derive(seed, &[i, channel::DEMAND]))
            .collect();
        self.rng_lead = (0..n as u64)
            .map(|i| RngStream::derive(seed, &[i, channel::LEAD_TIME]))
            .collect();
    }

    pub fn n_items(&self) -> usize {
        self.cluster.items.len()
    }

    /// Free storage: capacity - sum_i x_i * v_i.
    pub fn available_space(&self) -> f64 {
        let used: f64 = self
            .state
            .levels
            .iter()
            .zip(&self.cluster.items)
            .map(|(&x, it)| x as f64 * it.volume)
            .sum();
        self.cluster.capacity as f64 - used
    }

    /// Remove and sum all pending orders due exactly now.
    fn collect_arrivals(&mut self) -> Vec<u32> {
        let t = self.state.t;
        let mut arrivals = vec![0u32; self.n_items()];
        self.state.pending.retain(|o| {
            if o.arrival_period == t {
                arrivals[o.item_index] += o.quantity;
                false
            } else {
                true
            }
        });
        arrivals
    }

    /// One period: place orders, collect due arrivals, resolve overflow,
    /// satisfy demand, accrue costs.
    pub fn step(&mut self, actions: &[u32]) -> Result<StepOutcome> {
        let n = self.n_items();
        if actions.len() != n {
            return Err(Error::Config(format!(
                "expected {n} actions, got {}",
                actions.len()
            )));
        }
        for &a in actions {
            if a > self.cluster.capacity {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    max: self.cluster.capacity,
                });
            }
        }

        let t = self.state.t;
        let mut leads = vec![0u64; n];
        for (i, &a) in actions.iter().enumerate() {
            if a > 0 {
                let tau = sample_lead_time(&self.cluster.items[i].lead, &mut self.rng_lead[i]);
                leads[i] = tau;
                self.state.last_lead[i] = tau;
                self.state.pending.push(PendingOrder {
                    item_index: i,
                    quantity: a,
                    arrival_period: t + tau,
                });
            }
        }

        let arrivals = self.collect_arrivals();
        let delta = self.available_space();
        let shortage_costs: Vec<f64> = self.cluster.items.iter().map(|i| i.cost_short).collect();
        let volumes: Vec<f64> = self.cluster.items.iter().map(|i| i.volume).collect();
        let (weights, overflow) = overflow_weights(delta, &arrivals, &shortage_costs, &volumes);

        let received: Vec<u32> = arrivals
            .iter()
            .zip(&weights)
            .map(|(&r, &w)| (w * r as f64).floor() as u32)
            .collect();

        let mut demands = vec![0u64; n];
        let mut shortage_flags = vec![false; n];
        for i in 0..n {
            let d = sample_demand(&self.cluster.items[i].demand, &mut self.rng_demand[i]);
            demands[i] = d;
            let net = self.state.levels[i] as i64 + received[i] as i64 - d as i64;
            if net >= 0 {
                self.state.levels[i] = net as u32;
            } else {
                self.state.levels[i] = 0;
                self.state.backlogs[i] += (-net) as u64;
                shortage_flags[i] = true;
            }
        }

        let mut costs = Vec::with_capacity(n);
        let mut raw_costs = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let (weighted, raw) = step_cost(
                actions[i],
                self.state.levels[i],
                self.state.backlogs[i],
                &self.cluster.items[i],
                &self.cluster.cost_weights,
            );
            rewards.push(-weighted);
            costs.push(weighted);
            raw_costs.push(raw);
        }
        let avg_reward = cluster_reward(&rewards);

        self.state.last_arrival = arrivals.clone();
        self.state.t += 1;

        Ok(StepOutcome {
            arrivals,
            weights,
            received,
            overflow,
            demands,
            leads,
            costs,
            raw_costs,
            rewards,
            cluster_reward: avg_reward,
            shortage_flags,
        })
    }

    /// Normalized observation of one item:
    /// (x/L, rho/L, tau*p_hat clamped to [0,4], min(beta/L, 4)) with an
    /// optional trailing free-space feature for shared clusters.
    pub fn observation(&self, item_index: usize) -> Vec<f64> {
        let cap = self.cluster.capacity as f64;
        let item = &self.cluster.items[item_index];
        let mut obs = vec![
            self.state.levels[item_index] as f64 / cap,
            self.state.last_arrival[item_index] as f64 / cap,
            (self.state.last_lead[item_index] as f64 * item.lead.p).clamp(0.0, 4.0),
            (self.state.backlogs[item_index] as f64 / cap).min(4.0),
        ];
        if self.obs_free_space {
            obs.push(self.available_space() / cap);
        }
        obs
    }

    pub fn obs_dim(&self) -> usize {
        if self.obs_free_space {
            5
        } else {
            4
        }
    }

    /// Capacity invariant check used by tests.
    pub fn capacity_ok(&self) -> bool {
        self.available_space() >= -1e-9
    }
}
