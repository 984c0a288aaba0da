//! Seeded replication protocol behind the benchmark tables: run a policy set
//! on a cluster for `R` replications of `T` periods, accumulate raw
//! (unweighted) dollar costs and shortage-event counts, and export CSV
//! reports and per-step traces.

use crate::baselines::{minmax_act, oracle_act, MinMaxPolicy, OraclePolicy};
use crate::env::{ClusterSpec, InventoryEnv};
use crate::error::{Error, Result};
use crate::net::PolicyValueNet;
use crate::ppo::greedy_action;
use crate::rng::{channel, mix, RngStream};
use crate::trainer::to_order;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A full controller for one cluster.
#[derive(Debug, Clone)]
pub enum EvalPolicy {
    /// One trigger policy per item.
    MinMax(Vec<MinMaxPolicy>),
    /// One clamped-normal policy per item.
    Oracle(Vec<OraclePolicy>),
    /// Never orders; the do-nothing reference.
    Zero,
    /// Trained nets, one per item, acting greedily.
    Net {
        nets: Vec<PolicyValueNet>,
        max_order: u32,
    },
}

impl EvalPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::MinMax(_) => "minmax",
            EvalPolicy::Oracle(_) => "oracle",
            EvalPolicy::Zero => "zero",
            EvalPolicy::Net { .. } => "net",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            EvalPolicy::MinMax(ps) => ps.len() == n,
            EvalPolicy::Oracle(ps) => ps.len() == n,
            EvalPolicy::Zero => true,
            EvalPolicy::Net { nets, .. } => nets.len() == n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Item,
    Cluster,
}

/// One aggregated report row; `scope=cluster` rows average over items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scope: Scope,
    pub id: Option<u32>,
    pub policy: String,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_shortages: f64,
    pub std_shortages: f64,
    pub reps: usize,
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Per-replication, per-item accumulators.
#[derive(Debug, Clone, Default)]
struct RepStats {
    cost: Vec<f64>,
    shortages: Vec<u64>,
}

/// Stable hash of the item-id set, so a replication's seed does not depend on
/// unrelated catalog entries.
fn item_set_hash(cluster: &ClusterSpec) -> u64 {
    let ids: Vec<u64> = cluster.items.iter().map(|i| i.id as u64).collect();
    mix(0x1735_0a11, &ids)
}

/// Seed for replication `rep` of a cluster under a root seed.
pub fn replication_seed(root: u64, rep: u64, cluster: &ClusterSpec) -> u64 {
    mix(root, &[rep, item_set_hash(cluster)])
}

fn run_replication(
    cluster: &ClusterSpec,
    policy: &EvalPolicy,
    horizon: u64,
    seed: u64,
) -> Result<RepStats> {
    let n = cluster.items.len();
    let mut env = InventoryEnv::new(cluster.clone(), seed)?;
    let mut policy_rngs: Vec<RngStream> = (0..n as u64)
        .map(|i| RngStream::derive(seed, &[i, channel::POLICY]))
        .collect();
    let mut stats = RepStats {
        cost: vec![0.0; n],
        shortages: vec![0; n],
    };
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
        for i in 0..n {
            stats.cost[i] += out.raw_costs[i].total();
            if out.shortage_flags[i] {
                stats.shortages[i] += 1;
            }
        }
    }
    Ok(stats)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run `replications` seeded episodes of `horizon` periods and aggregate.
///
/// Replications run in parallel on the current rayon pool into an indexed
/// buffer; the reduction is sequential, so the report is identical for any
/// thread count.
pub fn evaluate(
    cluster: &ClusterSpec,
    policy: &EvalPolicy,
    horizon: u64,
    replications: usize,
    root_seed: u64,
) -> Result<EvalReport> {
    let n = cluster.items.len();
    if !policy.arity_ok(n) {
        return Err(Error::Config(format!(
            "policy arity does not match cluster size {n}"
        )));
    }
    if horizon == 0 || replications == 0 {
        return Err(Error::Config("horizon and replications must be > 0".into()));
    }
    let reps: Vec<Result<RepStats>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_replication(cluster, policy, horizon, replication_seed(root_seed, r, cluster)))
        .collect();
    let reps: Vec<RepStats> = reps.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..n {
        let costs: Vec<f64> = reps.iter().map(|s| s.cost[i]).collect();
        let shorts: Vec<f64> = reps.iter().map(|s| s.shortages[i] as f64).collect();
        let (mean_cost, std_cost) = mean_std(&costs);
        let (mean_shortages, std_shortages) = mean_std(&shorts);
        rows.push(ReportRow {
            scope: Scope::Item,
            id: Some(cluster.items[i].id),
            policy: policy.name().into(),
            mean_cost,
            std_cost,
            mean_shortages,
            std_shortages,
            reps: replications,
            horizon,
            seed: root_seed,
        });
    }
    // cluster row: per-replication mean over items, then stats over reps
    let cl_costs: Vec<f64> = reps
        .iter()
        .map(|s| s.cost.iter().sum::<f64>() / n as f64)
        .collect();
    let cl_shorts: Vec<f64> = reps
        .iter()
        .map(|s| s.shortages.iter().sum::<u64>() as f64 / n as f64)
        .collect();
    let (mean_cost, std_cost) = mean_std(&cl_costs);
    let (mean_shortages, std_shortages) = mean_std(&cl_shorts);
    rows.push(ReportRow {
        scope: Scope::Cluster,
        id: None,
        policy: policy.name().into(),
        mean_cost,
        std_cost,
        mean_shortages,
        std_shortages,
        reps: replications,
        horizon,
        seed: root_seed,
    });
    Ok(EvalReport { rows })
}

/// Write a report as CSV with a fixed column order.
pub fn export_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scope",
        "id",
        "policy",
        "mean_cost",
        "std_cost",
        "mean_shortages",
        "std_shortages",
        "reps",
        "horizon",
        "seed",
    ])?;
    for r in &report.rows {
        w.write_record([
            match r.scope {
                Scope::Item => "item",
                Scope::Cluster => "cluster",
            }
            .to_string(),
            r.id.map(|i| i.to_string()).unwrap_or_default(),
            r.policy.clone(),
            format!("{:.6}", r.mean_cost),
            format!("{:.6}", r.std_cost),
            format!("{:.6}", r.mean_shortages),
            format!("{:.6}", r.std_shortages),
            r.reps.to_string(),
            r.horizon.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Write one replication's per-step log as CSV.
pub fn write_trace(
    cluster: &ClusterSpec,
    policy: &EvalPolicy,
    horizon: u64,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let n = cluster.items.len();
    if !policy.arity_ok(n) {
        return Err(Error::Config(format!(
            "policy arity does not match cluster size {n}"
        )));
    }
    let mut env = InventoryEnv::new(cluster.clone(), seed)?;
    let mut policy_rngs: Vec<RngStream> = (0..n as u64)
        .map(|i| RngStream::derive(seed, &[i, channel::POLICY]))
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "item_id",
        "action",
        "lead_time",
        "arrival",
        "weight",
        "level",
        "backlog",
        "cost_order",
        "cost_hold",
        "cost_short",
    ])?;
    for t in 0..horizon {
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
        for i in 0..n {
            w.write_record([
                t.to_string(),
                cluster.items[i].id.to_string(),
                actions[i].to_string(),
                out.leads[i].to_string(),
                out.arrivals[i].to_string(),
                format!("{:.6}", out.weights[i]),
                env.state.levels[i].to_string(),
                env.state.backlogs[i].to_string(),
                format!("{:.6}", out.raw_costs[i].order),
                format!("{:.6}", out.raw_costs[i].hold),
                format!("{:.6}", out.raw_costs[i].short),
            ])?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// MinMax policy set for a cluster at service level `alpha`.
pub fn minmax_set(cluster: &ClusterSpec, alpha: f64) -> Result<EvalPolicy> {
    let ps: Vec<MinMaxPolicy> = cluster
        .items
        .iter()
        .map(|it| MinMaxPolicy::from_item(it, alpha, crate::baselines::SafetyStockForm::Literal))
        .collect::<Result<_>>()?;
    Ok(EvalPolicy::MinMax(ps))
}

/// Oracle policy set for a cluster; order bounds are per-item capacities.
pub fn oracle_set(cluster: &ClusterSpec) -> EvalPolicy {
    let ps: Vec<OraclePolicy> = cluster
        .items
        .iter()
        .map(|it| OraclePolicy::from_item(it, it.default_capacity()))
        .collect();
    EvalPolicy::Oracle(ps)
}
