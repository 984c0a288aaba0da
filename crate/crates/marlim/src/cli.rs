//! Command-line front end: catalog fitting, policy evaluation, PPO/IPPO
//! training, checkpoint replay and curve merging. All outputs are CSV/JSON.

use crate::catalog::{load_catalog, CatalogRecord, ItemCatalog};
use crate::env::ClusterSpec;
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_report, minmax_set, oracle_set, write_trace, EvalPolicy};
use crate::ippo::ippo_train;
use crate::ppo::preset;
use crate::stochastic::{fit_demand_mle, fit_lead_time_mle, HistorySeries};
use crate::trainer::{read_curve, write_curve, Checkpoint, CurvePoint};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "marlim", about = "Inventory-management simulator and controller suite", version)]
pub struct Cli {
    /// Cap the worker-thread count (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit demand/lead-time laws from history CSVs into a catalog JSON.
    Fit(FitArgs),
    /// Evaluate a baseline policy over seeded replications.
    Eval(EvalArgs),
    /// Train PPO/IPPO agents on a cluster.
    Train(TrainArgs),
    /// Re-evaluate trained checkpoints into a report.
    Replay(ReplayArgs),
    /// Merge learning-curve CSVs and baseline lines into one plot-ready CSV.
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Demand history CSV with columns `item,value`.
    #[arg(long)]
    pub demands: PathBuf,
    /// Lead-time history CSV with columns `item,value`.
    #[arg(long)]
    pub leads: PathBuf,
    /// Optional base catalog supplying per-item costs.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Catalog JSON path, or `builtin` for the shipped 50-item dataset.
    #[arg(long, default_value = "builtin")]
    pub catalog: String,
    /// Item ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub items: Vec<u32>,
    /// Pool the items into one shared-capacity cluster (default when more
    /// than one item is given).
    #[arg(long)]
    pub shared: bool,
    /// Override the cluster capacity.
    #[arg(long)]
    pub capacity: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// minmax | oracle | zero
    #[arg(long)]
    pub policy: String,
    /// MinMax service level.
    #[arg(long, default_value_t = crate::baselines::DEFAULT_SERVICE_LEVEL)]
    pub alpha: f64,
    #[arg(long, default_value_t = 240)]
    pub horizon: u64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a per-step trace of replication 0.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// Preset name (ppo_d, ppo_c, ippo_n1/n2/n3, *_desk).
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub timesteps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for checkpoints, manifest and curves.
    #[arg(long, default_value = "train_out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Training output directory containing manifest.json.
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    /// Catalog JSON path, or `builtin`.
    #[arg(long, default_value = "builtin")]
    pub catalog: String,
    #[arg(long, default_value_t = 240)]
    pub horizon: u64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Curve CSVs to merge; series named after file stems.
    #[arg(long = "curve", required = true)]
    pub curves: Vec<PathBuf>,
    /// Constant reference lines, `name=value`.
    #[arg(long = "line")]
    pub lines: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training-run manifest tying the checkpoints to their cluster and preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<u32>,
    pub capacity: u32,
    pub preset: String,
    pub seed: u64,
    pub timesteps: u64,
    pub agents: Vec<String>,
    pub reward_scale: f64,
}

fn load_catalog_arg(arg: &str) -> Result<ItemCatalog> {
    if arg == "builtin" {
        Ok(ItemCatalog::builtin())
    } else {
        load_catalog(Path::new(arg))
    }
}

fn build_cluster(args: &ClusterArgs) -> Result<ClusterSpec> {
    let cat = load_catalog_arg(&args.catalog)?;
    let items = cat.item_specs(&args.items)?;
    let mut cluster = if items.len() == 1 && !args.shared {
        ClusterSpec::single(items.into_iter().next().unwrap())
    } else {
        ClusterSpec::shared(items)
    };
    if let Some(cap) = args.capacity {
        cluster.capacity = cap;
    }
    cluster.validate()?;
    Ok(cluster)
}

/// Resolve an output path against `MARLIM_OUT_DIR` when relative.
fn out_path(path: &Path) -> PathBuf {
    match std::env::var_os("MARLIM_OUT_DIR") {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_history_csv(path: &Path) -> Result<BTreeMap<u32, Vec<u64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut by_item: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for rec in r.deserialize() {
        let (item, value): (u32, u64) = rec?;
        by_item.entry(item).or_default().push(value);
    }
    if by_item.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(by_item)
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let demands = read_history_csv(&args.demands)?;
    let leads = read_history_csv(&args.leads)?;
    let base = args
        .catalog
        .as_ref()
        .map(|p| load_catalog(p))
        .transpose()?;
    let mut records = Vec::new();
    for (&id, values) in &demands {
        let lead_values = leads.get(&id).ok_or_else(|| {
            Error::Config(format!("item {id} has demand history but no lead-time history"))
        })?;
        let demand = fit_demand_mle(&HistorySeries::demand(values.clone()))?;
        let lead = fit_lead_time_mle(&HistorySeries::lead_time(lead_values.clone()))?;
        let costs = base.as_ref().and_then(|c| c.get(id).ok().copied());
        records.push(CatalogRecord {
            id,
            b: demand.b,
            mu: demand.mu,
            p: lead.p,
            cost_order: costs.map(|c| c.cost_order).unwrap_or(0.0),
            cost_hold: costs.map(|c| c.cost_hold).unwrap_or(0.0),
            cost_short: costs.map(|c| c.cost_short).unwrap_or(0.0),
        });
    }
    let cat = ItemCatalog { records };
    cat.validate()?;
    cat.save(&out_path(&args.out))
}

fn policy_for(cluster: &ClusterSpec, name: &str, alpha: f64) -> Result<EvalPolicy> {
    match name {
        "minmax" => minmax_set(cluster, alpha),
        "oracle" => Ok(oracle_set(cluster)),
        "zero" => Ok(EvalPolicy::Zero),
        other => Err(Error::Config(format!(
            "unknown policy '{other}', expected minmax | oracle | zero"
        ))),
    }
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let cluster = build_cluster(&args.cluster)?;
    let policy = policy_for(&cluster, &args.policy, args.alpha)?;
    let report = evaluate(&cluster, &policy, args.horizon, args.reps, args.seed)?;
    export_report(&report, &out_path(&args.out))?;
    if let Some(trace) = &args.trace {
        let seed0 = crate::eval::replication_seed(args.seed, 0, &cluster);
        write_trace(&cluster, &policy, args.horizon, seed0, &out_path(trace))?;
    }
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cluster = build_cluster(&args.cluster)?;
    let cfg = preset(&args.preset)?;
    let out_dir = out_path(&args.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let res = ippo_train(&cluster, &cfg, args.seed, args.timesteps)?;
    let mut agents = Vec::new();
    for (i, net) in res.raw.nets.iter().enumerate() {
        let name = format!("agent_{i}.json");
        Checkpoint::from_net(net, cluster.capacity, cfg.reward_scale).save(&out_dir.join(&name))?;
        agents.push(name);
    }
    write_curve(&res.raw.curve, &out_dir.join("curve.csv"))?;
    write_curve(&res.normalized_curve, &out_dir.join("curve_normalized.csv"))?;
    let manifest = Manifest {
        items: args.cluster.items.clone(),
        capacity: cluster.capacity,
        preset: args.preset.clone(),
        seed: args.seed,
        timesteps: res.raw.timesteps,
        agents,
        reward_scale: cfg.reward_scale,
    };
    let file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

fn run_replay(args: &ReplayArgs) -> Result<()> {
    let dir = &args.checkpoint_dir;
    let file = std::io::BufReader::new(std::fs::File::open(dir.join("manifest.json"))?);
    let manifest: Manifest = serde_json::from_reader(file)?;
    let cat = load_catalog_arg(&args.catalog)?;
    let items = cat.item_specs(&manifest.items)?;
    let mut cluster = if items.len() == 1 {
        ClusterSpec::single(items.into_iter().next().unwrap())
    } else {
        ClusterSpec::shared(items)
    };
    cluster.capacity = manifest.capacity;
    cluster.validate()?;
    let nets = manifest
        .agents
        .iter()
        .map(|name| Checkpoint::load(&dir.join(name))?.to_net())
        .collect::<Result<Vec<_>>>()?;
    let policy = EvalPolicy::Net {
        nets,
        max_order: manifest.capacity,
    };
    let report = evaluate(&cluster, &policy, args.horizon, args.reps, args.seed)?;
    export_report(&report, &out_path(&args.out))
}

fn run_curves(args: &CurvesArgs) -> Result<()> {
    let mut w = csv::Writer::from_path(out_path(&args.out))?;
    w.write_record(["series", "iteration", "timesteps", "mean_reward", "std_reward", "kl", "entropy"])?;
    for path in &args.curves {
        let series = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for p in read_curve(path)? {
            write_curve_row(&mut w, &series, &p)?;
        }
    }
    for line in &args.lines {
        let (name, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("--line expects name=value, got '{line}'"))
        })?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Parse(format!("--line value '{value}' is not a number")))?;
        let p = CurvePoint {
            iteration: 0,
            timesteps: 0,
            mean_reward: value,
            std_reward: 0.0,
            kl: 0.0,
            entropy: 0.0,
        };
        write_curve_row(&mut w, name, &p)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

fn write_curve_row<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    series: &str,
    p: &CurvePoint,
) -> Result<()> {
    w.write_record([
        series.to_string(),
        p.iteration.to_string(),
        p.timesteps.to_string(),
        format!("{:.6}", p.mean_reward),
        format!("{:.6}", p.std_reward),
        format!("{:.6}", p.kl),
        format!("{:.6}", p.entropy),
    ])?;
    Ok(())
}

/// Entry point shared by the binary and the CLI tests. Returns the process
/// exit code: 0 on success, 1 on runtime errors (usage errors exit 2 via
/// clap before reaching here).
pub fn run(cli: Cli) -> i32 {
    let body = || -> Result<()> {
        match &cli.command {
            Command::Fit(a) => run_fit(a),
            Command::Eval(a) => run_eval(a),
            Command::Train(a) => run_train(a),
            Command::Replay(a) => run_replay(a),
            Command::Curves(a) => run_curves(a),
        }
    };
    let outcome = match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build();
            match pool {
                Ok(pool) => pool.install(body),
                Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
            }
        }
        None => body(),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
