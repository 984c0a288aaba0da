//! End-to-end acceptance suite. Each test prints one `criterion N: PASS` line
//! (visible with `--nocapture`; the harness itself reports one ok/FAILED line
//! per criterion either way). A process-wide gate serializes the criteria so
//! the per-criterion runtime budgets are measured without interference.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use marlim::baselines::{safety_stock, DEFAULT_SERVICE_LEVEL};
use marlim::catalog::ItemCatalog;
use marlim::env::{ClusterSpec, InventoryEnv};
use marlim::eval::{evaluate, minmax_set, oracle_set, EvalPolicy};
use marlim::ppo::{
    combined_loss, compute_gae, loss_and_grad, preset, sample_action, LossWeights, PpoConfig,
    Sample,
};
use marlim::rng::RngStream;
use marlim::stochastic::{
    fit_demand_mle, fit_lead_time_mle, sample_demand, sample_lead_time, HistorySeries,
};
use marlim::trainer::{train_single, TrainOptions};
use rand::Rng;

static GATE: Mutex<()> = Mutex::new(());

fn gated() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, what: &str, t: Instant, budget: Duration, detail: String) {
    let elapsed = t.elapsed();
    println!("criterion {n}: PASS — {what} ({detail}; {elapsed:.2?} of {budget:?} budget)");
    assert!(
        elapsed <= budget,
        "criterion {n} exceeded its runtime budget: {elapsed:.2?} > {budget:?}"
    );
}

fn five_item_cluster() -> ClusterSpec {
    let cat = ItemCatalog::builtin();
    ClusterSpec::shared(cat.item_specs(&[0, 1, 2, 3, 4]).unwrap())
}

fn single_item(id: u32) -> ClusterSpec {
    let cat = ItemCatalog::builtin();
    ClusterSpec::single(cat.item_specs(&[id]).unwrap().into_iter().next().unwrap())
}

#[test]
fn criterion_01_capacity_safety() {
    let _g = gated();
    let t0 = Instant::now();
    let cluster = five_item_cluster();
    let cap = cluster.capacity as f64;
    let mut env = InventoryEnv::new(cluster, 0xC1).unwrap();
    let mut rng = RngStream::new(0xAC710);
    let mut overflows = 0u64;
    for step in 0..100_000u64 {
        let pre_used: f64 = env
            .state
            .levels
            .iter()
            .zip(&env.cluster.items)
            .map(|(&x, it)| x as f64 * it.volume)
            .sum();
        let actions: Vec<u32> = (0..5).map(|_| rng.gen_range(0..=env.cluster.capacity)).collect();
        let out = env.step(&actions).unwrap();
        let used: f64 = env
            .state
            .levels
            .iter()
            .zip(&env.cluster.items)
            .map(|(&x, it)| x as f64 * it.volume)
            .sum();
        assert!(used <= cap + 1e-9, "capacity violated at step {step}: {used} > {cap}");
        if out.overflow {
            overflows += 1;
            let delta = cap - pre_used;
            let weighted: f64 = out
                .weights
                .iter()
                .zip(&out.arrivals)
                .zip(&env.cluster.items)
                .map(|((w, &rho), it)| w * rho as f64 * it.volume)
                .sum();
            assert!(
                (weighted - delta).abs() <= 1e-9,
                "step {step}: sum w*rho = {weighted}, delta = {delta}"
            );
        }
    }
    assert!(overflows > 0, "random actions never overflowed; test is vacuous");
    report(
        1,
        "capacity invariant and overflow weight identity over 1e5 random steps",
        t0,
        Duration::from_secs(10),
        format!("{overflows} overflow events checked"),
    );
}

#[test]
fn criterion_02_mle_recovery() {
    let _g = gated();
    let t0 = Instant::now();
    // exact closed-form cases first
    let d = fit_demand_mle(&HistorySeries::demand(vec![0, 3, 0, 5])).unwrap();
    assert!((d.b - 0.5).abs() < 1e-12 && (d.mu - 4.0).abs() < 1e-12);
    let l = fit_lead_time_mle(&HistorySeries::lead_time(vec![2, 4, 6])).unwrap();
    assert!((l.p - 0.25).abs() < 1e-12);

    let cat = ItemCatalog::builtin();
    let n = 10_000usize;
    let mut worst: f64 = 0.0;
    for (row, rec) in cat.records.iter().enumerate() {
        let demand = marlim::stochastic::DemandModel::new(rec.b, rec.mu).unwrap();
        let lead = marlim::stochastic::LeadTimeModel::new(rec.p).unwrap();
        let mut rng = RngStream::new(0xE57 ^ (row as u64) << 8);
        let demands: Vec<u64> = (0..n).map(|_| sample_demand(&demand, &mut rng)).collect();
        let leads: Vec<u64> = (0..n).map(|_| sample_lead_time(&lead, &mut rng)).collect();
        let dm = fit_demand_mle(&HistorySeries::demand(demands)).unwrap();
        let lm = fit_lead_time_mle(&HistorySeries::lead_time(leads)).unwrap();

        let se_b = (rec.b * (1.0 - rec.b) / n as f64).sqrt();
        let se_mu = (rec.mu / (n as f64 * rec.b)).sqrt();
        let se_p = rec.p * ((1.0 - rec.p) / n as f64).sqrt();
        for (name, got, want, se) in [
            ("b", dm.b, rec.b, se_b),
            ("mu", dm.mu, rec.mu, se_mu),
            ("p", lm.p, rec.p, se_p),
        ] {
            let z = (got - want).abs() / se;
            worst = worst.max(z);
            assert!(
                z <= 3.0,
                "row {row} ({}): {name} = {got}, true {want}, {z:.2} standard errors",
                rec.id
            );
        }
    }
    report(
        2,
        "MLE recovers all 50 catalog rows within 3 standard errors at 1e4 samples",
        t0,
        Duration::from_secs(30),
        format!("worst |z| = {worst:.2}"),
    );
}

/// Simpson-quadrature standard-normal CDF, independent of the library's
/// rational-approximation implementation.
fn cdf_quadrature(x: f64) -> f64 {
    let lo = -12.0f64;
    if x <= lo {
        return 0.0;
    }
    let steps = 20_000usize;
    let h = (x - lo) / steps as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = pdf(lo) + pdf(x);
    for i in 1..steps {
        let t = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
    }
    acc * h / 3.0
}

#[test]
fn criterion_03_safety_stock_value() {
    let _g = gated();
    let t0 = Instant::now();
    // bisection against the quadrature CDF gives an independent z(0.90)
    let (mut lo, mut hi) = (0.0f64, 4.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf_quadrature(mid) < 0.90 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z_oracle = 0.5 * (lo + hi);
    let kappa_oracle = z_oracle * (4.0 * 4.0 + (3.0 * 1.0f64).powi(2)).sqrt();
    let kappa = safety_stock(0.90, 3.0, 2.0, 4.0, 1.0).unwrap();
    assert!(
        (kappa - 6.4078).abs() <= 1e-3,
        "kappa = {kappa}, expected 6.4078 +/- 1e-3"
    );
    assert!(
        (kappa - kappa_oracle).abs() <= 1e-4,
        "kappa = {kappa} disagrees with quadrature oracle {kappa_oracle}"
    );
    report(
        3,
        "safety stock at alpha=0.90 matches the quadrature/bisection oracle",
        t0,
        Duration::from_secs(10),
        format!("kappa = {kappa:.6}"),
    );
}

fn tiny_net(head: marlim::net::HeadKind, seed: u64) -> marlim::net::PolicyValueNet {
    let mut rng = RngStream::new(seed);
    marlim::net::PolicyValueNet::new(
        marlim::net::Arch {
            obs_dim: 4,
            hidden: vec![8, 8],
            head,
        },
        &mut rng,
    )
}

fn random_batch(net: &marlim::net::PolicyValueNet, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (action, logp) = sample_action(net, &obs, &mut rng);
            Sample {
                value_old: net.value(&obs) + rng.gen_range(-0.5..0.5),
                value_target: rng.gen_range(-2.0..2.0),
                adv: rng.gen_range(-2.0..2.0),
                logp_old: logp + rng.gen_range(-0.2..0.2),
                action,
                obs,
            }
        })
        .collect()
}

#[test]
fn criterion_04_gradient_checks() {
    let _g = gated();
    let t0 = Instant::now();
    let comps = [
        ("actor", LossWeights { actor: 1.0, critic: 0.0, kl: 0.0, entropy: 0.0 }),
        ("critic", LossWeights { actor: 0.0, critic: 1.0, kl: 0.0, entropy: 0.0 }),
        ("kl", LossWeights { actor: 0.0, critic: 0.0, kl: 1.0, entropy: 0.0 }),
        ("entropy", LossWeights { actor: 0.0, critic: 0.0, kl: 0.0, entropy: 1.0 }),
    ];
    let cfg = PpoConfig {
        vf_clip_param: 0.8,
        ..PpoConfig::default()
    };
    let mut nets_checked = 0u32;
    let mut worst: f64 = 0.0;
    for head in [
        marlim::net::HeadKind::Discrete { n_actions: 5 },
        marlim::net::HeadKind::Gaussian,
    ] {
        for k in 0..10u64 {
            let net = tiny_net(head, 1000 + k);
            let old = tiny_net(head, 2000 + k);
            let batch = random_batch(&net, 16, 3000 + k);
            nets_checked += 1;
            for (name, w) in &comps {
                let (_, grad) = loss_and_grad(&net, &old, &batch, &cfg, w).unwrap();
                let flat = net.to_flat();
                let h = 1e-5;
                let loss_at = |params: &[f64]| {
                    let mut p = net.clone();
                    p.from_flat(params).unwrap();
                    let (t, _) = loss_and_grad(&p, &old, &batch, &cfg, w).unwrap();
                    combined_loss(&t, w)
                };
                let l0 = loss_at(&flat);
                let mut max_rel: f64 = 0.0;
                let mut skipped = 0usize;
                for i in 0..flat.len() {
                    let mut fp = flat.clone();
                    fp[i] += h;
                    let lp = loss_at(&fp);
                    fp[i] -= 2.0 * h;
                    let lm = loss_at(&fp);
                    // the clipped objectives are piecewise smooth; when the
                    // one-sided slopes disagree the step straddles a kink and
                    // the central difference is meaningless there
                    let d_plus = (lp - l0) / h;
                    let d_minus = (l0 - lm) / h;
                    if (d_plus - d_minus).abs() > 1e-3 * (1.0 + d_plus.abs() + d_minus.abs()) {
                        skipped += 1;
                        continue;
                    }
                    let fd = (lp - lm) / (2.0 * h);
                    let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                    max_rel = max_rel.max((fd - grad[i]).abs() / denom);
                }
                worst = worst.max(max_rel);
                assert!(
                    max_rel < 1e-4,
                    "head {head:?} net {k} component {name}: max rel err {max_rel:.3e}"
                );
                assert!(
                    skipped * 20 < flat.len(),
                    "head {head:?} net {k} component {name}: {skipped} of {} params at kinks",
                    flat.len()
                );
            }
        }
    }
    report(
        4,
        "all four loss components pass finite-difference checks on 20 random nets",
        t0,
        Duration::from_secs(60),
        format!("{nets_checked} nets, worst rel err {worst:.2e}"),
    );
}

#[test]
fn criterion_05_gae_identity() {
    let _g = gated();
    let t0 = Instant::now();
    let mut rng = RngStream::new(0x6AE);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.gen_range(1..60usize);
        let gamma = rng.gen_range(0.5..0.999);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let bootstrap = rng.gen_range(-5.0..5.0);
        let (adv, tgt) = compute_gae(&rewards, &values, bootstrap, gamma, 1.0, true);
        for t in 0..len {
            // brute-force discounted return from t with a bootstrap tail
            let mut ret = bootstrap;
            for k in (t..len).rev() {
                ret = rewards[k] + gamma * ret;
            }
            worst = worst.max((adv[t] - (ret - values[t])).abs());
            worst = worst.max((tgt[t] - ret).abs());
            assert!(
                (adv[t] - (ret - values[t])).abs() <= 1e-10,
                "lambda=1 advantage differs from discounted return minus baseline at t={t}"
            );
        }
    }
    report(
        5,
        "lambda=1 GAE equals brute-force discounted-return-minus-baseline",
        t0,
        Duration::from_secs(10),
        format!("100 trajectories, worst abs err {worst:.2e}"),
    );
}

#[test]
fn criterion_06_baseline_ordering() {
    let _g = gated();
    let t0 = Instant::now();
    let mut total_mm = 0.0;
    let mut total_or = 0.0;
    let mut detail = Vec::new();
    for id in 0..5u32 {
        let cluster = single_item(id);
        let mm = evaluate(
            &cluster,
            &minmax_set(&cluster, DEFAULT_SERVICE_LEVEL).unwrap(),
            240,
            100,
            42,
        )
        .unwrap();
        let or = evaluate(&cluster, &oracle_set(&cluster), 240, 100, 42).unwrap();
        let (m, o) = (mm.rows[0].mean_cost, or.rows[0].mean_cost);
        assert!(
            o < m,
            "item {id}: oracle cost {o:.3e} is not below minmax cost {m:.3e}"
        );
        total_mm += m;
        total_or += o;
        detail.push(format!("{:.2}", m / o));
    }
    let ratio = total_mm / total_or;
    assert!(ratio > 2.0, "aggregate MinMax/Oracle cost ratio {ratio:.2} <= 2");
    report(
        6,
        "Oracle beats MinMax on every item and the cost ratio exceeds 2",
        t0,
        Duration::from_secs(120),
        format!("per-item ratios [{}], aggregate {ratio:.2}", detail.join(", ")),
    );
}

#[test]
fn criterion_07_single_agent_training() {
    let _g = gated();
    let t0 = Instant::now();
    let cluster = single_item(0);
    let cfg = preset("ppo_c_desk").unwrap();
    let seed = 1u64;
    let total_timesteps = 1_000_000u64;
    let mut env = InventoryEnv::new(cluster.clone(), seed).unwrap();
    let opts = TrainOptions {
        cfg,
        seed,
        total_timesteps,
    };
    let res = train_single(&mut env, &opts).unwrap();
    assert!(res.timesteps <= total_timesteps + opts.cfg.train_batch_size as u64);
    let trained = EvalPolicy::Net {
        nets: res.nets,
        max_order: cluster.capacity,
    };
    let ours = evaluate(&cluster, &trained, 240, 20, 42).unwrap();
    let orc = evaluate(&cluster, &oracle_set(&cluster), 240, 20, 42).unwrap();
    let (c, s) = (ours.rows[0].mean_cost, ours.rows[0].mean_shortages);
    let oc = orc.rows[0].mean_cost;
    assert!(c < oc, "trained cost {c:.3e} is not below oracle cost {oc:.3e}");
    assert!(s <= 2.0, "mean shortage events {s:.2} per episode exceeds 2");
    report(
        7,
        "desk-scale continuous PPO on item 0 beats the Oracle with <= 2 shortages",
        t0,
        Duration::from_secs(30 * 60),
        format!(
            "{} steps; cost {c:.3e} vs oracle {oc:.3e}, {s:.2} shortages/episode",
            res.timesteps
        ),
    );
}

#[test]
fn criterion_08_ippo_crosses_minmax() {
    let _g = gated();
    let t0 = Instant::now();
    let cluster = five_item_cluster();
    let cfg = preset("ippo_desk").unwrap();
    let limit = 700_000u64;
    let mut crossings = Vec::new();
    for seed in [101u64, 202, 303] {
        let mut crossed_at: Option<u64> = None;
        let res = marlim::ippo::ippo_train_with(&cluster, &cfg, seed, limit, |p| {
            if p.mean_reward > -1.0 {
                crossed_at = Some(p.timesteps);
                true // early stop once the normalized curve clears the line
            } else {
                false
            }
        })
        .unwrap();
        // the callback sees normalized points; double-check against the curve
        if crossed_at.is_none() {
            crossed_at = res
                .normalized_curve
                .iter()
                .find(|p| p.mean_reward > -1.0 && p.timesteps <= limit)
                .map(|p| p.timesteps);
        }
        crossings.push((seed, crossed_at));
    }
    let hits = crossings.iter().filter(|(_, c)| c.is_some()).count();
    assert!(
        hits >= 2,
        "normalized curve crossed the MinMax line on only {hits} of 3 seeds: {crossings:?}"
    );
    report(
        8,
        "IPPO curve crosses the MinMax line within 7e5 steps on >= 2 of 3 seeds",
        t0,
        Duration::from_secs(60 * 60),
        format!("crossings {crossings:?}"),
    );
}

#[test]
fn criterion_09_reductions() {
    let _g = gated();
    let t0 = Instant::now();
    let cluster = single_item(0);
    let cfg = PpoConfig {
        fcnet_hiddens: vec![16, 16],
        horizon: 25,
        rollout_fragment_length: 25,
        train_batch_size: 100,
        sgd_minibatch_size: 50,
        num_sgd_iter: 3,
        reward_scale: 1e-4,
        ..PpoConfig::default()
    };
    let seed = 33u64;
    let steps = 1_000u64;
    let ippo = marlim::ippo::ippo_train(&cluster, &cfg, seed, steps).unwrap();
    let mut env = InventoryEnv::new(cluster.clone(), seed).unwrap();
    let opts = TrainOptions {
        cfg,
        seed,
        total_timesteps: steps,
    };
    let single = train_single(&mut env, &opts).unwrap();
    assert_eq!(
        ippo.raw.nets[0].to_flat(),
        single.nets[0].to_flat(),
        "1-agent IPPO parameters differ from single-agent training"
    );
    assert_eq!(ippo.raw.curve, single.curve, "learning curves differ");

    // singleton cluster reward equals the item reward at every step
    let mut env = InventoryEnv::new(cluster, 7).unwrap();
    for a in [0u32, 5, 12, 0, 30, 2, 8, 0, 1, 69] {
        let out = env.step(&[a]).unwrap();
        assert_eq!(out.cluster_reward, out.rewards[0]);
    }
    report(
        9,
        "1-agent IPPO is bit-identical to single-agent PPO; singleton reward reduces",
        t0,
        Duration::from_secs(60),
        format!("{} curve points compared", single.curve.len()),
    );
}

#[test]
fn criterion_10_byte_reproducibility() {
    let _g = gated();
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_marlim");
    let base = tempfile::tempdir().unwrap();

    let run = |dir: &std::path::Path, args: &[&str]| {
        std::fs::create_dir_all(dir).unwrap();
        let out = std::process::Command::new(bin)
            .args(args)
            .env("MARLIM_OUT_DIR", dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let tree_bytes = |dir: &std::path::Path| {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap()))
            .collect::<Vec<_>>()
    };

    let eval_args = [
        "--threads", "1", "eval", "--items", "0,1", "--shared", "--policy", "minmax",
        "--horizon", "60", "--reps", "8", "--seed", "5", "--out", "report.csv",
        "--trace", "trace.csv",
    ];
    let a = base.path().join("eval_a");
    let b = base.path().join("eval_b");
    run(&a, &eval_args);
    run(&b, &eval_args);
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "eval outputs are not byte-identical");

    let train_args = [
        "--threads", "1", "train", "--preset", "ppo_c_desk", "--items", "0",
        "--timesteps", "4000", "--seed", "9", "--out-dir", ".",
    ];
    let c = base.path().join("train_a");
    let d = base.path().join("train_b");
    run(&c, &train_args);
    run(&d, &train_args);
    assert_eq!(tree_bytes(&c), tree_bytes(&d), "train outputs are not byte-identical");
    report(
        10,
        "eval and train CLI invocations are byte-reproducible at one thread",
        t0,
        Duration::from_secs(300),
        "two eval and two train runs compared file-by-file".to_string(),
    );
}
