use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use copa_core::aggregation::Protocol;
use copa_core::certify::{
    adasearch_with_tree, histogram_to_csv, records_to_csv, reward_curve_to_csv, stability_metrics,
};
use copa_core::env::{certified_rollout, certify_sequence, gen_dataset, make_env, EnvParams};
use copa_core::partition::{build_ensemble, partition_dataset, partition_index, PartitionConfig};
use copa_core::protocol::strategy;
use copa_core::suite::{run_oracle_suite, Fault, SuiteConfig};
use copa_core::{Dataset, Ensemble, StateId};

use crate::args::{CertifyActionsArgs, CertifyRewardArgs, GenDataArgs, OracleCheckArgs, ProtocolArgs, TrainArgs};
use crate::CliError;

pub const CSV_HEADER: &str = "# copa-cert v1\n";

/// Files a command will produce, written only after everything is computed.
struct Outputs(Vec<(PathBuf, String)>);

impl Outputs {
    fn new() -> Self {
        Outputs(Vec::new())
    }

    fn csv(&mut self, path: &Path, body: String) {
        self.0.push((path.to_path_buf(), format!("{CSV_HEADER}{body}")));
    }

    fn raw(&mut self, path: &Path, body: String) {
        self.0.push((path.to_path_buf(), body));
    }

    fn check_dirs(paths: &[&Path]) -> Result<(), CliError> {
        for p in paths {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            if !dir.is_dir() {
                return Err(CliError::io(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    fn write(self) -> Result<(), CliError> {
        for (path, body) in self.0 {
            fs::write(&path, body).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn read_ensemble(path: &Path) -> Result<Ensemble, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    Ensemble::from_json(&text).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    Dataset::read_jsonl(BufReader::new(f)).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn protocol(args: &ProtocolArgs) -> Result<Protocol, CliError> {
    let p = Protocol::from_name(&args.protocol, args.window)?;
    p.validate()?;
    Ok(p)
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    Outputs::check_dirs(&[&args.out])?;
    let env = make_env(&args.env.env, &args.env.params())?;
    let d = gen_dataset(&env, args.episodes as usize, args.epsilon, args.seed)?;
    let mut buf = Vec::new();
    d.write_jsonl(&mut buf)?;
    let mut out = Outputs::new();
    out.raw(&args.out, String::from_utf8(buf).expect("json is utf-8"));
    out.write()?;

    let lens: Vec<usize> = d.trajectories.iter().map(|t| t.len()).collect();
    let total: usize = lens.iter().sum();
    println!("episodes: {}", d.len());
    println!("transitions: {total}");
    println!(
        "length min/mean/max: {}/{:.2}/{}",
        lens.iter().min().unwrap_or(&0),
        total as f64 / d.len() as f64,
        lens.iter().max().unwrap_or(&0)
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = match args.learner {
        crate::args::LearnerArg::Memorizer => PartitionConfig::memorizer(args.u),
        crate::args::LearnerArg::Qtable => PartitionConfig::qtable(args.u, args.gamma, args.q_iters),
    };
    cfg.validate()?;
    let mut targets: Vec<&Path> = vec![&args.out];
    if let Some(m) = &args.manifest {
        targets.push(m);
    }
    Outputs::check_dirs(&targets)?;
    let d = read_dataset(&args.data)?;
    let ens = build_ensemble(&d, args.num_actions, &cfg)?;
    let parts = partition_dataset(&d, args.u)?;
    let mut out = Outputs::new();
    out.raw(&args.out, ens.to_json()?);
    if let Some(m) = &args.manifest {
        let manifest = serde_json::json!({
            "u": args.u,
            "sizes": parts.iter().map(Dataset::len).collect::<Vec<_>>(),
            "assignment": d.trajectories.iter().map(|t| partition_index(t, args.u)).collect::<Vec<_>>(),
        });
        out.raw(
            m,
            serde_json::to_string_pretty(&manifest).map_err(copa_core::CoreError::from)? + "\n",
        );
    }
    out.write()?;

    println!(
        "trajectories: {}, partitions: {}, learner: {}",
        d.len(),
        args.u,
        cfg.learner
    );
    for (i, p) in parts.iter().enumerate() {
        println!(
            "partition {i}: {} trajectories, {} transitions",
            p.len(),
            p.iter_transitions().count()
        );
    }
    Ok(())
}

pub fn certify_actions(args: &CertifyActionsArgs) -> Result<(), CliError> {
    let p = protocol(&args.protocol)?;
    let strat = strategy(p)?;
    Outputs::check_dirs(&[&args.out_steps, &args.out_hist])?;
    let ens = read_ensemble(&args.ensemble)?;
    let records = match (&args.states, &args.env) {
        (Some(states), _) => {
            let seq: Vec<StateId> = states.iter().copied().map(StateId).collect();
            certify_sequence(&ens, strat.as_ref(), &seq)?
        }
        (None, Some(name)) => {
            let params = EnvParams {
                n: args.n,
                lanes: args.lanes,
                period: args.period,
                horizon: args.horizon,
            };
            let env = make_env(name, &params)?;
            if env.num_actions() != ens.num_actions() {
                return Err(CliError::config(format!(
                    "ensemble has {} actions, environment {} has {}",
                    ens.num_actions(),
                    env.name(),
                    env.num_actions()
                )));
            }
            certified_rollout(&env, &ens, strat.as_ref(), env.horizon())?.1
        }
        (None, None) => return Err(CliError::config("either --env or --states is required")),
    };
    let metrics = stability_metrics(&records, records.len())?;
    let mut out = Outputs::new();
    out.csv(&args.out_steps, records_to_csv(p.name(), &records));
    out.csv(&args.out_hist, histogram_to_csv(&metrics));
    out.write()?;
    println!("protocol: {p}, steps: {}", records.len());
    println!("average threshold: {:.6}", metrics.average);
    Ok(())
}

pub fn certify_reward(args: &CertifyRewardArgs) -> Result<(), CliError> {
    let p = protocol(&args.protocol)?;
    let strat = strategy(p)?;
    let env = make_env(&args.env.env, &args.env.params())?;
    let mut targets: Vec<&Path> = vec![&args.out];
    if let Some(t) = &args.tree {
        targets.push(t);
    }
    Outputs::check_dirs(&targets)?;
    let ens = read_ensemble(&args.ensemble)?;
    let (curve, tree) = adasearch_with_tree(&env, &ens, strat.as_ref(), env.horizon(), args.k_max)?;
    let mut out = Outputs::new();
    out.csv(&args.out, reward_curve_to_csv(&curve));
    if let Some(t) = &args.tree {
        out.raw(
            t,
            serde_json::to_string_pretty(&tree).map_err(copa_core::CoreError::from)? + "\n",
        );
    }
    out.write()?;
    println!("protocol: {p}, horizon: {}, k_max: {}", env.horizon(), args.k_max);
    println!(
        "nodes: {}, max depth: {}, rounds: {}",
        tree.node_count, tree.max_depth, tree.rounds
    );
    if let Some((_, j0)) = curve.points.first() {
        println!("clean lower bound: {j0:.6}");
    }
    Ok(())
}

pub fn oracle_check(args: &OracleCheckArgs) -> Result<(), CliError> {
    if let Some(r) = &args.report {
        Outputs::check_dirs(&[r])?;
    }
    let mut cfg = SuiteConfig::new(args.trials as usize, args.seed);
    if args.inject_fault {
        cfg.fault = Some(Fault::InflateParlThreshold);
    }
    let report = run_oracle_suite(&cfg)?;
    if let Some(r) = &args.report {
        let mut out = Outputs::new();
        out.raw(
            r,
            serde_json::to_string_pretty(&report).map_err(copa_core::CoreError::from)? + "\n",
        );
        out.write()?;
    }
    for (name, tally) in &report.checks {
        println!("{name}: {} passed, {} failed", tally.passed, tally.failed);
    }
    if report.passed {
        println!("all checks passed over {} trials (seed {})", report.trials, report.seed);
        Ok(())
    } else {
        for c in report.counterexamples.iter().take(5) {
            eprintln!("counterexample [{}] trial {}: {}", c.check, c.trial, c.detail);
        }
        Err(CliError::check(format!(
            "{} counterexamples found",
            report.counterexamples.len()
        )))
    }
}
