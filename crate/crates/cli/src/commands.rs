//! Subcommands. Each produces CSV text.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use matchnet::arrivals::{check_cross_arrivals, check_separation};
use matchnet::graph::check_ncond;
use matchnet::oracle::{mdp_value_iteration, relaxation_value_iteration, Lattice, TruncatedMdp};
use matchnet::relaxation::{simulate_relaxation, RelaxationModel};
use matchnet::simulator::{csv_row, run, run_experiment, table_csv, CostBasis, Experiment, ExperimentRow, CSV_HEADER};
use matchnet::value_function::HatH;

use crate::config::{BasisName, ConfigError, ExperimentKind, Model, PolicyConfig, PolicyKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "matchnet", version, about = "Simulation and analysis of dynamic bipartite matching networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the CSV here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel experiments.
    #[arg(long, global = true, env = "MATCHNET_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the graph, the stabilizability condition and the arrival
    /// assumptions.
    Validate { config: PathBuf },
    /// Arrival rates, workload drift and variance, effective-cost slopes,
    /// diffusion threshold and cost.
    Moments { config: PathBuf },
    /// One replication of the configured policy.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// h-MWT over a grid of thresholds.
    Sweep {
        config: PathBuf,
        #[arg(long, requires_all = ["tau_max", "steps"])]
        tau_min: Option<f64>,
        #[arg(long, requires_all = ["tau_min", "steps"])]
        tau_max: Option<f64>,
        /// Number of grid points.
        #[arg(long, requires_all = ["tau_min", "tau_max"])]
        steps: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Several policies on the same arrivals.
    Compare {
        config: PathBuf,
        /// Labels from the config's policy list, or policy kinds
        /// (h-mwt, greedy, h-maxweight, priority, randomized-flow).
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// The one-dimensional workload relaxation, by value iteration or
    /// simulation of the threshold policy.
    Relaxation {
        config: PathBuf,
        #[arg(long, conflicts_with = "sim")]
        vi: bool,
        #[arg(long)]
        sim: bool,
        /// Lattice half-width for value iteration.
        #[arg(long)]
        w_max: Option<i64>,
        /// Span tolerance; relative values grow like 1/delta^2, so much
        /// tighter spans are lost to rounding at small drift.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iters: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Optimal average cost of the buffer-capped MDP.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        cap: u32,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iters: usize,
    },
    /// The relaxation value function and its derivatives on a grid.
    DumpH {
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        w_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        w_max: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Override the configured horizon.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn load(path: &std::path::Path, run: Option<&RunArgs>) -> Result<Model, CliError> {
    let mut model = Model::load(path)?;
    if let (Some(r), Some(sim)) = (run, model.config.sim.as_mut()) {
        if let Some(h) = r.horizon {
            sim.horizon = h;
        }
        if let Some(s) = r.seed {
            sim.seed = s;
        }
    }
    Ok(model)
}

fn key_values(rows: &[(String, String)]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["quantity", "value"]).map_err(runtime)?;
    for (k, v) in rows {
        w.write_record([k, v]).map_err(runtime)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| runtime(e.into_error()))?).expect("utf-8"))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(r).map_err(runtime)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| runtime(e.into_error()))?).expect("utf-8"))
}

pub fn execute(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Validate { config } => validate(&Model::load(config)?),
        Command::Moments { config } => moments(&Model::load(config)?),
        Command::Simulate { config, run } => simulate(&load(config, Some(run))?),
        Command::Sweep {
            config,
            tau_min,
            tau_max,
            steps,
            run,
        } => {
            let model = load(config, Some(run))?;
            let grid = match (tau_min, tau_max, steps) {
                (Some(lo), Some(hi), Some(n)) => linspace(*lo, *hi, *n)?,
                _ => config_grid(&model)?,
            };
            sweep(&model, grid)
        }
        Command::Compare { config, policies, run } => compare(&load(config, Some(run))?, policies),
        Command::Relaxation {
            config,
            vi,
            sim,
            w_max,
            tol,
            max_iters,
            run,
        } => {
            let model = load(config, Some(run))?;
            if *sim && !*vi {
                relaxation_sim(&model)
            } else {
                relaxation_vi(&model, *w_max, *tol, *max_iters)
            }
        }
        Command::Oracle {
            config,
            cap,
            tol,
            max_iters,
        } => oracle(&Model::load(config)?, *cap, *tol, *max_iters),
        Command::DumpH {
            config,
            w_min,
            w_max,
            points,
        } => dump_h(&Model::load(config)?, *w_min, *w_max, *points),
    }
}

fn validate(model: &Model) -> Result<String, CliError> {
    let g = &model.graph;
    let alpha = model.arrivals.alpha();
    let mut rows: Vec<Vec<String>> = vec![vec![
        "graph".into(),
        "ok".into(),
        String::new(),
        format!(
            "{} demand, {} supply, {} edges, {} arrival pairs",
            g.n_demand(),
            g.n_supply(),
            g.edges().len(),
            g.arrival_pairs().len()
        ),
    ]];
    let nc = check_ncond(g, &alpha).map_err(ConfigError::from)?;
    let detail = match (&nc.witness, &nc.zero_rate_supply) {
        (_, Some(s)) => format!(
            "zero-rate supply classes {}",
            s.iter().map(|&j| format!("s{}", j + 1)).collect::<Vec<_>>().join(" ")
        ),
        (Some(w), None) if !nc.satisfied => format!("violated by D = {w}"),
        _ => "every proper demand set has drift below zero".into(),
    };
    rows.push(vec![
        "ncond".into(),
        if nc.satisfied { "ok" } else { "violated" }.into(),
        nc.margin.to_string(),
        detail,
    ]);
    if let (Some(xi), Some(m)) = (&model.workload, &model.moments) {
        let d = xi.demand_set();
        rows.push(vec![
            "drift".into(),
            if m.delta > 0.0 { "ok" } else { "warn" }.into(),
            m.delta.to_string(),
            format!("designated D = {d}"),
        ]);
        let wc = model.config.workload.as_ref().expect("workload configured");
        let sep = check_separation(g, &model.arrivals, xi, wc.delta_lower.unwrap_or(0.0)).map_err(ConfigError::from)?;
        let (value, detail) = match &sep.worst_other {
            Some((other, v)) => (v.to_string(), format!("largest xi.alpha among other sets, at D = {other}")),
            None => (String::new(), "no other demand set".into()),
        };
        let status = match wc.delta_lower {
            None => "info",
            Some(_) if sep.satisfied => "ok",
            Some(_) => "warn",
        };
        rows.push(vec!["separation".into(), status.into(), value, detail]);
        if let Some(fam) = &model.family {
            rows.push(vec![
                "continuity".into(),
                "info".into(),
                fam.continuity_constant().to_string(),
                "bound b on E|A(delta) - A(0)| / delta".into(),
            ]);
        }
        let cross = check_cross_arrivals(g, &model.arrivals, xi, wc.p_min.unwrap_or(f64::MIN_POSITIVE));
        let detail = match cross.best_pair {
            Some(p) => format!("heaviest cross arrival pair {p}"),
            None => "no arrival pair joins the complement of D to its neighbourhood".into(),
        };
        rows.push(vec![
            "cross_arrivals".into(),
            if cross.satisfied { "ok" } else { "warn" }.into(),
            cross.mass.to_string(),
            detail,
        ]);
    }
    let out = table(&["check", "status", "value", "detail"], &rows)?;
    if nc.satisfied {
        Ok(out)
    } else {
        eprint!("{out}");
        Err(ConfigError::Invalid("the arrival rates violate the stabilizability condition".into()).into())
    }
}

fn moments(model: &Model) -> Result<String, CliError> {
    let g = &model.graph;
    let mut rows: Vec<(String, String)> = model
        .arrivals
        .alpha()
        .iter()
        .enumerate()
        .map(|(k, a)| (format!("alpha_{}", g.class_label(k)), a.to_string()))
        .collect();
    let (Some(m), Some(xi)) = (&model.moments, &model.workload) else {
        return key_values(&rows);
    };
    rows.push(("D".into(), xi.demand_set().to_string()));
    rows.push(("delta".into(), m.delta.to_string()));
    rows.push(("sigma2".into(), m.sigma2_delta.to_string()));
    if let Some(s) = &model.slopes {
        rows.push(("c_plus".into(), s.c_plus.to_string()));
        rows.push(("c_minus".into(), s.c_minus.to_string()));
    }
    if let Some(p) = &model.params {
        rows.push(("tau_star".into(), p.hhat.tau_star.to_string()));
        rows.push(("eta_ss".into(), p.hhat.eta_ss.to_string()));
    }
    key_values(&rows)
}

fn simulate(model: &Model) -> Result<String, CliError> {
    let pc = model.main_policy();
    let policy = model.build_policy(&pc)?;
    let cfg = model.sim_config(policy)?;
    let result = run(&cfg).map_err(runtime)?;
    let row = ExperimentRow {
        label: pc.label(),
        tau: cfg.tau,
        result,
    };
    Ok(format!("{CSV_HEADER}\n{}\n", csv_row(&row)))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, CliError> {
    if n == 0 || !(lo <= hi) || lo < 0.0 {
        return Err(ConfigError::Invalid(format!("empty or negative threshold range {lo}..{hi} with {n} steps")).into());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

fn config_grid(model: &Model) -> Result<Vec<f64>, CliError> {
    let grid = model
        .config
        .experiment
        .iter()
        .find(|e| e.kind == ExperimentKind::Sweep)
        .and_then(|e| e.grid.as_ref().map(|g| (g.clone(), e.relative.unwrap_or(false))));
    let Some((grid, relative)) = grid else {
        return Err(ConfigError::Invalid("give --tau-min/--tau-max/--steps or a sweep experiment with a grid".into()).into());
    };
    if relative {
        let ts = model.tau_star()?;
        Ok(grid.iter().map(|f| f * ts).collect())
    } else {
        Ok(grid)
    }
}

fn sweep(model: &Model, grid: Vec<f64>) -> Result<String, CliError> {
    let mut pc = model.main_policy();
    if pc.kind != PolicyKind::HMwt {
        pc = PolicyConfig::of_kind(PolicyKind::HMwt);
    }
    if let Some(&bad) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(ConfigError::Invalid(format!("threshold {bad} must be finite and non-negative")).into());
    }
    let cfg = model.sim_config(model.build_policy(&pc)?)?;
    let table = run_experiment(&cfg, &Experiment::ThresholdSweep(grid)).map_err(runtime)?;
    if let (Some(best), Some(ts)) = (table.argmin_tau, table.tau_star) {
        eprintln!("lowest estimated cost at tau = {best} (diffusion threshold {ts})");
    }
    Ok(table_csv(&table))
}

fn compare(model: &Model, names: &[String]) -> Result<String, CliError> {
    let listed: Vec<PolicyConfig> = model
        .config
        .experiment
        .iter()
        .find(|e| e.kind == ExperimentKind::Compare)
        .and_then(|e| e.policies.clone())
        .unwrap_or_default();
    let chosen: Vec<PolicyConfig> = if names.is_empty() {
        listed
    } else {
        names
            .iter()
            .map(|name| {
                if let Some(pc) = listed.iter().find(|p| &p.label() == name) {
                    return Ok(pc.clone());
                }
                PolicyKind::ALL
                    .iter()
                    .find(|k| k.name() == name)
                    .map(|&k| {
                        let mut pc = PolicyConfig::of_kind(k);
                        pc.split = Some(model.workload.is_some());
                        pc
                    })
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown policy `{name}`")))
            })
            .collect::<Result<_, _>>()?
    };
    if chosen.is_empty() {
        return Err(ConfigError::Invalid("no policies: pass --policies or list them in a compare experiment".into()).into());
    }
    let policies = chosen
        .iter()
        .map(|pc| Ok((pc.label(), model.build_policy(pc)?)))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let base = model.sim_config(policies[0].1.clone())?;
    let mut table = run_experiment(&base, &Experiment::PolicyCompare(policies)).map_err(runtime)?;
    for row in &mut table.rows {
        row.label = row.label.replace(',', ";");
    }
    Ok(table_csv(&table))
}

fn relaxation_model(model: &Model) -> Result<RelaxationModel, CliError> {
    let (Some(m), Some(s)) = (&model.moments, &model.slopes) else {
        return Err(ConfigError::Invalid("the relaxation needs a workload section with two-sided effective cost".into()).into());
    };
    RelaxationModel::from_moments(m, s, model.graph.max_matches()).map_err(|e| ConfigError::Invalid(e.to_string()).into())
}

fn relaxation_vi(model: &Model, w_max: Option<i64>, tol: f64, max_iters: usize) -> Result<String, CliError> {
    let rm = relaxation_model(model)?;
    let ts = model.tau_star()?;
    let p = model.params.as_ref().expect("tau_star implies params");
    let w_max = w_max.unwrap_or_else(|| (ts + 12.0 / p.hhat.big_theta).ceil().max(20.0) as i64);
    let vi = relaxation_value_iteration(&rm, Lattice { w_max }, tol, max_iters).map_err(runtime)?;
    table(
        &["eta_hat_star", "threshold_estimate", "tau_star", "eta_ss", "iterations", "w_max"],
        &[vec![
            vi.eta_hat_star.to_string(),
            vi.threshold_estimate.to_string(),
            ts.to_string(),
            p.hhat.eta_ss.to_string(),
            vi.iterations.to_string(),
            w_max.to_string(),
        ]],
    )
}

fn relaxation_sim(model: &Model) -> Result<String, CliError> {
    let rm = relaxation_model(model)?;
    let Some(sc) = &model.config.sim else {
        return Err(ConfigError::Invalid("relaxation --sim needs a [sim] section".into()).into());
    };
    let pc = model.main_policy();
    let tau = model.resolve_tau(if pc.kind == PolicyKind::HMwt { pc.tau } else { None })?;
    let r = simulate_relaxation(&rm, tau, sc.horizon, sc.seed).map_err(runtime)?;
    let p = model.params.as_ref().expect("tau resolved");
    table(
        &["tau", "avg_cost", "stderr", "cv_avg_cost", "cv_stderr", "T", "seed", "tau_star", "eta_ss"],
        &[vec![
            tau.to_string(),
            r.avg_cost.to_string(),
            r.stderr.to_string(),
            r.cv_avg_cost.to_string(),
            r.cv_stderr.to_string(),
            r.steps.to_string(),
            sc.seed.to_string(),
            p.hhat.tau_star.to_string(),
            p.hhat.eta_ss.to_string(),
        ]],
    )
}

fn oracle(model: &Model, cap: u32, tol: f64, max_iters: usize) -> Result<String, CliError> {
    let basis = match model.config.sim.as_ref().and_then(|s| s.cost_basis) {
        Some(BasisName::X) => CostBasis::X,
        _ => CostBasis::Q,
    };
    let m = TruncatedMdp::new(model.graph.clone(), model.arrivals.clone(), model.cost.clone(), cap, basis);
    let sol = mdp_value_iteration(&m, tol, max_iters).map_err(runtime)?;
    table(
        &["cap", "states", "eta_star", "iterations", "final_span", "cost_basis"],
        &[vec![
            cap.to_string(),
            sol.states.len().to_string(),
            sol.eta_star.to_string(),
            sol.iterations.to_string(),
            sol.spans.last().copied().unwrap_or(0.0).to_string(),
            basis.as_str().to_string(),
        ]],
    )
}

fn dump_h(model: &Model, w_min: f64, w_max: f64, points: usize) -> Result<String, CliError> {
    if !(w_min < w_max) || points < 2 {
        return Err(ConfigError::Invalid("need w-min < w-max and at least 2 points".into()).into());
    }
    let pc = model.main_policy();
    let tau = model.resolve_tau(if pc.kind == PolicyKind::HMwt { pc.tau } else { None })?;
    let base = model.params.as_ref().expect("tau resolved").hhat;
    let h = if tau == base.tau_star {
        base
    } else {
        HatH::with_threshold(base.delta, base.sigma2, base.c_plus, base.c_minus, tau, base.theta, base.delta_plus)
            .map_err(ConfigError::from)?
    };
    let rows: Vec<Vec<String>> = h
        .table(w_min, w_max, points)
        .iter()
        .map(|r| r.iter().map(f64::to_string).collect())
        .collect();
    table(&["w", "h", "dh", "d2h"], &rows)
}
