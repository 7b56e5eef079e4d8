use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matchnet::instances;
use matchnet_cli::config::{ExperimentConfig, Model};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matchnet"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("MATCHNET_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Value of a `quantity,value` row.
fn quantity(csv: &str, key: &str) -> f64 {
    csv.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in\n{csv}"))
        .parse()
        .unwrap()
}

/// Column `name` of every data row.
fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("c.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_nn() {
    let o = run(&["validate", path_str(&config("nn.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("ncond,ok,"), "{out}");
    assert!(out.contains("designated D = {d3}"), "{out}");
    assert!(out.contains("separation,ok,"), "{out}");
    assert!(out.contains("cross_arrivals,ok,"), "{out}");
}

#[test]
fn moments_path2() {
    let o = run(&["moments", path_str(&config("path2.toml"))]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!((quantity(&out, "delta") - 0.1).abs() < 1e-12);
    assert!((quantity(&out, "sigma2") - 0.09).abs() < 1e-12);
    assert_eq!(quantity(&out, "alpha_d2"), 0.6);
    assert_eq!(quantity(&out, "c_plus"), 5.0);
    assert_eq!(quantity(&out, "c_minus"), 5.0);
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let disconnected = r#"
[graph]
demand = 2
supply = 2
edges = [[1, 1], [2, 2]]

[arrivals]
pairs = [{ pair = [1, 1], prob = 0.5 }, { pair = [2, 2], prob = 0.5 }]

[cost]
vector = [1.0, 1.0, 1.0, 1.0]
"#;
    let o = run(&["validate", path_str(&write_config(&dir, disconnected))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("disconnected"), "{}", stderr(&o));

    // d1 only reaches s1, which gets less than d1's share
    let unstable = r#"
[graph]
demand = 2
supply = 2
edges = [[1, 1], [2, 1], [2, 2]]
arrival_pairs = [[1, 1], [1, 2], [2, 2]]

[arrivals]
pairs = [{ pair = [1, 1], prob = 0.3 }, { pair = [1, 2], prob = 0.4 }, { pair = [2, 2], prob = 0.3 }]

[cost]
vector = [1.0, 1.0, 1.0, 1.0]
"#;
    let o = run(&["validate", path_str(&write_config(&dir, unstable))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ncond,violated"), "{}", stderr(&o));

    let typo = std::fs::read_to_string(config("path2.toml")).unwrap().replace("horizon", "horizn");
    let o = run(&["simulate", path_str(&write_config(&dir, &typo))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));

    let o = run(&["validate", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_2() {
    let o = run(&["oracle", path_str(&config("path2.toml")), "--cap", "6", "--max-iters", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("did not converge"));
}

#[test]
fn simulate_is_reproducible_and_out_matches_stdout() {
    let cfg = config("nn.toml");
    let args = ["simulate", path_str(&cfg), "--horizon", "20000", "--seed", "5"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", path_str(&cfg), "--horizon", "20000", "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = run(&[&args[..], &["--out", path_str(&out)]].concat());
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), a.stdout);
    assert_eq!(column(&stdout(&a), "label"), vec!["h-mwt"]);
    assert_eq!(column(&stdout(&a), "T"), vec!["20000"]);
}

#[test]
fn sweep_grid_from_flags_and_config() {
    let cfg = config("nn.toml");
    let o = run(&["sweep", path_str(&cfg), "--tau-min", "10", "--tau-max", "50", "--steps", "3", "--horizon", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "tau"), vec!["10", "30", "50"]);
    assert!(stderr(&o).contains("lowest estimated cost at tau ="));

    let o = run(&["sweep", path_str(&config("path2.toml")), "--horizon", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "tau"), vec!["0", "0.5", "1", "2", "4"]);

    let o = run(&["sweep", path_str(&cfg), "--tau-min", "10", "--horizon", "20000"]);
    assert_eq!(o.status.code(), Some(2), "incomplete range is a usage error");
}

#[test]
fn compare_from_config_and_flag() {
    let o = run(&["compare", path_str(&config("nn.toml")), "--horizon", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "label"), vec!["h-mwt", "greedy", "vertical-priority"]);

    let o = run(&[
        "compare",
        path_str(&config("path2.toml")),
        "--policies",
        "greedy,randomized-flow,h-maxweight",
        "--horizon",
        "20000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "label"), vec!["greedy", "randomized-flow", "h-maxweight"]);

    let o = run(&["compare", path_str(&config("path2.toml")), "--policies", "fifo"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn relaxation_oracle_and_bound() {
    let cfg = config("path2.toml");
    let vi = run(&["relaxation", path_str(&cfg), "--vi"]);
    assert!(vi.status.success(), "{}", stderr(&vi));
    let relax: f64 = column(&stdout(&vi), "eta_hat_star")[0].parse().unwrap();
    let o = run(&["oracle", path_str(&cfg), "--cap", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(column(&out, "cost_basis"), vec!["X"]);
    let eta: f64 = column(&out, "eta_star")[0].parse().unwrap();
    assert!(relax <= eta + 1e-6, "{relax} vs {eta}");

    let o = run(&["relaxation", path_str(&cfg), "--sim", "--horizon", "200000"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let cv: f64 = column(&out, "cv_avg_cost")[0].parse().unwrap();
    let eta_ss: f64 = column(&out, "eta_ss")[0].parse().unwrap();
    assert!((cv - eta_ss).abs() < 0.25 * eta_ss, "{cv} vs {eta_ss}");
}

#[test]
fn dump_h_grid() {
    let o = run(&["dump-h", path_str(&config("path2.toml")), "--w-min", "-2", "--w-max", "2", "--points", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("w,h,dh,d2h"));
    assert_eq!(column(&out, "w"), vec!["-2", "-1", "0", "1", "2"]);
    assert_eq!(column(&out, "h")[2], "0");
    let o = run(&["dump-h", path_str(&config("path2.toml")), "--w-min", "1", "--w-max", "-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["validate", "moments", "simulate", "sweep", "compare", "relaxation", "oracle", "dump-h"] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn thread_count_from_environment() {
    let o = bin()
        .args(["sweep", path_str(&config("path2.toml")), "--horizon", "10000"])
        .env("MATCHNET_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let p = run(&["sweep", path_str(&config("path2.toml")), "--horizon", "10000"]);
    assert_eq!(o.stdout, p.stdout);
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["single_edge.toml", "path2.toml", "nn.toml"] {
        let c = ExperimentConfig::load(&config(name)).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again, "{name}");
        Model::new(again).unwrap();
    }
}

#[test]
fn shipped_configs_match_library_instances() {
    for (name, inst) in [
        ("single_edge.toml", instances::single_edge()),
        ("path2.toml", instances::path2()),
        ("nn.toml", instances::nn()),
    ] {
        let m = Model::load(&config(name)).unwrap();
        assert_eq!(m.graph, inst.graph, "{name}");
        assert_eq!(m.arrivals, inst.arrivals, "{name}");
        assert_eq!(m.cost, inst.cost, "{name}");
        if let Some(d) = m.demand_set() {
            assert_eq!(d, &inst.demand_set, "{name}");
        }
    }
}
