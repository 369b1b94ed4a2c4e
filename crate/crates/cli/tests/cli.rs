use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Scratch(PathBuf);

impl Scratch {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("elmd-cli-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.0.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn elmd(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elmd"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

const BS: &str = r#"
[model]
preset = "black_scholes"
s0 = 1.0
drift = 0.1
vol = 0.2

[deflator]
mode = "fixed_rate"
rate = 0.02

[simulation]
paths = 200
steps = 4
seed = 3
"#;

#[test]
fn analyze_and_solve_black_scholes() {
    let s = Scratch::new("bs");
    let cfg = s.file("bs.toml", BS);
    let out = elmd(&["analyze"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], true);
    assert_eq!(v["points"].as_array().unwrap().len(), 5);
    assert!((v["points"][0]["theta"][0].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!(v["label"].as_str().unwrap().contains("NUPBR"));

    let out = elmd(&["solve", "--format", "csv"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("index,time,rate,theta,rho\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn infeasible_market_exits_one() {
    let s = Scratch::new("infeasible");
    let cfg = s.file(
        "deg.toml",
        r#"
[model]
preset = "custom"
initial = [1.0, 1.0]
drift = [1.0, 2.0]
sigma = [[1.0], [1.0]]

[simulation]
steps = 2
"#,
    );
    let out = elmd(&["analyze"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], false);
    assert!(v["label"].is_null());
    assert!(v["points"][0]["residual"].as_f64().unwrap() > 0.1);
    assert_eq!(elmd(&["solve"], &cfg).status.code(), Some(1));
    assert_eq!(elmd(&["verify"], &cfg).status.code(), Some(1));
}

#[test]
fn input_errors_exit_two() {
    let s = Scratch::new("input");
    let bad = s.file("bad.toml", "[model]\npreset = \"black_scholes\"\ns0 = -1.0\ndrift = 0.1\nvol = 0.2\n");
    let out = elmd(&["analyze"], &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("initial price"));
    let unknown = s.file("unknown.toml", &format!("{BS}\n[simulation2]\n"));
    assert_eq!(elmd(&["analyze"], &unknown).status.code(), Some(2));
    assert_eq!(elmd(&["analyze"], &s.0.join("missing.toml")).status.code(), Some(2));
    let cfg = s.file("bs.toml", BS);
    assert_eq!(elmd(&["hjm"], &cfg).status.code(), Some(2));
    let off_grid = s.file("off.toml", &format!("{BS}\n[verification]\ncheckpoints = [0.3]\n"));
    assert_eq!(elmd(&["verify"], &off_grid).status.code(), Some(2));
    assert_eq!(elmd(&["verify", "--paths", "0"], &cfg).status.code(), Some(2));
}

#[test]
fn simulate_path_dump() {
    let s = Scratch::new("sim");
    let cfg = s.file("bs.toml", BS);
    let out_path = s.0.join("paths.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_elmd"))
        .args(["simulate", "--format", "csv", "--paths", "3", "--seed", "11", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("path,time,asset,value,process"));
    // 3 paths × 5 times × (S, D, Z, Zbar)
    assert_eq!(lines.clone().count(), 60);
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first, ["0", "0.0000000000000000e0", "0", "1.0000000000000000e0", "S"]);
    for l in lines {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 5);
        assert!(cells[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn seed_flag_changes_paths() {
    let s = Scratch::new("seed");
    let cfg = s.file("bs.toml", BS);
    let a = elmd(&["simulate", "--format", "csv", "--seed", "1"], &cfg).stdout;
    let b = elmd(&["simulate", "--format", "csv", "--seed", "2"], &cfg).stdout;
    let c = elmd(&["simulate", "--format", "csv", "--seed", "1"], &cfg).stdout;
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn verify_heston() {
    let s = Scratch::new("heston");
    let cfg = s.file(
        "heston.toml",
        r#"
[model]
preset = "heston"
s0 = 1.0
drift = 0.08
kappa = 3.0
long_run = 0.04
xi = 0.1
v0 = 0.04
corr = -0.7

[deflator]
mode = "fixed_rate"
rate = 0.02

[simulation]
paths = 4000
steps = 50
seed = 5

[verification]
checkpoints = [0.5, 1.0]
"#,
    );
    let out = elmd(&["verify", "--format", "csv"], &cfg);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("test,check,component,time,target,mean,std_error,z,pass\n"));
    assert_eq!(out.status.code(), Some(0), "{text}");
    let out = elmd(&["verify"], &cfg);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["martingale"]["caveat"].as_str().unwrap().contains("local martingale"));
    assert_eq!(v["martingale"]["entries"].as_array().unwrap().len(), 2);
    assert_eq!(v["martingale"]["variance_clamps"], 0);
}

#[test]
fn hjm_command() {
    let s = Scratch::new("hjm");
    let mats: Vec<String> = (0..=20).map(|i| format!("{}", i as f64 * 0.1)).collect();
    let sig = format!("[{}]", vec!["[0.01]"; 21].join(", "));
    let doc = format!(
        "{BS}\n[hjm]\nmaturities = [{}]\ntimes = [0.0, 1.0]\nsigma = [{sig}, {sig}]\ninitial_forward = [{}]\ntheta = [0.0]\n",
        mats.join(", "),
        vec!["0.03"; 21].join(", ")
    );
    let out = elmd(&["hjm"], &s.file("hjm.toml", &doc));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Ho–Lee: α(0, 2) = s²·2
    assert!((v["alpha"][0][20].as_f64().unwrap() - 2e-4).abs() < 1e-15);
    assert_eq!(v["short_rate"][1].as_f64().unwrap(), 0.03);
    assert!(v["given_max_residual"].is_null());

    let alpha0 = format!("[{}]", vec!["0.0"; 21].join(", "));
    let given = format!("{doc}alpha = [{alpha0}, {alpha0}]\n");
    let out = elmd(&["hjm"], &s.file("given.toml", &given));
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["given_max_residual"].as_f64().unwrap() - 0.5 * 1e-4 * 4.0).abs() < 1e-12);
}

#[test]
fn bh_command() {
    let s = Scratch::new("bh");
    let x: Vec<f64> = (0..=20000).map(|i| i as f64 * 0.02).collect();
    let lam = 0.1;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
    let dens: Vec<f64> = x.iter().map(|&x| lam * (-lam * x).exp()).collect();
    let sig = vec!["[0.0]"; x.len()].join(", ");
    let doc = format!("{BS}\n[bh]\nx = [{}]\ndensity = [{}]\nsigma_bar = [{sig}]\ntheta = [0.2]\n", fmt(&x), fmt(&dens));
    let out = elmd(&["bh"], &s.file("bh.toml", &doc));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rate"].as_f64().unwrap(), lam);
    assert_eq!(v["synthesized"], true);

    let given = format!("{doc}alpha_bar = [{}]\nrate = 0.0\n", fmt(&vec![lam; x.len()]));
    let out = elmd(&["bh"], &s.file("given.toml", &given));
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["report"]["short_rate"].as_f64().unwrap() + 0.1).abs() < 1e-15);
    assert_eq!(elmd(&["bh", "--format", "csv"], &s.file("csv.toml", &doc)).status.code(), Some(2));
}

#[test]
fn shipped_configs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let expect = [
        ("black_scholes.toml", "analyze", 0),
        ("bs_poisson.toml", "solve", 0),
        ("merton.toml", "analyze", 0),
        ("heston.toml", "analyze", 0),
        ("degenerate.toml", "analyze", 1),
        ("ho_lee.toml", "hjm", 0),
    ];
    for (file, cmd, code) in expect {
        let out = elmd(&[cmd], &dir.join(file));
        assert_eq!(out.status.code(), Some(code), "{file}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["bs_poisson.toml", "merton.toml", "heston.toml"] {
        let out = elmd(&["verify", "--paths", "5000"], &dir.join(file));
        assert_eq!(out.status.code(), Some(0), "{file}: {}", String::from_utf8_lossy(&out.stdout));
    }
}
