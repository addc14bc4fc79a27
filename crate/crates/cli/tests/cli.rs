use std::path::Path;
use std::process::{Command, Output};

fn ttregret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttregret"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str, h: usize, n: usize) -> std::path::PathBuf {
    let out = dir.join(format!("{name}.csv"));
    let cfg = format!(
        r#"name = "{name}"
episodes = {h}
seeds = [3, 1, 4, 1, 5]
output = "{}"
{extra}

[instance]
family = "lower-bound"
m = 4
lambda = 0.4

[algorithm]
name = "itc"
n = {n}
"#,
        path(&out)
    );
    let p = dir.join(format!("{name}.toml"));
    std::fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "det", "", 500, 40);
    let out = dir.path().join("det.csv");
    let first = ttregret(&["run", "--config", path(&cfg)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = std::fs::read(&out).unwrap();
    let second = ttregret(&["run", "--config", path(&cfg)]);
    assert!(second.status.success());
    let b = std::fs::read(&out).unwrap();
    assert_eq!(a, b);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 500);
    assert!(text.starts_with("run_id,seed,test_task,episode,phase,instant_regret,cumulative_regret\n"));
}

#[test]
fn strict_flags_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short", "", 50, 40);
    let plain = ttregret(&["run", "--config", path(&cfg)]);
    assert_eq!(plain.status.code(), Some(0));
    let strict = ttregret(&["run", "--config", path(&cfg), "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn gen_validate_bound_report() {
    let dir = tempfile::tempdir().unwrap();
    let ts = dir.path().join("tree.json");
    let g = ttregret(&["gen", "--family", "tree", "--m", "4", "--lambda", "0.4", "--out", path(&ts)]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert!(dir.path().join("tree.meta.json").exists());
    let v = ttregret(&["validate", "--task-set", path(&ts)]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stdout));
    let v = ttregret(&["validate", "--task-set", path(&ts), "--lambda", "0.9"]);
    assert_eq!(v.status.code(), Some(2));

    let b = ttregret(&["bound", "--task-set", path(&ts), "--test-index", "0", "--delta", "0.1"]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let stdout = String::from_utf8(b.stdout).unwrap();
    assert!(stdout.contains("t_star = ") && stdout.contains("tau_lower"));

    let cfg = write_config(dir.path(), "rep", "", 300, 30);
    assert!(ttregret(&["run", "--config", path(&cfg)]).status.success());
    let svg = dir.path().join("plot.svg");
    let r = ttregret(&["report", path(&dir.path().join("rep.csv")), "--svg", path(&svg)]);
    assert!(r.status.success());
    assert!(String::from_utf8(r.stdout).unwrap().contains("| rep | 4 |"));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn assumption_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad", "", 100, 10).to_str().unwrap().to_string();
    let text = std::fs::read_to_string(&cfg).unwrap().replace("lambda = 0.4", "lambda = 0.4\nhorizon = 5");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(ttregret(&["run", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(ttregret(&["run", "--config", &cfg, "--force"]).status.code(), Some(0));
}

#[test]
fn sweep_writes_one_csv_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from(
        "[base]\nname = \"sw\"\nepisodes = 200\nseeds = [0, 1]\n\n[base.instance]\nfamily = \"bandit\"\nm = 2\nlambda = 0.4\n\n[base.algorithm]\nname = \"bandit-itc\"\nn = 20\n\n[grid]\nepisodes = [200, 400]\n"
    );
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let s = ttregret(&["sweep", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    assert!(out.join("sw-h200.csv").exists() && out.join("sw-h400.csv").exists());
}
