use std::fs;
use std::process::Command;

fn hyperfast() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperfast"))
}

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem = monomial\nmax_iters = 5\n");
    let trace = dir.path().join("t.csv");
    let summary = dir.path().join("s.txt");
    let status = hyperfast()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--trace")
        .arg(&trace)
        .arg("--summary")
        .arg(&summary)
        .output()
        .unwrap();
    assert_eq!(
        status.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t
        .lines()
        .any(|l| l.starts_with("k,f,grad_norm,step_radius,lambda,A,inner_iters")));
    assert!(t.contains("# method = hyperfast"));
    let s = fs::read_to_string(&summary).unwrap();
    assert!(s.contains("sigma_max = "));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = quadratic\nmethod = hyperfast\nn = 3\n",
    );
    let out = hyperfast()
        .args(["solve", "--config"])
        .arg(&cfg)
        .args(["--method", "gd", "--max-iters", "4", "--seed", "9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("method = gd\n"));
    assert!(s.contains("config.max_iters = 4\n"));
    assert!(s.contains("config.seed = 9\n"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "problem = nowhere\n",
        "problem = quartic\ncolour = blue\n",
        "problem = quartic\nmethod = sliding\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let out = hyperfast()
            .args(["solve", "--config"])
            .arg(&cfg)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let out = hyperfast()
        .args(["solve", "--config", "/nonexistent.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_with_footer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = sliding-bench\nmethod = sliding\nn = 3\nm = 20\nmiddle_max_iters = 1\nmax_iters = 3\n",
    );
    let trace = dir.path().join("t.csv");
    let out = hyperfast()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t.lines().last().unwrap().starts_with("# error: "));
    assert!(t.contains("n_grad_g,n_hess_g,n_grad_h,n_hess_h"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = quartic\nn = 4\nseed = 3\nmax_iters = 8\n",
    );
    let mut traces = Vec::new();
    for i in 0..2 {
        let trace = dir.path().join(format!("t{i}.csv"));
        let out = hyperfast()
            .args(["solve", "--config"])
            .arg(&cfg)
            .arg("--trace")
            .arg(&trace)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        traces.push(fs::read(&trace).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}
