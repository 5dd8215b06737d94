use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dispatch-lab"));
    cmd.args(args)
        .env_remove("DISPATCH_LAB_BACKEND")
        .env("RUST_LOG", "info");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn gpu_free_experiment_writes_file_and_logs_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path(), "c.json");
    let o = run(&["--experiment", "crossover", "--out", &out], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("wrote"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["experiment"], "crossover");
    assert_eq!(v["config"]["seed"], 42);
    assert_eq!(v["config"]["runs"], 30);
    assert_eq!(v["config"]["warmup"], 5);
}

#[test]
fn gpu_free_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["crossover", "sensitivity"] {
        let (a, b) = (out_arg(dir.path(), "a"), out_arg(dir.path(), "b"));
        for path in [&a, &b] {
            let o = run(&["--experiment", exp, "--out", path, "--dims", "1,896,4864"], &[]);
            assert_eq!(o.status.code(), Some(0));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{exp}");
    }
}

#[test]
fn csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path(), "s.csv");
    let o = run(
        &[
            "--experiment",
            "seq-dispatch",
            "--backend",
            "noop",
            "--runs",
            "10",
            "--warmup",
            "1",
            "--format",
            "csv",
            "--out",
            &out,
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("experiment,series,row,index,value,unit,n,mean,std,ci95_low,ci95_high,cv_percent\n"));
    assert!(text.lines().any(|l| l.contains(",summary,")));
}

#[test]
fn hard_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path(), "x.json");
    assert_eq!(
        run(&["--experiment", "nope", "--out", &out], &[]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(
            &[
                "--experiment",
                "single-op",
                "--backend",
                "noop",
                "--runs",
                "3",
                "--out",
                &out
            ],
            &[]
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        run(
            &["--experiment", "crossover", "--backend", "opengl", "--out", &out],
            &[]
        )
        .status
        .code(),
        Some(2)
    );
    assert!(!Path::new(&out).exists());
}

#[test]
fn environment_overrides_backend_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path(), "t.json");
    let o = run(
        &[
            "--experiment",
            "single-op",
            "--backend",
            "metal",
            "--runs",
            "10",
            "--warmup",
            "1",
            "--out",
            &out,
        ],
        &[("DISPATCH_LAB_BACKEND", "noop")],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["backend"], "noop");
    assert_eq!(v["hardware"]["backend"], "noop");

    let bad = run(
        &["--experiment", "crossover", "--out", &out],
        &[("DISPATCH_LAB_BACKEND", "cuda")],
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn mega_kernel_beyond_scale_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path(), "m.json");
    let o = run(
        &[
            "--experiment",
            "mega-kernel",
            "--backend",
            "noop",
            "--runs",
            "10",
            "--dims",
            "1,896,4864",
            "--out",
            &out,
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}
