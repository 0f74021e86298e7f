//! End-to-end runs of the installed binaries: exit codes, flag conflicts,
//! simulator determinism, and the archive -> weekly file pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(name: &str) -> &'static str {
    match name {
        "hpcload" => env!("CARGO_BIN_EXE_hpcload"),
        "hpcload-archive" => env!("CARGO_BIN_EXE_hpcload-archive"),
        "hpcload-weekly" => env!("CARGO_BIN_EXE_hpcload-weekly"),
        "hpcload-sim" => env!("CARGO_BIN_EXE_hpcload-sim"),
        other => panic!("unknown binary {other}"),
    }
}

fn run(name: &str, args: &[&str]) -> Output {
    Command::new(bin(name))
        .args(args)
        .output()
        .unwrap_or_else(|e| panic!("spawning {name}: {e}"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// Generate a preset into `out` and return the interval directories the
/// simulator printed, in emission order.
fn simulate(out: &Path, preset: &str, seed: &str) -> Vec<PathBuf> {
    let result = run(
        "hpcload-sim",
        &[
            "--preset",
            preset,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let dirs: Vec<PathBuf> = stdout(&result).lines().map(PathBuf::from).collect();
    assert!(!dirs.is_empty());
    dirs
}

/// Every file under `root`, as (relative path, contents), sorted.
fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn sim_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    simulate(&a, "lowgpu", "42");
    simulate(&b, "lowgpu", "42");
    simulate(&c, "lowgpu", "43");
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn sim_rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let result = run(
        "hpcload-sim",
        &[
            "--preset",
            "nosuch",
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&result), 2);

    // 0.7 does not divide the 2-hour duration into whole intervals.
    let result = run(
        "hpcload-sim",
        &[
            "--preset",
            "healthy",
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
            "--interval",
            "0.7",
        ],
    );
    assert_eq!(code(&result), 2);
}

#[test]
fn hpcload_views_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = simulate(tmp.path(), "lowgpu", "7");
    let cluster_dir = dirs[0].to_str().unwrap();

    let own = run(
        "hpcload",
        &["--cluster-dir", cluster_dir, "--as-user", "u01"],
    );
    assert_eq!(code(&own), 0, "{}", stderr(&own));
    assert!(stdout(&own).contains("TOTAL"));
    assert!(!stdout(&own).contains("GPULOAD"));

    let gpu = run(
        "hpcload",
        &["-g", "--cluster-dir", cluster_dir, "--as-user", "u01"],
    );
    assert_eq!(code(&gpu), 0);
    assert!(stdout(&gpu).contains("GPULOAD"));

    // Unprivileged --all silently degrades to the user's own view.
    let all = run(
        "hpcload",
        &["--all", "--cluster-dir", cluster_dir, "--as-user", "u01"],
    );
    assert_eq!(code(&all), 0);
    assert_eq!(stdout(&all), stdout(&own));

    // The simulator marks "admin" privileged; --all then shows everyone.
    let all = run(
        "hpcload",
        &["--all", "--cluster-dir", cluster_dir, "--as-user", "admin"],
    );
    assert_eq!(code(&all), 0);
    for user in ["u01", "u02", "u03"] {
        assert!(
            stdout(&all).contains(&format!("USER {user}")),
            "missing {user}"
        );
    }

    let top = run(
        "hpcload",
        &["-t", "3", "--cluster-dir", cluster_dir, "--as-user", "u01"],
    );
    assert_eq!(code(&top), 0);
    assert_eq!(stdout(&top).lines().count(), 4);
    assert!(stdout(&top).starts_with("NODE"));

    let tsv = run(
        "hpcload",
        &[
            "--tsv",
            "-g",
            "--cluster-dir",
            cluster_dir,
            "--as-user",
            "u01",
        ],
    );
    assert_eq!(code(&tsv), 0);
    assert!(stdout(&tsv).starts_with("ts\tcluster\tuser\t"));

    // Known + unknown node mix succeeds; all-unknown is exit 1.
    let nodes = run(
        "hpcload",
        &[
            "-n",
            "c-1-1-1,c-9-9-9",
            "--cluster-dir",
            cluster_dir,
            "--as-user",
            "u01",
        ],
    );
    assert_eq!(code(&nodes), 0);
    assert!(stdout(&nodes).contains("c-1-1-1"));
    assert!(stdout(&nodes).contains("node c-9-9-9: not found"));
    let nodes = run(
        "hpcload",
        &[
            "-n",
            "c-9-9-9",
            "--cluster-dir",
            cluster_dir,
            "--as-user",
            "u01",
        ],
    );
    assert_eq!(code(&nodes), 1);

    // Flag conflicts are usage errors.
    for args in [
        vec!["-t", "3", "-g", "--cluster-dir", cluster_dir],
        vec!["-t", "3", "--all", "--cluster-dir", cluster_dir],
        vec!["-n", "c-1-1-1", "--all", "--cluster-dir", cluster_dir],
        vec!["--tsv", "-n", "c-1-1-1", "--cluster-dir", cluster_dir],
    ] {
        let result = run("hpcload", &args);
        assert_eq!(code(&result), 2, "args {args:?}");
    }

    // Unreadable cluster dir is a collection failure.
    let result = run(
        "hpcload",
        &["--cluster-dir", "/nonexistent/cluster", "--as-user", "u01"],
    );
    assert_eq!(code(&result), 3);
}

#[test]
fn archive_take_and_ls() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = simulate(tmp.path().join("sim").as_path(), "healthy", "3");
    let archive_root = tmp.path().join("archive");
    let archive_arg = archive_root.to_str().unwrap().to_string();

    for dir in &dirs {
        let result = run(
            "hpcload-archive",
            &[
                "take",
                "--cluster-dir",
                dir.to_str().unwrap(),
                "--archive-root",
                &archive_arg,
            ],
        );
        assert_eq!(code(&result), 0, "{}", stderr(&result));
        let written = PathBuf::from(stdout(&result).trim_end());
        assert!(written.is_file());
        assert!(written.starts_with(&archive_root));
    }

    // Files land on the 15-minute grid under cluster/YYYY/MM/DD.
    let first = archive_root.join("sim-healthy/2024/03/04/0000.tsv");
    assert!(first.is_file());

    let ls = run(
        "hpcload-archive",
        &[
            "ls",
            "--archive-root",
            &archive_arg,
            "--from",
            "2024-03-04T00:00:00Z",
            "--to",
            "2024-03-04T01:00:00Z",
        ],
    );
    assert_eq!(code(&ls), 0, "{}", stderr(&ls));
    let listing = stdout(&ls);
    let lines: Vec<&str> = listing.lines().collect();
    assert_eq!(lines.len(), 4, "half-open window over 15-minute snapshots");
    assert!(lines[0].starts_with("2024-03-04T00:00:00Z\t"));

    let ls = run(
        "hpcload-archive",
        &[
            "ls",
            "--archive-root",
            &archive_arg,
            "--from",
            "2024-03-05T00:00:00Z",
            "--to",
            "2024-03-04T00:00:00Z",
        ],
    );
    assert_eq!(code(&ls), 2, "from after to is a usage error");
}

#[test]
fn weekly_writes_report_emails_and_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = simulate(tmp.path().join("sim").as_path(), "lowgpu", "7");
    let archive_root = tmp.path().join("archive");
    let archive_arg = archive_root.to_str().unwrap().to_string();
    for dir in &dirs {
        let result = run(
            "hpcload-archive",
            &[
                "take",
                "--cluster-dir",
                dir.to_str().unwrap(),
                "--archive-root",
                &archive_arg,
            ],
        );
        assert_eq!(code(&result), 0, "{}", stderr(&result));
    }
    let users_file = tmp.path().join("users.tsv");
    fs::write(&users_file, "u01\tu01@example.org\nu02\tu02@example.org\n").unwrap();

    let out_dir = tmp.path().join("weekly");
    let result = run(
        "hpcload-weekly",
        &[
            "--archive-root",
            &archive_arg,
            "--week-of",
            "2024-03-04",
            "--users",
            users_file.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    assert!(stdout(&result).contains("report at"));

    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("WEEKLY UTILIZATION REPORT"));
    assert!(report.contains("TOP 10 LOW GPU LOAD (node-hours)"));
    assert!(report.contains("user01"));
    assert!(
        !report.contains("u01"),
        "anonymized report must not leak usernames"
    );

    let mapping = fs::read_to_string(out_dir.join("mapping.tsv")).unwrap();
    assert!(mapping.starts_with("category\tdisplay_user\treal_user\n"));
    assert!(mapping.contains("low_gpu\tuser01\tu01"));

    let emails: Vec<String> = fs::read_dir(out_dir.join("emails"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(
        emails.contains(&"u01-low_gpu.txt".to_string()),
        "{emails:?}"
    );
    let email = fs::read_to_string(out_dir.join("emails/u01-low_gpu.txt")).unwrap();
    assert!(email.starts_with("To: u01@example.org\n"));
    assert!(email.contains("NPPN="));

    // Without anonymization the mapping is the identity.
    let plain_dir = tmp.path().join("weekly-plain");
    let result = run(
        "hpcload-weekly",
        &[
            "--archive-root",
            &archive_arg,
            "--week-of",
            "2024-03-04",
            "--no-anonymize",
            "--out",
            plain_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let report = fs::read_to_string(plain_dir.join("report.txt")).unwrap();
    assert!(report.contains("u01"));
    for line in fs::read_to_string(plain_dir.join("mapping.tsv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[1], fields[2], "{line}");
    }

    // Bad thresholds are usage errors.
    let result = run(
        "hpcload-weekly",
        &[
            "--archive-root",
            &archive_arg,
            "--week-of",
            "2024-03-04",
            "--low",
            "2.0",
            "--high",
            "1.0",
            "--out",
            tmp.path().join("bad").to_str().unwrap(),
        ],
    );
    assert_eq!(code(&result), 2);
}
