// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SAMPLE: &str = "Jessica\nArchie\nJessica\nJessica\nHans\nArchie\n";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(env.path("sample.csv"), SAMPLE).unwrap();
        let out = env.run(&["keygen", "--out", env.arg("key"), "--seed", "1"]);
        assert!(out.status.success());
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> &'static str {
        Box::leak(self.path(name).to_string_lossy().into_owned().into_boxed_str())
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_encdict")).args(args).output().unwrap()
    }

    fn build(&self, store: &str, extra: &[&str]) -> String {
        let mut args = vec![
            "build", "--input", self.arg("sample.csv"), "--table", "t1", "--column", "FName",
            "--key-file", self.arg("key"), "--seed", "7", "--out", self.arg(store),
        ];
        args.extend_from_slice(extra);
        let out = self.run(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn query(&self, store: &str, filter: &str) -> (i32, Vec<String>) {
        let out = self.run(&["query", "--store", self.arg(store), "--key-file", self.arg("key"), "--filter", filter]);
        let lines = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
        (out.status.code().unwrap(), lines)
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn build_reports_sizes() {
    let env = Env::new();
    let ed1 = env.build("s1", &["--ed", "1"]);
    assert!(ed1.contains("|D| = 3") && ed1.contains("|AV| = 6"), "{ed1}");
    assert!(ed1.contains("bytes on disk = "));
    assert!(env.build("s9", &["--ed", "9"]).contains("|D| = 6"));
    assert!(env.build("s4", &["--ed", "4", "--bs-max", "1"]).contains("|D| = 6"));
    assert!(env.build("sp", &["--ed", "plain"]).contains("|D| = 3"));
}

#[test]
fn query_examples_for_every_kind() {
    let env = Env::new();
    for ed in ["1", "2", "3", "4", "5", "6", "7", "8", "9", "plain"] {
        let store = format!("s{ed}");
        let extra: Vec<&str> = if ["4", "5", "6"].contains(&ed) {
            vec!["--ed", ed, "--bs-max", "2"]
        } else {
            vec!["--ed", ed]
        };
        env.build(&store, &extra);
        assert_eq!(env.query(&store, "range [Archie,Hans]"), (0, vec!["Archie".into(), "Hans".into(), "Archie".into()]));
        assert_eq!(env.query(&store, "eq Nobody"), (0, vec![]));
        assert_eq!(env.query(&store, "lt Ella"), (0, vec!["Archie".into(), "Archie".into()]));
        assert_eq!(env.query(&store, "range (Archie,Jessica]").1.len(), 4);
    }
}

#[test]
fn count_only() {
    let env = Env::new();
    env.build("s", &["--ed", "8"]);
    let out = env.run(&["query", "--store", env.arg("s"), "--key-file", env.arg("key"), "--filter", "ge 'H'", "--count-only"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "4");
}

#[test]
fn audit_output() {
    let env = Env::new();
    env.build("s7", &["--ed", "7"]);
    env.build("s4", &["--ed", "4", "--bs-max", "10"]);
    env.build("s1", &["--ed", "1"]);
    let audit = |s: &str| String::from_utf8(env.run(&["audit", "--store", env.arg(s)]).stdout).unwrap();
    assert!(audit("s7").contains("frequency: none (all counts = 1)"));
    assert!(audit("s4").contains("bounded ≤ 10"));
    let ed1 = audit("s1");
    assert!(ed1.contains("frequency: full"));
    // Sorted dictionary: Archie, Hans, Jessica.
    assert!(ed1.contains("0: 2") && ed1.contains("1: 1") && ed1.contains("2: 3"), "{ed1}");
}

#[test]
fn bench_output() {
    let env = Env::new();
    env.build("s", &["--ed", "3"]);
    let out = env.run(&[
        "bench", "--store", env.arg("s"), "--key-file", env.arg("key"), "--queries", "20", "--range-size", "3", "--seed", "1",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mean result cardinality = 6.00"), "{text}");
    assert!(text.contains("mean enclave loads = 3.00"), "{text}");
    assert!(text.contains("mean scan time"));
}

#[test]
fn seeded_builds_are_reproducible() {
    let env = Env::new();
    env.build("a", &["--ed", "5", "--bs-max", "2"]);
    env.build("b", &["--ed", "5", "--bs-max", "2"]);
    assert_eq!(read_dir_bytes(&env.path("a")), read_dir_bytes(&env.path("b")));
}

#[test]
fn dynamic_commands() {
    let env = Env::new();
    env.build("s", &["--ed", "2"]);
    let (store, key) = (env.arg("s"), env.arg("key"));
    assert!(env.run(&["append", "--store", store, "--key-file", key, "--value", "Ella"]).status.success());
    assert!(env.run(&["delete", "--store", store, "--rid", "1"]).status.success());
    assert!(env
        .run(&["update", "--store", store, "--key-file", key, "--side", "main", "--rid", "4", "--value", "Bob"])
        .status
        .success());
    assert_eq!(env.query("s", "range [Archie,Hans]").1, vec!["Archie", "Ella", "Bob"]);
    assert!(env.run(&["merge", "--store", store, "--key-file", key]).status.success());
    // Merged rows keep their logical order: surviving main rows, then delta rows.
    assert_eq!(env.query("s", "range [Archie,Hans]").1, vec!["Archie", "Ella", "Bob"]);
    let audit = String::from_utf8(env.run(&["audit", "--store", store]).stdout).unwrap();
    assert!(audit.contains("rows: 6 main, 0 delta, 6 live"), "{audit}");
    let out = env.run(&["delete", "--store", store, "--side", "delta", "--rid", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let env = Env::new();
    env.build("s", &["--ed", "1"]);
    assert_eq!(env.query("s", "between A").0, 2);
    assert_eq!(env.query("s", "range [C,A]").0, 2);
    assert_eq!(env.query("s", "eq Christopher").0, 2);
    assert_eq!(env.query("missing", "eq A").0, 2);

    fs::write(env.path("other"), "000102030405060708090a0b0c0d0e0f\n").unwrap();
    let out = env.run(&["query", "--store", env.arg("s"), "--key-file", env.arg("other"), "--filter", "eq A"]);
    assert_eq!(out.status.code(), Some(3));

    let tail = env.path("s").join("dict_tail");
    let mut bytes = fs::read(&tail).unwrap();
    bytes[14] ^= 1;
    fs::write(&tail, bytes).unwrap();
    assert_eq!(env.query("s", "range [A,Z]").0, 3);

    fs::write(env.path("bad.csv"), "ok\ntab\there\n").unwrap();
    let out = env.run(&[
        "build", "--input", env.arg("bad.csv"), "--table", "t", "--column", "c", "--ed", "1",
        "--key-file", env.arg("key"), "--out", env.arg("x"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = env.run(&["build", "--ed", "12"]);
    assert_eq!(out.status.code(), Some(2));
}
