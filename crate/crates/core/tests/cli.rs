use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pstrust"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &TempDir, name: &str, m: &str, n: &str, seed: &str) -> PathBuf {
    let path = dir.path().join(name);
    let o = run(&["gen", "-m", m, "-n", n, "--seed", seed, "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(&dir, "a.txt", "10", "30", "8");
    let b = gen(&dir, "b.txt", "10", "30", "8");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let tiny = run(&["gen", "-m", "1", "-n", "1"]);
    assert!(tiny.status.success());
    assert!(stdout(&tiny).starts_with("pstrust-instance v1\n"));
    let bad = run(&["gen", "-m", "0", "-n", "3"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn run_with_oracle_check() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "i.txt", "5", "12", "3");
    let o = run(&["run", p(&inst), "--key-bits", "64", "--seed", "1", "--oracle-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("oracle check passed"));
    let out = dir.path().join("result.txt");
    let o2 = run(&["run", p(&inst), "--key-bits", "64", "--seed", "1", "--out", p(&out)]);
    assert!(o2.status.success());
    assert_eq!(std::fs::read_to_string(out).unwrap(), stdout(&o));
}

#[test]
fn no_trade_instance() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("nt.txt");
    std::fs::write(
        &path,
        "pstrust-instance v1\nsellers 1\nbuyers 1\nbits 8\nseller 0 90\nbuyer 0 10 50 50\n",
    )
    .unwrap();
    let o = run(&["run", p(&path), "--key-bits", "64", "--oracle-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "no trade\n");
}

#[test]
fn transports_print_identical_results() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "i.txt", "4", "10", "6");
    let common = ["--key-bits", "64", "--seed", "4"];
    let mem = run(&[&["run", p(&inst), "--transport", "mem"][..], &common].concat());
    let tcp = run(&[&["run", p(&inst), "--transport", "tcp"][..], &common].concat());
    assert!(mem.status.success() && tcp.status.success());
    assert_eq!(stdout(&mem), stdout(&tcp));
}

#[test]
fn input_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = run(&["run", "/nonexistent/instance.txt", "--key-bits", "64"]);
    assert_eq!(missing.status.code(), Some(3));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "pstrust-instance v1\nsellers 1\nbuyers 1\nbits 8\nseller 0 255\nbuyer 0 3 1 1\n").unwrap();
    let o = run(&["run", p(&bad), "--key-bits", "64"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("outside [1, 254]"), "{}", stderr(&o));
    let inst = gen(&dir, "i.txt", "2", "4", "1");
    let small_key = run(&["run", p(&inst), "--key-bits", "16"]);
    assert_eq!(small_key.status.code(), Some(3));
}

#[test]
fn unreachable_agent_is_a_protocol_error() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "i.txt", "2", "4", "1");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let o = run(&["run", p(&inst), "--key-bits", "64", "--connect", &addr]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn separate_agent_and_auctioneer_processes() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "i.txt", "4", "10", "12");
    let mut agent = bin()
        .args(["run", "--listen", "127.0.0.1:0", "--key-bits", "64"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(agent.stderr.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.strip_prefix("agent listening on ").expect(&first).to_string();
    let o = run(&["run", p(&inst), "--key-bits", "64", "--connect", &addr, "--oracle-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(agent.wait().unwrap().success());
    let local = run(&["run", p(&inst), "--key-bits", "64", "--oracle-check"]);
    assert!(local.status.success());
}

#[test]
fn leakstat_reports_and_audits() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "i.txt", "3", "5", "2");
    let o = run(&["leakstat", p(&inst), "--runs", "100", "--key-bits", "64", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("runs: 100"));
    assert!(text.contains("audit violations: 0"));
    assert!(text.contains("alpha p-value"));
    let few = run(&["leakstat", p(&inst), "--runs", "20", "--key-bits", "64"]);
    assert_eq!(few.status.code(), Some(3));
}

#[test]
fn bench_csv_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.csv");
    let args = [
        "bench", "--sizes", "2x4,3x6", "--ebv-bits", "8,12", "--reps", "2", "--key-bits", "64",
        "--seed", "3",
    ];
    let o = run(&[&args[..], &["--out", p(&out)]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("M,N,K,key_bits,reps,H,W,rounds"));
    let again = stdout(&run(&args));
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| l.rsplitn(3, ',').nth(2).unwrap().to_string())
            .collect()
    };
    assert_eq!(strip(&csv), strip(&again));
}
