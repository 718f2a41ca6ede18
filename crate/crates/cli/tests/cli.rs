use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const WEB: &str = "\
.lambda web
.global content 16 readonly
.init content text \"hello, lambda!!!\"
.func main
.entry
    memcpy [resp + 0], [content + 0], 16
    halt FORWARD
.end
";

const ECHO: &str = "\
.lambda echo
.func main
.entry
    ldh r1, match.len
    memcpy [resp + 0], [payload + 0], r1
    halt FORWARD
.end
";

fn run(bin: &str, args: &[&str]) -> Output {
    Command::new(bin).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn mlc_build_writes_report() {
    let d = tempfile::tempdir().unwrap();
    let prog = write(d.path(), "web.mlp", WEB);
    let report = d.path().join("r.tsv").display().to_string();
    let fw = d.path().join("fw.json").display().to_string();
    let mlc = env!("CARGO_BIN_EXE_mlc");
    let out = stdout(&run(mlc, &["build", &prog, "--opt", "1", "--report", &report, "--out", &fw]));
    assert!(out.contains("digest"));
    let tsv = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows[0], "pass\ttotal\tdelta");
    assert_eq!(rows.len(), 5);
    assert!(std::fs::metadata(&fw).unwrap().len() > 0);

    let cfg = write(d.path(), "nic.toml", "instruction_store = 4\n");
    assert!(!run(mlc, &["build", &prog, "--nic", &cfg]).status.success());
    assert!(!run(mlc, &["build", &prog, "--opt", "2"]).status.success());
    let bad = write(d.path(), "bad.mlp", ".lambda x\n.func m\n.entry\n stm [payload + 0], r1\n halt FORWARD\n.end\n");
    let o = run(mlc, &["build", &bad]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("write to read-only `payload`"));
}

#[test]
fn mlc_emit_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let mlc = env!("CARGO_BIN_EXE_mlc");
    let text = stdout(&run(mlc, &["emit", "--suite"]));
    let p = write(d.path(), "suite.mlp", &text);
    let out = stdout(&run(mlc, &["build", &p, "--opt", "0"]));
    assert!(out.contains("4 lambdas"));
}

#[test]
fn lnic_deploy_list_invoke() {
    let d = tempfile::tempdir().unwrap();
    let state = d.path().join("state").display().to_string();
    let lnic = env!("CARGO_BIN_EXE_lnic");
    let web = write(d.path(), "web.mlp", WEB);
    let echo = write(d.path(), "echo.mlp", ECHO);
    let out = stdout(&run(lnic, &["--state", &state, "deploy", &web]));
    assert!(out.contains("web\t1"));
    // a separate process must see the first deploy and merge with it
    let out = stdout(&run(lnic, &["--state", &state, "deploy", &echo]));
    assert!(out.contains("echo\t2"));
    let list = stdout(&run(lnic, &["--state", &state, "list"]));
    assert!(list.contains("web\t1\tdeployed\t0"));
    assert!(list.contains("echo\t2\tdeployed\t0"));
    let got = stdout(&run(lnic, &["--state", &state, "invoke", "web"]));
    assert_eq!(got.trim_end(), "hello, lambda!!!");
    let got = stdout(&run(lnic, &["--state", &state, "invoke", "echo", "--hex", "00ff10"]));
    assert_eq!(got.trim_end(), "00ff10");
    assert!(!run(lnic, &["--state", &state, "invoke", "nope"]).status.success());
}

#[test]
fn lnic_serve_over_udp() {
    let d = tempfile::tempdir().unwrap();
    let state = d.path().join("state").display().to_string();
    let lnic = env!("CARGO_BIN_EXE_lnic");
    let echo = write(d.path(), "echo.mlp", ECHO);
    stdout(&run(lnic, &["--state", &state, "deploy", &echo]));
    let mut child = Command::new(lnic)
        .args(["--state", &state, "serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    let got = run(lnic, &["--state", &state, "invoke", "echo", "--data", "over the wire", "--server", &addr]);
    child.kill().unwrap();
    let _ = child.wait();
    assert_eq!(stdout(&got).trim_end(), "over the wire");
}

#[test]
fn bench_run_is_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let bench = env!("CARGO_BIN_EXE_bench");
    let dirs: Vec<String> = (0..2).map(|i| d.path().join(format!("o{i}")).display().to_string()).collect();
    for o in &dirs {
        let args = [
            "run", "--workload", "kvclient", "--backend", "host", "--mode", "par56", "--n", "200", "--seed", "9", "--out", o,
        ];
        let out = stdout(&run(bench, &args));
        assert!(out.starts_with("backend\tn\tmean_us"));
    }
    for f in ["trace.tsv", "ecdf.tsv", "summary.tsv", "passes.tsv"] {
        let a = std::fs::read(Path::new(&dirs[0]).join(f)).unwrap();
        let b = std::fs::read(Path::new(&dirs[1]).join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let cmp = d.path().join("cmp").display().to_string();
    let out = stdout(&run(bench, &["compare", "--workload", "webserver", "--n", "100", "--out", &cmp]));
    assert!(out.contains("host/nic"));
    assert!(Path::new(&cmp).join("comparison.tsv").exists());
    assert!(!run(bench, &["run", "--workload", "nope", "--out", &cmp]).status.success());
}
