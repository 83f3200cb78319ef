use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn programs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/programs")
}

fn program(name: &str) -> String {
    programs().join(name).to_str().unwrap().to_string()
}

fn slpvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slpvec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stats(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn total(strategy: &str, extra: &[&str]) -> usize {
    let file = program("div_sub_chain.ir");
    let mut args = vec!["vectorize", file.as_str(), "--strategy", strategy];
    args.extend_from_slice(extra);
    let o = slpvec(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stats(&stdout(&o))["total"].parse().unwrap()
}

#[test]
fn totals_per_strategy() {
    let got: Vec<usize> = ["none", "larsen", "liu", "goslp"]
        .iter()
        .map(|s| total(s, &["--cost", "unit"]))
        .collect();
    assert_eq!(got, [13, 15, 12, 10]);
}

#[test]
fn cost_table_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unit.cost");
    fs::write(&path, include_str!("../../core/costs/unit.cost")).unwrap();
    let spec = format!("table:{}", path.display());
    assert_eq!(total("goslp", &["--cost", &spec]), 10);
    assert_eq!(total("none", &["--cost", &spec]), 13);
}

#[test]
fn goslp_stats_breakdown_and_log() {
    let o = slpvec(&["vectorize", &program("div_sub_chain.ir")]);
    let s = stats(&stdout(&o));
    assert_eq!(s["scalar"], "3");
    assert_eq!(s["vector"], "5");
    assert_eq!(s["packing"], "0");
    assert_eq!(s["unpacking"], "2");
    assert_eq!(s["objective"], "-3");
    assert_eq!(s["iteration.1.status"], "optimal");
    assert!(!s.contains_key("iteration.2.width"));
}

#[test]
fn dump_candidates_listing() {
    let o = slpvec(&["vectorize", &program("mixed_loads.ir"), "--dump-candidates", "--stats", "/dev/null"]);
    let text = stdout(&o);
    assert!(text.starts_with("f_S1 = {}\n"));
    assert!(text.contains("D = {(S3,S4), (S5,S6), (S5,S7), (S6,S7)}\n"));
    assert!(text.contains("VecVecUses (S3,S4) -> {(S5,S6), (S6,S7)}\n"));
    assert!(text.contains("NonVecVecUses (S2,S2) -> {(S6,S7)}\n"));
}

#[test]
fn dumps_graph_and_ilp() {
    let o = slpvec(&["vectorize", &program("perm_after_div.ir"), "--dump-graph", "--dump-ilp", "--stats", "/dev/null"]);
    let text = stdout(&o);
    assert!(text.starts_with("minimize\n"));
    assert!(text.contains("node 2 [q0,q1] free"));
    assert!(text.ends_with("cost 1\n"));
}

#[test]
fn out_and_stats_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.ir");
    let st = dir.path().join("stats.txt");
    let o = slpvec(&[
        "vectorize",
        &program("quad_add.ir"),
        "--max-lanes",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--stats",
        st.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let code = fs::read_to_string(&out).unwrap();
    assert!(code.contains("vfadd"), "{code}");
    assert!(code.contains("x 4"), "{code}");
    let s = stats(&fs::read_to_string(&st).unwrap());
    assert_eq!(s["pack_widths"], "4,4,4,4");
    assert_eq!(s["iteration.2.width"], "2");
}

#[test]
fn verify_reports_runs() {
    for strategy in ["none", "larsen", "liu", "goslp"] {
        let o = slpvec(&["vectorize", &program("perm_before_div.ir"), "--strategy", strategy, "--verify=25"]);
        assert!(o.status.success());
        let s = stats(&stdout(&o));
        assert_eq!(s["verify_runs"], "25");
        assert_eq!(s["verify_mismatches"], "0");
    }
}

#[test]
fn verify_with_explicit_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "array L = 9, 1, 2, 4, 8\n").unwrap();
    let o = slpvec(&["vectorize", &program("perm_after_div.ir"), "--input", input.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stats(&stdout(&o))["verify_runs"], "1");
}

#[test]
fn run_scalar_and_vector_agree() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "array L = 9, 1, 2, 4, 16\n").unwrap();
    let file = program("perm_after_div.ir");
    let scalar = slpvec(&["run", &file, "--input", input.to_str().unwrap()]);
    let vector = slpvec(&["run", &file, "--input", input.to_str().unwrap(), "--strategy", "goslp"]);
    assert!(scalar.status.success());
    assert_eq!(stdout(&scalar), stdout(&vector));
    assert!(stdout(&scalar).contains("array S = 0.125,0.25\n"), "{}", stdout(&scalar));
}

#[test]
fn run_reports_uninitialized_reads() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "array L = 9, 1, _, 4, 8\n").unwrap();
    let o = slpvec(&["run", &program("perm_after_div.ir"), "--input", input.to_str().unwrap()]);
    assert!(!o.status.success());
}

fn compare_rows(text: &str, title: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines().skip_while(|l| *l != title).skip(2);
    (0..4)
        .map(|_| lines.next().unwrap().split_whitespace().map(str::to_string).collect())
        .collect()
}

#[test]
fn compare_single_file() {
    let file = program("div_sub_chain.ir");
    let o = slpvec(&["compare", &file]);
    assert!(o.status.success());
    let rows = compare_rows(&stdout(&o), &file);
    let totals: Vec<&str> = rows.iter().map(|r| r[6].as_str()).collect();
    assert_eq!(totals, ["13", "15", "12", "10"]);
    assert_eq!(rows[3][7], "-3");
}

#[test]
fn compare_empty_function() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.ir");
    fs::write(&file, "func empty {\n}\n").unwrap();
    let o = slpvec(&["compare", file.to_str().unwrap()]);
    let rows = compare_rows(&stdout(&o), file.to_str().unwrap());
    for r in rows {
        assert!(r[1..].iter().all(|c| c == "0"), "{r:?}");
    }
}

#[test]
fn compare_directory_sums_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["div_sub_chain.ir", "quad_add.ir", "perm_before_div.ir"] {
        fs::copy(programs().join(name), dir.path().join(name)).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let o = slpvec(&["compare", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ir"))
        .map(|p| p.display().to_string())
        .collect();
    files.sort();
    let aggregate = compare_rows(&text, "total over 3 files");
    for k in 0..4 {
        for col in 1..8 {
            let sum: i64 = files.iter().map(|f| compare_rows(&text, f)[k][col].parse::<i64>().unwrap()).sum();
            assert_eq!(aggregate[k][col], sum.to_string(), "row {k} column {col}");
        }
    }
}

#[test]
fn identical_invocations_identical_output() {
    let args = ["vectorize", &program("div_sub_chain.ir"), "--verify=8", "--dump-graph", "--out", "-"];
    let a = slpvec(&args);
    let b = slpvec(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn parse_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.ir");
    fs::write(&file, "func bad {\n  block b0:\n    %x = fadd %y, %y : f64\n}\n").unwrap();
    let o = slpvec(&["vectorize", file.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_cost_model_fails() {
    let o = slpvec(&["vectorize", &program("quad_add.ir"), "--cost", "fancy"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fancy"));
}
