use liesym::cli::run;

fn run_args(args: &[&str]) -> (i32, String) {
    let mut buf = Vec::new();
    let mut full = vec!["liesym"];
    full.extend_from_slice(args);
    let code = run(full, &mut buf);
    (code, String::from_utf8(buf).unwrap())
}

#[test]
fn check_symmetry_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("car.sys");
    std::fs::write(&path, liesym::systems::source("car").unwrap()).unwrap();
    let (code, out) = run_args(&["check-symmetry", "--system", path.to_str().unwrap(), "--generator", "v1"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().filter(|l| l.trim_end().ends_with(": 0")).count(), 3, "{out}");
}

#[test]
fn reduce_writes_loadable_dsl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reduced.sys");
    let (code, out) = run_args(&["reduce", "--catalog", "car", "--frame", "rot0", "--out", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    let text = std::fs::read_to_string(&path).unwrap();
    let red = liesym::dsl::parse_dsl(&text, &Default::default()).unwrap();
    assert_eq!(red.system.states, vec!["z1", "z2"]);
}

#[test]
fn simulate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, h) in [(&a, "0.01"), (&b, "0.01")] {
        let (code, out) = run_args(&["simulate", "--catalog", "oscillator", "--x0", "1,0", "--step", h, "--out", p.to_str().unwrap()]);
        assert_eq!(code, 0, "{out}");
    }
    let (code, out) = run_args(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--channels", "phi,dphi", "--max", "0"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("sup = 0"), "{out}");
}

#[test]
fn failures_map_to_exit_codes() {
    assert_eq!(run_args(&["gcompat", "--catalog", "car", "--output", "missing"]).0, 2);
    assert_eq!(run_args(&["invariants", "--system", "/nonexistent.sys", "--frame", "x"]).0, 2);
    assert_eq!(run_args(&["feedback", "--catalog", "bioreactor"]).0, 1);
    assert_eq!(run_args(&["simulate", "--catalog", "oscillator", "--x0", "1,0", "--step", "0"]).0, 3);
}

#[test]
fn catalog_lists_entries() {
    let (code, out) = run_args(&["catalog"]);
    assert_eq!(code, 0);
    for n in liesym::systems::NAMES {
        assert!(out.lines().any(|l| l == n));
    }
}
