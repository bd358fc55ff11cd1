use std::path::Path;
use std::process::{Command, Output};

use afdo_cli::Manifest;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");

fn afdo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdo")).args(args).env_remove("AFDO_SEED").output().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn digest(m: &Manifest, path: &str) -> String {
    m.outputs.iter().find(|f| f.path == path).unwrap().sha256.clone()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn generate_defaults_and_digests() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        let o = afdo(&["generate", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(lines(&a.join("corpus.jsonl")).len(), 391);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.seed, 42);
    assert_eq!(digest(&ma, "corpus.jsonl"), digest(&mb, "corpus.jsonl"));
    assert_eq!(ma, mb);

    let full = d.path().join("full");
    assert_eq!(afdo(&["generate", "--scale", "1.0", "--out", full.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(lines(&full.join("corpus.jsonl")).len(), 3914);
    assert_eq!(
        lines(&full.join("buckets.csv")),
        ["bucket,records", "PLP_vs_VUS,1744", "VUS_vs_LBB,1918", "PLP_vs_LBB,65", "ThreeGroupSpan,187"]
    );
}

#[test]
fn seed_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("e");
    let o = Command::new(env!("CARGO_BIN_EXE_afdo"))
        .args(["generate", "--out", out.to_str().unwrap()])
        .env("AFDO_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(manifest(&out).seed, 7);
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    let out = out.to_str().unwrap();
    let infeasible = afdo(&["generate", "--max-submissions", "2", "--out", out]);
    assert_eq!(infeasible.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("ThreeGroupSpan"));
    assert_eq!(afdo(&["sweep", "--corpus", "/no/such/corpus.jsonl", "--out", out]).status.code(), Some(2));
    assert_eq!(afdo(&["sweep", "--fractions", "0.7", "--out", out]).status.code(), Some(2));
    assert_eq!(afdo(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(afdo(&["--scale", "-1", "generate", "--out", out]).status.code(), Some(2));
}

#[test]
fn report_tables_have_the_documented_shape() {
    let d = tempfile::tempdir().unwrap();
    let corpus_dir = d.path().join("c");
    afdo(&["generate", "--out", corpus_dir.to_str().unwrap()]);
    let corpus = corpus_dir.join("corpus.jsonl");
    let corpus = corpus.to_str().unwrap();

    let s = d.path().join("s");
    let o = afdo(&[
        "sensitivity",
        "--corpus",
        corpus,
        "--theta-grid",
        "0.05,0.10,0.15,0.20,0.25,0.30,0.40",
        "--resamples",
        "200",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(lines(&s.join("sensitivity.csv")).len(), 1 + 7);
    assert_eq!(manifest(&s).inputs[0].sha256, afdo_cli::sha256_hex(&std::fs::read(corpus).unwrap()));

    let w = d.path().join("w");
    let o = afdo(&[
        "sweep",
        "--corpus",
        corpus,
        "--fractions",
        "0,0.10,0.15,0.20,0.25,0.33,0.50",
        "--trials",
        "2",
        "--resamples",
        "100",
        "--out",
        w.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = lines(&w.join("sweep.csv"));
    for strategy in ["twm", "sm", "fw"] {
        let cells = rows.iter().filter(|r| r.contains(&format!(",{strategy},")) && r.contains(",overall,")).count();
        assert_eq!(cells, 3 * 7, "{strategy}");
    }

    let j = d.path().join("j");
    let o =
        afdo(&["--format", "json", "ablation", "--corpus", corpus, "--resamples", "100", "--out", j.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(j.join("ablation.json")).unwrap()).unwrap();
    assert!(v.as_array().unwrap().iter().any(|r| r["strategy"] == "first_wins"));
}

#[test]
fn simnet_reports_equivalence() {
    let d = tempfile::tempdir().unwrap();
    let o = afdo(&["simnet", "--records", "100", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.matches("100/100 records equal under mask").count(), 2, "{stdout}");
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("equivalence.json")).unwrap()).unwrap();
    assert_eq!(rep["all_equal"], true);
    assert_eq!(lines(&d.path().join("snapshots/centralised.jsonl")).len(), 100);
}

#[test]
fn policy_check_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("p");
    let o = afdo(&["policy", "check", FIXTURES, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(&out);
    let inputs: Vec<&str> = m.inputs.iter().map(|f| f.path.as_str()).collect();
    let mut sorted = inputs.clone();
    sorted.sort();
    assert_eq!(inputs, sorted);
    assert_eq!(inputs.len(), 2);

    let bad = d.path().join("bad.ttl");
    std::fs::write(&bad, ":p a afdo:Policy ; afdo:action ").unwrap();
    let o = afdo(&["policy", "check", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    // the fixture object lacks a field the strict check needs
    let partial = d.path().join("partial.ttl");
    let text = std::fs::read_to_string(Path::new(FIXTURES).join("observation_policy.ttl")).unwrap();
    std::fs::write(&partial, text.replace("  afdo:trustScore 0.45 ;\n", "")).unwrap();
    let lenient = afdo(&["policy", "check", partial.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(lenient.status.code(), Some(0));
    let strict =
        afdo(&["policy", "check", "--strict-fields", partial.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn reproduce_passes_and_locates_injected_faults() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    let o = afdo(&["--out", out.to_str().unwrap(), "reproduce", "sweep", "--trials", "2", "--resamples", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(out.join("reproduce.json")).unwrap();
    afdo(&["--out", out.to_str().unwrap(), "reproduce", "sweep", "--trials", "2", "--resamples", "50"]);
    assert_eq!(std::fs::read(out.join("reproduce.json")).unwrap(), first);

    let o = afdo(&[
        "--out",
        out.to_str().unwrap(),
        "reproduce",
        "--inject-unseeded",
        "sweep",
        "--trials",
        "2",
        "--resamples",
        "50",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let rep: afdo_cli::ReproduceReport =
        serde_json::from_slice(&std::fs::read(out.join("reproduce.json")).unwrap()).unwrap();
    let div = rep.divergence.unwrap();
    assert_eq!(div.path, "sweep.csv");
    let a = std::fs::read(out.join("run-1/sweep.csv")).unwrap();
    let b = std::fs::read(out.join("run-2/sweep.csv")).unwrap();
    let at = div.offset as usize;
    assert_eq!(a[..at], b[..at]);
    assert_ne!(a.get(at), b.get(at));
}
