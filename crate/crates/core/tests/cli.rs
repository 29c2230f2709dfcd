use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedmesh");

const SMALL: &str = r#"
seed = 5
rounds_max = 3

[data]
n_samples = 600

[topology]
n_edges = 2
clients_per_edge = 3

[secagg]
key_bits = 256
"#;

fn fedmesh(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FEDMESH_SEED").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["rounds.csv", "events.jsonl", "manifest.json", "config.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/rounds_header_2_edges.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), golden.trim_end());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["started_at"].is_string() && manifest["finished_at"].is_string());

    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(out.join("events.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["event"], "run_start");
    assert_eq!(first["jfi_quantity"], "edge_test_accuracy");
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(fedmesh(&["run", "--config", s(&cfg), "--out", s(&a), "--set", "seed=8"]).status.success());
    assert!(fedmesh(&["run", "--config", s(&a.join("config.toml")), "--out", s(&b)]).status.success());
    for f in ["rounds.csv", "events.jsonl", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let hash = |d: &Path| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap()
            ["config_hash"]
            .clone()
    };
    assert_eq!(hash(&a), hash(&b));
}

#[test]
fn negative_patience_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("patience = -1\n{SMALL}"));
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("patience"), "{}", stderr(&o));
}

#[test]
fn syntax_error_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[topology\n");
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn rounds_max_override_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&out), "--set", "rounds_max=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("rounds.csv")).unwrap().lines().count(), 2);
}

#[test]
fn bad_override_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--set", "selection.capacity_k=zero"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("selection.capacity_k"), "{}", stderr(&o));
}

#[test]
fn env_seed_applies_and_set_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let seed_of = |out: &Path| -> u64 {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["seed"].as_u64().unwrap()
    };
    let a = dir.path().join("a");
    let o = Command::new(BIN)
        .args(["run", "--config", s(&cfg), "--out", s(&a), "--set", "rounds_max=1"])
        .env("FEDMESH_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(seed_of(&a), 77);
    let b = dir.path().join("b");
    let o = Command::new(BIN)
        .args(["run", "--config", s(&cfg), "--out", s(&b), "--set", "rounds_max=1", "--set", "seed=3"])
        .env("FEDMESH_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(seed_of(&b), 3);
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[[edge_failures]]\nedge = 0\nround = 1\n[[edge_failures]]\nedge = 1\nround = 1\n");
    let cfg = write_config(dir.path(), &text);
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("all edges failed in round 1"), "{}", stderr(&o));
}

#[test]
fn compare_writes_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    let o = fedmesh(&["compare", "--config", s(&cfg), "--modes", "fedselect_me,fedavg_single", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("mode,") && lines[0].ends_with(",delta_test_accuracy"));
    assert!(lines[1].starts_with("fedselect_me,") && lines[1].ends_with(",0"));
    assert!(lines[2].starts_with("fedavg_single,"));
}

#[test]
fn compare_same_mode_twice_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    let o = fedmesh(&["compare", "--config", s(&cfg), "--modes", "no_selection,no_selection", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], lines[2]);
}

#[test]
fn compare_rejects_one_mode_or_unknown_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    assert_eq!(fedmesh(&["compare", "--config", s(&cfg), "--modes", "fedselect_me", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(
        fedmesh(&["compare", "--config", s(&cfg), "--modes", "fedselect_me,bogus", "--out", s(&out)]).status.code(),
        Some(2)
    );
}

fn rounds_csv(rows: usize, constant: bool) -> String {
    let mut t = String::from("round,global_val_loss,global_val_accuracy,global_test_loss,global_test_accuracy,f1_macro,f1_weighted,auroc,jfi,edge0_accuracy,edge1_accuracy,edge0_loss,edge1_loss\n");
    for r in 1..=rows {
        let v = if constant { 0.5 } else { 1.0 / (r as f64 + 1.0) };
        t.push_str(&format!("{r},{v},{},{v},{},0.8,0.81,0.9,0.99,0.9,0.91,{v},{v}\n", 1.0 - v, 1.0 - v));
    }
    t
}

fn plot_ok(csv_text: &str) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rounds.csv");
    fs::write(&csv, csv_text).unwrap();
    let out = dir.path().join("plots");
    let o = fedmesh(&["plot", "--csv", s(&csv), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 4);
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(!text.contains("NaN") && !text.contains("inf"));
            text
        })
        .collect()
}

#[test]
fn plot_ten_rounds_gives_four_wellformed_svgs() {
    let svgs = plot_ok(&rounds_csv(10, false));
    assert!(svgs.iter().all(|s| s.contains("<polyline")));
}

#[test]
fn plot_single_round_draws_markers() {
    let svgs = plot_ok(&rounds_csv(1, false));
    assert!(svgs.iter().all(|s| s.contains("<circle") && !s.contains("<polyline")));
}

#[test]
fn plot_constant_series_stays_in_bounds() {
    let svgs = plot_ok(&rounds_csv(5, true));
    for svg in svgs {
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let height: f64 = doc.root_element().attribute("height").unwrap().parse().unwrap();
        for c in doc.descendants().filter(|n| n.has_tag_name("circle")) {
            let cy: f64 = c.attribute("cy").unwrap().parse().unwrap();
            assert!(cy > 0.0 && cy < height);
        }
    }
}

#[test]
fn plot_malformed_csv_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rounds.csv");
    fs::write(&csv, "round,foo\n1,2\n").unwrap();
    let o = fedmesh(&["plot", "--csv", s(&csv), "--out", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_reads_what_run_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(fedmesh(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = fedmesh(&["plot", "--csv", s(&out.join("rounds.csv")), "--out", s(&out.join("plots"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("plots/jfi.svg").is_file());
}

#[test]
fn csv_data_source_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,label\n");
    for i in 0..600 {
        let y = i % 3 == 0;
        let x = if y { 1.0 } else { -1.0 } + (i % 7) as f64 * 0.1;
        text.push_str(&format!("{x},{},{}\n", (i % 5) as f64, y as u8));
    }
    text.push_str("NA,1,0\n");
    let data = dir.path().join("d.csv");
    fs::write(&data, text).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL}\n[data]\nsource = \"csv\"\ncsv_path = \"{}\"\nn_features = 2\n",
            data.display()
        )
        .replace("[data]\nn_samples = 600\n", ""),
    );
    let out = dir.path().join("out");
    let o = fedmesh(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
}
