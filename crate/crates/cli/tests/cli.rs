use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn segcut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segcut"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = segcut(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small corpus plus a briefly trained checkpoint.
fn setup(root: &Path) -> (String, String) {
    let corpus = root.join("corpus");
    let ckpt = root.join("oracle.ckpt");
    ok(&["synth", "--out", p(&corpus), "--clips", "24", "--speakers", "4", "--seed", "3"]);
    ok(&[
        "train-oracle", "--corpus", p(&corpus), "--out", p(&ckpt),
        "--epochs", "4", "--learning-rate", "1e-3", "--hidden", "16",
    ]);
    (p(&corpus).to_string(), p(&ckpt).to_string())
}

#[test]
fn full_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = setup(dir.path());
    assert!(dir.path().join("oracle.log.tsv").exists());

    let again = dir.path().join("again.ckpt");
    ok(&[
        "train-oracle", "--corpus", &corpus, "--out", p(&again),
        "--epochs", "4", "--learning-rate", "1e-3", "--hidden", "16",
    ]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let audit = dir.path().join("audit");
    for out in [&a, &b] {
        ok(&[
            "segment", "--corpus", &corpus, "--checkpoint", &ckpt, "--out", p(out),
            "--mc-passes", "20", "--audit", p(&audit),
        ]);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("clip_id,start_s,end_s,label\n"));
    assert!(!text.contains("NaN"));
    assert!(fs::read_dir(&audit).unwrap().count() > 0);

    let report = dir.path().join("report.json");
    let out = ok(&["evaluate", "--pred", p(&a), "--corpus", &corpus, "--out", p(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("T-F1"));
    let json = fs::read_to_string(&report).unwrap();
    assert!(!json.contains("NaN"));
}

#[test]
fn ground_truth_evaluates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--out", p(&corpus), "--clips", "20", "--speakers", "4"]);
    let mut csv = String::from("clip_id,start_s,end_s,label\n");
    for entry in fs::read_to_string(corpus.join("corpus.tsv")).unwrap().lines().skip(1) {
        let cols: Vec<&str> = entry.split('\t').collect();
        if cols[2] != "eval" {
            continue;
        }
        let manifest = fs::read_to_string(corpus.join(format!("{}.manifest", cols[0]))).unwrap();
        for line in manifest.lines().filter_map(|l| l.strip_prefix("segment = ")) {
            let f: Vec<&str> = line.split(',').collect();
            let (s, e): (f64, f64) = (f[0].trim().parse().unwrap(), f[1].trim().parse().unwrap());
            csv.push_str(&format!("{},{s:.3},{e:.3},{}\n", cols[0], f[2].trim()));
        }
    }
    let pred = dir.path().join("gt.csv");
    fs::write(&pred, csv).unwrap();
    let report = dir.path().join("r.json");
    ok(&["evaluate", "--pred", p(&pred), "--corpus", p(&corpus), "--out", p(&report)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["overall"]["f1"], 1.0);
    assert!(v["overall"]["onset_error"].as_f64().unwrap() < 5e-4);
}

#[test]
fn ablate_single_variant_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = setup(dir.path());
    let out = dir.path().join("abl");
    ok(&[
        "ablate", "--corpus", &corpus, "--checkpoint", &ckpt, "--out", p(&out),
        "--variants", "pure_ncut", "--thresholds", "sign", "--mc-passes", "10",
    ]);
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("SCut [-M -C]"));
}

#[test]
fn invalid_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--out", p(&corpus), "--clips", "8", "--speakers", "4"]);
    let missing_ckpt = segcut(&["segment", "--corpus", p(&corpus), "--out", "x.csv"]);
    assert_eq!(missing_ckpt.status.code(), Some(2));
    let bad_variant = segcut(&[
        "segment", "--corpus", p(&corpus), "--out", "x.csv", "--checkpoint", "nope", "--variant", "magic",
    ]);
    assert_eq!(bad_variant.status.code(), Some(2));
    assert_eq!(segcut(&["synth", "--out", p(&corpus), "--speakers", "1"]).status.code(), Some(2));

    // A speaker listed in both train and val is rejected.
    let index = corpus.join("corpus.tsv");
    let text = fs::read_to_string(&index).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let val_speaker = lines
        .iter()
        .find(|l| l.ends_with("\tval"))
        .map(|l| l.split('\t').nth(1).unwrap().to_string())
        .unwrap();
    let train_row = lines.iter().position(|l| l.ends_with("\ttrain")).unwrap();
    let cols: Vec<String> = lines[train_row].split('\t').map(String::from).collect();
    lines[train_row] = format!("{}\t{val_speaker}\ttrain", cols[0]);
    fs::write(&index, lines.join("\n") + "\n").unwrap();
    let out = segcut(&[
        "train-oracle", "--corpus", p(&corpus), "--out", p(&dir.path().join("c.ckpt")), "--epochs", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("both training and evaluation"));
}

#[test]
fn corrupt_clip_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = setup(dir.path());
    let index = fs::read_to_string(Path::new(&corpus).join("corpus.tsv")).unwrap();
    let victim = index.lines().find(|l| l.ends_with("\teval")).unwrap().split('\t').next().unwrap().to_string();
    fs::write(Path::new(&corpus).join(format!("{victim}.emb")), b"junk").unwrap();
    let out = segcut(&[
        "segment", "--corpus", &corpus, "--checkpoint", &ckpt, "--out",
        p(&dir.path().join("s.csv")), "--mc-passes", "5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("s.csv").exists());
}
