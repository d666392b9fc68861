//! Drives every subcommand of the binary on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowood"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_produce_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    let weights = d.join("w.vaew");
    let cal = d.join("cal.json");
    ok(&["synth", "--out", s(&corpus), "--n-id", "5", "--n-ood", "2", "--seed", "4", "--length", "48"]);
    assert!(corpus.join("index.json").is_file());
    assert!(corpus.join("ood_0001").join("frame_0047.pgm").is_file());

    let split = ["--pairs-per-episode", "3", "--cal-fraction", "0.4"];
    let log_csv = d.join("train.csv");
    ok(&[&["train", "--corpus", s(&corpus), "--out", s(&weights), "--epochs", "1", "--input-size", "16",
           "--latent", "4", "--log-csv", s(&log_csv)], &split[..]].concat());
    let log = std::fs::read_to_string(&log_csv).unwrap();
    assert!(log.starts_with("epoch,mean_total,mean_recon,mean_kl\n1,"));
    ok(&[&["calibrate", "--corpus", s(&corpus), "--weights", s(&weights), "--out", s(&cal)], &split[..]].concat());
    let calv: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cal).unwrap()).unwrap();
    assert_eq!(calv["scores"].as_array().unwrap().len(), 2 * 47);

    let manifest = corpus.join("ood_0000").join("manifest.json");
    let curve = d.join("curve.csv");
    let events = d.join("events.jsonl");
    ok(&["detect", "--episode", s(&manifest), "--weights", s(&weights), "--cal", s(&cal),
         "--threshold=-100", "--consecutive", "2", "--out-curve", s(&curve), "--out-events", s(&events)]);
    let c = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(c.lines().count(), 48);
    assert!(c.lines().nth(1).unwrap().starts_with("1,"));
    let ev: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&events).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(ev["onset_frame"], 1);

    let overlay = d.join("overlay.fgrid");
    let composite = d.join("composite.ppm");
    ok(&["localize", "--episode", s(&manifest), "--frame", "5", "--weights", s(&weights), "--cal", s(&cal),
         "--out-overlay", s(&overlay), "--out-composite", s(&composite)]);
    let map = flowood::gridio::read_fgrid(&overlay).unwrap();
    assert_eq!(map.shape(), (1, 64, 64));
    assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(std::fs::read(&composite).unwrap().starts_with(b"P6"));

    let metrics = d.join("metrics.json");
    let curves = d.join("curves");
    ok(&["eval", "--corpus", s(&corpus), "--weights", s(&weights), "--cal", s(&cal),
         "--grid", "1,2,3", "--curves", s(&curves), "--out", s(&metrics)]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let total = ["tp", "fp", "tn", "fn"].iter().map(|k| m[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 7);
    assert_eq!(m["grid"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_dir(&curves).unwrap().count(), 7);

    let lat = d.join("latency.json");
    ok(&["--sequential", "bench", "--episode", s(&manifest), "--weights", s(&weights), "--cal", s(&cal),
         "--reps", "10", "--warmup", "1", "--out", s(&lat)]);
    let l: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&lat).unwrap()).unwrap();
    assert!(l["mean_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(l["reps"], 10);
}

#[test]
fn exit_codes_distinguish_bad_input_from_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // invalid configuration
    let out = run(&["synth", "--out", s(&d.join("c")), "--n-id", "1", "--n-ood", "1", "--size", "10"]);
    assert_eq!(out.status.code(), Some(2));
    // missing file
    let out = run(&["detect", "--episode", s(&d.join("nope.json")), "--weights", s(&d.join("w")),
                    "--cal", s(&d.join("c.json")), "--out-curve", s(&d.join("o.csv")),
                    "--out-events", s(&d.join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
    // malformed weights file
    std::fs::write(d.join("w"), b"not a weights file").unwrap();
    ok(&["synth", "--out", s(&d.join("c")), "--n-id", "1", "--n-ood", "1"]);
    let out = run(&["detect", "--episode", s(&d.join("c").join("id_0000").join("manifest.json")),
                    "--weights", s(&d.join("w")), "--cal", s(&d.join("c.json")),
                    "--out-curve", s(&d.join("o.csv")), "--out-events", s(&d.join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}
