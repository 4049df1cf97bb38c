use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const CAPTIONS: [&str; 4] = [
    "A brown dog runs across a wide field. Tall grass bends in the wind behind it.",
    "Two children build a sand castle on the beach. Waves roll in under a grey sky.",
    "A red bicycle leans against a brick wall. A small plant grows beside the door.",
    "An old man reads a newspaper on a bench. Pigeons gather near his feet today.",
];

fn posbias(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posbias"))
        .args(args)
        .current_dir(cwd)
        .env_remove("POSBIAS_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Four image/caption pairs plus a text bias-mask config.
fn fixture(dir: &Path) {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut rows = String::new();
    for (i, caption) in CAPTIONS.iter().enumerate() {
        let img = image::RgbImage::from_fn(64 + 16 * i as u32, 48, |x, y| {
            image::Rgb([(x * 3 + i as u32 * 40) as u8, (y * 5) as u8, ((x + y) * 2) as u8])
        });
        img.save(dir.join(format!("img/{i}.png"))).unwrap();
        rows.push_str(&format!(
            "{}\n",
            json!({"id": format!("p{i}"), "image": format!("img/{i}.png"), "caption": caption})
        ));
    }
    fs::write(dir.join("pairs.jsonl"), rows).unwrap();
    let cfg = json!({
        "dataset_manifest": "pairs.jsonl",
        "mock": true,
        "modality": "text",
        "mode": "bias-mask",
        "num_segments": 3,
        "output_dir": "run"
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
}

#[test]
fn audit_twice_is_identical_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let first = stdout_json(&posbias(&["--json", "audit", "--config", "cfg.json"], dir.path()));
    assert_eq!(first["complete"], true);
    assert!(first["stats"]["embed_requests"].as_u64().unwrap() > 0);
    let run = dir.path().join("run");
    let csv = fs::read(run.join("curves.csv")).unwrap();
    let svg = fs::read(run.join("plots/bias.svg")).unwrap();

    let second = stdout_json(&posbias(&["--json", "audit", "--config", "cfg.json"], dir.path()));
    assert_eq!(second["stats"]["embed_requests"], 0);
    assert_eq!(second["results"], first["results"]);
    assert_eq!(fs::read(run.join("curves.csv")).unwrap(), csv);
    assert_eq!(fs::read(run.join("plots/bias.svg")).unwrap(), svg);
}

#[test]
fn cache_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_posbias"))
        .args(["audit", "--config", "cfg.json"])
        .current_dir(dir.path())
        .env("POSBIAS_CACHE_DIR", dir.path().join("shared-cache"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("shared-cache").read_dir().unwrap().next().is_some());
    assert!(!dir.path().join("run/cache").exists());
}

#[test]
fn halted_audit_resumes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let halted = stdout_json(&posbias(
        &["--json", "audit", "--config", "cfg.json", "--halt-after-items", "2"],
        dir.path(),
    ));
    assert_eq!(halted["complete"], false);
    assert_eq!(halted["results"], Value::Null);
    let resumed = stdout_json(&posbias(&["--json", "audit", "--config", "cfg.json", "--resume"], dir.path()));
    assert_eq!(resumed["complete"], true);
    assert_eq!(resumed["items_skipped"], 2);
}

#[test]
fn importance_sets_the_mode() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = json!({"dataset_manifest": "pairs.jsonl", "mock": true, "modality": "image",
                     "num_segments": 4, "output_dir": "imp"});
    fs::write(dir.path().join("imp.json"), cfg.to_string()).unwrap();
    let out = stdout_json(&posbias(&["--json", "importance", "--config", "imp.json"], dir.path()));
    assert_eq!(out["results"]["mode"], "importance");
    assert_eq!(out["results"]["table"], "importance.csv");
    assert!(dir.path().join("imp/plots/importance.svg").is_file());
}

#[test]
fn classify_rejects_a_conflicting_mode() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = posbias(&["classify", "--config", "cfg.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shuffle_captions_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: String = CAPTIONS
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}\n", json!({"item_id": format!("c{i}"), "caption": c})))
        .collect();
    fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        let o = posbias(&["shuffle-captions", "--in", "corpus.jsonl", "--out", out, "--seed", "7"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 4);
}

#[test]
fn info_reports_the_mock_profile() {
    let dir = tempfile::tempdir().unwrap();
    let info = stdout_json(&posbias(&["--mock-provider", "--json", "info"], dir.path()));
    assert_eq!(info["model_id"], "mock-clip-b16");
    assert_eq!(info["text_window"], 77);
    assert_eq!(info["image_resolution"], 224);
    assert_eq!(info["patch_size"], 16);
    assert_eq!(info["embed_dim"], 64);
    assert_eq!(info["bos_token_id"], 49406);
    assert_eq!(info["eos_token_id"], 49407);
    assert_eq!(info["pad_token_id"], 0);
    assert_eq!(info["tokenizer_id"], "mock-wordhash");
    assert_eq!(info["vocab_size"], 49408);

    let checked = stdout_json(&posbias(&["--mock-provider", "--json", "info", "--conformance"], dir.path()));
    let checks = checked["conformance"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn report_rerenders_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    stdout_json(&posbias(&["--json", "audit", "--config", "cfg.json"], dir.path()));
    let run = dir.path().join("run");
    let csv = fs::read(run.join("curves.csv")).unwrap();
    fs::remove_file(run.join("curves.csv")).unwrap();
    fs::remove_dir_all(run.join("plots")).unwrap();

    let out = stdout_json(&posbias(&["--json", "report", "--run", "run"], dir.path()));
    assert_eq!(out["num_segments"], 3);
    assert_eq!(fs::read(run.join("curves.csv")).unwrap(), csv);
    assert!(run.join("plots/bias.svg").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());

    let unknown = posbias(&["audit", "--frobnicate"], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(posbias(&["--help"], dir.path()).status.code(), Some(0));

    fs::write(dir.path().join("bad.json"), r#"{"dataset_manifest": "pairs.jsonl", "num_segments": 1}"#).unwrap();
    assert_eq!(posbias(&["audit", "--config", "bad.json"], dir.path()).status.code(), Some(1));
    assert_eq!(posbias(&["audit", "--config", "missing.json"], dir.path()).status.code(), Some(1));
    assert_eq!(posbias(&["report", "--run", "nowhere"], dir.path()).status.code(), Some(1));

    // port 9 (discard) is closed on loopback, so the connection is refused
    let remote = json!({"dataset_manifest": "pairs.jsonl", "provider_url": "http://127.0.0.1:9",
                        "modality": "text", "mode": "bias-mask", "num_segments": 3, "output_dir": "remote"});
    fs::write(dir.path().join("remote.json"), remote.to_string()).unwrap();
    let down = posbias(&["audit", "--config", "remote.json"], dir.path());
    assert_eq!(down.status.code(), Some(2), "{}", String::from_utf8_lossy(&down.stderr));
    assert_eq!(posbias(&["info", "--provider", "http://127.0.0.1:9"], dir.path()).status.code(), Some(2));
}
