//! Runs the built binary end to end.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use npcforge::corpus::{Corpus, CorpusStats};
use npcforge::harness::EvalReport;
use npcforge::memory::RetrievalIndex;
use npcforge::world::Session;

fn npcforge(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_npcforge"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn eval(dir: &Path, backend: &str, name: &str) -> (Output, EvalReport, String) {
    let cfg = write(
        &dir.join(format!("{name}.toml")),
        &format!("strategies = \"D,F\"\nworkers = 2\n[backend]\nkind = \"{backend}\"\n[outputs]\nreport = \"{name}.json\"\n"),
    );
    let out = npcforge(&["eval", "--config", &cfg], None);
    let bytes = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
    let report = serde_json::from_str(&bytes).unwrap();
    (out, report, bytes)
}

#[test]
fn eval_gold_is_perfect_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report, first) = eval(dir.path(), "mock-gold", "a");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Function name exact match"), "{stdout}");
    assert!(stdout.contains("CPDCscore(all)"));
    for k in ["acc_name", "acc_args", "word_f1", "embed_f1"] {
        assert_eq!(report.corpus[k], 1.0, "{k}");
    }
    let (_, _, second) = eval(dir.path(), "mock-gold", "b");
    assert_eq!(first, second);
}

#[test]
fn eval_empty_scores_zero_and_aggregate_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report, _) = eval(dir.path(), "mock-empty", "empty");
    assert!(out.status.success());
    assert_eq!(report.corpus["acc_name"], 0.0);
    assert_eq!(report.task_scores.task1, Some(0.0));

    // Recompute every corpus value and the aggregate from the rows.
    let n = report.per_instance.len() as f64;
    for (k, v) in &report.corpus {
        let mean: f64 = report.per_instance.iter().map(|r| r.metrics[k]).sum::<f64>() / n;
        assert!((mean - v).abs() < 1e-12, "{k}");
    }
    let score = |w: &std::collections::BTreeMap<String, f64>| w.iter().map(|(k, w)| w * report.corpus[k]).sum::<f64>();
    let (t1, t2) = (score(&report.weights.task1), score(&report.weights.task2));
    assert!((report.aggregate - (0.5 * t1 + 0.5 * t2)).abs() < 1e-12);
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("bad.toml"), "strategies = \"D,Nope\"\n");
    let out = npcforge(&["eval", "--config", &cfg], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
    let out = npcforge(&["eval", "--config", "/does/not/exist.toml"], None);
    assert!(!out.status.success());
    let missing = dir.path().join("none.json");
    let out = npcforge(&["stats", "--corpus", missing.to_str().unwrap()], None);
    assert!(!out.status.success());
}

#[test]
fn stats_index_and_datagen() {
    let dir = tempfile::tempdir().unwrap();
    let out = npcforge(&["stats"], None);
    assert!(out.status.success());
    let stats: CorpusStats = serde_json::from_slice(&out.stdout).unwrap();
    let golden: CorpusStats = serde_json::from_str(npcforge::demo::CORPUS_STATS_GOLDEN_JSON).unwrap();
    assert_eq!(stats, golden);

    let corpus = write(&dir.path().join("corpus.json"), npcforge::demo::CORPUS_JSON);
    let index = dir.path().join("index.json");
    let out = npcforge(&["index", "build", "--corpus", &corpus, "--out", index.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(RetrievalIndex::load(&index).unwrap().len(), 6);

    let script = write(
        &dir.path().join("gen.json"),
        r#"{"responses": [
            {"text": "no json here"},
            {"text": "{\"player_dialogue\": \"Got any bows?\", \"gold_functions\": [{\"name\": \"check_price\", \"parameters\": {\"item_name\": \"Short Bow\"}}]}"}
        ]}"#,
    );
    let cfg = write(
        &dir.path().join("gen.toml"),
        &format!("index = \"index.json\"\n[backend]\nkind = \"mock-script\"\nscript = \"{script}\"\n"),
    );
    let generated = dir.path().join("generated.json");
    let out = npcforge(
        &["datagen", "--config", &cfg, "--kind", "function-calling", "--count", "1", "--out", generated.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = Corpus::load(&generated).unwrap();
    assert_eq!(corpus.task, 1);
    assert_eq!(corpus.instances[0].gold_functions.as_ref().unwrap()[0].name, "check_price");

    let out = npcforge(&["datagen", "--kind", "poems", "--out", "x.json"], None);
    assert!(!out.status.success());
}

#[test]
fn chat_binary_quit_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(&dir.path().join("s.json"), r#"{"responses": [{"text": "[]"}, {"text": "Welcome in."}]}"#);
    let cfg = write(
        &dir.path().join("chat.toml"),
        &format!("npc = \"merchant-bram\"\n[backend]\nkind = \"mock-script\"\nscript = \"{script}\"\n[outputs]\ntranscript = \"t.json\"\n"),
    );
    let out = npcforge(&["chat", "--config", &cfg], Some("/quit\n"));
    assert!(out.status.success());
    let session: Session = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert!(session.turns.is_empty());

    let out = npcforge(&["chat", "--config", &cfg, "--verbose"], Some("evening\n"));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("merchant-bram: Welcome in."));
    assert!(stdout.contains("  [turn_completed]"));
    let session: Session = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(session.turns.len(), 2);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            npcforge_cli::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
    let script = npcforge::gateway::MockScript::load(dir.join("chat-demo.script.json")).unwrap();
    assert_eq!(script.responses.len(), 6);
}
