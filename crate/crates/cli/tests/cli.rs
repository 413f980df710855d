use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const FIGURE: &str = r#"{"tokens":["food","was","so","so","but","excited","to","see","many","vegan","options"],"triplets":[{"target":[0,0],"opinion":[2,3],"sentiment":"NEU"},{"target":[9,10],"opinion":[5,5],"sentiment":"POS"}]}"#;

fn jet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jet")).args(args).output().expect("binary runs")
}

fn jet_with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_jet"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Sentences of the form "filler cue target ...", the cue fixing the
/// sentiment.
fn cue_corpus(sentences: usize, shift: usize) -> String {
    let targets = ["pizza", "service", "staff", "pasta", "dessert", "decor"];
    let cues = [("great", "POS"), ("awful", "NEG"), ("average", "NEU")];
    let fillers = ["the", "was", "we", "and", "really", "then"];
    let mut out = String::new();
    for s in 0..sentences {
        let mut tokens = Vec::new();
        let mut triplets = Vec::new();
        for part in 0..2 {
            let k = s + shift + part;
            tokens.push(fillers[(k * 7) % fillers.len()]);
            let (cue, label) = cues[(k * 5 + part) % cues.len()];
            tokens.push(cue);
            tokens.push(targets[(k * 3 + part) % targets.len()]);
            let t = tokens.len() - 1;
            triplets.push(format!(r#"{{"target":[{t},{t}],"opinion":[{o},{o}],"sentiment":"{label}"}}"#, o = t - 1));
        }
        let tokens: Vec<String> = tokens.iter().map(|t| format!("{t:?}")).collect();
        out += &format!("{{\"tokens\":[{}],\"triplets\":[{}]}}\n", tokens.join(","), triplets.join(","));
    }
    out
}

#[test]
fn encode_prints_the_figure_tags() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    let o = jet(&["encode", "--scheme", "t", "--max-offset", "6", "--input", &gold]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "S^0_{2,3} O O O O O O O O B^+_{-4,-4} E\n");

    let o = jet_with_stdin(&["encode", "--scheme", "o"], FIGURE);
    assert_eq!(stdout(&o), "O O B^0_{-2,-2} E O S^+_{4,5} O O O O O\n");
}

#[test]
fn decode_inverts_encode() {
    let o = jet_with_stdin(&["decode", "--scheme", "o"], "O O B^0_{-2,-2} E O S^+_{4,5} O O O O O\n");
    assert!(o.status.success());
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let record: serde_json::Value = serde_json::from_str(FIGURE).unwrap();
    assert_eq!(line["triplets"], record["triplets"]);
    assert_eq!(line["length"], 11);
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    let o = jet(&["eval", "--mode", "exact", "--gold", &gold, "--pred", &gold]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("F1 1.000"), "{}", stdout(&o));

    let o = jet(&["eval", "--gold", &gold, "--pred", &gold, "--by-length", "target-len"]);
    assert_eq!(
        stdout(&o),
        "target_len,precision,recall,f1,matched,predicted,gold\n1,1.000000,1.000000,1.000000,1,1,1\n2,1.000000,1.000000,1.000000,1,1,1\n"
    );
}

#[test]
fn partial_modes_forgive_one_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    let pred = write(dir.path(), "pred.jsonl", &FIGURE.replace("[9,10]", "[10,10]"));
    let o = jet(&["eval", "--gold", &gold, "--pred", &pred, "--mode", "all", "--format", "kv"]);
    let text = stdout(&o);
    assert!(text.contains("exact.matched=1\n"), "{text}");
    assert!(text.contains("partial-target.matched=2\n"), "{text}");
    assert!(text.contains("partial-opinion.matched=1\n"), "{text}");
}

#[test]
fn stats_reports_figure_counts() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    let o = jet(&["stats", &gold]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("     1      1      1      0      2"), "{}", stdout(&o));
}

#[test]
fn merge_skips_donor_triplets_overlapping_the_base() {
    let dir = tempfile::tempdir().unwrap();
    let base = write(
        dir.path(),
        "base.jsonl",
        r#"{"tokens":["a","b","c","d"],"triplets":[{"target":[0,0],"opinion":[1,1],"sentiment":"POS"}]}"#,
    );
    let donor = write(
        dir.path(),
        "donor.jsonl",
        r#"{"tokens":["a","b","c","d"],"triplets":[{"target":[0,1],"opinion":[1,2],"sentiment":"NEG"},{"target":[3,3],"opinion":[2,2],"sentiment":"NEU"}]}"#,
    );
    let o = jet(&["merge", "--base", &base, "--donor", &donor]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o).trim(),
        r#"{"tokens":["a","b","c","d"],"triplets":[{"target":[0,0],"opinion":[1,1],"sentiment":"POS"},{"target":[3,3],"opinion":[2,2],"sentiment":"NEU"}]}"#
    );
}

#[test]
fn selfcheck_passes() {
    let o = jet(&["selfcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("[PASS]").count(), 4);
}

#[test]
fn exit_codes_classify_failures() {
    assert_eq!(jet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(jet(&["eval", "--gold", "x.jsonl"]).status.code(), Some(1));
    assert_eq!(jet(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = jet(&["stats", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write(dir.path(), "bad.jsonl", r#"{"tokens":["a"],"triplets":[{"target":[5,3],"opinion":[0,0],"sentiment":"POS"}]}"#);
    let o = jet(&["stats", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    assert_eq!(jet(&["encode", "--max-offset", "1", "--input", &gold]).status.code(), Some(2));
}

#[test]
fn data_dir_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "figure.jsonl", FIGURE);
    let o = Command::new(env!("CARGO_BIN_EXE_jet"))
        .args(["stats", "figure.jsonl"])
        .env("JET_DATA_DIR", dir.path())
        .current_dir(dir.path().parent().unwrap())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.jsonl", &cue_corpus(12, 0));
    let dev = write(dir.path(), "dev.jsonl", &cue_corpus(4, 12));
    let config = write(
        dir.path(),
        "config.toml",
        &format!(
            "max_offset = 2\nepochs = 25\nembed_dim = 12\nhidden_dim = 12\noffset_dim = 6\nlearning_rate = 0.01\ndropout = 0.0\n\n[data]\ntrain = {train:?}\ndev = {dev:?}\n"
        ),
    );
    let ck = dir.path().join("ck");
    let ck = ck.to_str().unwrap();
    let o = jet(&["train", "--config", &config, "--output", ck, "--seed", "5", "--dtype", "f32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["manifest.json", "params.bin", "vocab.json"] {
        assert!(Path::new(ck).join(file).exists());
    }

    let pred = dir.path().join("pred.jsonl");
    let pred = pred.to_str().unwrap();
    let o = jet(&["predict", "--checkpoint", ck, "--input", &dev, "--output", pred]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(pred).unwrap().lines().count(), 4);

    let o = jet(&["eval", "--gold", &dev, "--pred", pred, "--format", "json"]);
    assert!(o.status.success());
    let scores: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(scores["exact"]["f1"].as_f64().unwrap() >= 0.0);
    // predictions always decode, so they re-encode under the model's settings
    let o = jet(&["encode", "--max-offset", "2", "--input", pred]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_training_settings_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", FIGURE);
    let ck = dir.path().join("ck");
    let o = jet(&["train", "--train", &gold, "--dev", &gold, "--output", ck.to_str().unwrap(), "--dropout", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = jet(&["train", "--train", &gold, "--output", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
