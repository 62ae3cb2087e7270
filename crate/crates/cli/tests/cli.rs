use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_morphvec"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn morphvec")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn fixture_corpus(dir: &Path) -> PathBuf {
    let words_a = ["cat", "dog", "mouse", "horse"];
    let words_b = ["sun", "moon", "star", "comet"];
    let mut text = String::new();
    let mut state = 12345u64;
    for i in 0..400 {
        let pool = if i % 2 == 0 { &words_a } else { &words_b };
        let line: Vec<&str> = (0..8)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                pool[(state >> 33) as usize % pool.len()]
            })
            .collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    let p = dir.join("corpus.txt");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn vocab_is_hand_countable() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "b a b\nc b a\n").unwrap();
    let o = run(dir.path(), &["vocab", "c.txt", "-o", "v.txt", "--min-count", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("v.txt")).unwrap(), "#total 6\nb\t3\na\t2\nc\t1\n");
    let o = run(dir.path(), &["vocab", "c.txt", "-o", "v1.txt", "--min-count", "1", "--max-vocab", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("v1.txt")).unwrap(), "#total 6\nb\t3\n");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "vocab");
    assert_eq!(manifest["flags"]["min_count"], 1);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["vocab", "nope.txt", "-o", "v.txt"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["train", "--bogus"])), 2);
    assert_eq!(code(&run(dir.path(), &["train", "c.txt", "-o", "m.bin", "--strategy", "xyz"])), 2);
}

#[test]
fn morph_strategy_requires_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    fixture_corpus(dir.path());
    for s in ["morph", "morphng"] {
        let o = run(dir.path(), &["train", "corpus.txt", "-o", "m.bin", "--strategy", s]);
        assert_eq!(code(&o), 2, "{s}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("--lexicon"));
    }
}

#[test]
fn malformed_vocab_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture_corpus(dir.path());
    fs::write(dir.path().join("bad.txt"), "no header here\n").unwrap();
    let o = run(dir.path(), &["train", "corpus.txt", "--vocab", "bad.txt", "-o", "m.bin"]);
    assert_eq!(code(&o), 1);
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "corpus.txt", "-o", out, "--dim", "8", "--epochs", "2", "--buckets", "500", "--seed", "7",
    ];
    args.extend_from_slice(extra);
    run(dir, &args)
}

#[test]
fn deterministic_training_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    fixture_corpus(dir.path());
    for out in ["a.bin", "b.bin"] {
        let o = train(dir.path(), out, &["--strategy", "sg", "--deterministic"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_eq!(read("a.vec"), read("b.vec"));
    assert!(dir.path().join("a.bin.manifest.json").exists());
    assert!(dir.path().join("a.vec.manifest.json").exists());
}

#[test]
fn threaded_training_completes() {
    let dir = tempfile::tempdir().unwrap();
    fixture_corpus(dir.path());
    let o = train(dir.path(), "t.bin", &["--strategy", "ngrams", "--threads", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn nearest_neighbours() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("two.vec"), "2 2\nx 1 0\ny 1 1\n").unwrap();
    let o = run(dir.path(), &["nn", "two.vec", "x", "-k", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "y\t0.7071\n");

    let o = run(dir.path(), &["nn", "two.vec", "absent", "-k", "1"]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    fixture_corpus(dir.path());
    assert_eq!(code(&train(dir.path(), "ng.bin", &["--strategy", "ngrams"])), 0);
    let o = run(dir.path(), &["nn", "ng.bin", "cats", "-k", "3"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        let (_, c) = l.split_once('\t').unwrap();
        assert_eq!(c.split_once('.').unwrap().1.len(), 4);
    }
}

fn write_conll(path: &Path, rows: &[(&str, &str)]) {
    let mut s = String::new();
    for (i, (w, t)) in rows.iter().enumerate() {
        s.push_str(&format!("{w}\t{t}\n"));
        if i % 4 == 3 {
            s.push('\n');
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn tag_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.vec"), "3 2\ncat 1 0\nsun 0 1\nruns 0.5 0.5\n").unwrap();
    let rows: Vec<(&str, &str)> = (0..40)
        .map(|i| match i % 4 {
            0 => ("cat", "N"),
            1 => ("runs", "V"),
            2 => ("sun", "N"),
            _ => ("runs", "V"),
        })
        .collect();
    write_conll(&dir.path().join("train.conll"), &rows);
    let args = [
        "tag", "train", "--train", "train.conll", "--dev", "train.conll", "--vectors", "v.vec", "--task", "pos",
        "-o", "t.mtb", "--epochs", "5", "--conv-channels", "8", "--dense-units", "8", "--lr", "0.1", "--report",
        "r.csv",
    ];
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("POS (accuracy)"), "{stdout}");
    assert!(fs::read(dir.path().join("t.mtb")).unwrap().starts_with(b"MTB1"));
    assert!(dir.path().join("t.mtb.manifest.json").exists());
    assert!(fs::read_to_string(dir.path().join("r.csv")).unwrap().starts_with("task,model,metric"));

    let o = run(
        dir.path(),
        &["tag", "eval", "--model", "t.mtb", "--data", "train.conll", "--vectors", "v.vec", "--task", "pos"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.0000"));

    // same run twice: identical checkpoints
    let mut again = args.to_vec();
    let pos = again.iter().position(|a| *a == "t.mtb").unwrap();
    again[pos] = "t2.mtb";
    assert_eq!(code(&run(dir.path(), &again)), 0);
    assert_eq!(fs::read(dir.path().join("t.mtb")).unwrap(), fs::read(dir.path().join("t2.mtb")).unwrap());
}

#[test]
fn ner_strict_rejects_non_biluo() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.vec"), "2 2\nann 1 0\nparis 0 1\n").unwrap();
    write_conll(&dir.path().join("ner.conll"), &[("ann", "PER"), ("paris", "U-LOC"), ("ann", "O"), ("paris", "O")]);
    let base = ["tag", "train", "--train", "ner.conll", "--dev", "ner.conll", "--vectors", "v.vec", "--task", "ner"];
    let mut strict = base.to_vec();
    strict.extend(["-o", "n.mtb", "--epochs", "1", "--conv-channels", "2", "--dense-units", "2", "--strict"]);
    let o = run(dir.path(), &strict);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("BILUO"));
    strict.pop();
    let o = run(dir.path(), &strict);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("NER (entity-f1)"));
}

#[test]
fn vectors_flags_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.vec"), "1 1\na 1\n").unwrap();
    write_conll(&dir.path().join("d.conll"), &[("a", "N")]);
    let o = run(dir.path(), &["tag", "train", "--train", "d.conll", "-o", "m.mtb"]);
    assert_eq!(code(&o), 2);
    let o = run(
        dir.path(),
        &["tag", "train", "--train", "d.conll", "-o", "m.mtb", "--vectors", "v.vec", "--external-vectors", "v.vec"],
    );
    assert_eq!(code(&o), 2);
}
