use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tssr");

fn corpus(dir: &Path, n: usize) -> PathBuf {
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/moses_train_10k.smi");
    let text: Vec<String> = fs::read_to_string(src).unwrap().lines().take(n).map(String::from).collect();
    let path = dir.join("corpus.smi");
    fs::write(&path, text.join("\n") + "\n").unwrap();
    path
}

fn tssr(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run tssr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Vocabulary and priors built from a short corpus slice.
fn vocab_dir(dir: &Path) -> PathBuf {
    let c = corpus(dir, 200);
    let out = dir.join("v");
    let r = tssr(&["vocab", "build", "--corpus", p(&c), "--out", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

const SMALL: [&str; 8] = ["--set", "hidden=32", "--set", "layers=1", "--set", "pretrain_batch_size=50", "--threads", "1"];

#[test]
fn pipeline_writes_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = vocab_dir(dir);
    assert!(v.join("vocab.txt").exists() && v.join("priors.tsv").exists() && v.join("vocab.config").exists());
    let c = dir.join("corpus.smi");
    let (vocab, priors) = (v.join("vocab.txt"), v.join("priors.tsv"));

    let out = dir.join("pre");
    let mut args = vec!["pretrain", "--vocab", p(&vocab), "--corpus", p(&c), "--heldout", p(&c), "--out", p(&out)];
    args.extend(SMALL);
    let r = tssr(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let log = fs::read_to_string(out.join("pretrain_log.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some("step\tloss"));
    assert_eq!(log.lines().count(), 1 + 4);
    assert!(fs::read_to_string(out.join("pretrain_report.txt")).unwrap().contains("heldout_nll = "));
    let config = fs::read_to_string(out.join("pretrain.config")).unwrap();
    assert!(config.contains("hidden = 32"));

    let ckpt = out.join("pretrain.ckpt");
    let r = tssr(&["sample", "--vocab", p(&vocab), "--checkpoint", p(&ckpt), "--n", "25", "--out", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let samples = out.join("samples.smi");
    assert_eq!(fs::read_to_string(&samples).unwrap().lines().count(), 25);

    let r = tssr(&["repair", "--vocab", p(&vocab), "--priors", p(&priors), "--samples", p(&samples), "--out", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let repaired = fs::read_to_string(out.join("repair.tsv")).unwrap();
    assert_eq!(repaired.lines().count(), 25);
    assert!(repaired.lines().all(|l| l.split('\t').count() == 4));

    let r = tssr(&[
        "eval", "--vocab", p(&vocab), "--priors", p(&priors), "--samples", p(&samples), "--corpus", p(&c), "--out",
        p(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    for key in ["validity = ", "novelty = ", "nn_diversity = ", "scaffold_similarity = ", "fix_rate = "] {
        assert!(metrics.contains(key), "{key} missing");
    }
    assert!(metrics.contains("n_gen = 25"));
}

#[test]
fn oracle_export_reports_parse_and_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = tmp.path().join("s.smi");
    fs::write(&samples, "CCO\nC(\nC(C)(C)(C)(C)C\n\n").unwrap();
    let r = tssr(&["oracle-export", "--samples", p(&samples), "--out", p(tmp.path())]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(tmp.path().join("judgments.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines,
        ["idx\tsmiles\tparse_ok\tchem_problems", "0\tCCO\t1\t0", "1\tC(\t0\t", "2\tC(C)(C)(C)(C)C\t1\t1", "3\t\t0\t"]
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = vocab_dir(dir);
    let (vocab, priors) = (v.join("vocab.txt"), v.join("priors.tsv"));

    let r = tssr(&["train", "--mode", "frl", "--vocab", p(&vocab), "--priors", p(&priors), "--out", p(dir)]);
    assert_eq!(code(&r), 1);
    let r = tssr(&["train", "--set", "no_such_key=3", "--vocab", p(&vocab), "--out", p(dir)]);
    assert_eq!(code(&r), 1);
    let r = tssr(&["train", "--set", "gamma=1.5", "--vocab", p(&vocab), "--out", p(dir)]);
    assert_eq!(code(&r), 1);
    let r = tssr(&["sample", "--vocab", p(&vocab), "--out", p(dir)]);
    assert_eq!(code(&r), 1, "missing checkpoint setting");
    let r = tssr(&["oracle-export", "--samples", p(&dir.join("absent.smi")), "--out", p(dir)]);
    assert_eq!(code(&r), 2);
    let r = tssr(&["no-such-command"]);
    assert_eq!(code(&r), 1);
    let r = tssr(&["--help"]);
    assert_eq!(code(&r), 0);
}

#[test]
fn checkpoint_from_another_vocabulary_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = vocab_dir(dir);
    let vocab = v.join("vocab.txt");
    let c = dir.join("corpus.smi");
    let mut args = vec!["pretrain", "--vocab", p(&vocab), "--corpus", p(&c), "--set", "pretrain_epochs=1", "--out", p(dir)];
    args.extend(SMALL);
    assert_eq!(code(&tssr(&args)), 0);

    let other = dir.join("other.smi");
    fs::write(&other, "CCO\nc1ccccc1\n").unwrap();
    let w = dir.join("w");
    assert_eq!(code(&tssr(&["vocab", "build", "--corpus", p(&other), "--out", p(&w)])), 0);
    let r = tssr(&[
        "sample", "--vocab", p(&w.join("vocab.txt")), "--checkpoint", p(&dir.join("pretrain.ckpt")), "--n", "3",
        "--out", p(dir),
    ]);
    assert_eq!(code(&r), 1, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn fine_tuning_runs_from_a_pretrained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = vocab_dir(dir);
    let (vocab, priors) = (v.join("vocab.txt"), v.join("priors.tsv"));
    let c = dir.join("corpus.smi");
    let mut args = vec!["pretrain", "--vocab", p(&vocab), "--corpus", p(&c), "--out", p(dir)];
    args.extend(SMALL);
    assert_eq!(code(&tssr(&args)), 0);

    let out = dir.join("ft");
    let init = dir.join("pretrain.ckpt");
    let mut args = vec![
        "train", "--mode", "frl", "--init", p(&init), "--vocab", p(&vocab), "--priors", p(&priors), "--epochs", "2",
        "--out", p(&out),
    ];
    args.extend(SMALL);
    let r = tssr(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("final.ckpt").exists() && out.join("best.ckpt").exists());
    let report = fs::read_to_string(out.join("train_report.txt")).unwrap();
    assert!(report.contains("updates = "));
    let config = fs::read_to_string(out.join("train.config")).unwrap();
    assert!(config.contains("mode = frl"));
}

#[test]
fn single_thread_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = vocab_dir(dir);
    let (vocab, priors) = (v.join("vocab.txt"), v.join("priors.tsv"));
    let run = |name: &str| {
        let out = dir.join(name);
        let mut args =
            vec!["train", "--seed", "11", "--vocab", p(&vocab), "--priors", p(&priors), "--epochs", "2", "--out", p(&out)];
        args.extend(SMALL);
        let r = tssr(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        (fs::read(out.join("episodes.tsv")).unwrap(), fs::read(out.join("final.ckpt")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().next(), Some("episode\tlength\tterminal_R\tdiscounted_return"));
}
