use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use subword_asr::toy::{generate, write_manifest, ToyConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subword-asr"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn learn_bpe_matches_the_hand_oracle_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let transcripts = fixture("tiny_transcripts.txt");
    let args = ["learn-bpe", "--transcripts", p(&transcripts), "--num-merges", "2", "--out", p(&out)];
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "30 units (2 merges)");
    let merges = std::fs::read(out.join("merges.txt")).unwrap();
    assert_eq!(merges, std::fs::read(fixture("tiny_merges.txt")).unwrap());
    let units = std::fs::read(out.join("units.txt")).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(std::fs::read(out.join("merges.txt")).unwrap(), merges);
    assert_eq!(std::fs::read(out.join("units.txt")).unwrap(), units);
}

#[test]
fn zero_merges_give_the_alphabet() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["learn-bpe", "--transcripts", p(&fixture("tiny_transcripts.txt")), "--num-merges", "0", "--out", p(dir.path())]);
    assert!(o.status.success());
    let units = std::fs::read_to_string(dir.path().join("units.txt")).unwrap();
    let names: Vec<&str> = units.lines().map(|l| l.split(' ').next().unwrap()).collect();
    let mut expected = vec!["<blank>".to_string()];
    expected.extend(('A'..='Z').map(String::from));
    expected.extend(["'", "_", "<sos>", "<eos>"].map(String::from));
    assert_eq!(names, expected);
}

#[test]
fn segment_prints_units() {
    let dir = tempfile::tempdir().unwrap();
    run(&["learn-bpe", "--transcripts", p(&fixture("tiny_transcripts.txt")), "--num-merges", "2", "--out", p(dir.path())]);
    let o = run(&[
        "segment",
        "--merges",
        p(&dir.path().join("merges.txt")),
        "--units",
        p(&dir.path().join("units.txt")),
        "--text",
        "THAT CAT",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "T H AT_ C AT_");
}

#[test]
fn score_reports_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("wer.tsv");
    let o = run(&["score", "--ref-manifest", p(&fixture("score_ref.tsv")), "--hyp-file", p(&fixture("score_hyp.tsv")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "WER 30.00% (S=1, D=1, I=1, N=10)");
    assert!(std::fs::read_to_string(out).unwrap().starts_with("wer\t30.0000\n"));
}

#[test]
fn score_rejects_unknown_ids_and_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("hyp.tsv");
    std::fs::write(&hyp, "zz9\tHELLO\n").unwrap();
    let o = run(&["score", "--ref-manifest", p(&fixture("score_ref.tsv")), "--hyp-file", p(&hyp)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zz9"));
    std::fs::write(&hyp, "").unwrap();
    let o = run(&["score", "--ref-manifest", p(&fixture("score_ref.tsv")), "--hyp-file", p(&hyp)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    let o = run(&["train", "--outdir", "/tmp/unused-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest-train"), "{}", stderr(&o));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "version = 1\n[hybrid]\nlamda = 0.3\n").unwrap();
    let o = run(&["train", "--config", p(&cfg), "--manifest-train", "x", "--manifest-dev", "y", "--outdir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

/// Small corpus, one epoch, then decode and score the result.
#[test]
fn train_decode_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let toy = ToyConfig {
        num_words: 4,
        train_size: 12,
        dev_size: 3,
        words_per_utterance: (1, 2),
        ..ToyConfig::default()
    };
    let corpus = generate(&toy).unwrap();
    let train = write_manifest(root, "train", &corpus.train).unwrap();
    let dev = write_manifest(root, "dev", &corpus.dev).unwrap();
    let text: String = corpus.train.iter().map(|u| format!("{}\n", u.transcript)).collect();
    std::fs::write(root.join("text.txt"), text).unwrap();
    let vocab = root.join("vocab");
    assert!(run(&["learn-bpe", "--transcripts", p(&root.join("text.txt")), "--num-merges", "30", "--out", p(&vocab)]).status.success());
    let cfg = root.join("run.toml");
    std::fs::write(
        &cfg,
        "version = 1\n[features]\nnum_mel = 8\n[model.encoder]\ncells_per_direction = 8\n\
         [model.decoder]\ncells = 8\nembedding_dim = 4\nattention_dim = 8\n\
         [hybrid]\nepochs = 1\nbatch_size = 4\nlog_wall_time = false\n",
    )
    .unwrap();
    let outdir = root.join("run");
    let o = run(&[
        "--seed",
        "3",
        "train",
        "--config",
        p(&cfg),
        "--manifest-train",
        p(&train),
        "--manifest-dev",
        p(&dev),
        "--merges",
        p(&vocab.join("merges.txt")),
        "--units",
        p(&vocab.join("units.txt")),
        "--outdir",
        p(&outdir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.toml", "metrics.tsv", "epoch-000.ckpt", "epoch-001.ckpt", "best.ckpt", "merges.txt", "units.txt"] {
        assert!(outdir.join(f).exists(), "missing {f}");
    }
    let echoed = std::fs::read_to_string(outdir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3"), "{echoed}");
    subword_asr::config::RunConfig::from_toml_str(&echoed).unwrap();

    let ckpt = outdir.join("best.ckpt");
    let decode = |beam: &str, out: &Path, workers: &str| {
        let o = run(&["decode", "--checkpoint", p(&ckpt), "--manifest", p(&dev), "--beam", beam, "--workers", workers, "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let beam20 = decode("20", &root.join("a.tsv"), "1");
    assert_eq!(beam20, decode("20", &root.join("b.tsv"), "2"));
    assert_eq!(beam20.lines().count(), 3);
    decode("1", &root.join("greedy.tsv"), "1");
    let o = run(&["score", "--ref-manifest", p(&dev), "--hyp-file", p(&root.join("a.tsv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("WER "));

    let other = root.join("other");
    run(&["learn-bpe", "--transcripts", p(&root.join("text.txt")), "--num-merges", "0", "--out", p(&other)]);
    let o = run(&[
        "decode",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&dev),
        "--merges",
        p(&other.join("merges.txt")),
        "--units",
        p(&other.join("units.txt")),
        "--out",
        p(&root.join("c.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("units"), "{}", stderr(&o));
}
