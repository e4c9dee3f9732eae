use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn glim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glim"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("GLIM_SEED")
        .output()
        .unwrap()
}

fn lm_dir() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/lm")
        .to_string_lossy()
        .into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
seed = 5
world.group_mixture = [1.0, 1.0, 0.0, 0.0, 0.0]
world.subjects_per_dataset = 2

[encoder]
n_encoder_blocks = 1
n_decoder_blocks = 1
d_model = 32
n_heads = 2
n_queries = 8
d_ff = 64

[train]
epochs = 2
batch_size = 8

[eval]
noise_repeats = 1
max_len = 12
"#;

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = glim(&["synth", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("code=1"), "{e}");
    assert!(e.contains("Usage"), "{e}");
    assert_eq!(glim(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "train.epochz = 3\n").unwrap();
    let o = glim(&["synth", "--n", "24", "--out", "w", "--config", "bad.toml", "--lm", &lm_dir()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("epochz"));
}

#[test]
fn synth_train_eval_then_corrupted_container() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let lm = lm_dir();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();

    let o = glim(&["synth", "--n", "24", "--snr", "20", "--seed", "7", "--out", "w", "--config", "tiny.toml", "--lm", &lm], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.join("w/manifest.json").exists() && d.join("w/split").exists());

    let o = glim(&["train", "--data", "w", "--out", "ck", "--config", "tiny.toml", "--lm", &lm], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model.bin", "model.json", "metrics.csv", "summary.json", "run.toml"] {
        assert!(d.join("ck").join(f).exists(), "{f}");
    }

    // The archived config replays training bit for bit.
    let o = glim(&["train", "--data", "w", "--out", "ck2", "--config", "ck/run.toml", "--lm", &lm], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("ck/model.bin")).unwrap(), std::fs::read(d.join("ck2/model.bin")).unwrap());

    let o = glim(&["eval", "--ckpt", "ck", "--data", "w", "--report", "rep/report.csv", "--lm", &lm], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("rep/report.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("all,"));
    assert!(csv.lines().next().unwrap().contains("retrieval_acc1_nin"));
    for f in ["report.json", "table.txt", "improvements.csv", "variants.csv", "generations.tsv", "report.svg", "run.toml"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
    let o = glim(&["report", "--input", "rep/report.json", "--out", "rep2"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(d.join("rep/table.txt")).unwrap(),
        std::fs::read(d.join("rep2/table.txt")).unwrap()
    );

    let blob = d.join("w/trials.f32le");
    let len = std::fs::metadata(&blob).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&blob).unwrap();
    f.set_len(len - 1000).unwrap();
    let o = glim(&["eval", "--ckpt", "ck", "--data", "w", "--report", "rep3/report.csv", "--lm", &lm], d);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.starts_with("code=2") && e.contains("offset"), "{e}");
}
