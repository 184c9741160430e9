use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simtune::datagen::Dataset;
use simtune::seed::fnv1a64;
use simtune::tensor::ModelCheckpoint;

const TINY: &str = r#"seed = 5
[datagen]
pretrain_size = 200
eval_objects = 4
eval_prompts_per_object = 2
train_objects = 4
train_prompts_per_object = 2
synthetic_prompts = 8
[model]
hidden = [16, 16]
[pretrain]
steps = 50
[finetune]
steps = 20
[finetune.optimizer]
warmup_steps = 5
[eval]
samples_per_prompt = 2
[sweep]
steps = [10, 20]
fractions = [0.5, 1.0]
[analysis]
perturbation_runs = 5
"#;

const STAGES: &[&[&str]] = &[
    &["synth"],
    &["pretrain"],
    &["rollout"],
    &["simulate"],
    &["finetune"],
    &["eval"],
    &["curves"],
    &["verify-derivations"],
];

fn simtune(args: &[&str], out: &Path, config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simtune"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn run_pipeline(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let out = dir.join(name);
    for stage in STAGES {
        let args: Vec<&str> = stage.iter().chain(extra).copied().collect();
        let o = simtune(&args, &out, &config);
        assert_eq!(o.status.code(), Some(0), "{stage:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    out
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in fa {
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn pipeline_is_byte_reproducible_and_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let w1 = run_pipeline(dir.path(), "w1", &["--workers", "1"]);
    let w4 = run_pipeline(dir.path(), "w4", &["--workers", "4"]);
    let again = run_pipeline(dir.path(), "again", &["--workers", "1"]);
    assert_same_tree(&w1, &w4);
    assert_same_tree(&w1, &again);
    for f in ["pretrain/base.ckpt", "finetune/dro-train/model.ckpt", "eval/comparison.md", "curves/loss_curves.csv", "verify/report.json"] {
        assert!(w1.join(f).exists(), "{f} missing");
    }

    let ds = Dataset::load(&w1.join("simulate/train")).unwrap();
    assert!(!ds.rollouts.is_empty() && ds.rollouts.iter().all(|r| r.o.is_some() || !r.valid));
    let copy = dir.path().join("copy");
    fs::create_dir_all(&copy).unwrap();
    ds.save(&copy, 0, 5).unwrap();
    assert_eq!(Dataset::load(&copy).unwrap(), ds);

    let ck = ModelCheckpoint::load(&w1.join("finetune/dro-train/model.ckpt")).unwrap();
    let ck_path = dir.path().join("rt.ckpt");
    ck.save(&ck_path).unwrap();
    assert_eq!(ModelCheckpoint::load(&ck_path).unwrap(), ck);

    // Corrupted inputs: a truncated rollout file and a future manifest version.
    let rollouts = copy.join("rollouts.jsonl");
    let text = fs::read(&rollouts).unwrap();
    fs::write(&rollouts, &text[..text.len() / 2]).unwrap();
    assert!(Dataset::load(&copy).is_err());
    fs::write(&rollouts, &text).unwrap();
    let manifest = copy.join("manifest.json");
    let m = fs::read_to_string(&manifest).unwrap();
    let bumped = m.replacen("\"format_version\":1", "\"format_version\":99", 1);
    assert_ne!(bumped, m);
    fs::write(&manifest, bumped).unwrap();
    assert!(matches!(Dataset::load(&copy), Err(simtune::Error::Version { found: 99, .. })));

    let bytes = fs::read(&ck_path).unwrap();
    fs::write(&ck_path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(ModelCheckpoint::load(&ck_path).is_err());
    let config = dir.path().join("tiny.toml");
    let o = simtune(&["eval", "--ckpt", ck_path.to_str().unwrap()], &w1, &config);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let out = dir.path().join("out");

    let bin = env!("CARGO_BIN_EXE_simtune");
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("no-such-command").output().unwrap().status.code(), Some(2));

    // Missing upstream artifacts are a runtime failure with a one-line message.
    let o = simtune(&["pretrain"], &out, &config);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, format!("{TINY}\nnot_a_key = 1\n")).unwrap();
    assert_eq!(simtune(&["synth"], &out, &bad).status.code(), Some(2));
    assert_eq!(simtune(&["synth", "--frac", "1.5"], &out, &config).status.code(), Some(2));
}

#[test]
fn fnv_of_empty_input_is_the_offset_basis() {
    assert_eq!(fnv1a64(b""), 14695981039346656037);
    assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
}
