use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[policy]
layers = 1
heads = 2
d_model = 16
ff_hidden = 16
window = 3
memory_keyframes = 2
queries_per_modality = 1
masked_tokens = 4
fusion_dk = 4
fusion_dv = 4

[encoder]
patch_h = 8
patch_w = 8
d2 = 4
d3 = 4
d_state = 4
d_pose = 2

[train]
episodes = 3
steps = 2
batch_size = 2

[env]
width = 6
height = 6

[eval]
episodes = 4
"#;

fn streamnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamnav")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let o = streamnav(&["train", "--config", &cfg, "--out", out, "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = format!("{out}/checkpoint.bin");
    let o = streamnav(&["eval", "--config", &cfg, "--out", out, "--seed", "4", "--checkpoint", &ck]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(format!("{out}/eval.csv")).unwrap();
    assert!(csv.starts_with("stratum,episodes,sr,spl,osr,ne,ndtw\noverall,4,"));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = streamnav(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for f in ["checkpoint.bin", "train_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn expert_eval_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = streamnav(&["eval", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--expert"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().nth(1).unwrap().starts_with("overall,4,1,1,1,"), "{stdout}");
    let o = streamnav(&["eval", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[policy]\nlayerz = 3\n").unwrap();
    let o = streamnav(&["train", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("layerz"));
    let o = streamnav(&["train", "--config", "/definitely/missing.toml", "--out", out]);
    assert_eq!(code(&o), 2);
    let o = streamnav(&["train", "--variant", "loose", "--out", out]);
    assert_eq!(code(&o), 2);
}

#[test]
fn checkpoint_for_another_model_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&streamnav(&["train", "--config", &cfg, "--out", out])), 0);
    let other = dir.path().join("other.toml");
    fs::write(&other, TINY.replace("ff_hidden = 16", "ff_hidden = 24")).unwrap();
    let ck = format!("{out}/checkpoint.bin");
    let o = streamnav(&["eval", "--config", other.to_str().unwrap(), "--out", out, "--checkpoint", &ck]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));
}

#[test]
fn mask_dump_writes_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = streamnav(&["mask-dump", "--out", out, "--format", "pgm"]);
    assert_eq!(code(&o), 0);
    for v in ["strict", "leaky", "noiso"] {
        let pgm = fs::read_to_string(dir.path().join(format!("mask_{v}.pgm"))).unwrap();
        assert!(pgm.starts_with("P2\n29 29\n255\n"), "{v}");
    }
    let o = streamnav(&["mask-dump", "--out", out, "--variant", "leaky", "--turns", "1", "--queries", "0"]);
    assert_eq!(code(&o), 0);
    let ascii = fs::read_to_string(dir.path().join("mask_leaky.txt")).unwrap();
    assert_eq!(ascii.lines().count(), 13);
    let o = streamnav(&["mask-dump", "--out", out, "--turns", "0"]);
    assert_eq!(code(&o), 2);
}
