use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resgan_core::image::Pnm;

const BIN: &str = env!("CARGO_BIN_EXE_resgan");

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

/// A small synthetic run document; `extra` lines replace base keys.
fn synth_config(dir: &Path, extra: &str) -> PathBuf {
    let base = "kind = \"resgan\"\ndataset = \"synth\"\nsynth_height = 16\nsynth_width = 16\nsynth_classes = 4\n\
                train_size = 48\neval_size = 16\nepochs = 2\nbatch_size = 16\nnoise_dim = 8\nprobe_epochs = 2";
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let extra: Vec<&str> = extra.lines().collect();
    let mut lines: Vec<&str> = base.lines().filter(|l| !extra.iter().any(|e| key(e) == key(l))).collect();
    lines.extend(extra);
    let path = dir.join("run.toml");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).env("RESGAN_OUT", out).output().unwrap()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_one_row_per_epoch_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), "");
    let out = tmp.path().join("runs");
    let args = ["train", "--config", cfg.to_str().unwrap(), "--set", "epochs=3", "--set", "seed=42"];
    let o = run(&args, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&out);
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss_g,loss_d,accuracy,wall_ms");
    assert_eq!(lines.len(), 4);
    let ck = fs::read(dir.join("checkpoint.rgan")).unwrap();
    for f in ["manifest.json", "eval.json", "samples.pgm", "restore.pgm"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_hash"].as_str().unwrap(), dir.file_name().unwrap().to_str().unwrap());

    let o = run(&args, &out);
    assert!(o.status.success());
    assert_eq!(only_run_dir(&out), dir);
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap(), csv);
    assert_eq!(fs::read(dir.join("checkpoint.rgan")).unwrap(), ck);
}

#[test]
fn unknown_keys_exit_2_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), "epcohs = 3\n");
    let o = run(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("epcohs") && err.contains(":12:1"), "{err}");
    let cfg = synth_config(tmp.path(), "");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--set", "epcohs=3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epcohs"));
}

#[test]
fn divergence_exits_3_and_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), "kind = \"wgan\"\noptimizer = \"sgd\"\nlr = 1e300\nclip_c = 1e300\nepochs = 4\n");
    let o = run(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let dir = only_run_dir(tmp.path());
    assert!(fs::read_to_string(dir.join("metrics.csv")).unwrap().starts_with("epoch,"));
    assert!(fs::read_to_string(dir.join("manifest.json")).unwrap().contains("diverged"));
    assert!(!dir.join("checkpoint.rgan").exists());
}

#[test]
fn degrade_mnist_writes_a_class_grid_of_28px_tiles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let dir_arg = format!("data_dir=\"{}\"", mnist_dir().display());
    let args = ["degrade", "--set", "dataset=\"mnist\"", "--set", &dir_arg, "--set", "grid_per_class=4"];
    let o = run(&args, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&out);
    let grid = Pnm::read(&dir.join("coarse.pgm")).unwrap();
    assert_eq!((grid.width, grid.height), (4 * 28 + 3, 10 * 28 + 9));
    let first = fs::read(dir.join("coarse-images.idx")).unwrap();
    assert!(run(&args, &out).status.success());
    assert_eq!(fs::read(dir.join("coarse-images.idx")).unwrap(), first);

    let o = run(&["degrade", "--set", "dataset=\"mnist\"", "--set", &dir_arg, "--set", "factor=3"], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degrading_a_constant_image_is_the_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("flat.pgm");
    let mut bytes = b"P5\n8 8\n255\n".to_vec();
    bytes.extend([77u8; 64]);
    fs::write(&img, &bytes).unwrap();
    let o = run(&["degrade", "--input", img.to_str().unwrap(), "--set", "factor=4"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(fs::read(out.trim()).unwrap(), bytes);
}

#[test]
fn restore_and_eval_use_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), "");
    let out = tmp.path().join("runs");
    assert!(run(&["train", "--config", cfg.to_str().unwrap()], &out).status.success());
    let ck = only_run_dir(&out).join("checkpoint.rgan");
    let restore_out = tmp.path().join("restore");
    let o = run(&["restore", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()], &restore_out);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&restore_out);
    let restored = resgan_core::data::IdxArray::parse(&fs::read(dir.join("restored-images.idx")).unwrap(), 3).unwrap();
    assert_eq!(restored.dims, vec![16, 16, 16]);
    let grid = Pnm::read(&dir.join("restore.pgm")).unwrap();
    assert_eq!(grid.width, 3 * 16 + 2);

    let o = run(&["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()], &restore_out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ResGAN on synth: "));

    let gan_cfg = synth_config(tmp.path(), "kind = \"gan\"\n");
    let gan_out = tmp.path().join("gan");
    assert!(run(&["train", "--config", gan_cfg.to_str().unwrap()], &gan_out).status.success());
    let gan_ck = only_run_dir(&gan_out).join("checkpoint.rgan");
    let o = run(&["restore", "--config", cfg.to_str().unwrap(), "--checkpoint", gan_ck.to_str().unwrap()], &gan_out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_renders_one_row_per_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), "kinds = [\"gan\", \"resgan\"]\ndatasets = [\"synth\"]\n");
    let out = tmp.path().join("runs");
    let o = run(&["bench", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&out);
    let text = fs::read_to_string(dir.join("bench.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with("GAN") && lines[2].starts_with("ResGAN"));
    let cell = lines[2].split_whitespace().last().unwrap();
    let (loss, acc) = cell.split_once('/').unwrap();
    assert_eq!(loss.split_once('.').unwrap().1.len(), 2);
    assert!(acc.starts_with('.') || acc == "1.000");
    let csv = fs::read_to_string(dir.join("bench.csv")).unwrap();
    assert!(run(&["bench", "--config", cfg.to_str().unwrap()], &out).status.success());
    assert_eq!(fs::read_to_string(dir.join("bench.csv")).unwrap(), csv);
}

#[test]
fn bench_records_diverged_cells_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(
        tmp.path(),
        "kinds = [\"wgan\"]\noptimizer = \"sgd\"\nlr = 1e300\nclip_c = 1e300\nprobe = \"external\"\n",
    );
    let o = run(&["bench", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("diverged"));
}
