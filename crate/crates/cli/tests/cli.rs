use std::fs;
use std::path::Path;
use std::process::Command;

use actf_cli::commands::{eval, sketchbench, train, CHECKPOINT};
use actf_cli::config::load;
use actf_cli::{ExperimentConfig, Split};
use actf_core::checkpoint::load_checkpoint;
use actf_core::data::{generate, load_dataset, save_dataset};
use actf_core::train::evaluate;
use actf_core::ModelParams;

fn actf(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_actf")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn tiny(out: &Path) -> ExperimentConfig {
    let sets = [
        "frames=4",
        "height=16",
        "width=16",
        "train_per_class=3",
        "test_per_class=2",
        "hidden_channels=2",
        "c_out=4",
        "bilinear_dim=8",
        "epochs=2",
        "decay_epochs=[1]",
        "batch_size=4",
    ]
    .map(String::from);
    load(None, &sets, Some(5), Some(out)).unwrap()
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        epochs: 0,
        ..tiny(dir.path())
    };
    let o = train(&cfg).unwrap();
    let (loaded, header) = load_checkpoint::<f64>(&o.checkpoint).unwrap();
    assert_eq!(header.config_hash, cfg.hash());
    let mut init = ModelParams::<f64>::init(cfg.model_config()).unwrap();
    init.visit_mut(&mut |_, _, t| *t = t.map(|x| x as f32 as f64));
    assert_eq!(loaded, init);
    assert!(o.result.final_loss.is_nan());
}

#[test]
fn sketchbench_error_falls_from_256_to_4096() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        bench_dims: vec![256, 4096],
        ..tiny(dir.path())
    };
    let o = sketchbench(&cfg).unwrap();
    assert_eq!(o.rows[0].c, 64);
    assert!(o.rows[1].median < o.rows[0].median, "{:?}", o.rows);
    let text = fs::read_to_string(&o.table).unwrap();
    assert!(text.starts_with(&format!("# actf sketchbench config_hash={}", cfg.hash())));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn gradcheck_binary_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout, stderr) = actf(&["gradcheck", "--out", out, "--set", "gradcheck_seeds=2"]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    let table = fs::read_to_string(dir.path().join("gradcheck.tsv")).unwrap();
    assert!(table.lines().skip(2).all(|l| l.ends_with("\ttrue")));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(actf(&["train", "--bogus"]).0, 2);
    assert_eq!(actf(&["frobnicate"]).0, 2);
    assert_eq!(actf(&["train", "--out", out, "--set", "no_such_key=1"]).0, 2);
    assert_eq!(actf(&["train", "--out", out, "--set", "frames=1"]).0, 2);
    assert_eq!(actf(&["sketchbench", "--out", out, "--set", "bench_dims=[]"]).0, 2);
    assert_eq!(actf(&["train", "--out", out, "--set", "epochs=0", "--set", "variant=both"]).0, 2);
    assert_eq!(actf(&["train", "--out", out, "--config", "/nonexistent/x.toml"]).0, 2);
    assert!(!dir.path().join(CHECKPOINT).exists(), "validation must precede compute");
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.toml");
    fs::write(&file, "seed = 3\nepochs = 4\nc_out = 6\nvariant = \"no-attn\"\n").unwrap();
    let sets = ["epochs=7".to_string()];
    let cfg = load(Some(&file), &sets, Some(11), None).unwrap();
    assert_eq!((cfg.seed, cfg.epochs, cfg.c_out), (11, 7, 6));
    assert_eq!(cfg.variant.name(), "no-attn");
    let plain = load(Some(&file), &[], None, None).unwrap();
    assert_eq!((plain.seed, plain.epochs), (3, 4));
    assert_ne!(cfg.hash(), plain.hash());
    let moved = ExperimentConfig {
        out: "elsewhere".into(),
        ..plain.clone()
    };
    assert_eq!(moved.hash(), plain.hash());
}

#[test]
fn train_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = train(&tiny(a.path())).unwrap();
    let ob = train(&tiny(b.path())).unwrap();
    for name in ["metrics.tsv", "report.tsv", CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(oa.result, ob.result);
    let leftovers: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn eval_reads_manifests_and_refuses_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("run"));
    let o = train(&cfg).unwrap();

    let data = dir.path().join("data");
    let manifest = save_dataset(&data, &generate::<f64>(&cfg.task(Split::Test)).unwrap()).unwrap();
    let ev = eval(&cfg, &o.checkpoint, Some(&manifest)).unwrap();
    let (model, _) = load_checkpoint::<f64>(&o.checkpoint).unwrap();
    let expected = evaluate(&model, &load_dataset::<f64>(&manifest).unwrap()).unwrap();
    assert_eq!(ev.accuracy, expected.accuracy);
    let weights = fs::read_to_string(&ev.final_weights).unwrap();
    let rows: Vec<&str> = weights.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let cells: Vec<f64> = r.split('\t').skip(3).map(|c| c.parse().unwrap()).collect();
        assert!((cells[0] + cells[1] - 1.0).abs() < 2e-6);
    }
    let per_class = fs::read_to_string(&ev.per_class).unwrap();
    assert!(per_class.contains(&format!("checkpoint_config_hash={}", cfg.hash())));

    let ck = o.checkpoint.to_str().unwrap();
    let out = dir.path().join("e").display().to_string();
    let (code, _, stderr) = actf(&["eval", "--checkpoint", ck, "--out", &out, "--set", "frames=5"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("dims"), "{stderr}");
    let (code, _, stderr) = actf(&[
        "eval", "--checkpoint", ck, "--out", &out, "--set", "task=\"mixed8\"", "--set", "frames=4", "--set",
        "height=16", "--set", "width=16",
    ]);
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn written_config_replays_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let text = cfg.to_toml();
    assert!(!text.lines().any(|l| l.starts_with("out")));
    let file = dir.path().join("replay.toml");
    fs::write(&file, &text).unwrap();
    let replayed = load(Some(&file), &[], None, None).unwrap();
    assert_eq!(replayed.hash(), cfg.hash());
}
