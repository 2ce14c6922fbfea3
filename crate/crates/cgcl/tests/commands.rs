//! The command-line contract: run directories, exit codes and presets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgcl::config::{preset, RunConfig};
use cgcl::export::read_results;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn cgcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgcl")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pretrain_toy(out: &Path) -> Output {
    cgcl(&[
        "pretrain",
        "--data",
        fixture("toy-tu").to_str().unwrap(),
        "--encoders",
        "gin,gcn",
        "--epochs",
        "3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn pretrain_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = pretrain_toy(&run);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["best.ckpt", "final.ckpt", "convergence.csv", "resolved-config.txt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(run.join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,encoder,mean_loss,seconds"));
    assert_eq!(lines.count(), 6);
    let resolved = std::fs::read_to_string(run.join("resolved-config.txt")).unwrap();
    assert!(resolved.contains("seed=7\n") && resolved.contains("encoders=gin,gcn\n"));
}

#[test]
fn pretrain_is_reproducible_from_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&pretrain_toy(&a)), 0);
    let o = cgcl(&[
        "pretrain",
        "--config",
        a.join("resolved-config.txt").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Identical up to the wall-clock column of the log.
    let load = |d: &Path| cgcl::checkpoint::Checkpoint::load(&d.join("final.ckpt")).unwrap();
    let (x, y) = (load(&a), load(&b));
    assert!(x.params == y.params);
    assert_eq!(x.config_digest, y.config_digest);
    let losses = |c: &cgcl::checkpoint::Checkpoint| -> Vec<f64> {
        c.resume.as_ref().unwrap().log.rows.iter().map(|r| r.mean_loss).collect()
    };
    assert_eq!(losses(&x), losses(&y));
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    let data = fixture("toy-tu");
    let base = ["pretrain", "--data", data.to_str().unwrap(), "--encoders", "gat,gin", "--seed", "3"];
    let run = |out: &Path, epochs: &str, resume: Option<&Path>| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend(["--epochs", epochs, "--out", out.to_str().unwrap()]);
        if let Some(r) = resume {
            args.extend(["--resume", r.to_str().unwrap()]);
        }
        cgcl(&args)
    };
    assert_eq!(code(&run(&full, "5", None)), 0);
    assert_eq!(code(&run(&part, "2", None)), 0);
    let o = run(&part, "5", Some(&part.join("final.ckpt")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let losses = |d: &Path| -> Vec<f64> {
        std::fs::read_to_string(d.join("convergence.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    let (a, b) = (losses(&full), losses(&part));
    assert_eq!(a.len(), 10);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }

    // A different temperature changes the digest, so resuming is refused.
    let mut args: Vec<&str> = base.to_vec();
    let ck = part.join("final.ckpt");
    args.extend(["--epochs", "6", "--temperature", "0.3", "--out", part.to_str().unwrap(), "--resume", ck.to_str().unwrap()]);
    assert_eq!(code(&cgcl(&args)), 2);
}

#[test]
fn one_encoder_exits_2_naming_the_requirement() {
    let o = cgcl(&["pretrain", "--data", fixture("toy-tu").to_str().unwrap(), "--encoders", "gin"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("k >= 2"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_2_and_bad_data_exits_3() {
    assert_eq!(code(&cgcl(&["pretrain", "--epochs", "many"])), 2);
    assert_eq!(code(&cgcl(&["pretrain", "--data", "x", "--encoders", "gin,sage"])), 2);
    assert_eq!(code(&cgcl(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let o = cgcl(&["pretrain", "--data", dir.path().to_str().unwrap(), "--encoders", "gin,gcn"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(code(&cgcl(&["pretrain", "--data", "/nonexistent/dir", "--encoders", "gin,gcn"])), 3);
}

#[test]
fn numeric_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgcl(&[
        "pretrain",
        "--data",
        fixture("toy-tu").to_str().unwrap(),
        "--encoders",
        "gin,gcn",
        "--epochs",
        "3",
        "--lr",
        "1e300",
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn evaluate_embed_and_finetune_from_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&pretrain_toy(&run)), 0);
    let ck = run.join("best.ckpt");
    let ck = ck.to_str().unwrap();

    let o = cgcl(&["evaluate", "--checkpoint", ck, "--target-encoder", "gin", "--repeats", "2"]);
    // Ten folds need ten graphs per class; the toy set has six.
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let tsv = dir.path().join("e.tsv");
    let o = cgcl(&["embed", "--checkpoint", ck, "--target-encoder", "1", "--tsv", tsv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&tsv).unwrap();
    assert_eq!(text.lines().count(), 12 + 1);
    assert_eq!(text.lines().next().unwrap().split('\t').count(), 2 + 128);

    let o = cgcl(&["embed", "--checkpoint", ck, "--tsv", tsv.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = cgcl(&["finetune", "--checkpoint", ck, "--target-encoder", "gin", "--label-fraction", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("finetuned 120 steps"));
    let recs = read_results(&run.join("results.jsonl")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].encoders, vec!["gin".to_string()]);
}

#[test]
fn evaluate_on_mutag_writes_one_record_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = cgcl(&[
        "pretrain",
        "--data",
        fixture("MUTAG").to_str().unwrap(),
        "--encoders",
        "gcn,gin",
        "--epochs",
        "1",
        "--hidden",
        "16",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = run.join("final.ckpt");
    let args = ["evaluate", "--checkpoint", ck.to_str().unwrap(), "--target-encoder", "gcn", "--repeats", "2"];
    let o = cgcl(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("over 2 runs"));
    assert_eq!(code(&cgcl(&args)), 0);
    let recs = read_results(&run.join("results.jsonl")).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[0].accuracy, recs[2].accuracy);
    assert_eq!(recs[0].dataset, "MUTAG");
}

#[test]
fn checkpoint_and_data_modes_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&pretrain_toy(&run)), 0);
    let nodes = dir.path().join("nodes");
    let g = cgcl_core::synthetic::PlantedPartition::default().generate(0).unwrap();
    cgcl::interchange::write_node_dataset(&nodes, &g).unwrap();
    let o = cgcl(&[
        "evaluate",
        "--checkpoint",
        run.join("best.ckpt").to_str().unwrap(),
        "--data",
        nodes.to_str().unwrap(),
        "--target-encoder",
        "0",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn node_level_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = dir.path().join("nodes");
    let g = cgcl_core::synthetic::PlantedPartition { nodes: 120, ..Default::default() }.generate(1).unwrap();
    cgcl::interchange::write_node_dataset(&nodes, &g).unwrap();
    let run = dir.path().join("run");
    let o = cgcl(&[
        "pretrain",
        "--data",
        nodes.to_str().unwrap(),
        "--encoders",
        "gcn,gat",
        "--epochs",
        "5",
        "--hidden",
        "8",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved = std::fs::read_to_string(run.join("resolved-config.txt")).unwrap();
    assert!(resolved.contains("mode=node\n"));
    let cfgfile = dir.path().join("split.txt");
    std::fs::write(&cfgfile, "node_per_class=10\nnode_val=20\nnode_test=40\n").unwrap();
    let o = cgcl(&[
        "evaluate",
        "--checkpoint",
        run.join("best.ckpt").to_str().unwrap(),
        "--target-encoder",
        "gcn",
        "--repeats",
        "2",
        "--config",
        cfgfile.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn selftest_passes_quickly() {
    let start = std::time::Instant::now();
    let o = cgcl(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn mutag_preset_loads_published_settings() {
    let mut map = preset("mutag").unwrap();
    map.insert("data".into(), fixture("MUTAG").display().to_string());
    let cfg = RunConfig::resolve(map).unwrap();
    let t = &cfg.train;
    assert_eq!((t.learning_rate, t.temperature, t.batch_size, t.hidden_dim), (0.001, 0.07, 256, 128));
    assert_eq!((t.seed, t.weight_decay, t.dropout), (888, 0.0001, 0.5));
}

#[test]
fn presets_cover_every_published_dataset() {
    let expect = [
        ("proteins", 0.01, 0.07),
        ("dd", 0.05, 0.01),
        ("D&D", 0.05, 0.01),
        ("collab", 0.01, 0.3),
        ("REDDIT-BINARY", 0.05, 0.1),
        ("rdt-m5k", 0.05, 0.1),
        ("imdb-b", 0.05, 0.5),
        ("IMDB-MULTI", 0.05, 0.1),
        ("cora", 0.001, 0.5),
        ("citeseer", 0.01, 0.8),
        ("pubmed", 0.01, 0.5),
    ];
    for (name, lr, tau) in expect {
        let m = preset(name).unwrap();
        assert_eq!(m["lr"].parse::<f64>().unwrap(), lr, "{name}");
        assert_eq!(m["temperature"].parse::<f64>().unwrap(), tau, "{name}");
    }
    assert_eq!(preset("cora").unwrap()["hidden"], "64");
    assert_eq!(preset("cora").unwrap()["seed"], "123");
    assert_eq!(preset("imdb-b").unwrap()["features"], "one_hot_degree");
    assert_eq!(preset("collab").unwrap()["features"], "constant");
    assert!(preset("nci1").is_err());
}

#[test]
fn finetune_flags_default_to_120_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgcl(&[
        "finetune",
        "--data",
        fixture("MUTAG").to_str().unwrap(),
        "--encoders",
        "gin",
        "--hidden",
        "16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("finetuned 120 steps"));
}
