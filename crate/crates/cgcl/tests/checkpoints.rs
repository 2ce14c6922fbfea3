//! Checkpoint persistence: exact round trips and refusal of damaged files.

use cgcl::checkpoint::{spec_from_string, spec_to_string, Checkpoint};
use cgcl_core::encoder::{EncoderKind, EncoderSpec, Init};
use cgcl_core::synthetic::RingsVsTrees;
use cgcl_core::trainer::{NoClock, TrainConfig, TrainMode, Trainer};

fn trained() -> Checkpoint {
    let graphs = RingsVsTrees { count: 12, ..RingsVsTrees::default() }.generate(2).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        hidden_dim: 8,
        batch_size: 6,
        ..TrainConfig::graph_level()
    };
    let specs = cfg.encoder_specs(&[EncoderKind::Gat, EncoderKind::Gin], graphs[0].feature_dim());
    let mut t = Trainer::graph_level(&graphs, specs.clone(), cfg).unwrap();
    t.run(&NoClock).unwrap();
    Checkpoint::from_state(TrainMode::GraphLevel, 0, "abc123", &specs, t.state())
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ck = trained();
    ck.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.train_state().unwrap().epoch, 2);
}

#[test]
fn params_only_checkpoints_round_trip_but_cannot_resume() {
    let ck = trained();
    let p = Checkpoint::params_only(ck.mode, 3, "d", &ck.specs, 1, &ck.params);
    let back = Checkpoint::from_bytes(&p.to_bytes()).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.train_state().unwrap_err().exit_code(), 2);
}

#[test]
fn manifest_is_readable_text() {
    let bytes = trained().to_bytes();
    let text = String::from_utf8_lossy(&bytes);
    let manifest: Vec<&str> = text.lines().take_while(|l| *l != "end").collect();
    assert_eq!(manifest[0], "cgcl-checkpoint");
    assert!(manifest.contains(&"format_version=1"));
    assert!(manifest.contains(&"config_digest=abc123"));
    assert!(manifest.iter().any(|l| l.starts_with("encoder.0=gat ")));
    assert!(manifest.iter().any(|l| l.starts_with("tensor.0=params.0.layer0.head0.weight ")));
}

#[test]
fn flipped_blob_byte_is_refused_with_digest_mismatch() {
    let mut bytes = trained().to_bytes();
    let n = bytes.len();
    bytes[n - 3] ^= 0x10;
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(err.contains("digest mismatch"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, &bytes).unwrap();
    let e = Checkpoint::load(&path).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("digest mismatch"));
}

#[test]
fn other_format_versions_are_refused() {
    let bytes = trained().to_bytes();
    let text = String::from_utf8_lossy(&bytes).replacen("format_version=1", "format_version=2", 1);
    let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err();
    assert!(err.contains("format version 2"), "{err}");
}

#[test]
fn truncated_files_are_refused() {
    let bytes = trained().to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"hello").is_err());
}

#[test]
fn spec_strings_round_trip() {
    for kind in [EncoderKind::Gcn, EncoderKind::Gin, EncoderKind::Gat] {
        for s in [
            EncoderSpec::graph_level(kind, 7, 128),
            EncoderSpec {
                init: Init::Constant(10.0),
                gat_heads: 2,
                gin_eps: 0.25,
                ..EncoderSpec::node_level(kind, 1433, 64)
            },
        ] {
            assert_eq!(spec_from_string(&spec_to_string(&s)).unwrap(), s);
        }
    }
}
