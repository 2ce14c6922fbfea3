//! Run configuration: presets, flat `key=value` files and flag overrides.
//!
//! Sources are merged in order preset, file, flags; later sources win. The
//! merged map is resolved into a [`RunConfig`] before any work starts and is
//! written back out as `resolved-config.txt` in the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cgcl_core::contrastive::Similarity;
use cgcl_core::encoder::{EncoderKind, EncoderSpec, Init};
use cgcl_core::graph::FeatureScheme;
use cgcl_core::trainer::{TrainConfig, TrainMode};

use crate::checkpoint::{parse_init, text_digest};
use crate::error::{read_to_string, CliError, Result};

pub type ConfigMap = BTreeMap<String, String>;

/// Published per-dataset settings: seed, learning rate, weight decay, hidden
/// size, dropout, batch size, temperature and node features for graph-level
/// datasets; the same minus batch size for node-level datasets.
const PRESETS: &[(&str, &str)] = &[
    ("proteins", "mode=graph seed=888 lr=0.01 weight_decay=0.001 hidden=128 dropout=0.5 batch_size=256 temperature=0.07 features=default"),
    ("dd", "mode=graph seed=888 lr=0.05 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.01 features=default"),
    ("mutag", "mode=graph seed=888 lr=0.001 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.07 features=default"),
    ("collab", "mode=graph seed=888 lr=0.01 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.3 features=constant"),
    ("rdt-b", "mode=graph seed=888 lr=0.05 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.1 features=constant"),
    ("rdt-m5k", "mode=graph seed=888 lr=0.05 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.1 features=constant"),
    ("imdb-b", "mode=graph seed=888 lr=0.05 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.5 features=one_hot_degree"),
    ("imdb-m", "mode=graph seed=888 lr=0.05 weight_decay=0.0001 hidden=128 dropout=0.5 batch_size=256 temperature=0.1 features=one_hot_degree"),
    ("cora", "mode=node seed=123 lr=0.001 weight_decay=0.0001 hidden=64 dropout=0.5 temperature=0.5 features=default"),
    ("citeseer", "mode=node seed=123 lr=0.01 weight_decay=0.0001 hidden=64 dropout=0.5 temperature=0.8 features=default"),
    ("pubmed", "mode=node seed=123 lr=0.01 weight_decay=0.0001 hidden=64 dropout=0.5 temperature=0.5 features=default"),
];

const ALIASES: &[(&str, &str)] = &[
    ("d&d", "dd"),
    ("reddit-binary", "rdt-b"),
    ("rdt-binary", "rdt-b"),
    ("reddit-multi-5k", "rdt-m5k"),
    ("rdt-multi-5k", "rdt-m5k"),
    ("imdb-binary", "imdb-b"),
    ("imdb-multi", "imdb-m"),
];

/// Every key a config may set.
pub const KEYS: &[&str] = &[
    "batch_size",
    "data",
    "dataset",
    "dropout",
    "early_stop_patience",
    "encoders",
    "epochs",
    "features",
    "finetune_label_fraction",
    "finetune_lr",
    "finetune_steps",
    "finetune_weight_decay",
    "gat_heads",
    "gin_eps",
    "hidden",
    "init",
    "joint_gradients",
    "layers",
    "lr",
    "mode",
    "node_per_class",
    "node_test",
    "node_val",
    "out",
    "repeats",
    "seed",
    "similarity",
    "target_encoder",
    "temperature",
    "weight_decay",
];

/// Keys that do not affect results and are left out of the config digest.
const UNDIGESTED: &[&str] = &["out", "epochs"];

pub fn preset(name: &str) -> Result<ConfigMap> {
    let lower = name.to_ascii_lowercase();
    let key = ALIASES.iter().find(|(a, _)| *a == lower).map_or(lower.as_str(), |(_, k)| k);
    let (_, body) = PRESETS
        .iter()
        .find(|(n, _)| *n == key)
        .ok_or_else(|| CliError::Usage(format!("unknown dataset preset {name:?}")))?;
    let mut map: ConfigMap = body
        .split(' ')
        .map(|kv| {
            let (k, v) = kv.split_once('=').expect("well-formed preset");
            (k.to_string(), v.to_string())
        })
        .collect();
    map.insert("dataset".into(), key.to_string());
    Ok(map)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Parses flat `key=value` lines; `#` starts a comment.
pub fn parse_config(path: &Path, text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, i + 1, "expected key=value"))?;
        let k = normalize_key(k);
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::parse(path, i + 1, format!("unknown key {k:?}")));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<ConfigMap> {
    parse_config(path, &read_to_string(path)?)
}

pub fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

pub fn render(map: &ConfigMap) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub map: ConfigMap,
    pub dataset: String,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub encoders: Vec<EncoderKind>,
    pub target_encoder: Option<String>,
    pub train: TrainConfig,
    pub layers: usize,
    pub features: FeatureScheme,
    pub init: Init,
    pub gin_eps: f64,
    pub gat_heads: usize,
    pub repeats: usize,
    pub node_per_class: usize,
    pub node_val: usize,
    pub node_test: usize,
    pub finetune_lr: f64,
    pub finetune_weight_decay: f64,
    pub finetune_steps: usize,
    pub finetune_label_fraction: f64,
}

impl RunConfig {
    /// Resolves the merged map. A missing `mode` is inferred from the data
    /// directory: a `meta.tsv` marks node-level data.
    pub fn resolve(mut map: ConfigMap) -> Result<Self> {
        let data = PathBuf::from(
            map.get("data")
                .ok_or_else(|| CliError::Usage("no dataset given (--data)".into()))?,
        );
        if !map.contains_key("mode") {
            let mode = if data.join("meta.tsv").is_file() { "node" } else { "graph" };
            map.insert("mode".into(), mode.into());
        }
        let mode = TrainMode::parse(&map["mode"])
            .ok_or_else(|| CliError::Usage(format!("mode must be graph or node, got {:?}", map["mode"])))?;
        let defaults = match mode {
            TrainMode::GraphLevel => TrainConfig::graph_level(),
            TrainMode::NodeLevel => TrainConfig::node_level(),
        };
        let dataset = match map.get("dataset") {
            Some(d) => d.clone(),
            None => data
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Usage("cannot infer dataset name from --data".into()))?,
        };
        map.insert("dataset".into(), dataset.clone());

        let get = |k: &str| map.get(k).map(String::as_str);
        fn num<T: std::str::FromStr>(k: &str, v: Option<&str>, default: T) -> Result<T> {
            match v {
                None => Ok(default),
                Some(s) => s.parse().map_err(|_| CliError::Usage(format!("{k}: cannot parse {s:?}"))),
            }
        }
        let encoders = match get("encoders") {
            None => Vec::new(),
            Some(s) => s
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    EncoderKind::parse(p)
                        .ok_or_else(|| CliError::Usage(format!("unknown encoder {p:?}; use gcn, gin or gat")))
                })
                .collect::<Result<_>>()?,
        };
        let similarity = match get("similarity").unwrap_or("dot") {
            "dot" => Similarity::Dot,
            "cosine" => Similarity::Cosine,
            s => return Err(CliError::Usage(format!("similarity must be dot or cosine, got {s:?}"))),
        };
        let features = match get("features").unwrap_or("default") {
            "default" => FeatureScheme::Default,
            "constant" => FeatureScheme::Constant,
            "one_hot_degree" => FeatureScheme::OneHotDegree { max_degree: None },
            s => match s.strip_prefix("one_hot_degree:").and_then(|d| d.parse().ok()) {
                Some(d) => FeatureScheme::OneHotDegree { max_degree: Some(d) },
                None => {
                    return Err(CliError::Usage(format!(
                        "features must be default, constant, one_hot_degree or one_hot_degree:<max>, got {s:?}"
                    )))
                }
            },
        };
        let init = match get("init") {
            None => Init::Xavier,
            Some(s) => parse_init(s).ok_or_else(|| CliError::Usage(format!("init must be xavier or constant:<c>, got {s:?}")))?,
        };
        let train = TrainConfig {
            mode,
            seed: num("seed", get("seed"), defaults.seed)?,
            learning_rate: num("lr", get("lr"), defaults.learning_rate)?,
            weight_decay: num("weight_decay", get("weight_decay"), defaults.weight_decay)?,
            batch_size: num("batch_size", get("batch_size"), defaults.batch_size)?,
            epochs: num("epochs", get("epochs"), defaults.epochs)?,
            temperature: num("temperature", get("temperature"), defaults.temperature)?,
            hidden_dim: num("hidden", get("hidden"), defaults.hidden_dim)?,
            dropout: num("dropout", get("dropout"), defaults.dropout)?,
            early_stop_patience: num("early_stop_patience", get("early_stop_patience"), defaults.early_stop_patience)?,
            similarity,
            detach_keys: !num("joint_gradients", get("joint_gradients"), false)?,
        };
        train.validate()?;
        let default_layers = match mode {
            TrainMode::GraphLevel => 3,
            TrainMode::NodeLevel => 2,
        };
        let cfg = RunConfig {
            dataset,
            data,
            out: get("out").map(PathBuf::from),
            encoders,
            target_encoder: get("target_encoder").map(str::to_string),
            train,
            layers: num("layers", get("layers"), default_layers)?,
            features,
            init,
            gin_eps: num("gin_eps", get("gin_eps"), 0.0)?,
            gat_heads: num("gat_heads", get("gat_heads"), 1)?,
            repeats: num("repeats", get("repeats"), 10)?,
            node_per_class: num("node_per_class", get("node_per_class"), 40)?,
            node_val: num("node_val", get("node_val"), 500)?,
            node_test: num("node_test", get("node_test"), 1000)?,
            finetune_lr: num("finetune_lr", get("finetune_lr"), 5e-4)?,
            finetune_weight_decay: num("finetune_weight_decay", get("finetune_weight_decay"), 1e-4)?,
            finetune_steps: num("finetune_steps", get("finetune_steps"), 120)?,
            finetune_label_fraction: num("finetune_label_fraction", get("finetune_label_fraction"), 0.1)?,
            map,
        };
        if cfg.layers == 0 {
            return Err(CliError::Usage("layers must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// The map with every default filled in, as written to the run directory.
    pub fn resolved_map(&self) -> ConfigMap {
        let mut m = self.map.clone();
        let t = &self.train;
        let mut set = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        set("mode", t.mode.name().into());
        set("seed", t.seed.to_string());
        set("lr", t.learning_rate.to_string());
        set("weight_decay", t.weight_decay.to_string());
        set("batch_size", t.batch_size.to_string());
        set("epochs", t.epochs.to_string());
        set("temperature", t.temperature.to_string());
        set("hidden", t.hidden_dim.to_string());
        set("dropout", t.dropout.to_string());
        set("early_stop_patience", t.early_stop_patience.to_string());
        set("similarity", match t.similarity {
            Similarity::Dot => "dot".into(),
            Similarity::Cosine => "cosine".into(),
        });
        set("joint_gradients", (!t.detach_keys).to_string());
        set("layers", self.layers.to_string());
        set("features", match self.features {
            FeatureScheme::Default => "default".into(),
            FeatureScheme::Constant => "constant".into(),
            FeatureScheme::OneHotDegree { max_degree: None } => "one_hot_degree".into(),
            FeatureScheme::OneHotDegree { max_degree: Some(d) } => format!("one_hot_degree:{d}"),
        });
        set("init", match self.init {
            Init::Xavier => "xavier".into(),
            Init::Constant(c) => format!("constant:{c}"),
        });
        set("gin_eps", self.gin_eps.to_string());
        set("gat_heads", self.gat_heads.to_string());
        set("repeats", self.repeats.to_string());
        if !self.encoders.is_empty() {
            set("encoders", self.encoders.iter().map(|k| k.name()).collect::<Vec<_>>().join(","));
        }
        m
    }

    pub fn rendered(&self) -> String {
        render(&self.resolved_map())
    }

    /// SHA-256 over the resolved settings that influence training results.
    pub fn digest(&self) -> String {
        let mut m = self.resolved_map();
        for k in UNDIGESTED {
            m.remove(*k);
        }
        text_digest(&render(&m))
    }

    /// Encoder specs for the configured kinds and input width.
    pub fn encoder_specs(&self, input_dim: usize) -> Vec<EncoderSpec> {
        self.train
            .encoder_specs(&self.encoders, input_dim)
            .into_iter()
            .map(|s| EncoderSpec {
                num_layers: self.layers,
                init: self.init,
                gin_eps: self.gin_eps,
                gat_heads: self.gat_heads,
                ..s
            })
            .collect()
    }
}

/// Index of the encoder named by `target`: a position (`0`, `1`, ..) or a kind
/// (`gin`), which selects the first encoder of that kind.
pub fn target_index(specs: &[EncoderSpec], target: &str) -> Result<usize> {
    if let Ok(i) = target.parse::<usize>() {
        return if i < specs.len() {
            Ok(i)
        } else {
            Err(CliError::Usage(format!("target encoder {i} out of range for {} encoders", specs.len())))
        };
    }
    let kind = EncoderKind::parse(target)
        .ok_or_else(|| CliError::Usage(format!("target encoder {target:?} is neither an index nor gcn/gin/gat")))?;
    specs
        .iter()
        .position(|s| s.kind == kind)
        .ok_or_else(|| CliError::Usage(format!("no {target} encoder in this checkpoint")))
}
