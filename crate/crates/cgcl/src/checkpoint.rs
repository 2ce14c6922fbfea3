//! Checkpoint files.
//!
//! A checkpoint is a UTF-8 manifest of `key=value` lines ending with a line
//! `end`, followed by one binary blob per tensor in manifest order. Each blob
//! is the tensor name (u32 length + bytes), rows and cols (u64 each) and the
//! row-major values, all little-endian. The manifest records a SHA-256 of
//! every tensor's value bytes; a mismatch refuses the load.
//!
//! Final checkpoints also carry the optimizer moments, early-stopping state,
//! best-so-far parameters and convergence log, which is everything training
//! needs to continue from the recorded epoch.

use std::fmt::Write as _;
use std::path::Path;

use cgcl_core::encoder::{EncoderKind, EncoderParams, EncoderSpec, Init, Pooling};
use cgcl_core::optim::AdamState;
use cgcl_core::trainer::{ConvergenceLog, EarlyStopper, LogRow, TrainMode, TrainState};
use cgcl_core::Matrix;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "cgcl-checkpoint";

/// Training state beyond the parameters themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub adam: Vec<AdamState>,
    pub stopper: EarlyStopper,
    pub best: Vec<EncoderParams>,
    pub log: ConvergenceLog,
    pub stopped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mode: TrainMode,
    pub seed: u64,
    /// Training epoch the parameters belong to.
    pub epoch: usize,
    pub config_digest: String,
    pub specs: Vec<EncoderSpec>,
    pub params: Vec<EncoderParams>,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    /// The complete state after `state.epoch` epochs.
    pub fn from_state(mode: TrainMode, seed: u64, digest: &str, specs: &[EncoderSpec], state: &TrainState) -> Self {
        Checkpoint {
            mode,
            seed,
            epoch: state.epoch,
            config_digest: digest.to_string(),
            specs: specs.to_vec(),
            params: state.params.clone(),
            resume: Some(ResumeState {
                adam: state.adam.clone(),
                stopper: state.stopper.clone(),
                best: state.best.clone(),
                log: state.log.clone(),
                stopped: state.stopped,
            }),
        }
    }

    /// Parameters only, e.g. the early-stop snapshot.
    pub fn params_only(
        mode: TrainMode,
        seed: u64,
        digest: &str,
        specs: &[EncoderSpec],
        epoch: usize,
        params: &[EncoderParams],
    ) -> Self {
        Checkpoint {
            mode,
            seed,
            epoch,
            config_digest: digest.to_string(),
            specs: specs.to_vec(),
            params: params.to_vec(),
            resume: None,
        }
    }

    pub fn train_state(&self) -> Result<TrainState> {
        let r = self
            .resume
            .as_ref()
            .ok_or_else(|| CliError::Usage("checkpoint holds parameters only and cannot resume training".into()))?;
        Ok(TrainState {
            epoch: self.epoch,
            params: self.params.clone(),
            adam: r.adam.clone(),
            stopper: r.stopper.clone(),
            best: r.best.clone(),
            log: r.log.clone(),
            stopped: r.stopped,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut m = String::new();
        writeln!(m, "{MAGIC}").unwrap();
        writeln!(m, "format_version={FORMAT_VERSION}").unwrap();
        writeln!(m, "mode={}", self.mode.name()).unwrap();
        writeln!(m, "seed={}", self.seed).unwrap();
        writeln!(m, "epoch={}", self.epoch).unwrap();
        writeln!(m, "config_digest={}", self.config_digest).unwrap();
        writeln!(m, "encoders={}", self.specs.len()).unwrap();
        for (i, s) in self.specs.iter().enumerate() {
            writeln!(m, "encoder.{i}={}", spec_to_string(s)).unwrap();
        }
        match &self.resume {
            None => writeln!(m, "resume=false").unwrap(),
            Some(r) => {
                writeln!(m, "resume=true").unwrap();
                for (i, a) in r.adam.iter().enumerate() {
                    writeln!(m, "adam_t.{i}={}", a.t).unwrap();
                }
                writeln!(m, "stop.patience={}", r.stopper.patience).unwrap();
                writeln!(m, "stop.best_epoch={}", r.stopper.best_epoch).unwrap();
                writeln!(m, "stop.best_loss_bits={:016x}", r.stopper.best_loss.to_bits()).unwrap();
                writeln!(m, "stop.since_best={}", r.stopper.since_best).unwrap();
                writeln!(m, "stop.stopped={}", r.stopped).unwrap();
            }
        }
        writeln!(m, "tensors={}", tensors.len()).unwrap();
        for (i, (name, t)) in tensors.iter().enumerate() {
            writeln!(m, "tensor.{i}={name} {}x{} sha256={}", t.rows(), t.cols(), digest(t)).unwrap();
        }
        writeln!(m, "end").unwrap();

        let mut out = m.into_bytes();
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let split = find_manifest_end(bytes).ok_or("no manifest terminator")?;
        let manifest = std::str::from_utf8(&bytes[..split]).map_err(|_| "manifest is not UTF-8")?;
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err("not a cgcl checkpoint".into());
        }
        let mut kv: Vec<(&str, &str)> = Vec::new();
        for l in lines {
            if l == "end" {
                break;
            }
            kv.push(l.split_once('=').ok_or_else(|| format!("malformed manifest line {l:?}"))?);
        }
        let get = |k: &str| -> std::result::Result<&str, String> {
            kv.iter()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| format!("manifest lacks {k}"))
        };
        let num = |k: &str| -> std::result::Result<u64, String> {
            get(k)?.parse().map_err(|_| format!("manifest {k} is not a number"))
        };
        let version = num("format_version")?;
        if version != FORMAT_VERSION as u64 {
            return Err(format!("format version {version} is not supported (expected {FORMAT_VERSION})"));
        }
        let mode = TrainMode::parse(get("mode")?).ok_or("unknown mode")?;
        let k = num("encoders")? as usize;
        let specs = (0..k)
            .map(|i| spec_from_string(get(&format!("encoder.{i}"))?))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let resume_flag = get("resume")? == "true";

        // Tensors, in manifest order.
        let count = num("tensors")? as usize;
        let mut pos = split;
        let mut tensors: Vec<(String, Matrix)> = Vec::with_capacity(count);
        for i in 0..count {
            let entry = get(&format!("tensor.{i}"))?;
            let mut parts = entry.split(' ');
            let (name, shape, sum) = (parts.next(), parts.next(), parts.next());
            let (name, shape, sum) = match (name, shape, sum.and_then(|s| s.strip_prefix("sha256="))) {
                (Some(n), Some(s), Some(d)) => (n, s, d),
                _ => return Err(format!("malformed tensor entry {entry:?}")),
            };
            let (blob_name, t) = read_blob(bytes, &mut pos).ok_or_else(|| format!("truncated blob for {name}"))?;
            if blob_name != name {
                return Err(format!("blob {i} is {blob_name}, manifest says {name}"));
            }
            if format!("{}x{}", t.rows(), t.cols()) != shape {
                return Err(format!("{name}: blob shape {}x{} differs from manifest {shape}", t.rows(), t.cols()));
            }
            if digest(&t) != sum {
                return Err(format!("{name}: digest mismatch, checkpoint is corrupted"));
            }
            tensors.push((blob_name, t));
        }
        if pos != bytes.len() {
            return Err("trailing bytes after the last tensor".into());
        }

        let mut it = tensors.into_iter();
        let mut take_group = |prefix: &str| -> std::result::Result<Vec<EncoderParams>, String> {
            specs
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let tensors = s
                        .param_shapes()
                        .into_iter()
                        .map(|(pname, _)| {
                            let expect = format!("{prefix}.{i}.{pname}");
                            match it.next() {
                                Some((n, t)) if n == expect => Ok(t),
                                Some((n, _)) => Err(format!("expected tensor {expect}, found {n}")),
                                None => Err(format!("missing tensor {expect}")),
                            }
                        })
                        .collect::<std::result::Result<Vec<_>, String>>()?;
                    let p = EncoderParams { tensors };
                    p.check(s).map_err(|e| e.to_string())?;
                    Ok(p)
                })
                .collect()
        };
        let params = take_group("params")?;
        let resume = if resume_flag {
            let best = take_group("best")?;
            let m = take_group("adam_m")?;
            let v = take_group("adam_v")?;
            let adam = m
                .into_iter()
                .zip(v)
                .enumerate()
                .map(|(i, (m, v))| {
                    Ok(AdamState {
                        m: m.tensors,
                        v: v.tensors,
                        t: num(&format!("adam_t.{i}"))?,
                    })
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            let (name, log) = it.next().ok_or("missing log tensor")?;
            if name != "log" || (log.cols() != 4 && log.rows() > 0) {
                return Err("malformed log tensor".into());
            }
            let rows = (0..log.rows())
                .map(|r| LogRow {
                    epoch: log.get(r, 0) as usize,
                    encoder: log.get(r, 1) as usize,
                    mean_loss: log.get(r, 2),
                    seconds: log.get(r, 3),
                })
                .collect();
            let bits = u64::from_str_radix(get("stop.best_loss_bits")?, 16).map_err(|_| "bad best loss")?;
            Some(ResumeState {
                adam,
                stopper: EarlyStopper {
                    patience: num("stop.patience")? as usize,
                    best_epoch: num("stop.best_epoch")? as usize,
                    best_loss: f64::from_bits(bits),
                    since_best: num("stop.since_best")? as usize,
                },
                best,
                log: ConvergenceLog { rows },
                stopped: get("stop.stopped")? == "true",
            })
        } else {
            None
        };
        if it.next().is_some() {
            return Err("unexpected extra tensors".into());
        }
        Ok(Checkpoint {
            mode,
            seed: num("seed")?,
            epoch: num("epoch")? as usize,
            config_digest: get("config_digest")?.to_string(),
            specs,
            params,
            resume,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
    }

    fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        let mut group = |prefix: &str, params: &[EncoderParams]| {
            for (i, (s, p)) in self.specs.iter().zip(params).enumerate() {
                for ((pname, _), t) in s.param_shapes().into_iter().zip(&p.tensors) {
                    out.push((format!("{prefix}.{i}.{pname}"), t.clone()));
                }
            }
        };
        group("params", &self.params);
        if let Some(r) = &self.resume {
            group("best", &r.best);
            let m: Vec<EncoderParams> = r.adam.iter().map(|a| EncoderParams { tensors: a.m.clone() }).collect();
            let v: Vec<EncoderParams> = r.adam.iter().map(|a| EncoderParams { tensors: a.v.clone() }).collect();
            group("adam_m", &m);
            group("adam_v", &v);
            let mut log = Matrix::zeros(r.log.rows.len(), 4);
            for (i, row) in r.log.rows.iter().enumerate() {
                log.row_mut(i)
                    .copy_from_slice(&[row.epoch as f64, row.encoder as f64, row.mean_loss, row.seconds]);
            }
            out.push(("log".to_string(), log));
        }
        out
    }
}

fn find_manifest_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"\nend\n";
    bytes.windows(marker.len()).position(|w| w == marker).map(|p| p + marker.len())
}

fn read_blob(bytes: &[u8], pos: &mut usize) -> Option<(String, Matrix)> {
    let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
        let s = bytes.get(*pos..*pos + n)?;
        *pos += n;
        Some(s)
    };
    let len = u32::from_le_bytes(take(pos, 4)?.try_into().ok()?) as usize;
    let name = String::from_utf8(take(pos, len)?.to_vec()).ok()?;
    let rows = u64::from_le_bytes(take(pos, 8)?.try_into().ok()?) as usize;
    let cols = u64::from_le_bytes(take(pos, 8)?.try_into().ok()?) as usize;
    let raw = take(pos, rows.checked_mul(cols)?.checked_mul(8)?)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some((name, Matrix::from_vec(rows, cols, data).ok()?))
}

fn digest(t: &Matrix) -> String {
    let mut h = Sha256::new();
    for v in t.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of arbitrary text, hex encoded.
pub fn text_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn spec_to_string(s: &EncoderSpec) -> String {
    let init = match s.init {
        Init::Xavier => "xavier".to_string(),
        Init::Constant(c) => format!("constant:{c}"),
    };
    let pooling = match s.pooling {
        Pooling::None => "none",
        Pooling::GlobalAdd => "add",
    };
    format!(
        "{} layers={} input={} hidden={} dropout={} pooling={pooling} init={init} gin_eps={} gat_heads={} gat_slope={}",
        s.kind.name(),
        s.num_layers,
        s.input_dim,
        s.hidden_dim,
        s.dropout,
        s.gin_eps,
        s.gat_heads,
        s.gat_slope
    )
}

pub fn spec_from_string(text: &str) -> std::result::Result<EncoderSpec, String> {
    let mut parts = text.split(' ');
    let kind = parts
        .next()
        .and_then(EncoderKind::parse)
        .ok_or_else(|| format!("unknown encoder in {text:?}"))?;
    let mut spec = EncoderSpec::graph_level(kind, 1, 1);
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("malformed encoder field {p:?}"))?;
        let bad = || format!("bad value for {k}: {v:?}");
        match k {
            "layers" => spec.num_layers = v.parse().map_err(|_| bad())?,
            "input" => spec.input_dim = v.parse().map_err(|_| bad())?,
            "hidden" => spec.hidden_dim = v.parse().map_err(|_| bad())?,
            "dropout" => spec.dropout = v.parse().map_err(|_| bad())?,
            "gin_eps" => spec.gin_eps = v.parse().map_err(|_| bad())?,
            "gat_heads" => spec.gat_heads = v.parse().map_err(|_| bad())?,
            "gat_slope" => spec.gat_slope = v.parse().map_err(|_| bad())?,
            "pooling" => {
                spec.pooling = match v {
                    "none" => Pooling::None,
                    "add" => Pooling::GlobalAdd,
                    _ => return Err(bad()),
                }
            }
            "init" => spec.init = parse_init(v).ok_or_else(bad)?,
            _ => return Err(format!("unknown encoder field {k}")),
        }
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// `xavier` or `constant:<value>`.
pub fn parse_init(v: &str) -> Option<Init> {
    match v {
        "xavier" => Some(Init::Xavier),
        _ => v
            .strip_prefix("constant:")
            .and_then(|c| c.parse().ok())
            .filter(|c: &f64| c.is_finite())
            .map(Init::Constant),
    }
}
