//! Plain-text run configuration.
//!
//! ```text
//! # comment
//! [run]
//! seed = 0
//! output_dir = runs/desk
//!
//! [optim]
//! lr = 0.0002
//! ```
//!
//! Every key belongs to a section; unknown sections and keys are errors
//! carrying the line number. Overrides use `section.key` or, when the key
//! name is unique across sections, the bare key.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{Augment, SynthShapesSpec};
use crate::error::{Error, Result};
use crate::latent::Activation;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A directory holding `trainA/` and `trainB/`.
    Folder(PathBuf),
    /// The synthetic shapes dataset, rendered in memory.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
    /// Only `cpu` is available.
    pub device: String,
    /// When false, metrics records carry `wall_time = 0` so logs of
    /// identical runs compare byte for byte.
    pub record_wall_time: bool,
    pub data: DataSource,
    pub image_size: usize,
    pub augment: Augment,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::desk(),
            steps: 2000,
            checkpoint_every: 500,
            output_dir: PathBuf::from("runs/default"),
            device: "cpu".into(),
            record_wall_time: true,
            data: DataSource::Synthetic { count: 256, seed: 0 },
            image_size: 64,
            augment: Augment::default(),
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "run",
        &["seed", "steps", "checkpoint_every", "output_dir", "device", "record_wall_time"],
    ),
    (
        "data",
        &["root", "synthetic", "synthetic_count", "synthetic_seed", "image_size", "flip", "crop"],
    ),
    ("train", &["batch_size", "freeze_scales_to_one"]),
    (
        "mapper",
        &["k", "hidden_sizes", "activation", "use_bias", "lrelu_slope", "scale_shift"],
    ),
    (
        "generator",
        &[
            "base_channels",
            "n_downsample",
            "n_res_blocks",
            "norm",
            "modulated_layers",
            "scale_position",
        ],
    ),
    ("discriminator", &["base_channels", "n_layers", "norm"]),
    ("loss", &["smooth_target"]),
    ("optim", &["lr", "beta1", "beta2", "eps", "decay_start", "decay_end"]),
];

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("cannot parse {v:?} as a boolean")),
    }
}

fn parse_enum<E: DeserializeOwned>(v: &str) -> std::result::Result<E, String> {
    serde_json::from_value(serde_json::Value::String(v.into()))
        .map_err(|_| format!("unknown value {v:?}"))
}

fn enum_text<E: Serialize>(e: &E) -> String {
    match serde_json::to_value(e) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum serializes to a string"),
    }
}

/// Resolve a possibly bare key to `(section, key)`.
pub fn resolve_key(name: &str) -> std::result::Result<(&'static str, &'static str), String> {
    if let Some((sec, key)) = name.split_once('.') {
        let (s, keys) = SECTIONS
            .iter()
            .find(|(s, _)| *s == sec)
            .ok_or_else(|| format!("unknown section [{sec}]"))?;
        let k = keys
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| format!("unknown key {key:?} in section [{sec}]"))?;
        return Ok((s, k));
    }
    let hits: Vec<(&'static str, &'static str)> = SECTIONS
        .iter()
        .flat_map(|(s, keys)| keys.iter().filter(|k| **k == name).map(move |k| (*s, *k)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => Err(format!("unknown key {name:?}")),
        many => Err(format!(
            "key {name:?} is ambiguous; use one of {}",
            many.iter().map(|(s, k)| format!("{s}.{k}")).collect::<Vec<_>>().join(", ")
        )),
    }
}

impl RunConfig {
    /// Assign one value; `section` and `key` must already be resolved.
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match (section, key) {
            ("run", "seed") => t.seed = parse_num(v)?,
            ("run", "steps") => self.steps = parse_num(v)?,
            ("run", "checkpoint_every") => self.checkpoint_every = parse_num(v)?,
            ("run", "output_dir") => self.output_dir = PathBuf::from(v),
            ("run", "device") => {
                if v != "cpu" {
                    return Err(format!("device {v:?} is not available (only cpu)"));
                }
                self.device = v.into();
            }
            ("run", "record_wall_time") => self.record_wall_time = parse_bool(v)?,
            ("data", "root") => self.data = DataSource::Folder(PathBuf::from(v)),
            ("data", "synthetic") => {
                if parse_bool(v)? {
                    if !matches!(self.data, DataSource::Synthetic { .. }) {
                        self.data = DataSource::Synthetic { count: 256, seed: 0 };
                    }
                } else if matches!(self.data, DataSource::Synthetic { .. }) {
                    return Err("synthetic = false requires data.root".into());
                }
            }
            ("data", "synthetic_count") | ("data", "synthetic_seed") => match &mut self.data {
                DataSource::Synthetic { count, seed } => {
                    if key == "synthetic_count" {
                        *count = parse_num(v)?;
                    } else {
                        *seed = parse_num(v)?;
                    }
                }
                DataSource::Folder(_) => return Err(format!("{key} conflicts with data.root")),
            },
            ("data", "image_size") => self.image_size = parse_num(v)?,
            ("data", "flip") => self.augment.flip = parse_bool(v)?,
            ("data", "crop") => self.augment.crop = parse_bool(v)?,
            ("train", "batch_size") => t.batch_size = parse_num(v)?,
            ("train", "freeze_scales_to_one") => t.freeze_scales_to_one = parse_bool(v)?,
            ("mapper", "k") => t.mapper.k = parse_num(v)?,
            ("mapper", "hidden_sizes") => {
                t.mapper.hidden_sizes = if v.trim().is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|p| parse_num(p.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            ("mapper", "activation") => {
                t.mapper.activation = v.parse::<Activation>().map_err(|e| e.to_string())?
            }
            ("mapper", "use_bias") => t.mapper.use_bias = parse_bool(v)?,
            ("mapper", "lrelu_slope") => t.mapper.lrelu_slope = parse_num(v)?,
            ("mapper", "scale_shift") => t.mapper.scale_shift = parse_num(v)?,
            ("generator", "base_channels") => t.generator.base_channels = parse_num(v)?,
            ("generator", "n_downsample") => t.generator.n_downsample = parse_num(v)?,
            ("generator", "n_res_blocks") => t.generator.n_res_blocks = parse_num(v)?,
            ("generator", "norm") => t.generator.norm = parse_enum(v)?,
            ("generator", "modulated_layers") => t.generator.modulated_layers = parse_enum(v)?,
            ("generator", "scale_position") => t.generator.scale_position = parse_enum(v)?,
            ("discriminator", "base_channels") => t.discriminator.base_channels = parse_num(v)?,
            ("discriminator", "n_layers") => t.discriminator.n_layers = parse_num(v)?,
            ("discriminator", "norm") => t.discriminator.norm = parse_enum(v)?,
            ("loss", "smooth_target") => t.loss.smooth_target = parse_num(v)?,
            ("optim", "lr") => t.optim.lr = parse_num(v)?,
            ("optim", "beta1") => t.optim.beta1 = parse_num(v)?,
            ("optim", "beta2") => t.optim.beta2 = parse_num(v)?,
            ("optim", "eps") => t.optim.eps = parse_num(v)?,
            ("optim", "decay_start") => {
                t.optim.decay_start = if v == "none" { None } else { Some(parse_num(v)?) }
            }
            ("optim", "decay_end") => t.optim.decay_end = parse_num(v)?,
            _ => return Err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<&'static str> = None;
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|(s, _)| *s == name)
                        .map(|(s, _)| *s)
                        .ok_or_else(|| err(format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| err(format!("key {key:?} appears before any [section]")))?;
            let (s, k) = resolve_key(&format!("{sec}.{key}")).map_err(err)?;
            if !seen.insert((s, k)) {
                return Err(err(format!("duplicate key {key:?} in section [{s}]")));
            }
            cfg.set(s, k, value).map_err(|m| err(format!("{s}.{k}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply `(name, value)` overrides after the file; names as in
    /// [`resolve_key`].
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (name, value) in overrides {
            let (s, k) = resolve_key(name).map_err(Error::InvalidArgument)?;
            self.set(s, k, value)
                .map_err(|m| Error::InvalidArgument(format!("--{name}: {m}")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        crate::error::ensure!(self.steps >= 1, "run.steps must be >= 1");
        crate::error::ensure!(self.image_size >= 8, "data.image_size must be >= 8");
        let factor = 1usize << self.train.generator.n_downsample;
        crate::error::ensure!(
            self.image_size % factor == 0,
            "data.image_size {} is not divisible by 2^n_downsample = {factor}",
            self.image_size
        );
        if let DataSource::Synthetic { count, seed } = self.data {
            SynthShapesSpec::new(count, self.image_size, seed).validate()?;
        }
        Ok(())
    }

    /// Every effective value, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            out += &format!("[{name}]\n");
            for (k, v) in rows {
                out += &format!("{k} = {v}\n");
            }
            out += "\n";
        };
        section(
            "run",
            vec![
                ("seed", t.seed.to_string()),
                ("steps", self.steps.to_string()),
                ("checkpoint_every", self.checkpoint_every.to_string()),
                ("output_dir", self.output_dir.display().to_string()),
                ("device", self.device.clone()),
                ("record_wall_time", self.record_wall_time.to_string()),
            ],
        );
        let mut data = match &self.data {
            DataSource::Folder(p) => vec![("root", p.display().to_string())],
            DataSource::Synthetic { count, seed } => vec![
                ("synthetic", "true".to_string()),
                ("synthetic_count", count.to_string()),
                ("synthetic_seed", seed.to_string()),
            ],
        };
        data.extend([
            ("image_size", self.image_size.to_string()),
            ("flip", self.augment.flip.to_string()),
            ("crop", self.augment.crop.to_string()),
        ]);
        section("data", data);
        section(
            "train",
            vec![
                ("batch_size", t.batch_size.to_string()),
                ("freeze_scales_to_one", t.freeze_scales_to_one.to_string()),
            ],
        );
        section(
            "mapper",
            vec![
                ("k", t.mapper.k.to_string()),
                (
                    "hidden_sizes",
                    t.mapper.hidden_sizes.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                ),
                ("activation", t.mapper.activation.to_string()),
                ("use_bias", t.mapper.use_bias.to_string()),
                ("lrelu_slope", t.mapper.lrelu_slope.to_string()),
                ("scale_shift", t.mapper.scale_shift.to_string()),
            ],
        );
        section(
            "generator",
            vec![
                ("base_channels", t.generator.base_channels.to_string()),
                ("n_downsample", t.generator.n_downsample.to_string()),
                ("n_res_blocks", t.generator.n_res_blocks.to_string()),
                ("norm", enum_text(&t.generator.norm)),
                ("modulated_layers", enum_text(&t.generator.modulated_layers)),
                ("scale_position", enum_text(&t.generator.scale_position)),
            ],
        );
        section(
            "discriminator",
            vec![
                ("base_channels", t.discriminator.base_channels.to_string()),
                ("n_layers", t.discriminator.n_layers.to_string()),
                ("norm", enum_text(&t.discriminator.norm)),
            ],
        );
        section("loss", vec![("smooth_target", t.loss.smooth_target.to_string())]);
        section(
            "optim",
            vec![
                ("lr", t.optim.lr.to_string()),
                ("beta1", t.optim.beta1.to_string()),
                ("beta2", t.optim.beta2.to_string()),
                ("eps", t.optim.eps.to_string()),
                (
                    "decay_start",
                    t.optim.decay_start.map_or("none".to_string(), |s| s.to_string()),
                ),
                ("decay_end", t.optim.decay_end.to_string()),
            ],
        );
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    }
}
