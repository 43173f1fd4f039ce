//! Flat `section.key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known;
//! duplicates are rejected. [`TrainConfig::to_text`] writes the canonical
//! form, which parses back to an equal config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversarial::{AdaptationMode, ModelConfig};
use crate::data::ShiftSpec;
use crate::error::{Error, Result};
use crate::train::schedule::TrainSchedule;
use crate::vit::{InitScheme, ViTConfig};

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated oriented bars (the target side gets the configured shift).
    Builtin,
    /// Class-per-subdirectory tree, or a flat directory of images.
    Dir(PathBuf),
    /// `relative_path<TAB>label` manifest file.
    Manifest(PathBuf),
}

impl DataSource {
    /// `builtin`, an existing file (manifest) or a directory.
    pub fn parse(s: &str) -> Self {
        if s == "builtin" {
            DataSource::Builtin
        } else if Path::new(s).is_file() {
            DataSource::Manifest(PathBuf::from(s))
        } else {
            DataSource::Dir(PathBuf::from(s))
        }
    }

    fn as_text(&self) -> String {
        match self {
            DataSource::Builtin => "builtin".to_string(),
            DataSource::Dir(p) | DataSource::Manifest(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub target: DataSource,
    pub classes: usize,
    pub n_per_class: usize,
    pub target_n_per_class: usize,
    pub seed: u64,
    pub shift: ShiftSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub schedule: TrainSchedule,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Record real epoch durations in `wall_ms`; off keeps output byte-stable.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::reference(AdaptationMode::Dann, 42)
    }
}

impl TrainConfig {
    /// The reference synthetic task: 16×16 oriented bars, K=4, target
    /// rotated 35° with +0.15 intensity bias and σ=0.05 noise; a depth-2,
    /// width-32, 4-head ViT trained for 30 epochs.
    pub fn reference(mode: AdaptationMode, seed: u64) -> Self {
        Self {
            model: ModelConfig {
                vit: ViTConfig {
                    image_h: 16,
                    image_w: 16,
                    channels: 1,
                    patch: 4,
                    embed_dim: 32,
                    heads: 4,
                    depth: 2,
                    mlp_ratio: 4.0,
                    feature_dim: 32,
                    init_seed: seed,
                    init: InitScheme::Wide,
                },
                num_classes: 4,
                classifier_hidden: 64,
                disc_hidden: 64,
                mode,
                head_seed: seed.wrapping_add(1),
            },
            data: DataConfig {
                source: DataSource::Builtin,
                target: DataSource::Builtin,
                classes: 4,
                n_per_class: 64,
                target_n_per_class: 64,
                seed,
                shift: ShiftSpec {
                    rotation_deg: 35.0,
                    intensity_gain: 1.0,
                    intensity_bias: 0.15,
                    noise_sigma: 0.05,
                    background_level: 0.0,
                    seed: seed.wrapping_add(2),
                },
            },
            schedule: TrainSchedule::default(),
            batch: 8,
            seed,
            clip: 0.0,
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.data.shift.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("schedule.batch must be >= 1".into()));
        }
        if !(self.clip >= 0.0) {
            return Err(Error::Config("schedule.clip must be >= 0".into()));
        }
        let builtin = self.data.source == DataSource::Builtin || self.data.target == DataSource::Builtin;
        if builtin {
            let v = &self.model.vit;
            if v.image_h != v.image_w || v.channels != 1 {
                return Err(Error::Config(
                    "builtin data is square single-channel; set model.image_h = model.image_w and model.channels = 1"
                        .into(),
                ));
            }
            if self.data.classes != self.model.num_classes {
                return Err(Error::Config(format!(
                    "data.classes = {} but the model has {} classes",
                    self.data.classes, self.model.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses config text; keys not present keep their defaults. Seeds not
    /// given explicitly derive from `schedule.seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let seed: u64 = kv.take("schedule.seed")?.unwrap_or(42);
        let mode: AdaptationMode = kv.take("adaptation.mode")?.unwrap_or(AdaptationMode::Dann);
        let mut c = Self::reference(mode, seed);

        let v = &mut c.model.vit;
        kv.set("model.image_h", &mut v.image_h)?;
        kv.set("model.image_w", &mut v.image_w)?;
        kv.set("model.channels", &mut v.channels)?;
        kv.set("model.patch", &mut v.patch)?;
        kv.set("model.embed_dim", &mut v.embed_dim)?;
        kv.set("model.heads", &mut v.heads)?;
        kv.set("model.depth", &mut v.depth)?;
        kv.set("model.mlp_ratio", &mut v.mlp_ratio)?;
        kv.set("model.feature_dim", &mut v.feature_dim)?;
        kv.set("model.init_seed", &mut v.init_seed)?;
        kv.set("model.init", &mut v.init)?;
        let m = &mut c.model;
        kv.set("model.classes", &mut m.num_classes)?;
        kv.set("model.classifier_hidden", &mut m.classifier_hidden)?;
        kv.set("model.disc_hidden", &mut m.disc_hidden)?;
        kv.set("model.head_seed", &mut m.head_seed)?;

        let d = &mut c.data;
        if let Some(s) = kv.take::<String>("data.source")? {
            d.source = DataSource::parse(&s);
        }
        if let Some(s) = kv.take::<String>("data.target")? {
            d.target = DataSource::parse(&s);
        }
        match kv.take::<usize>("data.classes")? {
            Some(k) => d.classes = k,
            None => d.classes = c.model.num_classes,
        }
        kv.set("data.n_per_class", &mut d.n_per_class)?;
        d.target_n_per_class = d.n_per_class;
        kv.set("data.target_n_per_class", &mut d.target_n_per_class)?;
        kv.set("data.seed", &mut d.seed)?;
        let s = &mut d.shift;
        kv.set("data.shift.rotation_deg", &mut s.rotation_deg)?;
        kv.set("data.shift.intensity_gain", &mut s.intensity_gain)?;
        kv.set("data.shift.intensity_bias", &mut s.intensity_bias)?;
        kv.set("data.shift.noise_sigma", &mut s.noise_sigma)?;
        kv.set("data.shift.background_level", &mut s.background_level)?;
        kv.set("data.shift.seed", &mut s.seed)?;

        let sc = &mut c.schedule;
        kv.set("schedule.eta0", &mut sc.eta0)?;
        kv.set("schedule.theta", &mut sc.theta)?;
        kv.set("schedule.beta", &mut sc.beta)?;
        kv.set("schedule.delta", &mut sc.delta)?;
        kv.set("schedule.momentum", &mut sc.momentum)?;
        kv.set("schedule.epochs", &mut sc.total_epochs)?;
        kv.set("schedule.batch", &mut c.batch)?;
        kv.set("schedule.clip", &mut c.clip)?;
        kv.set("output.wall_clock", &mut c.wall_clock)?;

        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form listing every key.
    pub fn to_text(&self) -> String {
        let v = &self.model.vit;
        let m = &self.model;
        let d = &self.data;
        let s = &self.data.shift;
        let sc = &self.schedule;
        let mut out = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(out, "{k} = {v}").expect("string write");
        };
        line("model.image_h", &v.image_h);
        line("model.image_w", &v.image_w);
        line("model.channels", &v.channels);
        line("model.patch", &v.patch);
        line("model.embed_dim", &v.embed_dim);
        line("model.heads", &v.heads);
        line("model.depth", &v.depth);
        line("model.mlp_ratio", &v.mlp_ratio);
        line("model.feature_dim", &v.feature_dim);
        line("model.init_seed", &v.init_seed);
        line("model.init", &v.init);
        line("model.classes", &m.num_classes);
        line("model.classifier_hidden", &m.classifier_hidden);
        line("model.disc_hidden", &m.disc_hidden);
        line("model.head_seed", &m.head_seed);
        line("adaptation.mode", &m.mode);
        line("data.source", &d.source.as_text());
        line("data.target", &d.target.as_text());
        line("data.classes", &d.classes);
        line("data.n_per_class", &d.n_per_class);
        line("data.target_n_per_class", &d.target_n_per_class);
        line("data.seed", &d.seed);
        line("data.shift.rotation_deg", &s.rotation_deg);
        line("data.shift.intensity_gain", &s.intensity_gain);
        line("data.shift.intensity_bias", &s.intensity_bias);
        line("data.shift.noise_sigma", &s.noise_sigma);
        line("data.shift.background_level", &s.background_level);
        line("data.shift.seed", &s.seed);
        line("schedule.eta0", &sc.eta0);
        line("schedule.theta", &sc.theta);
        line("schedule.beta", &sc.beta);
        line("schedule.delta", &sc.delta);
        line("schedule.momentum", &sc.momentum);
        line("schedule.epochs", &sc.total_epochs);
        line("schedule.batch", &self.batch);
        line("schedule.seed", &self.seed);
        line("schedule.clip", &self.clip);
        line("output.wall_clock", &self.wall_clock);
        out
    }
}

struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected 'section.key = value'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.contains('.') {
                return Err(Error::Config(format!("line {lineno}: key '{k}' must be section.key")));
            }
            if entries.insert(k.to_string(), (v.to_string(), lineno)).is_some() {
                return Err(Error::Config(format!("line {lineno}: duplicate key '{k}'")));
            }
        }
        Ok(Self { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, lineno)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {lineno}: invalid value '{v}' for {key}"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let unknown: Vec<String> = self
            .entries
            .iter()
            .map(|(k, (_, l))| format!("'{k}' (line {l})"))
            .collect();
        Err(Error::Config(format!("unknown config key(s): {}", unknown.join(", "))))
    }
}
