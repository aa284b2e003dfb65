//! The flat run configuration: network, blocks, optimizer, seed and paths.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pointattn::kv::{self, parse_value, KvEntry};
use pointattn::pipeline::{BlockSpec, TrainSettings};
use pointattn::{Error, NetworkConfig, Result};

pub const BLOCK_KEYS: &[(&str, &str)] = &[
    ("footprint", "block side along x and y, meters"),
    ("padding", "margin gathered around each block, meters"),
    ("stride", "distance between sliding windows at inference, meters"),
];

pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("epochs", "training epochs"),
    ("batch_size", "blocks per optimizer step"),
    ("optimizer", "adam or sgd (sgd uses momentum beta1)"),
    ("lr", "initial learning rate"),
    ("beta1", "first-moment decay (momentum for sgd)"),
    ("beta2", "second-moment decay"),
    ("decay_rate", "learning-rate decay factor"),
    ("decay_step", "epochs between learning-rate decays"),
    ("class_weighting", "weight the loss by inverse class frequency (true/false)"),
    ("seed", "seed for initialisation, sampling and shuffling"),
];

pub const PATH_KEYS: &[(&str, &str)] = &[
    ("data", "labeled training clouds, comma-separated"),
    ("recipe", "synthetic scene recipe used when no data is given"),
    ("test_recipe", "synthetic recipe for the ablation test scenes"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub blocks: BlockSpec,
    pub train: TrainSettings,
    pub data: Vec<PathBuf>,
    pub recipe: Option<PathBuf>,
    pub test_recipe: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let network = NetworkConfig::desk(3);
        Self {
            blocks: BlockSpec {
                points_per_block: network.num_points[0],
                ..BlockSpec::default()
            },
            network,
            train: TrainSettings::default(),
            data: Vec::new(),
            recipe: None,
            test_recipe: None,
        }
    }
}

/// Every key with its description, grouped for `--help`.
pub fn schema_help() -> String {
    let mut s = String::from("Config keys (key = value, one per line, # comments):\n");
    let groups: [(&str, &[(&str, &str)]); 4] = [
        ("network", NetworkConfig::KEYS),
        ("blocks", BLOCK_KEYS),
        ("training", TRAIN_KEYS),
        ("paths", PATH_KEYS),
    ];
    for (name, keys) in groups {
        let _ = writeln!(s, "\n  [{name}]");
        for (k, d) in keys {
            let _ = writeln!(s, "  {k:<20} {d}");
        }
    }
    s
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        if self.network.set(key, value)? {
            self.blocks.points_per_block = self.network.num_points[0];
            return Ok(());
        }
        let opt = &mut self.train.optimizer;
        match key {
            "footprint" => self.blocks.footprint = parse_value(key, value)?,
            "padding" => self.blocks.padding = parse_value(key, value)?,
            "stride" => self.blocks.stride = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "optimizer" => opt.kind = parse_value(key, value)?,
            "lr" => opt.lr = parse_value(key, value)?,
            "beta1" => opt.beta1 = parse_value(key, value)?,
            "beta2" => opt.beta2 = parse_value(key, value)?,
            "decay_rate" => self.train.decay_rate = parse_value(key, value)?,
            "decay_step" => self.train.decay_step = parse_value(key, value)?,
            "class_weighting" => self.train.class_weighting = parse_value(key, value)?,
            "seed" => self.train.seed = parse_value(key, value)?,
            "data" => {
                self.data = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| base.join(v))
                    .collect()
            }
            "recipe" => self.recipe = Some(base.join(value)),
            "test_recipe" => self.test_recipe = Some(base.join(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by `entries`. Relative paths resolve against
    /// `base`.
    pub fn from_entries(entries: &[KvEntry], base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for e in entries {
            cfg.set(&e.key, &e.value, base).map_err(|err| match err {
                Error::Config(m) => Error::Config(format!("line {}: {m}", e.line)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_entries(&kv::read_kv(path)?, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.blocks.validate()?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(t.optimizer.lr >= 0.0 && t.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", t.optimizer.lr)));
        }
        if !(t.decay_rate > 0.0 && t.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must lie in (0, 1], got {}", t.decay_rate)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = self.network.to_kv();
        let b = &self.blocks;
        let t = &self.train;
        let o = &t.optimizer;
        let _ = writeln!(s, "footprint = {}\npadding = {}\nstride = {}", b.footprint, b.padding, b.stride);
        let _ = writeln!(s, "epochs = {}\nbatch_size = {}", t.epochs, t.batch_size);
        let _ = writeln!(s, "optimizer = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}", o.kind, o.lr, o.beta1, o.beta2);
        let _ = writeln!(s, "decay_rate = {}\ndecay_step = {}", t.decay_rate, t.decay_step);
        let _ = writeln!(s, "class_weighting = {}\nseed = {}", t.class_weighting, t.seed);
        s
    }
}
