//! Flat `key=value` configuration shared by the config file and the flags.
//!
//! Every key is also a `--key value` flag (underscores become dashes).
//! Precedence: flags, then the file, then the defaults below.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fastscnn::augment::AugmentConfig;
use fastscnn::blocks::PpmSpec;
use fastscnn::data_io::{LabelMapping, Normalization};
use fastscnn::eval::CategoryMap;
use fastscnn::model::{Mode, ModelConfig, StageSpec};
use fastscnn::train::TrainConfig;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    /// A bare `--flag` means `true`.
    pub switch: bool,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, switch: false }
}

const fn switch(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, switch: true }
}

pub const KEYS: &[Key] = &[
    // model
    key("classes", "19", "number of output classes"),
    key("input", "1024x2048", "input size HxW for summary and bench"),
    key("stages", "6:64:3:2,6:96:3:2,6:128:3:1", "bottleneck groups as t:c:n:s, comma separated"),
    key("ppm_bins", "1,2,3,6", "pyramid pooling bin sizes"),
    key("dropout", "0.1", "dropout before the final classifier conv"),
    switch("zero_skip", "false", "zero the stem-to-fusion skip connection"),
    key("mode", "cls", "inference output: prob or cls"),
    key("seed", "0", "seed for initialization, shuffling and augmentation"),
    key("threads", "1", "worker threads"),
    // data
    key("data", "", "dataset root holding <split>/images and <split>/labels"),
    key("split", "val", "split evaluated by eval"),
    key("train_split", "train", "split used by train"),
    key("val_split", "", "split validated after every epoch (empty: none)"),
    key("label_map", "identity", "identity, cityscapes, or a `raw_id trainId` file"),
    key("normalization", "symmetric", "symmetric or imagenet"),
    key("categories", "auto", "auto, cityscapes or none"),
    // files
    key("weights", "", "weight file to load"),
    key("image", "", "input PNG for infer"),
    key("output", "", "output file (infer, eval, bench)"),
    key("out_dir", "run", "directory for train logs and checkpoints"),
    // training
    key("epochs", "1000", "training epochs"),
    key("batch_size", "2", "samples per iteration"),
    key("base_lr", "0.045", "initial learning rate"),
    key("power", "0.9", "poly schedule exponent"),
    key("momentum", "0.9", "SGD momentum"),
    key("l2", "0.00004", "weight decay on standard and pointwise convs"),
    key("aux_weight", "0.4", "weight of each auxiliary loss"),
    key("augment", "true", "apply the augmentation pipeline"),
    key("scale", "0.5,2.0", "random resize range"),
    key("crop", "512x1024", "training crop HxW"),
    key("flip_p", "0.5", "horizontal flip probability"),
    key("noise_std", "0.02", "per-pixel colour noise std"),
    key("gain", "0.75,1.25", "brightness gain range"),
    // bench
    key("burn_in", "100", "untimed bench frames"),
    key("measured", "100", "timed bench frames"),
];

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// A problem with the invocation itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Parse a config file: `key = value` lines, `#` comments.
pub fn parse_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("{}:{}: expected key=value, got {line:?}", path.display(), n + 1)));
        };
        let k = k.trim().replace('-', "_");
        if !KEYS.iter().any(|key| key.name == k) {
            return Err(usage(format!("{}:{}: unknown key {k:?}", path.display(), n + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(usage(format!("{}:{}: key {k:?} given twice", path.display(), n + 1)));
        }
    }
    Ok(out)
}

/// Effective configuration after merging every source.
#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn merge(file: &BTreeMap<String, String>, flags: &BTreeMap<String, String>) -> Self {
        let values = KEYS
            .iter()
            .map(|k| {
                let v = flags.get(k.name).or_else(|| file.get(k.name)).cloned().unwrap_or_else(|| k.default.to_string());
                (k.name, v)
            })
            .collect();
        Settings { values }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| usage(format!("{key}={v:?}: {e}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, UsageError> {
        self.parse(key)
    }

    pub fn seed(&self) -> Result<u64, UsageError> {
        self.parse("seed")
    }

    pub fn f64(&self, key: &str) -> Result<f64, UsageError> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool, UsageError> {
        match self.raw(key) {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(usage(format!("{key}={v:?}: expected true or false"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.raw(key)).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, UsageError> {
        self.path(key).ok_or_else(|| usage(format!("--{} is required", flag_name(key))))
    }

    pub fn size(&self, key: &str) -> Result<(usize, usize), UsageError> {
        let v = self.raw(key);
        let bad = || usage(format!("{key}={v:?}: expected HxW"));
        let (h, w) = v.split_once('x').ok_or_else(bad)?;
        Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
    }

    pub fn range(&self, key: &str) -> Result<(f64, f64), UsageError> {
        let v = self.raw(key);
        let bad = || usage(format!("{key}={v:?}: expected lo,hi"));
        let (a, b) = v.split_once(',').ok_or_else(bad)?;
        let r: (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if !(r.0 <= r.1) {
            return Err(bad());
        }
        Ok(r)
    }

    pub fn mode(&self) -> Result<Mode, UsageError> {
        self.parse("mode")
    }

    pub fn model(&self, train: bool) -> Result<ModelConfig, UsageError> {
        let (input_h, input_w) = self.size("input")?;
        let stages = self
            .raw("stages")
            .split(',')
            .map(|s| {
                let n: Vec<usize> =
                    s.split(':').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| usage(format!("stages: bad group {s:?}")))?;
                match n[..] {
                    [t, c, n, s] => Ok(StageSpec { t, c, n, s }),
                    _ => Err(usage(format!("stages: group {s:?} needs t:c:n:s"))),
                }
            })
            .collect::<Result<_, _>>()?;
        let bins = self
            .raw("ppm_bins")
            .split(',')
            .map(|b| b.trim().parse().map_err(|_| usage(format!("ppm_bins: bad bin {b:?}"))))
            .collect::<Result<_, _>>()?;
        let dropout = self.f64("dropout")?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(usage(format!("dropout={dropout} must be in [0, 1)")));
        }
        Ok(ModelConfig {
            num_classes: self.usize("classes")?,
            input_h,
            input_w,
            stages,
            ppm: PpmSpec { bins, ..PpmSpec::default() },
            dropout,
            zero_skip: self.bool("zero_skip")?,
            mode: self.mode()?,
            train,
            seed: self.parse("seed")?,
            ..ModelConfig::default()
        })
    }

    pub fn normalization(&self) -> Result<Normalization, UsageError> {
        match self.raw("normalization") {
            "symmetric" => Ok(Normalization::Symmetric),
            "imagenet" => Ok(Normalization::IMAGENET),
            v => Err(usage(format!("normalization={v:?}: expected symmetric or imagenet"))),
        }
    }

    /// The mapping table; file problems are data errors, so the file is
    /// returned for the caller to load.
    pub fn label_map(&self) -> Result<LabelSource, UsageError> {
        Ok(match self.raw("label_map") {
            "identity" => LabelSource::Table(LabelMapping::identity()),
            "cityscapes" => LabelSource::Table(LabelMapping::cityscapes()),
            "" => return Err(usage("label_map must not be empty")),
            path => LabelSource::File(PathBuf::from(path)),
        })
    }

    pub fn categories(&self, classes: usize) -> Result<Option<CategoryMap>, UsageError> {
        match self.raw("categories") {
            "auto" => Ok((classes == 19).then(CategoryMap::cityscapes)),
            "cityscapes" if classes == 19 => Ok(Some(CategoryMap::cityscapes())),
            "cityscapes" => Err(usage(format!("categories=cityscapes needs 19 classes, not {classes}"))),
            "none" => Ok(None),
            v => Err(usage(format!("categories={v:?}: expected auto, cityscapes or none"))),
        }
    }

    pub fn train(&self) -> Result<TrainConfig, UsageError> {
        let augment = if self.bool("augment")? {
            let (crop_h, crop_w) = self.size("crop")?;
            Some(AugmentConfig {
                scale: self.range("scale")?,
                crop_h,
                crop_w,
                flip_p: self.f64("flip_p")?,
                noise_std: self.f64("noise_std")?,
                gain: self.range("gain")?,
            })
        } else {
            None
        };
        Ok(TrainConfig {
            base_lr: self.f64("base_lr")?,
            power: self.f64("power")?,
            momentum: self.f64("momentum")?,
            batch_size: self.usize("batch_size")?,
            l2: self.f64("l2")?,
            aux_weight: self.f64("aux_weight")?,
            epochs: self.usize("epochs")?,
            seed: self.parse("seed")?,
            augment,
        })
    }

    /// `key=value` lines in table order, for echoing into outputs.
    pub fn lines(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (k.name.to_string(), self.values[k.name].clone())).collect()
    }

    pub fn echo(&self, prefix: &str) -> String {
        self.lines().iter().map(|(k, v)| format!("{prefix}{k}={v}\n")).collect()
    }
}

pub enum LabelSource {
    Table(LabelMapping),
    File(PathBuf),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = map(&[("classes", "3"), ("epochs", "5")]);
        let flags = map(&[("classes", "7")]);
        let s = Settings::merge(&file, &flags);
        assert_eq!(s.raw("classes"), "7");
        assert_eq!(s.raw("epochs"), "5");
        assert_eq!(s.raw("base_lr"), "0.045");
    }

    #[test]
    fn file_syntax() {
        let m = parse_file("# comment\nclasses = 3\nzero-skip=true  # trailing\n\n", Path::new("c.txt")).unwrap();
        assert_eq!(m, map(&[("classes", "3"), ("zero_skip", "true")]));
        assert!(parse_file("bogus=1\n", Path::new("c.txt")).unwrap_err().0.contains("unknown key"));
        assert!(parse_file("classes\n", Path::new("c.txt")).is_err());
        assert!(parse_file("seed=1\nseed=2\n", Path::new("c.txt")).is_err());
    }

    #[test]
    fn defaults_match_library_defaults() {
        let s = Settings::merge(&BTreeMap::new(), &BTreeMap::new());
        assert_eq!(s.model(false).unwrap(), ModelConfig::default());
        let t = s.train().unwrap();
        let lib = TrainConfig::default();
        assert_eq!(
            (t.base_lr, t.power, t.momentum, t.l2, t.aux_weight, t.batch_size),
            (lib.base_lr, lib.power, lib.momentum, lib.l2, lib.aux_weight, lib.batch_size)
        );
        assert_eq!(t.augment, Some(AugmentConfig::default()));
    }

    #[test]
    fn typed_values() {
        let s = Settings::merge(&BTreeMap::new(), &map(&[("input", "256x512"), ("stages", "6:64:3:1"), ("gain", "2,1")]));
        assert_eq!(s.size("input").unwrap(), (256, 512));
        assert_eq!(s.model(false).unwrap().stages, vec![StageSpec { t: 6, c: 64, n: 3, s: 1 }]);
        assert!(s.range("gain").is_err());
    }
}
