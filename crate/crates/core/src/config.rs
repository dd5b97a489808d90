//! Pipeline configuration.
//!
//! Every setting is a flat dotted key with a documented default. Values are
//! layered as `override > environment > file > default`; the file is TOML
//! (dotted keys or tables). Unknown keys are rejected before anything runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gabor::BankSpec;
use crate::imageio::Layout;
use crate::matching::MetricKind;
use crate::reduce::PcaTarget;

/// Prefix of environment variables that override config keys:
/// `bank.scales` is read from `BIOFUSE_BANK_SCALES`.
pub const ENV_PREFIX: &str = "BIOFUSE_";

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "face.root", default: "", doc: "face dataset root directory" },
    KeySpec { key: "face.layout", default: "orl", doc: "face dataset layout: orl | flat" },
    KeySpec { key: "fingerprint.root", default: "", doc: "fingerprint dataset root (empty: face only)" },
    KeySpec { key: "fingerprint.layout", default: "flat", doc: "fingerprint dataset layout: orl | flat" },
    KeySpec { key: "image.width", default: "92", doc: "working width in pixels" },
    KeySpec { key: "image.height", default: "112", doc: "working height in pixels" },
    KeySpec { key: "bank.scales", default: "5", doc: "number of Gabor scales" },
    KeySpec { key: "bank.orientations", default: "8", doc: "number of Gabor orientations" },
    KeySpec { key: "bank.lambda0", default: "4", doc: "wavelength of the finest scale (pixels)" },
    KeySpec { key: "bank.lambda_ratio", default: "1.4142135623730951", doc: "wavelength ratio between scales" },
    KeySpec { key: "bank.sigma_over_lambda", default: "0.56", doc: "envelope sigma as a fraction of wavelength" },
    KeySpec { key: "bank.gamma", default: "0.5", doc: "spatial aspect ratio" },
    KeySpec { key: "bank.kernel_radius_cap", default: "15", doc: "upper bound on kernel radius (pixels)" },
    KeySpec { key: "features.extractor", default: "gabor", doc: "feature extractor: gabor | pixels | w2dpca" },
    KeySpec { key: "features.downsample", default: "64", doc: "magnitude downsampling factor (perfect square)" },
    KeySpec { key: "w2dpca.components", default: "8", doc: "weighted 2DPCA projection axes (w2dpca extractor)" },
    KeySpec { key: "w2dpca.weights", default: "", doc: "comma-separated per-sample-index weights (empty: all 1)" },
    KeySpec { key: "pca.components", default: "0", doc: "fixed PCA component count (0: use pca.variance)" },
    KeySpec { key: "pca.variance", default: "0.95", doc: "retained variance fraction in (0, 1]" },
    KeySpec { key: "fusion.tanh_c", default: "0.01", doc: "tanh normalization scale" },
    KeySpec { key: "fusion.sigma_floor", default: "1e-8", doc: "lower bound on whitening sigma" },
    KeySpec { key: "split.train_count", default: "0", doc: "training samples per subject (0: half, rounded up)" },
    KeySpec { key: "pairing.mode", default: "modulo", doc: "face/fingerprint subject pairing: modulo | shuffled" },
    KeySpec { key: "pairing.seed", default: "0", doc: "seed for shuffled pairing" },
    KeySpec { key: "match.metric", default: "euclidean", doc: "unimodal metric: euclidean | mahalanobis" },
    KeySpec { key: "match.k", default: "1", doc: "neighbours voting in identification" },
    KeySpec { key: "output.dir", default: "out", doc: "report output directory" },
    KeySpec { key: "model.dir", default: "models", doc: "model bundle directory" },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extractor {
    Gabor,
    Pixels,
    W2dpca,
}

impl FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gabor" => Ok(Extractor::Gabor),
            "pixels" => Ok(Extractor::Pixels),
            "w2dpca" => Ok(Extractor::W2dpca),
            other => Err(Error::Config(format!("unknown extractor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    Modulo,
    Shuffled,
}

impl FromStr for PairingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modulo" => Ok(PairingMode::Modulo),
            "shuffled" => Ok(PairingMode::Shuffled),
            other => Err(Error::Config(format!("unknown pairing mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub face_root: Option<PathBuf>,
    pub face_layout: Layout,
    pub fingerprint_root: Option<PathBuf>,
    pub fingerprint_layout: Layout,
    pub width: usize,
    pub height: usize,
    pub bank: BankSpec,
    pub extractor: Extractor,
    pub downsample: usize,
    pub w2dpca_components: usize,
    pub w2dpca_weights: Vec<f64>,
    pub pca_target: PcaTarget,
    pub tanh_c: f64,
    pub sigma_floor: f64,
    pub train_count: Option<usize>,
    pub pairing: PairingMode,
    pub pairing_seed: u64,
    pub metric: MetricKind,
    pub match_k: usize,
    pub output_dir: PathBuf,
    pub model_dir: PathBuf,
    canonical: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        ConfigBuilder::new().build().expect("defaults are valid")
    }
}

fn key_spec(key: &str) -> Result<&'static KeySpec> {
    KEYS.iter()
        .find(|k| k.key == key)
        .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))
}

/// Layers raw string values before typed parsing.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    file: BTreeMap<String, String>,
    env: BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.file = parse_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(self)
    }

    pub fn toml_str(mut self, text: &str) -> Result<Self> {
        self.file = parse_toml(text)?;
        Ok(self)
    }

    /// Reads `BIOFUSE_*` variables from the given iterator.
    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Result<Self> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let wanted = rest.to_ascii_lowercase();
            let spec = KEYS
                .iter()
                .find(|k| k.key.replace('.', "_") == wanted)
                .ok_or_else(|| Error::Config(format!("unknown config variable {name}")))?;
            self.env.insert(spec.key.to_string(), value);
        }
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Result<Self> {
        key_spec(key)?;
        self.overrides.insert(key.to_string(), value.into());
        Ok(self)
    }

    /// Applies a `key=value` assignment.
    pub fn assign(self, assignment: &str) -> Result<Self> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn build(self) -> Result<PipelineConfig> {
        let mut raw = BTreeMap::new();
        for spec in KEYS {
            let v = self
                .overrides
                .get(spec.key)
                .or_else(|| self.env.get(spec.key))
                .or_else(|| self.file.get(spec.key))
                .cloned()
                .unwrap_or_else(|| spec.default.to_string());
            raw.insert(spec.key.to_string(), v);
        }
        PipelineConfig::from_raw(raw)
    }
}

fn parse_toml(text: &str) -> Result<BTreeMap<String, String>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid config file: {}", e.message())))?;
    let mut out = BTreeMap::new();
    flatten("", &toml::Value::Table(table), &mut out)?;
    Ok(out)
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        scalar => {
            key_spec(prefix)?;
            let s = match scalar {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        toml::Value::Integer(n) => Ok(n.to_string()),
                        toml::Value::Float(f) => Ok(f.to_string()),
                        _ => Err(Error::Config(format!("{prefix}: arrays may only hold numbers"))),
                    })
                    .collect::<Result<Vec<_>>>()?
                    .join(","),
                other => return Err(Error::Config(format!("{prefix}: unsupported value {other}"))),
            };
            out.insert(prefix.to_string(), s);
        }
    }
    Ok(())
}

struct Parser {
    raw: BTreeMap<String, String>,
    canonical: BTreeMap<String, String>,
}

impl Parser {
    fn raw(&self, key: &str) -> &str {
        self.raw[key].trim()
    }

    fn parsed<T: FromStr + ToString>(&mut self, key: &str) -> Result<T> {
        let v = self.raw(key);
        let t: T = v
            .parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))?;
        self.canonical.insert(key.to_string(), t.to_string());
        Ok(t)
    }

    fn positive_usize(&mut self, key: &str) -> Result<usize> {
        let v: usize = self.parsed(key)?;
        if v == 0 {
            return Err(Error::Config(format!("{key} must be at least 1")));
        }
        Ok(v)
    }

    fn positive_f64(&mut self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{key} must be a positive number, got {v}")));
        }
        Ok(v)
    }

    fn text(&mut self, key: &str) -> String {
        let v = self.raw(key).to_string();
        self.canonical.insert(key.to_string(), v.clone());
        v
    }

    fn choice<T: FromStr<Err = Error>>(&mut self, key: &str) -> Result<T> {
        let v = self.text(key);
        v.parse().map_err(|e: Error| match e {
            Error::Config(msg) => Error::Config(format!("{key}: {msg}")),
            other => other,
        })
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let v = self.text(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }
}

impl PipelineConfig {
    fn from_raw(raw: BTreeMap<String, String>) -> Result<Self> {
        let mut p = Parser {
            raw,
            canonical: BTreeMap::new(),
        };
        let bank = BankSpec {
            scales: p.positive_usize("bank.scales")?,
            orientations: p.positive_usize("bank.orientations")?,
            lambda0: p.positive_f64("bank.lambda0")?,
            lambda_ratio: p.positive_f64("bank.lambda_ratio")?,
            sigma_over_lambda: p.positive_f64("bank.sigma_over_lambda")?,
            gamma: p.positive_f64("bank.gamma")?,
            kernel_radius_cap: p.positive_usize("bank.kernel_radius_cap")?,
        };
        let downsample = p.positive_usize("features.downsample")?;
        crate::gabor::downsample_stride(downsample)
            .map_err(|e| Error::Config(format!("features.downsample: {e}")))?;

        let weights_text = p.text("w2dpca.weights");
        let w2dpca_weights = if weights_text.is_empty() {
            Vec::new()
        } else {
            weights_text
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|w| w.is_finite() && *w >= 0.0)
                        .ok_or_else(|| Error::Config(format!("w2dpca.weights: bad weight {w:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if !w2dpca_weights.is_empty() {
            let canon: Vec<String> = w2dpca_weights.iter().map(f64::to_string).collect();
            p.canonical.insert("w2dpca.weights".into(), canon.join(","));
        }

        let components: usize = p.parsed("pca.components")?;
        let variance: f64 = p.parsed("pca.variance")?;
        if !(variance > 0.0 && variance <= 1.0) {
            return Err(Error::Config(format!("pca.variance must be in (0, 1], got {variance}")));
        }
        let pca_target = if components > 0 {
            PcaTarget::Components(components)
        } else {
            PcaTarget::VarianceFraction(variance)
        };
        let train_count: usize = p.parsed("split.train_count")?;

        let cfg = PipelineConfig {
            face_root: p.path("face.root"),
            face_layout: p.choice("face.layout")?,
            fingerprint_root: p.path("fingerprint.root"),
            fingerprint_layout: p.choice("fingerprint.layout")?,
            width: p.positive_usize("image.width")?,
            height: p.positive_usize("image.height")?,
            bank,
            extractor: p.choice("features.extractor")?,
            downsample,
            w2dpca_components: p.positive_usize("w2dpca.components")?,
            w2dpca_weights,
            pca_target,
            tanh_c: p.positive_f64("fusion.tanh_c")?,
            sigma_floor: p.positive_f64("fusion.sigma_floor")?,
            train_count: (train_count > 0).then_some(train_count),
            pairing: p.choice("pairing.mode")?,
            pairing_seed: p.parsed("pairing.seed")?,
            metric: p.choice("match.metric")?,
            match_k: p.positive_usize("match.k")?,
            output_dir: PathBuf::from(p.text("output.dir")),
            model_dir: PathBuf::from(p.text("model.dir")),
            canonical: BTreeMap::new(),
        };
        debug_assert_eq!(p.canonical.len(), KEYS.len());
        Ok(PipelineConfig {
            canonical: p.canonical,
            ..cfg
        })
    }

    /// Key-sorted `key=value` lines with normalized values.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.canonical {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.canonical.get(key).map(String::as_str)
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn digest(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    /// Rebuilds with one key changed.
    pub fn with(&self, key: &str, value: &str) -> Result<PipelineConfig> {
        key_spec(key)?;
        let mut raw = self.canonical.clone();
        raw.insert(key.to_string(), value.to_string());
        PipelineConfig::from_raw(raw)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in hash.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// One line per key: name, default and description.
pub fn key_help() -> String {
    let mut s = String::from("Configuration keys (file < BIOFUSE_* env < --set):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "\"\"" } else { k.default };
        let _ = writeln!(s, "  {:<26} {:<20} {}", k.key, default, k.doc);
    }
    s
}
