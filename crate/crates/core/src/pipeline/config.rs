//! Run configuration: a flat JSON object with dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::curriculum::CourseConfig;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::hin::Schema;
use crate::metapath::MetaPath;
use crate::sampler::SamplerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset label used in metric tables.
    pub name: String,
    /// Schema JSON; relation files are resolved next to it.
    pub schema: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 64,
            walks_per_node: 10,
            walk_length: 20,
            window: 2,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Longest sequence the precursor-position table covers.
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            heads: 2,
            layers: 2,
            d_ff: 128,
            max_positions: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_neg: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_neg: 1000 }
    }
}

pub const ABLATION_VARIANTS: [&str; 8] = [
    "full",
    "no-mnp",
    "no-mep",
    "no-mtp",
    "no-scl",
    "multi-task",
    "reverse-courses",
    "no-pretrain",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<String>,
    /// Training seeds; empty means the root seed only.
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            variants: ABLATION_VARIANTS[..7].iter().map(|s| s.to_string()).collect(),
            seeds: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Empty means the list declared in the schema file.
    pub metapaths: Vec<String>,
    pub embed: EmbedConfig,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub train: CourseConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig {
                name: "dataset".into(),
                schema: PathBuf::new(),
            },
            metapaths: vec![],
            embed: EmbedConfig::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            train: CourseConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            seed: 2023,
            out: None,
        }
    }
}

/// Keys that exist in the structs but are not user-settable: the course seed
/// always follows the root seed.
const DERIVED_KEYS: [&str; 1] = ["train.seed"];

/// Keys left out of the content hash.
const UNHASHED_KEYS: [&str; 1] = ["out"];

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) if !m.is_empty() || prefix.is_empty() => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, x, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten_into("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap();
        let mut node = &mut root;
        for p in parts {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("keys are checked against the defaults");
        }
        node.insert(last.to_string(), v.clone());
    }
    Value::Object(root)
}

/// Parse an override value: JSON when it parses, a plain string otherwise.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Every settable key with its default value.
    pub fn default_flat() -> BTreeMap<String, Value> {
        let mut flat = flatten(&serde_json::to_value(RunConfig::default()).expect("serializable"));
        for k in DERIVED_KEYS {
            flat.remove(k);
        }
        flat
    }

    pub fn valid_keys() -> Vec<String> {
        Self::default_flat().into_keys().collect()
    }

    /// The effective configuration as a flat key map.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut flat = flatten(&serde_json::to_value(self).expect("serializable"));
        for k in DERIVED_KEYS {
            flat.remove(k);
        }
        flat
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("serializable") + "\n"
    }

    /// Build from user-provided entries layered over the defaults. Nested
    /// objects are accepted and flattened.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Value)>) -> Result<RunConfig> {
        let mut flat = Self::default_flat();
        for (key, value) in entries {
            let mut sub = BTreeMap::new();
            flatten_into(&key, &value, &mut sub);
            for (k, v) in sub {
                if !flat.contains_key(&k) {
                    return Err(Error::Config(format!(
                        "unknown key {k:?}; valid keys: {}",
                        Self::valid_keys().join(", ")
                    )));
                }
                flat.insert(k, v);
            }
        }
        let mut cfg: RunConfig = serde_json::from_value(unflatten(&flat))
            .map_err(|e| Error::Config(format!("invalid value: {e}")))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    /// Read a config file. Relative paths inside it are resolved against the
    /// file's directory. Only structural checks run here; see [`validate`].
    ///
    /// [`validate`]: RunConfig::validate
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(m) = v else {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        };
        let mut cfg = Self::from_entries(m)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(parent).map_err(|e| Error::io(parent, e))?;
        if !cfg.data.schema.as_os_str().is_empty() && cfg.data.schema.is_relative() {
            cfg.data.schema = normalize(&base.join(&cfg.data.schema));
        }
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(normalize(&base.join(out)));
            }
        }
        Ok(cfg)
    }

    /// Apply `key=value` overrides.
    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<RunConfig> {
        let mut entries: Vec<(String, Value)> = self.to_flat().into_iter().collect();
        entries.extend(overrides.iter().cloned());
        Self::from_entries(entries)
    }

    /// Content hash over every key except the output directory; independent
    /// of key order in the source file.
    pub fn hash(&self) -> String {
        let mut flat = self.to_flat();
        for k in UNHASHED_KEYS {
            flat.remove(k);
        }
        sha256_hex(serde_json::to_string(&flat).expect("serializable").as_bytes())[..16].to_string()
    }

    /// Hash of the keys under the given prefixes (`"train."`) or exact names.
    pub fn hash_of(&self, selectors: &[&str]) -> String {
        let flat: BTreeMap<String, Value> = self
            .to_flat()
            .into_iter()
            .filter(|(k, _)| selectors.iter().any(|s| if s.ends_with('.') { k.starts_with(s) } else { k == s }))
            .collect();
        sha256_hex(serde_json::to_string(&flat).expect("serializable").as_bytes())[..16].to_string()
    }

    pub fn schema(&self) -> Result<Schema> {
        if self.data.schema.as_os_str().is_empty() {
            return Err(Error::Config("data.schema is required".into()));
        }
        if !self.data.schema.is_file() {
            return Err(Error::Config(format!("schema file {} does not exist", self.data.schema.display())));
        }
        Schema::from_json_file(&self.data.schema).map_err(|e| Error::Config(e.to_string()))
    }

    /// Configured meta-paths, falling back to the schema's list.
    pub fn metapath_names(&self, schema: &Schema) -> Vec<String> {
        if self.metapaths.is_empty() {
            schema.metapaths.clone()
        } else {
            self.metapaths.clone()
        }
    }

    pub fn parse_metapaths(&self, schema: &Schema) -> Result<Vec<MetaPath>> {
        let names = self.metapath_names(schema);
        if names.is_empty() {
            return Err(Error::Config("no meta-paths configured (set `metapaths` or list them in the schema)".into()));
        }
        names
            .iter()
            .map(|n| MetaPath::parse(n, schema).map_err(|e| Error::Config(e.to_string())))
            .collect()
    }

    /// Constraint checks that do not need the dataset.
    pub fn check(&self) -> Result<()> {
        let m = &self.model;
        if m.d == 0 || m.heads == 0 || m.layers == 0 || m.d_ff == 0 {
            return Err(Error::Config("model.d, model.heads, model.layers and model.d_ff must be positive".into()));
        }
        if !m.d.is_multiple_of(m.heads) {
            return Err(Error::Config(format!(
                "model.d = {} is not divisible by model.heads = {}",
                m.d, m.heads
            )));
        }
        if m.max_positions < 2 {
            return Err(Error::Config("model.max_positions must be at least 2".into()));
        }
        if self.sampler.k == 0 || self.sampler.pool_multiplier == 0 {
            return Err(Error::Config("sampler.k and sampler.pool_multiplier must be positive".into()));
        }
        let e = &self.embed;
        if e.dim == 0 || e.walk_length < 2 || e.walks_per_node == 0 {
            return Err(Error::Config("embed.dim, embed.walks_per_node must be positive and embed.walk_length >= 2".into()));
        }
        if self.eval.n_neg == 0 {
            return Err(Error::Config("eval.n_neg must be positive".into()));
        }
        for v in &self.ablate.variants {
            if !ABLATION_VARIANTS.contains(&v.as_str()) {
                return Err(Error::Config(format!(
                    "unknown ablation variant {v:?}; valid: {}",
                    ABLATION_VARIANTS.join(", ")
                )));
            }
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("train: {m}")),
            other => other,
        })
    }

    /// Full validation, including the referenced schema and meta-paths.
    pub fn validate(&self) -> Result<()> {
        self.check()?;
        let schema = self.schema()?;
        self.parse_metapaths(&schema)?;
        Ok(())
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        if self.ablate.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.ablate.seeds.clone()
        }
    }
}

/// Drop `.` and fold `..` components without touching the filesystem, so the
/// same file gives the same config hash from any working directory.
fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Course settings of one ablation variant.
pub fn ablation_course(base: &CourseConfig, variant: &str, seed: u64) -> Result<CourseConfig> {
    use crate::curriculum::CurriculumMode;
    let mut c = base.clone();
    c.seed = seed;
    match variant {
        "full" => {}
        "no-mnp" => c.w_mnp = 0.0,
        "no-mep" => c.w_mep = 0.0,
        "no-mtp" => c.w_mtp = 0.0,
        "no-scl" => c.w_scl = 0.0,
        "multi-task" => c.mode = CurriculumMode::MultiTask,
        "reverse-courses" => c.mode = CurriculumMode::ReverseCourses,
        "no-pretrain" => {
            c.elementary_epochs = 0;
            c.advanced_epochs = 0;
        }
        other => return Err(Error::Config(format!("unknown ablation variant {other:?}"))),
    }
    Ok(c)
}
