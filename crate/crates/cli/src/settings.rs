//! Effective run configuration: built-in defaults, then the config file, then
//! command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use tracing::warn;
use writeback_core::backends::http::{HttpConfig, HttpEmbedder, HttpGenerator};
use writeback_core::backends::mock::{MockEmbedder, MockLlm, OracleWorld, DEFAULT_MOCK_DIM};
use writeback_core::config::{render, KeyValues};
use writeback_core::pipeline::Backends;
use writeback_core::{Embedder, Generator, PipelineConfig};

pub const BACKEND_KEYS: [&str; 12] = [
    "embedder",
    "embed_dim",
    "embed_base_url",
    "embed_model",
    "generator",
    "gen_base_url",
    "gen_model",
    "timeout_secs",
    "max_retries",
    "max_in_flight",
    "http_batch_size",
    "oracle_world",
];

pub const PATH_KEYS: [&str; 9] = ["corpus", "index", "train", "test", "wb_dir", "spec", "grid", "run", "out"];

/// Environment variable holding the API key for HTTP backends.
pub const API_KEY_ENV: &str = "WRITEBACK_API_KEY";

#[derive(Debug, Clone)]
pub struct BackendSettings {
    pub embedder: String,
    pub embed_dim: Option<usize>,
    pub embed_base_url: String,
    pub embed_model: String,
    pub generator: String,
    pub gen_base_url: String,
    pub gen_model: String,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub http_batch_size: usize,
    pub oracle_world: Option<PathBuf>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            embedder: "mock".into(),
            embed_dim: None,
            embed_base_url: http.base_url.clone(),
            embed_model: String::new(),
            generator: "mock".into(),
            gen_base_url: http.base_url,
            gen_model: String::new(),
            timeout_secs: http.timeout_secs,
            max_retries: http.max_retries,
            max_in_flight: http.max_in_flight,
            http_batch_size: http.batch_size,
            oracle_world: None,
        }
    }
}

fn parse<T: std::str::FromStr>(kv: &KeyValues, key: &str, target: &mut T) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = kv.parsed(key)? {
        *target = v;
    }
    Ok(())
}

impl BackendSettings {
    fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut s = Self::default();
        parse(kv, "embedder", &mut s.embedder)?;
        s.embed_dim = kv.parsed("embed_dim")?;
        parse(kv, "embed_base_url", &mut s.embed_base_url)?;
        parse(kv, "embed_model", &mut s.embed_model)?;
        parse(kv, "generator", &mut s.generator)?;
        parse(kv, "gen_base_url", &mut s.gen_base_url)?;
        parse(kv, "gen_model", &mut s.gen_model)?;
        parse(kv, "timeout_secs", &mut s.timeout_secs)?;
        parse(kv, "max_retries", &mut s.max_retries)?;
        parse(kv, "max_in_flight", &mut s.max_in_flight)?;
        parse(kv, "http_batch_size", &mut s.http_batch_size)?;
        s.oracle_world = kv.get("oracle_world").map(PathBuf::from);
        for (key, value) in [("embedder", &s.embedder), ("generator", &s.generator)] {
            if value != "mock" && value != "http" {
                bail!("{key} must be mock or http, got {value:?}");
            }
        }
        Ok(s)
    }

    fn to_kv(&self, kv: &mut KeyValues) {
        kv.insert("embedder", self.embedder.clone());
        if let Some(d) = self.embed_dim {
            kv.insert("embed_dim", d.to_string());
        }
        kv.insert("generator", self.generator.clone());
        if self.embedder == "http" || self.generator == "http" {
            kv.insert("embed_base_url", self.embed_base_url.clone());
            kv.insert("embed_model", self.embed_model.clone());
            kv.insert("gen_base_url", self.gen_base_url.clone());
            kv.insert("gen_model", self.gen_model.clone());
            kv.insert("timeout_secs", self.timeout_secs.to_string());
            kv.insert("max_retries", self.max_retries.to_string());
            kv.insert("max_in_flight", self.max_in_flight.to_string());
            kv.insert("http_batch_size", self.http_batch_size.to_string());
        }
        if let Some(p) = &self.oracle_world {
            kv.insert("oracle_world", p.display().to_string());
        }
    }

    fn http(&self, base_url: &str, model: &str) -> HttpConfig {
        HttpConfig {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            batch_size: self.http_batch_size,
            ..HttpConfig::default()
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self.embedder.as_str() {
            "http" => {
                let cfg = self.http(&self.embed_base_url, &self.embed_model);
                match self.embed_dim {
                    Some(dim) => Arc::new(HttpEmbedder::new(cfg, dim)),
                    None => Arc::new(HttpEmbedder::probe(cfg).context("probing embedding dimension")?),
                }
            }
            _ => {
                let dim = self.embed_dim.unwrap_or(DEFAULT_MOCK_DIM);
                if dim < 8 {
                    bail!("embed_dim must be at least 8 for the mock embedder, got {dim}");
                }
                Arc::new(MockEmbedder::new(dim))
            }
        })
    }

    pub fn generator(&self) -> Result<Arc<dyn Generator>> {
        Ok(match self.generator.as_str() {
            "http" => Arc::new(HttpGenerator::new(self.http(&self.gen_base_url, &self.gen_model))),
            _ => {
                let path = self
                    .oracle_world
                    .as_ref()
                    .context("the mock generator needs --oracle-world (or oracle_world in the config file)")?;
                Arc::new(MockLlm::new(load_world(path)?))
            }
        })
    }

    pub fn backends(&self) -> Result<Backends> {
        let generator = self.generator()?;
        Ok(Backends {
            distiller: generator.clone(),
            generator,
            embedder: self.embedder()?,
        })
    }
}

pub fn load_world(path: &Path) -> Result<OracleWorld> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let world: OracleWorld = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    world.validate().map_err(anyhow::Error::msg)?;
    Ok(world)
}

pub struct Settings {
    pub kv: KeyValues,
    pub pipeline: PipelineConfig,
    pub backend: BackendSettings,
}

impl Settings {
    /// Merges `base` defaults, the optional config file, and flag overrides.
    pub fn load(base: PipelineConfig, config_file: Option<&Path>, overrides: Vec<(&'static str, String)>) -> Result<Self> {
        let mut kv = match config_file {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        for (k, v) in overrides {
            kv.insert(k, v);
        }
        let mut pipeline = base;
        for key in pipeline.apply(&kv)? {
            if !BACKEND_KEYS.contains(&key.as_str()) && !PATH_KEYS.contains(&key.as_str()) {
                warn!(key = %key, "unknown configuration key ignored");
            }
        }
        pipeline.validate()?;
        let backend = BackendSettings::from_kv(&kv)?;
        Ok(Self { kv, pipeline, backend })
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.kv
            .get(key)
            .map(PathBuf::from)
            .with_context(|| format!("missing required path `{key}` (flag --{} or config key)", key.replace('_', "-")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).map(PathBuf::from)
    }

    /// Effective configuration in file syntax, excluding the output directory.
    pub fn echo(&self) -> String {
        let mut kv = self.pipeline.to_key_values();
        self.backend.to_kv(&mut kv);
        for key in PATH_KEYS.iter().filter(|k| **k != "out") {
            if let Some(v) = self.kv.get(key) {
                kv.insert(*key, v);
            }
        }
        render(&kv)
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(writeback_core::pipeline::layout::CONFIG);
        std::fs::write(&path, self.echo()).with_context(|| format!("writing {}", path.display()))
    }
}
