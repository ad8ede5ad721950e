//! Feature mining and point labeling through a multimodal chat endpoint.
//!
//! Three modes: `deterministic` answers from the geometric labeler and never
//! touches the network, `remote` asks the model, and `remote-with-fallback`
//! asks the model but falls back to the geometric labeler when a request
//! fails. Replies are cached on disk by content hash.

pub mod cache;
pub mod render;
pub mod reply;
pub mod transport;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use opcrecipe::features::{builtin_pool, FeatureDef, FeatureError, FeaturePool, FeatureVector, Labeler, TypeTag};
use opcrecipe::geometry::{ControlPoint, LayoutClip};
use opcrecipe::metrics::MetricsError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, ReplyCache};
pub use render::{render_at, render_point_image, RenderConfig, RenderedPointImage};
pub use transport::{ChatRequest, HttpTransport, Transport, TransportError};

pub const MINING_PROMPT: &str = include_str!("../prompts/feature_mining.v1.txt");
pub const LABELING_PROMPT: &str = include_str!("../prompts/feature_labeling.v1.txt");

#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("invalid annotator config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unusable reply ({reason})")]
    Schema { reason: String, raw: String },
    #[error("image encoding: {0}")]
    Image(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Remote,
    #[default]
    Deterministic,
    RemoteWithFallback,
}

impl Mode {
    pub fn is_remote(self) -> bool {
        self != Mode::Deterministic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub mode: Mode,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub timeout_s: f64,
    pub max_parallel: usize,
    pub cache_dir: Option<PathBuf>,
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub render: RenderConfig,
    /// Directory with `feature_mining.v1.txt` / `feature_labeling.v1.txt` overrides.
    pub prompt_dir: Option<PathBuf>,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Deterministic,
            endpoint: None,
            model: "gpt-4o".into(),
            credential_env: "OPC_ANNOTATOR_API_KEY".into(),
            timeout_s: 60.0,
            max_parallel: 4,
            cache_dir: None,
            max_attempts: 3,
            backoff_ms: 500,
            render: RenderConfig::default(),
            prompt_dir: None,
        }
    }
}

impl AnnotatorConfig {
    /// Collects every violation. `credential` is the resolved key, if any.
    pub fn violations(&self, credential: Option<&str>) -> Vec<String> {
        let mut v = Vec::new();
        if self.mode.is_remote() {
            match self.endpoint.as_deref() {
                Some(e) if e.starts_with("http://") || e.starts_with("https://") => {}
                Some(e) => v.push(format!("endpoint `{e}` is not an http(s) URL")),
                None => v.push("remote modes need an endpoint".into()),
            }
            if credential.map_or(true, str::is_empty) {
                v.push(format!("remote modes need a credential in ${}", self.credential_env));
            }
            if self.model.is_empty() {
                v.push("model id is empty".into());
            }
        }
        if !(self.timeout_s > 0.0) {
            v.push("timeout_s must be positive".into());
        }
        if self.max_parallel == 0 {
            v.push("max_parallel must be at least 1".into());
        }
        if self.max_attempts == 0 {
            v.push("max_attempts must be at least 1".into());
        }
        if self.render.canvas_px == 0 || !(self.render.nm_per_px > 0.0) {
            v.push("render canvas must be non-empty".into());
        }
        v
    }
}

/// Where one label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Remote,
    Deterministic,
    /// The reply omitted it; the geometric labeler filled it in.
    Filled,
    /// The request failed; the geometric labeler answered instead.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub vector: FeatureVector,
    pub type_provenance: Provenance,
    pub provenance: Vec<Provenance>,
    pub cached: bool,
    /// Remote labels that differ from the geometric labeler, where it applies.
    pub disagreements: usize,
}

impl AnnotatedPoint {
    /// Labels not supplied by the remote model in a remote mode.
    pub fn flagged(&self) -> usize {
        std::iter::once(&self.type_provenance)
            .chain(&self.provenance)
            .filter(|p| matches!(p, Provenance::Filled | Provenance::Fallback))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningOutcome {
    pub pool: FeaturePool,
    pub malformed: usize,
    pub duplicates: usize,
    /// Duplicates whose description differed from the kept one.
    pub conflicting_descriptions: usize,
}

/// One point to label.
pub struct PointJob<'a> {
    pub clip: &'a LayoutClip,
    pub point: ControlPoint,
    pub image: &'a RenderedPointImage,
}

#[derive(Debug, Default)]
pub struct Stats {
    pub requests: AtomicUsize,
    pub cache_hits: AtomicUsize,
    pub fallbacks: AtomicUsize,
}

pub struct Annotator {
    cfg: AnnotatorConfig,
    transport: Option<Box<dyn Transport>>,
    cache: Option<ReplyCache>,
    mining_prompt: String,
    labeling_prompt: String,
    pub stats: Stats,
}

fn load_template(dir: Option<&Path>, file: &str, builtin: &str) -> Result<String, AnnotatorError> {
    match dir {
        Some(d) => std::fs::read_to_string(d.join(file)).map_err(|e| AnnotatorError::Template(format!("{}: {e}", d.join(file).display()))),
        None => Ok(builtin.to_string()),
    }
}

/// Runs `f` over `items` with at most `workers` calls in flight; results keep input order.
pub fn bounded_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

impl Annotator {
    /// Builds the HTTP transport for remote modes; the key comes from the environment.
    pub fn new(cfg: AnnotatorConfig) -> Result<Self, AnnotatorError> {
        let credential = std::env::var(&cfg.credential_env).ok();
        let v = cfg.violations(credential.as_deref());
        if !v.is_empty() {
            return Err(AnnotatorError::Config(v));
        }
        let transport: Option<Box<dyn Transport>> = match (cfg.mode.is_remote(), &cfg.endpoint, &credential) {
            (true, Some(e), Some(k)) => Some(Box::new(HttpTransport::new(e, k, Duration::from_secs_f64(cfg.timeout_s)))),
            _ => None,
        };
        Self::build(cfg, transport)
    }

    /// Uses the given transport; endpoint and credential are its business.
    pub fn with_transport(cfg: AnnotatorConfig, transport: Box<dyn Transport>) -> Result<Self, AnnotatorError> {
        let v: Vec<String> = cfg
            .violations(Some("-"))
            .into_iter()
            .filter(|m| !m.contains("endpoint"))
            .collect();
        if !v.is_empty() {
            return Err(AnnotatorError::Config(v));
        }
        Self::build(cfg, Some(transport))
    }

    fn build(cfg: AnnotatorConfig, transport: Option<Box<dyn Transport>>) -> Result<Self, AnnotatorError> {
        let cache = cfg.cache_dir.as_deref().map(ReplyCache::open).transpose()?;
        let dir = cfg.prompt_dir.as_deref();
        Ok(Self {
            mining_prompt: load_template(dir, "feature_mining.v1.txt", MINING_PROMPT)?,
            labeling_prompt: load_template(dir, "feature_labeling.v1.txt", LABELING_PROMPT)?,
            cfg,
            transport,
            cache,
            stats: Stats::default(),
        })
    }

    pub fn config(&self) -> &AnnotatorConfig {
        &self.cfg
    }

    pub fn labeling_prompt(&self, pool: &FeaturePool) -> String {
        let list: Vec<String> = pool.features.iter().map(|f| format!("{}: {}", f.name, f.description)).collect();
        self.labeling_prompt.replace("{{types}}", &pool.types_description).replace("{{features}}", &list.join("\n"))
    }

    fn send(&self, req: &ChatRequest) -> Result<String, AnnotatorError> {
        let t = self.transport.as_ref().ok_or_else(|| AnnotatorError::Config(vec!["no transport configured".into()]))?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.stats.requests.fetch_add(1, Ordering::SeqCst);
            match t.send(req) {
                Ok(text) => return Ok(text),
                Err(TransportError::Body(raw)) => {
                    return Err(AnnotatorError::Schema { reason: "no assistant text in response".into(), raw })
                }
                Err(e) if e.is_retryable() && attempt < self.cfg.max_attempts => {
                    let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("attempt {attempt} failed ({e}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                }
                Err(e) => return Err(AnnotatorError::Transport { attempts: attempt, message: e.to_string() }),
            }
        }
    }

    /// Cached reply or a fresh one; `parse` must accept a reply before it is cached.
    fn ask<T>(&self, key: &str, req: ChatRequest, parse: impl Fn(&str) -> Result<T, AnnotatorError>) -> Result<(T, bool), AnnotatorError> {
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(key)) {
            if let Ok(v) = parse(&entry.reply) {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok((v, true));
            }
        }
        let reply = self.send(&req)?;
        let v = parse(&reply)?;
        if let Some(c) = &self.cache {
            c.put(&CacheEntry { key: key.into(), model: self.cfg.model.clone(), reply })?;
        }
        Ok((v, false))
    }

    /// Pools the features proposed for each image. Earlier images win on
    /// duplicate names; deterministic mode returns the builtin pool.
    pub fn mine_features(&self, images: &[RenderedPointImage]) -> Result<MiningOutcome, AnnotatorError> {
        if !self.cfg.mode.is_remote() {
            return Ok(MiningOutcome { pool: builtin_pool(), malformed: 0, duplicates: 0, conflicting_descriptions: 0 });
        }
        if images.is_empty() {
            return Err(AnnotatorError::Config(vec!["feature mining needs at least one image".into()]));
        }
        let replies = bounded_map(images, self.cfg.max_parallel, |img| {
            let key = cache_key(&img.png, &["#mining"], &self.cfg.model);
            let req = ChatRequest { model: self.cfg.model.clone(), prompt: self.mining_prompt.clone(), image_png: img.png.clone() };
            self.ask(&key, req, reply::parse_mining).map(|(r, _)| r)
        });
        let mut pool = FeaturePool { types_description: String::new(), features: Vec::new(), thresholds: Default::default() };
        let (mut malformed, mut duplicates, mut conflicting) = (0, 0, 0);
        for r in replies {
            let r = r?;
            malformed += r.malformed;
            if pool.types_description.is_empty() {
                pool.types_description = r.types_description.unwrap_or_default();
            }
            for (name, desc) in r.features {
                match pool.features.iter().find(|f| f.name == name) {
                    Some(f) => {
                        duplicates += 1;
                        conflicting += usize::from(f.description != desc);
                    }
                    None => pool.features.push(FeatureDef { name, description: desc }),
                }
            }
        }
        if pool.types_description.is_empty() {
            pool.types_description = builtin_pool().types_description;
        }
        if malformed > 0 {
            log::warn!("feature mining dropped {malformed} malformed entries");
        }
        Ok(MiningOutcome { pool, malformed, duplicates, conflicting_descriptions: conflicting })
    }

    fn geometric(clip: &LayoutClip, pt: &ControlPoint, pool: &FeaturePool, p: Provenance) -> Result<AnnotatedPoint, AnnotatorError> {
        let vector = opcrecipe::features::label_point(clip, pt, pool)?;
        let n = vector.values.len();
        Ok(AnnotatedPoint { vector, type_provenance: p, provenance: vec![p; n], cached: false, disagreements: 0 })
    }

    pub fn annotate_point(&self, job: &PointJob, pool: &FeaturePool) -> Result<AnnotatedPoint, AnnotatorError> {
        if pool.features.is_empty() {
            return Err(AnnotatorError::Config(vec!["feature pool is empty".into()]));
        }
        if !self.cfg.mode.is_remote() {
            return Self::geometric(job.clip, &job.point, pool, Provenance::Deterministic);
        }
        match self.annotate_remote(job, pool) {
            Err(e @ (AnnotatorError::Transport { .. } | AnnotatorError::Schema { .. }))
                if self.cfg.mode == Mode::RemoteWithFallback =>
            {
                log::warn!("point {}: {e}; using the geometric labeler", job.point.id);
                self.stats.fallbacks.fetch_add(1, Ordering::SeqCst);
                Self::geometric(job.clip, &job.point, pool, Provenance::Fallback)
            }
            r => r,
        }
    }

    fn annotate_remote(&self, job: &PointJob, pool: &FeaturePool) -> Result<AnnotatedPoint, AnnotatorError> {
        let names = pool.names();
        let key = cache_key(&job.image.png, &names, &self.cfg.model);
        let req = ChatRequest { model: self.cfg.model.clone(), prompt: self.labeling_prompt(pool), image_png: job.image.png.clone() };
        let (reply, cached) = self.ask(&key, req, reply::parse_labels)?;
        let labeler = Labeler::new(job.clip, pool.thresholds);
        let missing = |name: &str| AnnotatorError::Schema {
            reason: format!("reply omits `{name}` and no geometric predicate can fill it"),
            raw: format!("{reply:?}"),
        };
        let mut values = Vec::with_capacity(names.len());
        let mut provenance = Vec::with_capacity(names.len());
        let mut disagreements = 0;
        for name in &names {
            let geo = labeler.feature(&job.point, name).ok();
            match (reply.values.get(*name), geo) {
                (Some(&v), g) => {
                    disagreements += usize::from(g.is_some_and(|g| g != v));
                    values.push(v);
                    provenance.push(Provenance::Remote);
                }
                (None, Some(g)) => {
                    values.push(g);
                    provenance.push(Provenance::Filled);
                }
                (None, None) => return Err(missing(name)),
            }
        }
        let (type_tag, type_provenance) = match reply.types.as_deref().and_then(TypeTag::parse) {
            Some(t) => (t, Provenance::Remote),
            None => (labeler.type_tag(&job.point)?, Provenance::Filled),
        };
        let vector = FeatureVector { point_id: job.point.id, kind: job.point.kind, type_tag, values };
        Ok(AnnotatedPoint { vector, type_provenance, provenance, cached, disagreements })
    }

    /// Labels every job with at most `max_parallel` requests in flight.
    pub fn annotate_points(&self, jobs: &[PointJob], pool: &FeaturePool) -> Result<Vec<AnnotatedPoint>, AnnotatorError> {
        if !self.cfg.mode.is_remote() {
            return jobs.iter().map(|j| self.annotate_point(j, pool)).collect();
        }
        bounded_map(jobs, self.cfg.max_parallel, |j| self.annotate_point(j, pool)).into_iter().collect()
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/annotator.md")]
mod book {}
