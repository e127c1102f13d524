//! Uniform access to the external model roles.
//!
//! Four roles sit behind traits: a large multimodal model ([`LmmBackend`]),
//! text-to-image ([`T2iBackend`]), image-to-3D ([`I23dBackend`]) and an
//! embedding model ([`EmbedBackend`]). Background removal is built in
//! ([`matting`]) and may be replaced by a [`MattingBackend`].
//!
//! [`Gateway`] adds the shared policy: precondition checks, a per-role
//! concurrency cap, per-call timeouts, retries with exponential backoff and
//! exactly one [`CallRecord`] per call.

pub mod config;
pub mod http;
pub mod matting;
pub mod mock;
pub mod wire;

use std::fmt;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::idea::{ImageAsset, MeshAsset};
use crate::mesh_io::mesh_digest;

pub use config::{BackendConfig, BackendKind, GatewayConfig};

/// Upper bound on attached images per LMM request.
pub const MAX_IMAGES_PER_REQUEST: usize = 16;

/// Which agent an LMM request serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    PromptGen,
    Select,
    Feedback,
    Caption,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::PromptGen => "prompt_gen",
            AgentRole::Select => "select",
            AgentRole::Feedback => "feedback",
            AgentRole::Caption => "caption",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmmPart {
    Text(String),
    Image(ImageAsset),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmRequest {
    pub role: AgentRole,
    pub system_prompt: String,
    pub parts: Vec<LmmPart>,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl LmmRequest {
    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, LmmPart::Image(_))).count()
    }

    pub fn text_parts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            LmmPart::Text(t) => Some(t.as_str()),
            LmmPart::Image(_) => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageAsset> {
        self.parts.iter().filter_map(|p| match p {
            LmmPart::Image(i) => Some(i),
            LmmPart::Text(_) => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Precondition("LMM request has no parts".into()));
        }
        let n = self.image_count();
        if n > MAX_IMAGES_PER_REQUEST {
            return Err(Error::Precondition(format!(
                "LMM request carries {n} images, limit is {MAX_IMAGES_PER_REQUEST}"
            )));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Precondition(format!("invalid temperature {}", self.temperature)));
        }
        Ok(())
    }
}

pub trait LmmBackend: Send + Sync {
    fn complete(&self, req: &LmmRequest) -> Result<String>;
}

pub trait T2iBackend: Send + Sync {
    fn generate(&self, prompt: &str, n_images: u32, seed: u64) -> Result<Vec<ImageAsset>>;
}

pub trait I23dBackend: Send + Sync {
    fn generate(&self, img: &ImageAsset, seed: u64) -> Result<MeshAsset>;
}

pub trait MattingBackend: Send + Sync {
    fn matte(&self, img: &ImageAsset) -> Result<ImageAsset>;
}

/// Shared embedding space for text, images and meshes.
pub trait EmbedBackend: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    fn embed_image(&self, img: &ImageAsset) -> Result<Vec<f64>>;
    fn embed_mesh(&self, mesh: &MeshAsset) -> Result<Vec<f64>>;
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> f64 {
    2.0
}
fn default_parallel() -> usize {
    4
}

/// Timeout, retry and concurrency policy for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendPolicy {
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Delay before retry `k` (1-based) is `backoff_base_s · 2^(k-1)`.
    #[serde(default = "default_backoff")]
    pub backoff_base_s: f64,
    #[serde(default = "default_parallel")]
    pub parallel_limit: usize,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        Self {
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            backoff_base_s: default_backoff(),
            parallel_limit: default_parallel(),
        }
    }
}

impl BackendPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config(format!("timeout_s must be > 0, got {}", self.timeout_s)));
        }
        if self.parallel_limit < 1 {
            return Err(Error::Config("parallel_limit must be >= 1".into()));
        }
        if !(self.backoff_base_s >= 0.0) {
            return Err(Error::Config("backoff_base_s must be >= 0".into()));
        }
        Ok(())
    }

    fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_s * 2f64.powi(retry as i32 - 1))
    }
}

/// Counting semaphore; permits are owned so they can move into workers.
#[derive(Debug)]
pub struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit(Arc<Semaphore>);

impl Semaphore {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(Self { state: Mutex::new(permits), cv: Condvar::new() })
    }

    pub fn acquire(self: &Arc<Self>) -> Permit {
        let mut free = self.state.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(Arc::clone(self))
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.state.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Backend role of a call record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Lmm,
    T2i,
    Matting,
    I23d,
    Embed,
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackendRole::Lmm => "lmm",
            BackendRole::T2i => "t2i",
            BackendRole::Matting => "matting",
            BackendRole::I23d => "i23d",
            BackendRole::Embed => "embed",
        };
        f.write_str(s)
    }
}

/// One backend exchange as written to the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: BackendRole,
    pub op: String,
    pub request: Value,
    pub response: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub retries: u32,
    pub latency_ms: f64,
}

/// Collector for call records; one per logical task so concurrent fan-out
/// can be merged deterministically afterwards.
#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, r: CallRecord) {
        self.records.lock().expect("call log poisoned").push(r);
    }

    pub fn drain(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.records.lock().expect("call log poisoned"))
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hex SHA-256 over dimensions and raw RGBA bytes.
pub fn image_hash(img: &ImageAsset) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.pixels.as_raw());
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct RoleSlot<B: ?Sized> {
    backend: Arc<B>,
    policy: BackendPolicy,
    sem: Arc<Semaphore>,
}

impl<B: ?Sized> RoleSlot<B> {
    fn new(backend: Arc<B>, policy: BackendPolicy) -> Self {
        let sem = Semaphore::new(policy.parallel_limit.max(1));
        Self { backend, policy, sem }
    }
}

/// Policy-enforcing front for all backends. Cheap to share by reference
/// across threads.
pub struct Gateway {
    lmm: RoleSlot<dyn LmmBackend>,
    t2i: RoleSlot<dyn T2iBackend>,
    i23d: RoleSlot<dyn I23dBackend>,
    embed: RoleSlot<dyn EmbedBackend>,
    matting: Option<RoleSlot<dyn MattingBackend>>,
}

/// Builder for [`Gateway`]; every role defaults to its mock.
pub struct GatewayBuilder {
    lmm: (Arc<dyn LmmBackend>, BackendPolicy),
    t2i: (Arc<dyn T2iBackend>, BackendPolicy),
    i23d: (Arc<dyn I23dBackend>, BackendPolicy),
    embed: (Arc<dyn EmbedBackend>, BackendPolicy),
    matting: Option<(Arc<dyn MattingBackend>, BackendPolicy)>,
}

impl Default for GatewayBuilder {
    fn default() -> Self {
        Self {
            lmm: (Arc::new(mock::ConceptLmm), BackendPolicy::default()),
            t2i: (Arc::new(mock::ConceptT2i::default()), BackendPolicy::default()),
            i23d: (Arc::new(mock::ExtrudeI23d::default()), BackendPolicy::default()),
            embed: (Arc::new(mock::ConceptEmbedder::default()), BackendPolicy::default()),
            matting: None,
        }
    }
}

impl GatewayBuilder {
    pub fn lmm(mut self, b: Arc<dyn LmmBackend>) -> Self {
        self.lmm.0 = b;
        self
    }
    pub fn t2i(mut self, b: Arc<dyn T2iBackend>) -> Self {
        self.t2i.0 = b;
        self
    }
    pub fn i23d(mut self, b: Arc<dyn I23dBackend>) -> Self {
        self.i23d.0 = b;
        self
    }
    pub fn embed(mut self, b: Arc<dyn EmbedBackend>) -> Self {
        self.embed.0 = b;
        self
    }
    pub fn matting(mut self, b: Arc<dyn MattingBackend>, policy: BackendPolicy) -> Self {
        self.matting = Some((b, policy));
        self
    }
    pub fn lmm_policy(mut self, p: BackendPolicy) -> Self {
        self.lmm.1 = p;
        self
    }
    pub fn t2i_policy(mut self, p: BackendPolicy) -> Self {
        self.t2i.1 = p;
        self
    }
    pub fn i23d_policy(mut self, p: BackendPolicy) -> Self {
        self.i23d.1 = p;
        self
    }
    pub fn embed_policy(mut self, p: BackendPolicy) -> Self {
        self.embed.1 = p;
        self
    }
    /// Apply one policy to every role.
    pub fn policy(mut self, p: BackendPolicy) -> Self {
        self.lmm.1 = p.clone();
        self.t2i.1 = p.clone();
        self.i23d.1 = p.clone();
        self.embed.1 = p.clone();
        if let Some(m) = &mut self.matting {
            m.1 = p;
        }
        self
    }

    pub fn build(self) -> Result<Gateway> {
        for p in [&self.lmm.1, &self.t2i.1, &self.i23d.1, &self.embed.1] {
            p.validate()?;
        }
        if let Some((_, p)) = &self.matting {
            p.validate()?;
        }
        Ok(Gateway {
            lmm: RoleSlot::new(self.lmm.0, self.lmm.1),
            t2i: RoleSlot::new(self.t2i.0, self.t2i.1),
            i23d: RoleSlot::new(self.i23d.0, self.i23d.1),
            embed: RoleSlot::new(self.embed.0, self.embed.1),
            matting: self.matting.map(|(b, p)| RoleSlot::new(b, p)),
        })
    }
}

/// Run `f` under the slot's semaphore with timeout and retries. Returns the
/// final result and the number of retries performed.
fn invoke<T, F>(policy: &BackendPolicy, sem: &Arc<Semaphore>, f: F) -> (Result<T>, u32)
where
    T: Send + 'static,
    F: Fn() -> Result<T> + Send + Sync + 'static,
{
    let f = Arc::new(f);
    let timeout = Duration::from_secs_f64(policy.timeout_s);
    let mut retries = 0;
    loop {
        let permit = sem.acquire();
        let (tx, rx) = mpsc::channel();
        let job = Arc::clone(&f);
        std::thread::spawn(move || {
            let _permit = permit;
            let _ = tx.send(job());
        });
        let result = match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(Error::Timeout(policy.timeout_s)),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(Error::Transport("backend worker panicked".into())),
        };
        match result {
            Err(e) if e.is_retriable() && retries < policy.max_retries => {
                retries += 1;
                tracing::warn!(error = %e, retry = retries, "backend call failed, retrying");
                std::thread::sleep(policy.backoff(retries));
            }
            other => return (other, retries),
        }
    }
}

fn record<T>(
    log: &CallLog,
    role: BackendRole,
    op: &str,
    request: Value,
    started: Instant,
    outcome: &(Result<T>, u32),
    response: impl FnOnce(&T) -> Value,
) {
    let (result, retries) = outcome;
    let (ok, error, resp) = match result {
        Ok(v) => (true, None, response(v)),
        Err(e) => (false, Some(e.to_string()), Value::Null),
    };
    log.push(CallRecord {
        role,
        op: op.to_string(),
        request,
        response: resp,
        ok,
        error,
        retries: *retries,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    });
}

fn normalize_embedding(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::BackendContractViolation("embedding empty or non-finite".into()));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::BackendContractViolation("zero-norm embedding".into()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn lmm_request_summary(req: &LmmRequest) -> Value {
    let parts: Vec<Value> = req
        .parts
        .iter()
        .map(|p| match p {
            LmmPart::Text(t) => json!({"text": t}),
            LmmPart::Image(i) => json!({"image": i.id, "sha256": image_hash(i), "size": [i.width(), i.height()]}),
        })
        .collect();
    json!({
        "agent": req.role.as_str(),
        "system_prompt": req.system_prompt,
        "parts": parts,
        "max_output_chars": req.max_output_chars,
        "temperature": req.temperature,
        "seed": req.seed,
    })
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    /// All roles backed by their deterministic mocks.
    pub fn mock() -> Gateway {
        GatewayBuilder::default().build().expect("default policies are valid")
    }

    pub fn lmm_policy(&self) -> &BackendPolicy {
        &self.lmm.policy
    }

    pub fn lmm_complete(&self, req: &LmmRequest, log: &CallLog) -> Result<String> {
        req.validate()?;
        let started = Instant::now();
        let backend = Arc::clone(&self.lmm.backend);
        let owned = req.clone();
        let mut outcome = invoke(&self.lmm.policy, &self.lmm.sem, move || backend.complete(&owned));
        if let Ok(text) = &outcome.0 {
            if text.trim().is_empty() {
                outcome.0 = Err(Error::EmptyResponse("lmm".into()));
            }
        }
        record(log, BackendRole::Lmm, "complete", lmm_request_summary(req), started, &outcome, |t| json!({"text": t}));
        outcome.0
    }

    pub fn t2i_generate(&self, prompt: &str, n_images: u32, seed: u64, log: &CallLog) -> Result<Vec<ImageAsset>> {
        if prompt.trim().is_empty() {
            return Err(Error::Precondition("empty text-to-image prompt".into()));
        }
        if n_images < 1 {
            return Err(Error::Precondition("n_images must be >= 1".into()));
        }
        let started = Instant::now();
        let backend = Arc::clone(&self.t2i.backend);
        let p = prompt.to_string();
        let mut outcome = invoke(&self.t2i.policy, &self.t2i.sem, move || backend.generate(&p, n_images, seed));
        if let Ok(imgs) = &outcome.0 {
            if imgs.is_empty() {
                outcome.0 = Err(Error::BackendContractViolation("text-to-image returned zero images".into()));
            } else if imgs.len() != n_images as usize {
                outcome.0 = Err(Error::BackendContractViolation(format!(
                    "text-to-image returned {} images, expected {n_images}",
                    imgs.len()
                )));
            } else if imgs.iter().any(|i| i.width() == 0 || i.height() == 0) {
                outcome.0 = Err(Error::BackendContractViolation("text-to-image returned an empty raster".into()));
            }
        }
        let req = json!({"prompt": prompt, "n_images": n_images, "seed": seed});
        record(
            log,
            BackendRole::T2i,
            "generate",
            req,
            started,
            &outcome,
            |imgs| json!({"images": imgs.iter().map(image_hash).collect::<Vec<_>>()}),
        );
        outcome.0
    }

    /// Background removal. Images that already have at least 5% fully
    /// transparent pixels pass through unchanged.
    pub fn remove_background(&self, img: &ImageAsset, log: &CallLog) -> Result<ImageAsset> {
        let started = Instant::now();
        let req = json!({"image": image_hash(img)});
        let outcome: (Result<ImageAsset>, u32) = if matting::is_prematted(img) {
            (Ok(img.clone()), 0)
        } else {
            match &self.matting {
                Some(slot) => {
                    let backend = Arc::clone(&slot.backend);
                    let owned = img.clone();
                    invoke(&slot.policy, &slot.sem, move || backend.matte(&owned))
                }
                None => (matting::heuristic_matte(img, &matting::MattingParams::default()), 0),
            }
        };
        let outcome = match outcome {
            (Ok(out), r) if out.width() != img.width() || out.height() != img.height() => {
                (Err(Error::BackendContractViolation("matting changed image dimensions".into())), r)
            }
            (Ok(out), r) if !out.has_foreground() => (Err(Error::EmptyForeground), r),
            other => other,
        };
        record(log, BackendRole::Matting, "remove_background", req, started, &outcome, |out| {
            let fg = out.pixels.pixels().filter(|p| p[3] > 0).count();
            json!({"image": image_hash(out), "foreground_px": fg})
        });
        outcome.0
    }

    pub fn i23d_generate(&self, img: &ImageAsset, seed: u64, log: &CallLog) -> Result<MeshAsset> {
        if !img.has_foreground() {
            return Err(Error::Precondition("image-to-3D input has no foreground".into()));
        }
        let started = Instant::now();
        let backend = Arc::clone(&self.i23d.backend);
        let owned = img.clone();
        let mut outcome = invoke(&self.i23d.policy, &self.i23d.sem, move || backend.generate(&owned, seed));
        if let Ok(mesh) = &outcome.0 {
            if let Some(v) = mesh.violations().into_iter().next() {
                outcome.0 = Err(Error::BackendContractViolation(v));
            }
        }
        let req = json!({"image": image_hash(img), "seed": seed});
        record(
            log,
            BackendRole::I23d,
            "generate",
            req,
            started,
            &outcome,
            |m| json!({"mesh_digest": hex(&mesh_digest(m)), "triangles": m.geometry.indices.len()}),
        );
        outcome.0
    }

    fn embed_with<F>(&self, op: &str, req: Value, log: &CallLog, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&dyn EmbedBackend) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        let started = Instant::now();
        let backend = Arc::clone(&self.embed.backend);
        let mut outcome = invoke(&self.embed.policy, &self.embed.sem, move || f(backend.as_ref()));
        outcome.0 = outcome.0.and_then(normalize_embedding);
        record(log, BackendRole::Embed, op, req, started, &outcome, |v| json!({"dim": v.len()}));
        outcome.0
    }

    pub fn embed_text(&self, text: &str, log: &CallLog) -> Result<Vec<f64>> {
        let t = text.to_string();
        self.embed_with("embed_text", json!({"text": text}), log, move |b| b.embed_text(&t))
    }

    pub fn embed_image(&self, img: &ImageAsset, log: &CallLog) -> Result<Vec<f64>> {
        let owned = img.clone();
        self.embed_with("embed_image", json!({"image": image_hash(img)}), log, move |b| b.embed_image(&owned))
    }

    pub fn embed_mesh(&self, mesh: &MeshAsset, log: &CallLog) -> Result<Vec<f64>> {
        let owned = mesh.clone();
        let req = json!({"mesh_digest": hex(&mesh_digest(mesh))});
        self.embed_with("embed_mesh", req, log, move |b| b.embed_mesh(&owned))
    }

    /// Embedding view over this gateway that logs into `log`.
    pub fn embedder<'a>(&'a self, log: &'a CallLog) -> LoggedEmbedder<'a> {
        LoggedEmbedder { gateway: self, log }
    }
}

/// [`EmbedBackend`] adapter that routes through a [`Gateway`].
pub struct LoggedEmbedder<'a> {
    gateway: &'a Gateway,
    log: &'a CallLog,
}

impl EmbedBackend for LoggedEmbedder<'_> {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.gateway.embed_text(text, self.log)
    }
    fn embed_image(&self, img: &ImageAsset) -> Result<Vec<f64>> {
        self.gateway.embed_image(img, self.log)
    }
    fn embed_mesh(&self, mesh: &MeshAsset) -> Result<Vec<f64>> {
        self.gateway.embed_mesh(mesh, self.log)
    }
}
