//! Manifest-driven evaluation: run the refinement loop or a single-pass
//! baseline on every case of a dataset and score the resulting meshes
//! against the reference captions.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{AgentRole, CallLog, EmbedBackend, Gateway, LmmPart, LmmRequest, MAX_IMAGES_PER_REQUEST};
use crate::idea::{Idea, IdeaManifest, ImageAsset, MeshAsset};
use crate::refine::{augment, derive_seed, LoopConfig, PromptTemplates, Refiner};
use crate::render::{render_view, RenderConfig, ViewName};
use crate::session::{Event, SessionWriter};

/// Text embedded as `E_T` in every mode.
pub const TEXT_EMBEDDING_SOURCE: &str = "gt_caption";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CaseEntry {
    id: String,
    #[serde(flatten)]
    idea: IdeaManifest,
    gt_caption: String,
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    cases: Vec<CaseEntry>,
}

/// Input modalities present in a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextOnly,
    TextImage,
    TextMesh,
    TextImageMesh,
}

impl Modality {
    pub const ALL: [Modality; 4] =
        [Modality::TextOnly, Modality::TextImage, Modality::TextMesh, Modality::TextImageMesh];
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub id: String,
    pub manifest: IdeaManifest,
    /// Directory asset paths are relative to.
    pub base: PathBuf,
    pub gt_caption: String,
    pub tags: Vec<String>,
}

impl EvalCase {
    pub fn modality(&self) -> Modality {
        match (self.manifest.images.is_empty(), self.manifest.meshes.is_empty()) {
            (true, true) => Modality::TextOnly,
            (false, true) => Modality::TextImage,
            (true, false) => Modality::TextMesh,
            (false, false) => Modality::TextImageMesh,
        }
    }

    /// Load the case's assets.
    pub fn load_idea(&self) -> Result<Idea> {
        self.manifest.resolve(&self.base).map_err(|e| Error::Dataset { case: self.id.clone(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub path: PathBuf,
    pub cases: Vec<EvalCase>,
}

impl Dataset {
    /// Case counts per [`Modality::ALL`] entry.
    pub fn modality_histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for c in &self.cases {
            h[Modality::ALL.iter().position(|m| *m == c.modality()).expect("known modality")] += 1;
        }
        h
    }

    /// Case counts with 0, 1 and 2 or more tags.
    pub fn tag_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for c in &self.cases {
            h[c.tags.len().min(2)] += 1;
        }
        h
    }
}

/// Read and validate a dataset manifest. Asset files are checked for
/// existence here and loaded per case during evaluation.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&raw).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut ids = HashSet::new();
    let mut cases = Vec::with_capacity(manifest.cases.len());
    for entry in manifest.cases {
        let fail = |message: String| Error::Dataset { case: entry.id.clone(), message };
        if entry.id.trim().is_empty() {
            return Err(fail("empty case id".into()));
        }
        if !ids.insert(entry.id.clone()) {
            return Err(fail("duplicate case id".into()));
        }
        if entry.gt_caption.trim().is_empty() {
            return Err(fail("empty gt_caption".into()));
        }
        if let Some(missing) = entry.idea.missing_file(&base) {
            return Err(fail(format!("missing asset file {}", missing.display())));
        }
        if entry.idea.text.is_empty() && entry.idea.images.is_empty() && entry.idea.meshes.is_empty() {
            return Err(fail("case has no inputs".into()));
        }
        cases.push(EvalCase {
            id: entry.id,
            manifest: entry.idea,
            base: base.clone(),
            gt_caption: entry.gt_caption,
            tags: entry.tags,
        });
    }
    Ok(Dataset { path: path.to_path_buf(), cases })
}

/// Cosine similarity; zero-norm or mismatched vectors are a metric error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Metric(format!("embedding dimensions differ ({} vs {})", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Metric("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine between a text embedding and each view embedding.
pub fn mean_cosine(text: &[f64], views: &[Vec<f64>]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::Metric("no view embeddings".into()));
    }
    let mut sum = 0.0;
    for v in views {
        sum += cosine(text, v)?;
    }
    Ok(sum / views.len() as f64)
}

/// Mean text–image cosine over the front, back, left and right renders.
pub fn clip_multiview_score(
    caption: &str,
    mesh: &MeshAsset,
    embedder: &dyn EmbedBackend,
    cfg: &RenderConfig,
) -> Result<f64> {
    let text = embedder.embed_text(caption)?;
    let mut views = Vec::with_capacity(4);
    for v in ViewName::METRIC {
        let img = ImageAsset::new(format!("{}#{v}", mesh.id), render_view(mesh, v, cfg)?);
        views.push(embedder.embed_image(&img)?);
    }
    mean_cosine(&text, &views)
}

/// Cosine between the caption embedding and the mesh embedding.
pub fn mesh_text_score(caption: &str, mesh: &MeshAsset, embedder: &dyn EmbedBackend) -> Result<f64> {
    cosine(&embedder.embed_text(caption)?, &embedder.embed_mesh(mesh)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Full refinement loop.
    Idea23d,
    /// One captioning pass over the images, then a single text-to-3D call.
    CaptionBaseline,
    /// Text directives alone, single text-to-3D call.
    TextOnly,
    /// Reference caption as the prompt, single text-to-3D call.
    GtPrompt,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] =
        [EvalMode::Idea23d, EvalMode::CaptionBaseline, EvalMode::TextOnly, EvalMode::GtPrompt];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Idea23d => "idea23d",
            EvalMode::CaptionBaseline => "caption_baseline",
            EvalMode::TextOnly => "text_only",
            EvalMode::GtPrompt => "gt_prompt",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown eval mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Cases evaluated concurrently.
    pub workers: usize,
    /// Renders used for the multi-view text–image metric.
    pub metric_render: RenderConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { workers: 4, metric_render: RenderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub mode: EvalMode,
    pub clip_score: Option<f64>,
    pub ulip_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: EvalMode,
    pub cases: usize,
    pub scored: usize,
    /// Failed cases left out of the means.
    pub excluded: usize,
    pub mean_clip: Option<f64>,
    pub mean_ulip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub text_embedding_source: String,
    pub config: Value,
    pub summary: Vec<ModeSummary>,
    pub rows: Vec<CaseRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    fn summarize(mode: EvalMode, rows: &[CaseRow]) -> ModeSummary {
        let rows: Vec<&CaseRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let scored: Vec<&&CaseRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        ModeSummary {
            mode,
            cases: rows.len(),
            scored: scored.len(),
            excluded: rows.len() - scored.len(),
            mean_clip: mean(scored.iter().filter_map(|r| r.clip_score)),
            mean_ulip: mean(scored.iter().filter_map(|r| r.ulip_score)),
            mean_iterations: if mode == EvalMode::Idea23d {
                mean(scored.iter().filter_map(|r| r.iterations.map(f64::from)))
            } else {
                None
            },
        }
    }

    pub fn summary_for(&self, mode: EvalMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table: one summary line per mode, then per-case rows.
    pub fn to_table(&self) -> String {
        let num = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "dataset: {}\nseed: {}\ntext embedding (E_T): {}\n\n",
            self.dataset, self.seed, self.text_embedding_source
        );
        out.push_str(&format!(
            "{:<18} {:>6} {:>7} {:>9} {:>10} {:>8} {:>8}\n",
            "mode", "cases", "scored", "excluded", "avg_iter", "clip", "ulip"
        ));
        for s in &self.summary {
            out.push_str(&format!(
                "{:<18} {:>6} {:>7} {:>9} {:>10} {:>8} {:>8}\n",
                s.mode.as_str(),
                s.cases,
                s.scored,
                s.excluded,
                s.mean_iterations.map_or_else(|| "-".to_string(), |v| format!("{v:.2}")),
                num(s.mean_clip),
                num(s.mean_ulip)
            ));
        }
        out.push_str(&format!(
            "\n{:<18} {:<18} {:>8} {:>8} {:>5}  {}\n",
            "case", "mode", "clip", "ulip", "iter", "error"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:<18} {:>8} {:>8} {:>5}  {}\n",
                r.case_id,
                r.mode.as_str(),
                num(r.clip_score),
                num(r.ulip_score),
                r.iterations.map_or_else(|| "-".to_string(), |v| v.to_string()),
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

/// Everything `run_eval` needs besides the dataset.
pub struct EvalContext<'a> {
    pub gateway: &'a Gateway,
    pub loop_cfg: &'a LoopConfig,
    pub templates: &'a PromptTemplates,
    pub settings: &'a EvalSettings,
    /// Per-case sessions go to `<session_root>/<mode>/<case id>`.
    pub session_root: &'a Path,
}

/// Seed of one case: derived from the run seed and the case id, so it does
/// not depend on case order or worker scheduling.
pub fn case_seed(seed: u64, case_id: &str) -> u64 {
    derive_seed(seed, &[crate::gateway::mock::stable_hash(&[case_id.as_bytes()])])
}

const CAPTION_SYSTEM: &str = "Describe the objects shown in the attached images in one sentence, naming their shapes, colors and parts. Reply with the description only.";

fn single_pass(
    ctx: &EvalContext<'_>,
    case: &EvalCase,
    mode: EvalMode,
    cfg: &LoopConfig,
    session: &mut SessionWriter,
) -> Result<MeshAsset> {
    let idea = case.load_idea()?;
    let refiner = Refiner::new(ctx.gateway, cfg, ctx.templates);
    let prompt = match mode {
        EvalMode::GtPrompt => case.gt_caption.clone(),
        EvalMode::TextOnly => idea.plain_text(),
        EvalMode::CaptionBaseline => {
            let x = augment(&idea, &cfg.render)?;
            let mut parts = vec![LmmPart::Text(x.idea_text())];
            parts.extend(x.images.iter().take(MAX_IMAGES_PER_REQUEST).cloned().map(LmmPart::Image));
            let req = LmmRequest {
                role: AgentRole::Caption,
                system_prompt: CAPTION_SYSTEM.into(),
                parts,
                max_output_chars: cfg.max_output_chars,
                temperature: 0.0,
                seed: derive_seed(cfg.seed, &[0, 5]),
            };
            let log = CallLog::new();
            let caption = ctx.gateway.lmm_complete(&req, &log);
            session.emit_calls(Some(0), "caption", None, &log)?;
            let caption = caption?;
            [idea.plain_text(), caption.trim().to_string()]
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect::<Vec<_>>()
                .join(" ")
        }
        EvalMode::Idea23d => unreachable!("handled by the loop"),
    };
    session.emit(Event::IterationStart { iteration: 0 })?;
    session.emit(Event::Prompts { iteration: 0, prompts: vec![prompt.clone()] })?;
    let (drafts, _) = refiner.fan_out(&[prompt], 0, session)?;
    let draft = drafts.into_iter().next().expect("fan_out returns at least one draft");
    session.write_final(&draft)?;
    session.emit(Event::RunEnd { iterations: 1, final_draft_id: Some(draft.draft_id.clone()) })?;
    Ok(draft.mesh)
}

fn eval_case(ctx: &EvalContext<'_>, case: &EvalCase, mode: EvalMode) -> CaseRow {
    let mut row =
        CaseRow { case_id: case.id.clone(), mode, clip_score: None, ulip_score: None, iterations: None, error: None };
    let dir = ctx.session_root.join(mode.as_str()).join(&case.id);
    let cfg = LoopConfig {
        seed: case_seed(ctx.loop_cfg.seed, &case.id),
        num_draft: if mode == EvalMode::Idea23d { ctx.loop_cfg.num_draft } else { 1 },
        num_img: if mode == EvalMode::Idea23d { ctx.loop_cfg.num_img } else { 1 },
        ..ctx.loop_cfg.clone()
    };
    let result = (|| -> Result<(MeshAsset, Option<u32>, SessionWriter)> {
        let config = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        let mut session = SessionWriter::create(&dir, mode.as_str(), cfg.seed, config)?;
        if mode == EvalMode::Idea23d {
            let idea = case.load_idea()?;
            let r = Refiner::new(ctx.gateway, &cfg, ctx.templates).run(&idea, &mut session)?;
            Ok((r.final_draft.mesh, Some(r.outcomes.len() as u32), session))
        } else {
            match single_pass(ctx, case, mode, &cfg, &mut session) {
                Ok(mesh) => Ok((mesh, None, session)),
                Err(e) => {
                    session.emit(Event::RunError {
                        stage: "baseline".into(),
                        error: e.to_string(),
                        kind: e.kind().into(),
                    })?;
                    Err(e)
                }
            }
        }
    })();
    let (mesh, iterations, mut session) = match result {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(case = %case.id, mode = %mode, error = %e, "case failed");
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.iterations = iterations;
    let log = CallLog::new();
    let embedder = ctx.gateway.embedder(&log);
    let scores = clip_multiview_score(&case.gt_caption, &mesh, &embedder, &ctx.settings.metric_render)
        .and_then(|c| Ok((c, mesh_text_score(&case.gt_caption, &mesh, &embedder)?)));
    if let Err(e) = session.emit_calls(None, "metric", None, &log) {
        tracing::warn!(case = %case.id, error = %e, "could not log metric calls");
    }
    match scores {
        Ok((clip, ulip)) => {
            row.clip_score = Some(clip);
            row.ulip_score = Some(ulip);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Evaluate every case under every requested mode. Cases run on up to
/// `settings.workers` threads; rows come back in dataset order, grouped by
/// mode in the order given.
pub fn run_eval(dataset: &Dataset, modes: &[EvalMode], ctx: &EvalContext<'_>) -> Result<EvalReport> {
    if modes.is_empty() {
        return Err(Error::InvalidInput("no eval modes given".into()));
    }
    ctx.loop_cfg.validate()?;
    ctx.settings.metric_render.validate()?;
    let jobs: Vec<(EvalMode, &EvalCase)> =
        modes.iter().flat_map(|&m| dataset.cases.iter().map(move |c| (m, c))).collect();
    let slots: Mutex<Vec<Option<CaseRow>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = ctx.settings.workers.clamp(1, jobs.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(mode, case)) = jobs.get(i) else { break };
                let row = eval_case(ctx, case, mode);
                slots.lock().expect("result slots poisoned")[i] = Some(row);
            });
        }
    });
    let rows: Vec<CaseRow> =
        slots.into_inner().expect("result slots poisoned").into_iter().map(|r| r.expect("every job ran")).collect();
    let summary = modes.iter().map(|&m| EvalReport::summarize(m, &rows)).collect();
    Ok(EvalReport {
        dataset: dataset.path.display().to_string(),
        seed: ctx.loop_cfg.seed,
        text_embedding_source: TEXT_EMBEDDING_SOURCE.into(),
        config: serde_json::json!({ "loop": ctx.loop_cfg, "eval": ctx.settings }),
        summary,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-3.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Metric(_))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Metric(_))));
    }

    #[test]
    fn per_view_cosines_average() {
        // unit vectors at the given cosines to e0
        let views: Vec<Vec<f64>> = [0.2f64, 0.4, 0.6, 0.8].iter().map(|&c| vec![c, (1.0 - c * c).sqrt()]).collect();
        assert!((mean_cosine(&[1.0, 0.0], &views).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn modes_parse() {
        for m in EvalMode::ALL {
            assert_eq!(m.as_str().parse::<EvalMode>().unwrap(), m);
        }
        assert!("nope".parse::<EvalMode>().is_err());
    }

    #[test]
    fn summary_excludes_failures() {
        let row = |clip: Option<f64>, err: Option<&str>| CaseRow {
            case_id: "c".into(),
            mode: EvalMode::TextOnly,
            clip_score: clip,
            ulip_score: clip,
            iterations: None,
            error: err.map(String::from),
        };
        let s = EvalReport::summarize(
            EvalMode::TextOnly,
            &[row(Some(0.2), None), row(Some(0.4), None), row(None, Some("x"))],
        );
        assert_eq!((s.cases, s.scored, s.excluded), (3, 2, 1));
        assert!((s.mean_clip.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(s.mean_iterations, None);
    }
}
