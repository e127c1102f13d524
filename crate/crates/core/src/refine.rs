//! The refinement loop: prompt generation, draft fan-out through
//! text → image → foreground → mesh, best-draft selection, and the
//! accept-or-refine decision, repeated until acceptance or the iteration cap.

use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::mock::stable_hash;
use crate::gateway::{hex, AgentRole, CallLog, Gateway, LmmPart, LmmRequest, MAX_IMAGES_PER_REQUEST};
use crate::idea::{validate_idea, AugmentedIdea, DraftModel, Idea, ImageAsset};
use crate::memory::{DraftRef, Memory, MemoryRecord};
use crate::mesh_io::{mesh_digest, read_glb, write_glb};
use crate::render::{cm2i, compose_draft_lineup, compose_view_grid, RenderConfig};
use crate::session::{fg_image_id, gen_image_id, mesh_id, Event, SessionWriter};

/// Most drafts one selection lineup can show.
pub const MAX_DRAFTS_PER_ITERATION: u32 = 8;

/// Suffix appended to prompts that stay duplicated after a re-ask.
pub const VARIATION_HINT: &str = "(alternative composition)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Prompts per round.
    pub num_draft: u32,
    /// Images per prompt.
    pub num_img: u32,
    /// Iteration cap; the last allowed iteration always accepts.
    pub max_iters: u32,
    pub render: RenderConfig,
    pub seed: u64,
    pub temperature_gen: f64,
    pub temperature_select: f64,
    pub temperature_feedback: f64,
    pub max_output_chars: usize,
    /// Character budget of the memory digest handed to the agents.
    pub digest_budget_chars: usize,
    /// Re-asks after an unparseable agent reply.
    pub max_reasks: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            num_draft: 3,
            num_img: 1,
            max_iters: 5,
            render: RenderConfig::default(),
            seed: 0,
            temperature_gen: 0.7,
            temperature_select: 0.0,
            temperature_feedback: 0.0,
            max_output_chars: 4000,
            digest_budget_chars: 2000,
            max_reasks: 2,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_draft < 1 || self.num_img < 1 || self.max_iters < 1 {
            return Err(Error::Config("num_draft, num_img and max_iters must all be >= 1".into()));
        }
        if self.num_draft * self.num_img > MAX_DRAFTS_PER_ITERATION {
            return Err(Error::Config(format!(
                "num_draft x num_img = {} exceeds {MAX_DRAFTS_PER_ITERATION} drafts per iteration",
                self.num_draft * self.num_img
            )));
        }
        for t in [self.temperature_gen, self.temperature_select, self.temperature_feedback] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("invalid temperature {t}")));
            }
        }
        if self.max_output_chars == 0 {
            return Err(Error::Config("max_output_chars must be > 0".into()));
        }
        self.render.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Refine { feedback: String },
}

/// A prompt/image pair that produced no draft, with the failing stage's
/// error kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discarded {
    pub prompt: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub iteration: u32,
    pub prompts: Vec<String>,
    pub drafts: Vec<DraftModel>,
    pub best_index: usize,
    pub decision: Decision,
    pub discarded: Vec<Discarded>,
}

impl IterationOutcome {
    pub(crate) fn empty(iteration: u32) -> Self {
        Self {
            iteration,
            prompts: Vec::new(),
            drafts: Vec::new(),
            best_index: 0,
            decision: Decision::Accept,
            discarded: Vec::new(),
        }
    }

    pub fn best(&self) -> &DraftModel {
        &self.drafts[self.best_index]
    }
}

/// The three agent prompt templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub gen: String,
    pub select: String,
    pub feedback: String,
}

const GEN_SLOTS: [&str; 4] = ["idea_text", "feedback", "memory_digest", "n"];
const SELECT_SLOTS: [&str; 2] = ["idea_text", "n"];
const FEEDBACK_SLOTS: [&str; 2] = ["idea_text", "memory_digest"];

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            gen: include_str!("../templates/gen.txt").into(),
            select: include_str!("../templates/select.txt").into(),
            feedback: include_str!("../templates/feedback.txt").into(),
        }
    }
}

impl PromptTemplates {
    pub fn load(gen: &Path, select: &Path, feedback: &Path) -> Result<Self> {
        let read =
            |p: &Path| fs::read_to_string(p).map_err(|e| Error::Config(format!("template {}: {e}", p.display())));
        let t = Self { gen: read(gen)?, select: read(select)?, feedback: read(feedback)? };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, text, slots) in [
            ("gen", &self.gen, &GEN_SLOTS[..]),
            ("select", &self.select, &SELECT_SLOTS[..]),
            ("feedback", &self.feedback, &FEEDBACK_SLOTS[..]),
        ] {
            if let Some(s) = slots.iter().find(|s| !text.contains(&format!("{{{s}}}"))) {
                return Err(Error::Config(format!("{name} template lacks the {{{s}}} slot")));
            }
        }
        Ok(())
    }
}

/// Replace every `{slot}` in `template`.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    values.iter().fold(template.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
}

/// Seed for one sub-task, derived from the run seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in path {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    stable_hash(&[&bytes])
}

/// Parse numbered lines `1. …` to `n. …`. Returns `None` unless every
/// number from 1 to n is present with non-empty text.
pub fn parse_numbered(text: &str, n: usize) -> Option<Vec<String>> {
    let mut found: Vec<Option<String>> = vec![None; n];
    for line in text.lines() {
        let l = line.trim_start();
        let digits: String = l.chars().take_while(|c| c.is_ascii_digit()).collect();
        let Ok(k) = digits.parse::<usize>() else { continue };
        let rest = &l[digits.len()..];
        let Some(body) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else { continue };
        let body = body.trim().trim_matches('"').trim();
        if (1..=n).contains(&k) && found[k - 1].is_none() && !body.is_empty() {
            found[k - 1] = Some(body.to_string());
        }
    }
    found.into_iter().collect()
}

fn has_duplicates(prompts: &[String]) -> bool {
    let mut seen = std::collections::HashSet::new();
    prompts.iter().any(|p| !seen.insert(p.trim().to_lowercase()))
}

/// Make prompts distinct by suffixing later duplicates with a variation hint.
pub fn pad_duplicates(prompts: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(prompts.len());
    for p in prompts {
        let mut candidate = p.clone();
        let mut k = 1;
        while !seen.insert(candidate.trim().to_lowercase()) {
            k += 1;
            candidate = if k == 2 { format!("{p} {VARIATION_HINT}") } else { format!("{p} {VARIATION_HINT} {k}") };
        }
        out.push(candidate);
    }
    out
}

/// Index from a `BEST: <k>` marker.
pub fn parse_best(text: &str) -> Option<usize> {
    let upper = text.to_ascii_uppercase();
    let at = upper.find("BEST:")? + "BEST:".len();
    let digits: String = text[at..].trim_start().chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Verdict from a leading `VERDICT: ACCEPT` / `VERDICT: REFINE` line; the
/// rest of the reply is the feedback, which must be non-empty for Refine.
pub fn parse_verdict(text: &str) -> Option<Decision> {
    let text = text.trim_start();
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let first = first.trim();
    if first.len() < "VERDICT:".len() || !first[.."VERDICT:".len()].eq_ignore_ascii_case("VERDICT:") {
        return None;
    }
    let verdict = first["VERDICT:".len()..].trim_start();
    let word: String = verdict.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let tail =
        verdict[word.len()..].trim_start_matches(|c: char| c == '.' || c == '-' || c == ':' || c.is_whitespace());
    match word.to_ascii_uppercase().as_str() {
        "ACCEPT" => Some(Decision::Accept),
        "REFINE" => {
            let feedback = [tail, rest.trim()].iter().filter(|s| !s.is_empty()).copied().collect::<Vec<_>>().join("\n");
            (!feedback.is_empty()).then_some(Decision::Refine { feedback })
        }
        _ => None,
    }
}

fn reason_of(e: &Error) -> String {
    let display = e.to_string();
    if display == e.kind() {
        display
    } else {
        format!("{}: {display}", e.kind())
    }
}

/// Render every mesh of a valid idea into six views and append them to the
/// image list. Meshes render concurrently; a failing mesh aborts.
pub fn augment(idea: &Idea, cfg: &RenderConfig) -> Result<AugmentedIdea> {
    let violations = validate_idea(idea);
    if !violations.is_empty() {
        let list = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(Error::InvalidInput(format!("invalid idea: {list}")));
    }
    let rendered = thread::scope(|s| {
        let handles: Vec<_> = idea.mesh_assets.iter().map(|m| s.spawn(move || cm2i(m, cfg))).collect();
        handles
            .into_iter()
            .zip(&idea.mesh_assets)
            .map(|(h, m)| match h.join().expect("render worker panicked") {
                Ok(views) => Ok((m.id.clone(), views)),
                Err(e) => Err(Error::InvalidInput(format!("mesh {}: {e}", m.id))),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AugmentedIdea::new(idea, rendered))
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_draft: DraftModel,
    pub outcomes: Vec<IterationOutcome>,
    pub memory: Memory,
}

/// Loop driver bound to one gateway, configuration and template set.
pub struct Refiner<'a> {
    pub gateway: &'a Gateway,
    pub cfg: &'a LoopConfig,
    pub templates: &'a PromptTemplates,
}

/// Tags a failure with the stage it happened in.
struct StageError {
    stage: &'static str,
    error: Error,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn idea_images(x: &AugmentedIdea, reserve: usize) -> impl Iterator<Item = LmmPart> + '_ {
    x.images.iter().take(MAX_IMAGES_PER_REQUEST - reserve).cloned().map(LmmPart::Image)
}

impl<'a> Refiner<'a> {
    pub fn new(gateway: &'a Gateway, cfg: &'a LoopConfig, templates: &'a PromptTemplates) -> Self {
        Self { gateway, cfg, templates }
    }

    fn request(
        &self,
        role: AgentRole,
        system_prompt: String,
        parts: Vec<LmmPart>,
        temperature: f64,
        seed: u64,
    ) -> LmmRequest {
        LmmRequest { role, system_prompt, parts, max_output_chars: self.cfg.max_output_chars, temperature, seed }
    }

    /// Ask the LMM for `n` distinct prompts. Feedback must be present exactly
    /// when `iteration > 0`.
    pub fn generate_prompts(
        &self,
        x: &AugmentedIdea,
        feedback: Option<&str>,
        memory: &Memory,
        iteration: u32,
        n: usize,
        session: &mut SessionWriter,
    ) -> Result<Vec<String>> {
        if n < 1 {
            return Err(Error::Precondition("prompt count must be >= 1".into()));
        }
        if feedback.is_some() != (iteration > 0) {
            return Err(Error::Precondition(format!(
                "feedback must be given exactly for refinement rounds (iteration {iteration}, feedback {})",
                if feedback.is_some() { "present" } else { "absent" }
            )));
        }
        let idea_text = x.idea_text();
        let digest = memory.digest(self.cfg.digest_budget_chars);
        let n_text = n.to_string();
        let system = fill(
            &self.templates.gen,
            &[
                ("idea_text", &idea_text),
                ("feedback", feedback.unwrap_or("none (first round)")),
                ("memory_digest", if digest.is_empty() { "none" } else { &digest }),
                ("n", &n_text),
            ],
        );
        let format = format!(
            "Reply with exactly {n} numbered lines, `1. <prompt>` to `{n}. <prompt>`, one distinct prompt per line and nothing else."
        );
        let mut note: Option<String> = None;
        let mut parse_failures = 0;
        let mut dedup_asked = false;
        let mut attempt = 0;
        loop {
            let mut parts = vec![LmmPart::Text(idea_text.clone())];
            parts.extend(idea_images(x, 0));
            if let Some(n) = &note {
                parts.push(LmmPart::Text(n.clone()));
            }
            parts.push(LmmPart::Text(format.clone()));
            let seed = derive_seed(self.cfg.seed, &[iteration as u64, 0, attempt]);
            let req = self.request(AgentRole::PromptGen, system.clone(), parts, self.cfg.temperature_gen, seed);
            let log = CallLog::new();
            let reply = self.gateway.lmm_complete(&req, &log);
            session.emit_calls(Some(iteration), "prompt_gen", None, &log)?;
            attempt += 1;
            let parsed = match reply {
                Ok(text) => parse_numbered(&text, n).ok_or(text),
                Err(Error::EmptyResponse(_)) => Err(String::new()),
                Err(e) => return Err(e),
            };
            match parsed {
                Ok(prompts) if has_duplicates(&prompts) && !dedup_asked => {
                    dedup_asked = true;
                    let reason = "duplicate prompts".to_string();
                    session.emit(Event::PromptReask { iteration, attempt: attempt as u32, reason })?;
                    note = Some(format!(
                        "Your previous reply repeated a prompt. All {n} prompts must differ from each other."
                    ));
                }
                Ok(prompts) => {
                    let prompts = pad_duplicates(prompts);
                    session.emit(Event::Prompts { iteration, prompts: prompts.clone() })?;
                    return Ok(prompts);
                }
                Err(raw) => {
                    if parse_failures >= self.cfg.max_reasks {
                        let excerpt: String = raw.chars().take(120).collect();
                        return Err(Error::PromptParse(format!(
                            "no {n} numbered prompts after {parse_failures} re-asks; last reply: {excerpt:?}"
                        )));
                    }
                    parse_failures += 1;
                    let reason = "unparseable prompt list".to_string();
                    session.emit(Event::PromptReask { iteration, attempt: attempt as u32, reason })?;
                    note = Some(format!(
                        "Your previous reply could not be parsed. Answer with exactly {n} lines numbered 1 to {n}."
                    ));
                }
            }
        }
    }

    /// Text → image → foreground → mesh → views for one prompt, producing
    /// `num_img` results in image order. Failures are returned as reasons.
    pub fn t23d(
        &self,
        prompt: &str,
        iteration: u32,
        prompt_index: usize,
        log: &CallLog,
    ) -> Vec<std::result::Result<DraftModel, String>> {
        let n = self.cfg.num_img as usize;
        let seed = derive_seed(self.cfg.seed, &[iteration as u64, 1, prompt_index as u64]);
        let images = match self.gateway.t2i_generate(prompt, self.cfg.num_img, seed, log) {
            Ok(images) => images,
            Err(e) => return vec![Err(reason_of(&e)); n],
        };
        images
            .into_iter()
            .enumerate()
            .map(|(j, gen)| {
                let draft_id = format!("it{iteration}-p{prompt_index}-i{j}");
                let gen = ImageAsset { id: gen_image_id(&draft_id), source_path: None, ..gen };
                let fg = self.gateway.remove_background(&gen, log).map_err(|e| reason_of(&e))?;
                let fg = ImageAsset { id: fg_image_id(&draft_id), source_path: None, ..fg };
                let seed = derive_seed(self.cfg.seed, &[iteration as u64, 2, prompt_index as u64, j as u64]);
                let mesh = self.gateway.i23d_generate(&fg, seed, log).map_err(|e| reason_of(&e))?;
                // store exactly what the session file will hold
                let mut mesh = read_glb(&write_glb(&mesh)).map_err(|e| reason_of(&e))?;
                mesh.id = mesh_id(&draft_id);
                let views = cm2i(&mesh, &self.cfg.render).map_err(|e| reason_of(&e))?;
                Ok(DraftModel {
                    draft_id,
                    prompt: prompt.to_string(),
                    gen_image: gen,
                    fg_image: fg,
                    mesh,
                    views,
                    iteration,
                })
            })
            .collect()
    }

    /// Run every prompt's pipeline concurrently; drafts and call records
    /// are ordered by prompt index, then image index.
    pub fn fan_out(
        &self,
        prompts: &[String],
        iteration: u32,
        session: &mut SessionWriter,
    ) -> Result<(Vec<DraftModel>, Vec<Discarded>)> {
        let results = thread::scope(|s| {
            let handles: Vec<_> = prompts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    s.spawn(move || {
                        let log = CallLog::new();
                        let r = self.t23d(p, iteration, i, &log);
                        (r, log)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("draft worker panicked")).collect::<Vec<_>>()
        });
        let mut drafts = Vec::new();
        let mut discarded = Vec::new();
        for (i, (per_image, log)) in results.into_iter().enumerate() {
            session.emit_calls(Some(iteration), "t23d", Some(i), &log)?;
            for r in per_image {
                match r {
                    Ok(d) => {
                        session.write_draft(&d)?;
                        session.emit(Event::Draft {
                            iteration,
                            index: drafts.len(),
                            draft_id: d.draft_id.clone(),
                            prompt: d.prompt.clone(),
                            mesh_digest: hex(&mesh_digest(&d.mesh)),
                        })?;
                        drafts.push(d);
                    }
                    Err(reason) => {
                        tracing::warn!(iteration, prompt = i, %reason, "draft discarded");
                        session.emit(Event::DraftDiscarded {
                            iteration,
                            prompt: prompts[i].clone(),
                            reason: reason.clone(),
                        })?;
                        discarded.push(Discarded { prompt: prompts[i].clone(), reason });
                    }
                }
            }
        }
        if drafts.is_empty() {
            return Err(Error::AllDraftsFailed(iteration));
        }
        Ok((drafts, discarded))
    }

    /// Index of the draft that best matches the idea. A single draft is
    /// chosen without asking; unusable replies fall back to draft 0.
    pub fn select_best(
        &self,
        drafts: &[DraftModel],
        x: &AugmentedIdea,
        iteration: u32,
        session: &mut SessionWriter,
    ) -> Result<usize> {
        if drafts.is_empty() {
            return Err(Error::Precondition("selection needs at least one draft".into()));
        }
        let n = drafts.len();
        if n == 1 {
            session.emit(Event::Selection { iteration, best_index: 0, fallback: false })?;
            return Ok(0);
        }
        let lineup = compose_draft_lineup(drafts)?;
        let idea_text = x.idea_text();
        let system = fill(&self.templates.select, &[("idea_text", &idea_text), ("n", &n.to_string())]);
        let instruction = format!(
            "Compare the lineup of the {n} drafts. Reply with a line `BEST: <k>`, where k is the index (0 to {}) of the draft that best matches the IDEA.",
            n - 1
        );
        let mut last_reason = String::new();
        for attempt in 0..=self.cfg.max_reasks {
            let mut parts = vec![LmmPart::Text(idea_text.clone())];
            parts.extend(idea_images(x, 1));
            if attempt > 0 {
                parts.push(LmmPart::Text(format!("Your previous reply was unusable ({last_reason}).")));
            }
            parts.push(LmmPart::Text(instruction.clone()));
            parts.push(LmmPart::Image(lineup.clone()));
            let seed = derive_seed(self.cfg.seed, &[iteration as u64, 3, attempt as u64]);
            let req = self.request(AgentRole::Select, system.clone(), parts, self.cfg.temperature_select, seed);
            let log = CallLog::new();
            let reply = self.gateway.lmm_complete(&req, &log);
            session.emit_calls(Some(iteration), "select", None, &log)?;
            last_reason = match reply {
                Ok(text) => match parse_best(&text) {
                    Some(k) if k < n => {
                        session.emit(Event::Selection { iteration, best_index: k, fallback: false })?;
                        return Ok(k);
                    }
                    Some(k) => format!("index {k} out of range 0..{n}"),
                    None => "no BEST marker".into(),
                },
                Err(Error::EmptyResponse(_)) => "empty reply".into(),
                Err(e) => return Err(e),
            };
            if attempt < self.cfg.max_reasks {
                session.emit(Event::SelectionReask { iteration, attempt: attempt + 1, reason: last_reason.clone() })?;
            }
        }
        tracing::warn!(iteration, reason = %last_reason, "selection fell back to draft 0");
        session.emit(Event::SelectionFallback { iteration, reason: last_reason })?;
        session.emit(Event::Selection { iteration, best_index: 0, fallback: true })?;
        Ok(0)
    }

    /// Accept or refine the best draft. The final allowed iteration accepts
    /// without consulting the LMM; unparseable verdicts become Refine with
    /// the raw reply as feedback.
    pub fn decide(
        &self,
        best: &DraftModel,
        x: &AugmentedIdea,
        memory: &Memory,
        iteration: u32,
        session: &mut SessionWriter,
    ) -> Result<Decision> {
        if iteration + 1 >= self.cfg.max_iters {
            session.emit(Event::Decision {
                iteration,
                decision: Decision::Accept,
                forced_by_cap: true,
                parse_fallback: false,
            })?;
            return Ok(Decision::Accept);
        }
        let idea_text = x.idea_text();
        let digest = memory.digest(self.cfg.digest_budget_chars);
        let system = fill(
            &self.templates.feedback,
            &[("idea_text", &idea_text), ("memory_digest", if digest.is_empty() { "none" } else { &digest })],
        );
        let mut grid = compose_view_grid(&best.views);
        grid.id = format!("{}/grid", best.draft_id);
        let format = "Start your reply with `VERDICT: ACCEPT` or `VERDICT: REFINE`. After REFINE, list the key inconsistencies between the model and the IDEA.";
        let mut raw = String::new();
        for attempt in 0..=self.cfg.max_reasks {
            let mut parts = vec![LmmPart::Text(idea_text.clone())];
            parts.extend(idea_images(x, 1));
            parts.push(LmmPart::Text("Candidate model, six views:".into()));
            if attempt > 0 {
                parts.push(LmmPart::Text("Your previous reply did not start with a valid verdict line.".into()));
            }
            parts.push(LmmPart::Image(grid.clone()));
            parts.push(LmmPart::Text(format.into()));
            let seed = derive_seed(self.cfg.seed, &[iteration as u64, 4, attempt as u64]);
            let req = self.request(AgentRole::Feedback, system.clone(), parts, self.cfg.temperature_feedback, seed);
            let log = CallLog::new();
            let reply = self.gateway.lmm_complete(&req, &log);
            session.emit_calls(Some(iteration), "feedback", None, &log)?;
            match reply {
                Ok(text) => {
                    if let Some(d) = parse_verdict(&text) {
                        session.emit(Event::Decision {
                            iteration,
                            decision: d.clone(),
                            forced_by_cap: false,
                            parse_fallback: false,
                        })?;
                        return Ok(d);
                    }
                    raw = text;
                }
                Err(Error::EmptyResponse(_)) => {}
                Err(e) => return Err(e),
            }
            if attempt < self.cfg.max_reasks {
                session.emit(Event::VerdictReask {
                    iteration,
                    attempt: attempt + 1,
                    reason: "no verdict line".into(),
                })?;
            }
        }
        let feedback = if raw.trim().is_empty() { "(no usable feedback)".to_string() } else { raw.trim().to_string() };
        let d = Decision::Refine { feedback };
        session.emit(Event::Decision { iteration, decision: d.clone(), forced_by_cap: false, parse_fallback: true })?;
        Ok(d)
    }

    /// Full run into an open session. Failures are recorded as a
    /// `run_error` event before being returned.
    pub fn run(&self, idea: &Idea, session: &mut SessionWriter) -> Result<RunResult> {
        match self.run_stages(idea, session) {
            Ok(r) => Ok(r),
            Err(StageError { stage, error }) => {
                tracing::error!(stage, %error, "run failed");
                session.emit(Event::RunError {
                    stage: stage.into(),
                    error: error.to_string(),
                    kind: error.kind().into(),
                })?;
                Err(error)
            }
        }
    }

    fn run_stages(&self, idea: &Idea, session: &mut SessionWriter) -> std::result::Result<RunResult, StageError> {
        self.cfg.validate().at("config")?;
        self.templates.validate().at("config")?;
        let x = augment(idea, &self.cfg.render).at("augment")?;
        let mut memory = Memory::new();
        let mut outcomes: Vec<IterationOutcome> = Vec::new();
        let mut feedback: Option<String> = None;
        for iteration in 0..self.cfg.max_iters {
            tracing::info!(iteration, "iteration start");
            session.emit(Event::IterationStart { iteration }).at("session")?;
            let prompts = self
                .generate_prompts(&x, feedback.as_deref(), &memory, iteration, self.cfg.num_draft as usize, session)
                .at("prompt_gen")?;
            let (drafts, discarded) = self.fan_out(&prompts, iteration, session).at("t23d")?;
            let best_index = self.select_best(&drafts, &x, iteration, session).at("select")?;
            let best = &drafts[best_index];
            let decision = self.decide(best, &x, &memory, iteration, session).at("feedback")?;
            let record = MemoryRecord {
                iteration,
                best_prompt: best.prompt.clone(),
                best_draft_ref: DraftRef {
                    draft_id: best.draft_id.clone(),
                    mesh_digest: hex(&mesh_digest(&best.mesh)),
                },
                feedback: match &decision {
                    Decision::Accept => String::new(),
                    Decision::Refine { feedback } => feedback.clone(),
                },
            };
            memory.append(record.clone()).at("memory")?;
            session.emit(Event::MemoryAppend { record }).at("session")?;
            session.write_memory(&memory).at("session")?;
            feedback = match &decision {
                Decision::Accept => None,
                Decision::Refine { feedback } => Some(feedback.clone()),
            };
            let accepted = decision == Decision::Accept;
            outcomes.push(IterationOutcome { iteration, prompts, drafts, best_index, decision, discarded });
            if accepted {
                break;
            }
        }
        let last = outcomes.last().expect("max_iters >= 1");
        let final_draft = last.best().clone();
        session.write_final(&final_draft).at("export")?;
        session
            .emit(Event::RunEnd {
                iterations: outcomes.len() as u32,
                final_draft_id: Some(final_draft.draft_id.clone()),
            })
            .at("session")?;
        Ok(RunResult { final_draft, outcomes, memory })
    }
}

/// Create a session in `session_dir` and run the loop.
pub fn run(
    idea: &Idea,
    gateway: &Gateway,
    cfg: &LoopConfig,
    templates: &PromptTemplates,
    session_dir: &Path,
) -> Result<RunResult> {
    let config = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut session = SessionWriter::create(session_dir, "idea23d", cfg.seed, config)?;
    Refiner::new(gateway, cfg, templates).run(idea, &mut session)
}
