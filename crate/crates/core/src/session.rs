//! Durable session log: an append-only `session.jsonl` event stream plus
//! draft artifacts, from which memory and iteration outcomes can be rebuilt.
//!
//! Layout of a session directory:
//!
//! ```text
//! session.jsonl            one JSON event per line, header first
//! memory.json              memory after the last completed iteration
//! drafts/<draft_id>/       gen.png, fg.png, mesh.glb, views/<view>.png
//! final/                   model.glb, model.obj (+ .mtl, texture), views/, grid.png
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{decode_png, encode_png};
use crate::error::{Error, Result};
use crate::gateway::{BackendRole, CallLog, CallRecord};
use crate::idea::{DraftModel, ImageAsset};
use crate::memory::{Memory, MemoryRecord};
use crate::mesh_io::{read_glb, write_glb, write_obj};
use crate::refine::{Decision, Discarded, IterationOutcome};
use crate::render::{compose_view_grid, ViewName, ViewSet};

pub const SCHEMA_VERSION: u32 = 1;
pub const LOG_FILE: &str = "session.jsonl";
pub const MEMORY_FILE: &str = "memory.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema_version: u32,
        /// `idea23d` for refinement runs, or the baseline mode name.
        kind: String,
        seed: u64,
        config: Value,
    },
    IterationStart {
        iteration: u32,
    },
    PromptReask {
        iteration: u32,
        attempt: u32,
        reason: String,
    },
    Prompts {
        iteration: u32,
        prompts: Vec<String>,
    },
    BackendCall {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        iteration: Option<u32>,
        stage: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_index: Option<usize>,
        #[serde(flatten)]
        call: CallRecord,
    },
    Draft {
        iteration: u32,
        index: usize,
        draft_id: String,
        prompt: String,
        mesh_digest: String,
    },
    DraftDiscarded {
        iteration: u32,
        prompt: String,
        reason: String,
    },
    SelectionReask {
        iteration: u32,
        attempt: u32,
        reason: String,
    },
    Selection {
        iteration: u32,
        best_index: usize,
        fallback: bool,
    },
    /// Selection could not be parsed and defaulted to the first draft.
    SelectionFallback {
        iteration: u32,
        reason: String,
    },
    VerdictReask {
        iteration: u32,
        attempt: u32,
        reason: String,
    },
    Decision {
        iteration: u32,
        decision: Decision,
        forced_by_cap: bool,
        parse_fallback: bool,
    },
    MemoryAppend {
        record: MemoryRecord,
    },
    RunEnd {
        iterations: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_draft_id: Option<String>,
    },
    RunError {
        stage: String,
        error: String,
        kind: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub ts_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Single writer for one session directory. Every event is flushed as soon
/// as it is written so a crash leaves at most one partial line.
pub struct SessionWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    seq: u64,
}

impl SessionWriter {
    /// Create `dir` (if needed), truncate its log and write the header.
    pub fn create(dir: &Path, kind: &str, seed: u64, config: Value) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = Self { dir: dir.to_path_buf(), out: BufWriter::new(file), seq: 0 };
        w.emit(Event::Header { schema_version: SCHEMA_VERSION, kind: kind.into(), seed, config })?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn emit(&mut self, event: Event) -> Result<()> {
        let env = Envelope { seq: self.seq, ts_ms: now_ms(), event };
        let line = serde_json::to_string(&env).map_err(|e| Error::Io(format!("encode event: {e}")))?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(|e| io_err(&self.dir.join(LOG_FILE), e))?;
        self.seq += 1;
        Ok(())
    }

    /// Write every record collected in `log` as `backend_call` events.
    pub fn emit_calls(
        &mut self,
        iteration: Option<u32>,
        stage: &str,
        prompt_index: Option<usize>,
        log: &CallLog,
    ) -> Result<()> {
        for call in log.drain() {
            self.emit(Event::BackendCall { iteration, stage: stage.into(), prompt_index, call })?;
        }
        Ok(())
    }

    /// Store a draft's images, mesh and views under `drafts/<draft_id>/`.
    pub fn write_draft(&self, d: &DraftModel) -> Result<()> {
        let dir = self.dir.join("drafts").join(&d.draft_id);
        let views = dir.join("views");
        fs::create_dir_all(&views).map_err(|e| io_err(&views, e))?;
        write_file(&dir.join("gen.png"), &encode_png(&d.gen_image.pixels))?;
        write_file(&dir.join("fg.png"), &encode_png(&d.fg_image.pixels))?;
        write_file(&dir.join("mesh.glb"), &write_glb(&d.mesh))?;
        for (name, img) in d.views.iter() {
            write_file(&views.join(format!("{name}.png")), &encode_png(&img.pixels))?;
        }
        Ok(())
    }

    pub fn write_memory(&self, memory: &Memory) -> Result<()> {
        let json = serde_json::to_vec_pretty(memory).map_err(|e| Error::Io(format!("encode memory: {e}")))?;
        write_file(&self.dir.join(MEMORY_FILE), &json)
    }

    /// Export the final model as GLB and OBJ, its six views and the grid.
    pub fn write_final(&self, d: &DraftModel) -> Result<PathBuf> {
        let dir = self.dir.join("final");
        write_final_outputs(d, &dir)?;
        Ok(dir)
    }
}

/// Write `model.glb`, `model.obj` (with material and texture), the six
/// views and `grid.png` into `dir`.
pub fn write_final_outputs(d: &DraftModel, dir: &Path) -> Result<()> {
    let views = dir.join("views");
    fs::create_dir_all(&views).map_err(|e| io_err(&views, e))?;
    write_file(&dir.join("model.glb"), &write_glb(&d.mesh))?;
    write_obj(&d.mesh, dir, "model")?;
    write_views(&d.views, &views)?;
    write_file(&dir.join("grid.png"), &encode_png(&compose_view_grid(&d.views).pixels))
}

/// Write `<view>.png` for each of the six views.
pub fn write_views(views: &ViewSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, img) in views.iter() {
        write_file(&dir.join(format!("{name}.png")), &encode_png(&img.pixels))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Canonical image and mesh ids of a draft's artifacts. The loop assigns
/// these when building drafts, so loaded drafts compare equal.
pub fn gen_image_id(draft_id: &str) -> String {
    format!("{draft_id}/gen")
}

pub fn fg_image_id(draft_id: &str) -> String {
    format!("{draft_id}/fg")
}

pub fn mesh_id(draft_id: &str) -> String {
    format!("{draft_id}/mesh")
}

/// Load a stored draft from `drafts/<draft_id>/`.
pub fn load_draft(session_dir: &Path, draft_id: &str, prompt: &str, iteration: u32) -> Result<DraftModel> {
    let dir = session_dir.join("drafts").join(draft_id);
    let png = |p: PathBuf| -> Result<image::RgbaImage> {
        decode_png(&read_file(&p)?).map_err(|e| Error::Load(format!("{}: {e}", p.display())))
    };
    let mut mesh = read_glb(&read_file(&dir.join("mesh.glb"))?).map_err(|e| Error::Load(e.to_string()))?;
    mesh.id = mesh_id(draft_id);
    let views = ViewName::ALL.map(|v| (v, png(dir.join("views").join(format!("{v}.png")))));
    let mut loaded = Vec::with_capacity(6);
    for (v, img) in views {
        loaded.push(ImageAsset::new(format!("{}#{}", mesh.id, v), img?));
    }
    let views: [ImageAsset; 6] = loaded.try_into().expect("six views");
    Ok(DraftModel {
        draft_id: draft_id.into(),
        prompt: prompt.into(),
        gen_image: ImageAsset::new(gen_image_id(draft_id), png(dir.join("gen.png"))?),
        fg_image: ImageAsset::new(fg_image_id(draft_id), png(dir.join("fg.png"))?),
        mesh,
        views: ViewSet::new(views).map_err(|e| Error::Load(format!("{draft_id}: {e}")))?,
        iteration,
    })
}

/// A session read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSession {
    pub dir: PathBuf,
    pub kind: String,
    pub seed: u64,
    pub config: Value,
    pub events: Vec<Envelope>,
    pub memory: Memory,
    /// Completed iterations (those with a recorded decision).
    pub outcomes: Vec<IterationOutcome>,
    /// The last line was cut off and skipped.
    pub incomplete_tail: bool,
    pub finished: bool,
}

impl LoadedSession {
    pub fn calls(&self) -> impl Iterator<Item = (&str, &CallRecord)> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::BackendCall { stage, call, .. } => Some((stage.as_str(), call)),
            _ => None,
        })
    }

    pub fn count_calls(&self, role: BackendRole) -> usize {
        self.calls().filter(|(_, c)| c.role == role).count()
    }
}

/// Read a session directory, rebuilding memory and iteration outcomes from
/// the event stream and draft artifacts.
pub fn load_session(dir: &Path) -> Result<LoadedSession> {
    let path = dir.join(LOG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut events = Vec::with_capacity(lines.len());
    let mut incomplete_tail = false;
    for (i, line) in lines.iter().enumerate() {
        let body = line.trim_end_matches('\n');
        if body.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Envelope>(body) {
            Ok(env) => events.push(env),
            Err(_) if i + 1 == lines.len() && !line.ends_with('\n') => incomplete_tail = true,
            Err(e) => return Err(Error::Load(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    let Some(Envelope { event: Event::Header { schema_version, kind, seed, config }, .. }) = events.first().cloned()
    else {
        // a header with an unknown shape may still carry a readable version
        let version = lines
            .first()
            .and_then(|l| serde_json::from_str::<Value>(l).ok())
            .and_then(|v| v.get("schema_version").cloned());
        return Err(match version {
            Some(v) => Error::Load(format!("unsupported schema version {v}, expected {SCHEMA_VERSION}")),
            None => Error::Load(format!("{}: missing session header", path.display())),
        });
    };
    if schema_version != SCHEMA_VERSION {
        return Err(Error::Load(format!("unsupported schema version {schema_version}, expected {SCHEMA_VERSION}")));
    }

    let mut memory = Memory::new();
    let mut outcomes = Vec::new();
    let mut pending: BTreeMap<u32, IterationOutcome> = BTreeMap::new();
    let mut finished = false;
    for env in &events {
        match &env.event {
            Event::Prompts { iteration, prompts } => {
                pending.entry(*iteration).or_insert_with(|| IterationOutcome::empty(*iteration)).prompts =
                    prompts.clone();
            }
            Event::Draft { iteration, draft_id, prompt, .. } => {
                let d = load_draft(dir, draft_id, prompt, *iteration)?;
                pending.entry(*iteration).or_insert_with(|| IterationOutcome::empty(*iteration)).drafts.push(d);
            }
            Event::DraftDiscarded { iteration, prompt, reason } => {
                pending
                    .entry(*iteration)
                    .or_insert_with(|| IterationOutcome::empty(*iteration))
                    .discarded
                    .push(Discarded { prompt: prompt.clone(), reason: reason.clone() });
            }
            Event::Selection { iteration, best_index, .. } => {
                pending.entry(*iteration).or_insert_with(|| IterationOutcome::empty(*iteration)).best_index =
                    *best_index;
            }
            Event::Decision { iteration, decision, .. } => {
                let mut o = pending.remove(iteration).unwrap_or_else(|| IterationOutcome::empty(*iteration));
                o.decision = decision.clone();
                outcomes.push(o);
            }
            Event::MemoryAppend { record } => memory.append(record.clone()).map_err(|e| Error::Load(e.to_string()))?,
            Event::RunEnd { .. } => finished = true,
            _ => {}
        }
    }
    Ok(LoadedSession {
        dir: dir.to_path_buf(),
        kind,
        seed,
        config,
        events,
        memory,
        outcomes,
        incomplete_tail,
        finished,
    })
}

/// Remove wall-clock fields (`ts_ms`, `latency_ms`) from a log so two runs
/// can be compared byte for byte.
pub fn strip_volatile(log: &str) -> String {
    log.lines()
        .map(|line| match serde_json::from_str::<Value>(line) {
            Ok(mut v) => {
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("ts_ms");
                    obj.remove("latency_ms");
                }
                v.to_string()
            }
            Err(_) => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Plain-text iteration table: prompts, best index, decision and a
/// feedback excerpt per iteration.
pub fn format_iteration_table(s: &LoadedSession) -> String {
    const EXCERPT: usize = 60;
    let mut out = format!(
        "session {} (kind {}, seed {}){}\n",
        s.dir.display(),
        s.kind,
        s.seed,
        if s.incomplete_tail { " [incomplete final event]" } else { "" }
    );
    out.push_str(&format!("{:<5} {:<5} {:<8} {:<9} {}\n", "iter", "best", "drafts", "decision", "feedback"));
    for o in &s.outcomes {
        let (decision, feedback) = match &o.decision {
            Decision::Accept => ("accept", ""),
            Decision::Refine { feedback } => ("refine", feedback.as_str()),
        };
        let flat = feedback.replace('\n', " ");
        let excerpt: String = flat.chars().take(EXCERPT).collect();
        let ellipsis = if flat.chars().count() > EXCERPT { "…" } else { "" };
        out.push_str(&format!(
            "{:<5} {:<5} {:<8} {:<9} {excerpt}{ellipsis}\n",
            o.iteration,
            o.best_index,
            format!("{}/{}", o.drafts.len(), o.drafts.len() + o.discarded.len()),
            decision
        ));
        for (i, p) in o.prompts.iter().enumerate() {
            out.push_str(&format!("      prompt {i}: {p}\n"));
        }
    }
    if !s.finished {
        out.push_str("(run did not finish)\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendRole;
    use serde_json::json;

    fn call() -> CallRecord {
        CallRecord {
            role: BackendRole::Lmm,
            op: "complete".into(),
            request: json!({"x": 1}),
            response: json!("ok"),
            ok: true,
            error: None,
            retries: 0,
            latency_ms: 1.5,
        }
    }

    #[test]
    fn envelope_round_trip() {
        let env = Envelope {
            seq: 3,
            ts_ms: 10,
            event: Event::BackendCall { iteration: Some(1), stage: "select".into(), prompt_index: None, call: call() },
        };
        let s = serde_json::to_string(&env).unwrap();
        assert!(s.contains("\"event\":\"backend_call\""));
        assert_eq!(serde_json::from_str::<Envelope>(&s).unwrap(), env);
    }

    #[test]
    fn strip_volatile_drops_clock_fields() {
        let a = r#"{"seq":0,"ts_ms":5,"event":"x","latency_ms":2.0,"ok":true}"#;
        let b = r#"{"seq":0,"ts_ms":9,"event":"x","latency_ms":7.5,"ok":true}"#;
        assert_eq!(strip_volatile(a), strip_volatile(b));
    }

    #[test]
    fn truncated_tail_and_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = SessionWriter::create(dir.path(), "idea23d", 1, json!({})).unwrap();
        w.emit(Event::IterationStart { iteration: 0 }).unwrap();
        drop(w);
        let path = dir.path().join(LOG_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str(r#"{"seq":2,"ts_ms":1,"event":"iter"#);
        fs::write(&path, &text).unwrap();
        let s = load_session(dir.path()).unwrap();
        assert!(s.incomplete_tail);
        assert_eq!(s.events.len(), 2);
        assert!(!s.finished);

        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":99", 1);
        fs::write(&path, bumped).unwrap();
        let err = load_session(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Load(m) if m.contains("99")), "{err}");
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = SessionWriter::create(dir.path(), "idea23d", 1, json!({})).unwrap();
        w.emit(Event::IterationStart { iteration: 0 }).unwrap();
        drop(w);
        let path = dir.path().join(LOG_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(
            &path,
            format!("{}garbage\n{}", &text[..text.find('\n').unwrap() + 1], &text[text.find('\n').unwrap() + 1..]),
        )
        .unwrap();
        assert!(matches!(load_session(dir.path()), Err(Error::Load(_))));
    }
}
