use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::concepts::{concept_name, hue_histogram_region, perceive, text_concepts};
use crate::error::{Error, Result};
use crate::gateway::{AgentRole, LmmBackend, LmmRequest};

const STYLES: [&str; 8] = [
    "studio render",
    "clay model",
    "toy figure",
    "product shot",
    "museum piece",
    "game asset",
    "sculpture",
    "plush toy",
];

/// Procedural LMM that "sees" concept hues.
///
/// * prompt generation: starts from the concepts named in the idea text,
///   then each round keeps the latest best prompt's concepts and adds the
///   first concept listed after `missing:` in the feedback;
/// * selection: scores every lineup column by matched minus extra concepts;
/// * feedback: accepts when the candidate shows every idea concept, else
///   lists the missing ones;
/// * caption: names the concepts visible in the attached images.
#[derive(Debug, Clone, Default)]
pub struct ConceptLmm;

fn join_concepts(c: &[usize]) -> String {
    c.iter().map(|&i| concept_name(i)).collect::<Vec<_>>().join(" and ")
}

fn idea_concepts(req: &LmmRequest, skip_last_image: bool) -> Vec<usize> {
    let mut out = req.text_parts().next().map(text_concepts).unwrap_or_default();
    let images: Vec<_> = req.images().collect();
    let take = if skip_last_image { images.len().saturating_sub(1) } else { images.len() };
    for img in &images[..take] {
        for c in perceive(&img.pixels) {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

fn number_after(text: &str, marker: &str) -> Option<usize> {
    let rest = &text[text.find(marker)? + marker.len()..];
    let digits: String = rest.trim_start().chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

impl ConceptLmm {
    fn prompts(&self, req: &LmmRequest) -> String {
        let format = req.text_parts().last().unwrap_or_default();
        let n = number_after(format, "exactly").unwrap_or(3).max(1);
        let sys = &req.system_prompt;
        let latest_prompt = sys
            .find("] prompt: ")
            .map(|i| &sys[i + "] prompt: ".len()..])
            .map(|rest| rest.split("; feedback:").next().unwrap_or(rest));
        let mut concepts = match latest_prompt {
            Some(p) => text_concepts(p),
            None => req.text_parts().next().map(text_concepts).unwrap_or_default(),
        };
        if let Some(i) = sys.find("missing:") {
            let line = sys[i + "missing:".len()..].lines().next().unwrap_or("");
            if let Some(&c) = text_concepts(line).iter().find(|c| !concepts.contains(c)) {
                concepts.push(c);
            }
        }
        (0..n)
            .map(|i| {
                let body = if concepts.is_empty() {
                    "a simple object".to_string()
                } else {
                    let mut rot = concepts.clone();
                    rot.rotate_left(i % concepts.len());
                    join_concepts(&rot)
                };
                let style = STYLES[i % STYLES.len()];
                let extra = if i >= STYLES.len() { format!(" take {i}") } else { String::new() };
                format!("{}. {body}, {style}{extra}", i + 1)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn select(&self, req: &LmmRequest) -> String {
        let format = req.text_parts().last().unwrap_or_default();
        let n = number_after(format, "of the").unwrap_or(1).max(1);
        let wanted = idea_concepts(req, true);
        let Some(lineup) = req.images().last() else {
            return "BEST: 0".into();
        };
        let col = lineup.width() / n as u32;
        let mut best = (i64::MIN, 0);
        for k in 0..n {
            let seen = hue_histogram_region(&lineup.pixels, k as u32 * col, (k as u32 + 1) * col).concepts();
            let hit = seen.iter().filter(|c| wanted.contains(c)).count() as i64;
            let score = 2 * hit - (seen.len() as i64 - hit);
            if score > best.0 {
                best = (score, k);
            }
        }
        format!("Draft {} matches the idea best.\nBEST: {}", best.1, best.1)
    }

    fn feedback(&self, req: &LmmRequest) -> String {
        let wanted = idea_concepts(req, true);
        let seen = req.images().last().map(|i| perceive(&i.pixels)).unwrap_or_default();
        let missing: Vec<usize> = wanted.into_iter().filter(|c| !seen.contains(c)).collect();
        if missing.is_empty() {
            "VERDICT: ACCEPT\nThe model covers every element of the idea.".into()
        } else {
            format!(
                "VERDICT: REFINE\nmissing: {}",
                missing.iter().map(|&c| concept_name(c)).collect::<Vec<_>>().join(", ")
            )
        }
    }

    fn caption(&self, req: &LmmRequest) -> String {
        let mut seen = Vec::new();
        for img in req.images() {
            for c in perceive(&img.pixels) {
                if !seen.contains(&c) {
                    seen.push(c);
                }
            }
        }
        if seen.is_empty() {
            "a simple object".into()
        } else {
            format!("a {}", join_concepts(&seen))
        }
    }
}

impl LmmBackend for ConceptLmm {
    fn complete(&self, req: &LmmRequest) -> Result<String> {
        Ok(match req.role {
            AgentRole::PromptGen => self.prompts(req),
            AgentRole::Select => self.select(req),
            AgentRole::Feedback => self.feedback(req),
            AgentRole::Caption => self.caption(req),
        })
    }
}

/// Replays scripted replies per agent role: queued replies first, then the
/// role's repeating reply, then the fallback backend.
#[derive(Default)]
pub struct ScriptedLmm {
    queues: Mutex<HashMap<AgentRole, VecDeque<String>>>,
    repeat: HashMap<AgentRole, String>,
    fallback: Option<Arc<dyn LmmBackend>>,
    seen: Mutex<Vec<AgentRole>>,
}

impl ScriptedLmm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue one reply for `role`.
    pub fn then(self, role: AgentRole, reply: impl Into<String>) -> Self {
        self.queues.lock().expect("script poisoned").entry(role).or_default().push_back(reply.into());
        self
    }

    /// Reply for `role` once its queue is empty.
    pub fn always(mut self, role: AgentRole, reply: impl Into<String>) -> Self {
        self.repeat.insert(role, reply.into());
        self
    }

    pub fn with_fallback(mut self, b: Arc<dyn LmmBackend>) -> Self {
        self.fallback = Some(b);
        self
    }

    /// Roles of all calls received so far.
    pub fn calls(&self) -> Vec<AgentRole> {
        self.seen.lock().expect("script poisoned").clone()
    }
}

impl LmmBackend for ScriptedLmm {
    fn complete(&self, req: &LmmRequest) -> Result<String> {
        self.seen.lock().expect("script poisoned").push(req.role);
        if let Some(r) = self.queues.lock().expect("script poisoned").get_mut(&req.role).and_then(VecDeque::pop_front) {
            return Ok(r);
        }
        if let Some(r) = self.repeat.get(&req.role) {
            return Ok(r.clone());
        }
        match &self.fallback {
            Some(b) => b.complete(req),
            None => Err(Error::BackendContractViolation(format!("script exhausted for {}", req.role.as_str()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::LmmPart;

    fn req(role: AgentRole, sys: &str, parts: Vec<LmmPart>) -> LmmRequest {
        LmmRequest { role, system_prompt: sys.into(), parts, max_output_chars: 1000, temperature: 0.0, seed: 0 }
    }

    #[test]
    fn scripted_order() {
        let s = ScriptedLmm::new()
            .then(AgentRole::PromptGen, "PROMPT: a white rabbit")
            .always(AgentRole::Feedback, "VERDICT: REFINE\nmore");
        let r = req(AgentRole::PromptGen, "", vec![LmmPart::Text("x".into())]);
        assert_eq!(s.complete(&r).unwrap(), "PROMPT: a white rabbit");
        assert!(s.complete(&r).is_err());
        let f = req(AgentRole::Feedback, "", vec![LmmPart::Text("x".into())]);
        assert_eq!(s.complete(&f).unwrap(), "VERDICT: REFINE\nmore");
        assert_eq!(s.complete(&f).unwrap(), "VERDICT: REFINE\nmore");
        assert_eq!(s.calls().len(), 4);
    }

    #[test]
    fn prompt_generation_adds_one_missing_concept() {
        let parts = vec![LmmPart::Text("a rabbit".into()), LmmPart::Text("Write exactly 2 prompts".into())];
        let first = ConceptLmm.complete(&req(AgentRole::PromptGen, "none yet", parts.clone())).unwrap();
        assert_eq!(first, "1. rabbit, studio render\n2. rabbit, clay model");
        let sys = "history:\n[iter 0] prompt: rabbit, studio render; feedback: missing: doughnut, hat\nfeedback: missing: doughnut, hat";
        let next = ConceptLmm.complete(&req(AgentRole::PromptGen, sys, parts)).unwrap();
        assert_eq!(next, "1. rabbit and doughnut, studio render\n2. doughnut and rabbit, clay model");
    }
}
