//! Per-iteration memory: best prompt, best draft and feedback of every
//! completed round, in order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest digest budget honored; smaller requests are raised to it.
pub const MIN_DIGEST_BUDGET: usize = 256;

/// Identity of a stored draft: its id plus the digest of its canonical mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftRef {
    pub draft_id: String,
    /// Hex SHA-256 of the canonical mesh buffers.
    pub mesh_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub iteration: u32,
    pub best_prompt: String,
    pub best_draft_ref: DraftRef,
    /// Empty for the accepting iteration.
    pub feedback: String,
}

impl MemoryRecord {
    fn block(&self) -> String {
        format!("[iter {}] prompt: {}; feedback: {}", self.iteration, self.best_prompt, self.feedback)
    }
}

/// Append-only, iteration-ordered record sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Memory {
    records: Vec<MemoryRecord>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MemoryRecord> {
        self.records.last()
    }

    /// Append the record for the next iteration; gaps and repeats fail.
    pub fn append(&mut self, record: MemoryRecord) -> Result<()> {
        let expected = self.records.len() as u32;
        if record.iteration != expected {
            return Err(Error::MemoryOrder { expected, got: record.iteration });
        }
        self.records.push(record);
        Ok(())
    }

    /// Newest-first text blocks, one per record, dropping the oldest ones
    /// until the total fits `budget_chars`. The newest block is always kept
    /// in full.
    pub fn digest(&self, budget_chars: usize) -> String {
        let budget = budget_chars.max(MIN_DIGEST_BUDGET);
        let mut out = String::new();
        let mut used = 0;
        for (i, rec) in self.records.iter().rev().enumerate() {
            let block = rec.block();
            let len = block.chars().count() + usize::from(i > 0);
            if i > 0 && used + len > budget {
                break;
            }
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&block);
            used += len;
        }
        out
    }
}
