use serde::{Deserialize, Serialize};

use crate::runner::RunRecord;

/// Token accounting across a set of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    /// Generated tokens per record, over records that made at least one call.
    pub mean_completion_tokens: f64,
    /// Records where at least one count came from the whitespace heuristic.
    pub approximate_records: usize,
}

impl UsageTotals {
    pub fn is_approximate(&self) -> bool {
        self.approximate_records > 0
    }
}

/// Fallback token count when the endpoint reports no usage.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn usage_totals(records: &[RunRecord]) -> UsageTotals {
    let mut totals = UsageTotals::default();
    let mut counted = 0u64;
    for record in records {
        if record.calls.is_empty() {
            continue;
        }
        counted += 1;
        let mut approximate = false;
        for call in &record.calls {
            let c = &call.completion;
            match c.prompt_tokens {
                Some(n) => totals.total_prompt_tokens += n,
                None => approximate = true,
            }
            totals.total_completion_tokens += c.completion_tokens.unwrap_or_else(|| {
                approximate = true;
                whitespace_tokens(&c.text)
            });
        }
        if approximate {
            totals.approximate_records += 1;
        }
    }
    if counted > 0 {
        totals.mean_completion_tokens = totals.total_completion_tokens as f64 / counted as f64;
    }
    totals
}
