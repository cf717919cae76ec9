use std::collections::HashMap;

use thiserror::Error;

use super::ids::UnitId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("seq {got} from {source_id} does not follow {last}")]
pub struct SeqViolation {
    pub source_id: UnitId,
    pub last: u64,
    pub got: u64,
}

/// Checks that sequence numbers strictly increase per source.
#[derive(Debug, Default, Clone)]
pub struct SeqTracker {
    last: HashMap<UnitId, u64>,
}

impl SeqTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `seq` for `source`; a repeated or decreasing value is rejected
    /// and leaves the tracker unchanged.
    pub fn observe(&mut self, source: &UnitId, seq: u64) -> Result<(), SeqViolation> {
        match self.last.get_mut(source) {
            Some(last) if seq <= *last => Err(SeqViolation {
                source_id: source.clone(),
                last: *last,
                got: seq,
            }),
            Some(last) => {
                *last = seq;
                Ok(())
            }
            None => {
                self.last.insert(source.clone(), seq);
                Ok(())
            }
        }
    }

    pub fn last(&self, source: &UnitId) -> Option<u64> {
        self.last.get(source).copied()
    }

    pub fn forget(&mut self, source: &UnitId) {
        self.last.remove(source);
    }
}
