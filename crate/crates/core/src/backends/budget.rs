use serde::Serialize;

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    /// Summarization building a unit at the given level.
    Summarize { level: u8 },
    Extract,
    Merge,
}

/// Generator calls issued during one round, by purpose.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CallCounts {
    pub summarize_level2: u32,
    pub summarize_level3: u32,
    pub extract: u32,
    pub merge: u32,
}

impl CallCounts {
    pub fn total(&self) -> u32 {
        self.summarize_level2 + self.summarize_level3 + self.extract + self.merge
    }
}

/// Per-round allowance of text-generator calls.
#[derive(Debug, Clone)]
pub struct CallBudget {
    limit: u32,
    counts: CallCounts,
}

impl CallBudget {
    pub fn new(limit: u32) -> Self {
        Self {
            limit,
            counts: CallCounts::default(),
        }
    }

    /// Reserves one call, failing once the allowance is spent.
    pub fn charge(&mut self, kind: CallKind) -> Result<(), BackendError> {
        if self.counts.total() >= self.limit {
            return Err(BackendError::BudgetExceeded { limit: self.limit });
        }
        match kind {
            CallKind::Summarize { level } if level <= 2 => self.counts.summarize_level2 += 1,
            CallKind::Summarize { .. } => self.counts.summarize_level3 += 1,
            CallKind::Extract => self.counts.extract += 1,
            CallKind::Merge => self.counts.merge += 1,
        }
        Ok(())
    }

    pub fn counts(&self) -> &CallCounts {
        &self.counts
    }

    pub fn remaining(&self) -> u32 {
        self.limit.saturating_sub(self.counts.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_is_enforced() {
        let mut b = CallBudget::new(2);
        b.charge(CallKind::Extract).unwrap();
        b.charge(CallKind::Summarize { level: 3 }).unwrap();
        assert_eq!(
            b.charge(CallKind::Merge),
            Err(BackendError::BudgetExceeded { limit: 2 })
        );
        assert_eq!(b.counts().extract, 1);
        assert_eq!(b.counts().summarize_level3, 1);
        assert_eq!(b.remaining(), 0);
    }
}
