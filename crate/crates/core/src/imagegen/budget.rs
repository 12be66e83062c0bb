use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("all {max} generation attempts used")]
pub struct AttemptError {
    pub max: u32,
}

/// Per pair-round generation budget. Grants attempt indices 0, 1, ... up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptBudget {
    max: u32,
    used: u32,
}

impl AttemptBudget {
    pub fn new(max: u32) -> Self {
        AttemptBudget { max, used: 0 }
    }

    pub fn request_attempt(&mut self) -> Result<u32, AttemptError> {
        if self.used >= self.max {
            return Err(AttemptError { max: self.max });
        }
        self.used += 1;
        Ok(self.used - 1)
    }

    pub fn used(&self) -> u32 {
        self.used
    }

    pub fn max(&self) -> u32 {
        self.max
    }

    pub fn remaining(&self) -> u32 {
        self.max - self.used
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grants_two_then_refuses() {
        let mut budget = AttemptBudget::new(2);
        assert_eq!(budget.request_attempt(), Ok(0));
        assert_eq!(budget.request_attempt(), Ok(1));
        assert_eq!(budget.request_attempt(), Err(AttemptError { max: 2 }));
        assert_eq!(budget.used(), 2);
        assert_eq!(budget.remaining(), 0);
    }
}
