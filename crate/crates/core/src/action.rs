use serde::{Deserialize, Serialize};

/// Routing decision. Index 0 is drop; expert `n` is index `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Drop,
    Expert(usize),
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Drop => 0,
            Action::Expert(n) => n + 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Drop
        } else {
            Action::Expert(i - 1)
        }
    }

    pub fn expert(self) -> Option<usize> {
        match self {
            Action::Drop => None,
            Action::Expert(n) => Some(n),
        }
    }

    /// Signed code used in CSV output: -1 for drop, otherwise the expert id.
    pub fn code(self) -> i64 {
        match self {
            Action::Drop => -1,
            Action::Expert(n) => n as i64,
        }
    }
}

/// Valid-action mask of length `N + 1`. Drop is always valid; an expert is
/// valid unless its waiting queue is full.
pub fn action_mask(waiting_full: impl IntoIterator<Item = bool>) -> Vec<bool> {
    std::iter::once(true)
        .chain(waiting_full.into_iter().map(|f| !f))
        .collect()
}
