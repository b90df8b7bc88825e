use thiserror::Error;

/// Errors produced while building or solving a streaming instance.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {what} needs {needed} entries, limit is {limit}")]
    Capacity {
        what: &'static str,
        needed: u128,
        limit: u128,
    },

    #[error("multipliers diverged after {iterations} iterations (max normalized multiplier {max_multiplier:e})")]
    Divergence { iterations: usize, max_multiplier: f64 },

    #[error("no feasible primal point recovered after {iterations} iterations")]
    NoPrimal { iterations: usize },

    #[error("convex-concave procedure found no binary solution (last rho {rho:e}, {runs} runs, min penalty {min_penalty:e})")]
    NoBinarySolution {
        rho: f64,
        runs: usize,
        min_penalty: f64,
    },

    #[error("oracle budget exceeded: {needed} level choices to enumerate, limit is {limit}")]
    OracleBudget { needed: u128, limit: u128 },

    #[error("invalid quality selection: {0}")]
    InvalidSelection(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
