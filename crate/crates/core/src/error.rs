//! Crate-wide error type.

use crate::geometry::ArrayWitness;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The sample contains a three-point axis-parallel array, so no additive
    /// decomposition can be guaranteed (and on a rectangle none exists).
    #[error("sample contains a three-point array: {witness}")]
    ArrayPresent { witness: ArrayWitness },

    /// No dyadic continuity radius down to 2^-60 satisfies the sample:
    /// two points closer than any admissible 2δ differ by at least eps.
    #[error("no dyadic continuity radius ≥ 2^-{max_exponent} fits the sample at eps = {eps}")]
    NoModulus { eps: f64, max_exponent: u32 },

    /// No lattice level up to `max_n` satisfies the cell-width and
    /// separation requirements.
    #[error("no usable lattice level ≤ {max_n}: {detail}")]
    ResolutionExhausted { max_n: u32, detail: String },

    /// An internal certificate failed: one of the construction's provable
    /// bounds does not hold on the data actually produced.
    #[error("construction guarantee violated: {detail}")]
    GuaranteeViolated { detail: String },

    /// The exact solver hit an inconsistent alignment cycle: the sample
    /// values admit no exact additive decomposition.
    #[error("no exact additive decomposition exists: {detail}")]
    NotDecomposable { detail: String },

    /// Exhaustive path enumeration is limited to small graphs.
    #[error("graph too large for exhaustive path check: {vertices} vertices (limit {limit})")]
    TooLarge { vertices: usize, limit: usize },

    /// A point generator exhausted its retry budget.
    #[error("sample generation failed for family `{family}`: {detail}")]
    GenerationFailed { family: String, detail: String },

    /// Malformed input data (CSV record, coordinate, or flag value).
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Invalid run configuration.
    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn guarantee(detail: impl Into<String>) -> Self {
        Error::GuaranteeViolated { detail: detail.into() }
    }

    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        Error::Parse { line, detail: detail.into() }
    }
}
