use thiserror::Error;

use crate::mixture::MixtureError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mixture: {}", join(.0))]
    Mixture(Vec<MixtureError>),
    #[error("invalid field: {0}")]
    Field(String),
    #[error("invalid gamma path: {0}")]
    Gamma(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("point (t = {t}, x = {x}) outside the solved domain")]
    OutOfDomain { t: f64, x: f64 },
    #[error("no stored slice within 1e-9 of t = {0}")]
    MissingSlice(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{escaped} of {total} paths left the x-grid")]
    PathEscape { escaped: usize, total: usize },
    #[error("N = {n} exceeds the enumeration budget ({max})")]
    TooLarge { n: usize, max: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(errs: &[MixtureError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
