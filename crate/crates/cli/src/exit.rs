use std::fmt;

use cis_core::model::LoadError;
use cis_core::Error;

pub const OK: u8 = 0;
pub const INVALID: u8 = 1;
pub const PARSE: u8 = 2;
pub const CAP: u8 = 3;
pub const DISAGREEMENT: u8 = 4;
pub const AUDIT: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn code_of(err: &Error) -> u8 {
    match err {
        Error::SizeOverflow { .. } | Error::Infeasible { .. } => CAP,
        Error::ZeroProbabilityObservation { .. } | Error::UnreachableInformation { .. } => AUDIT,
        _ => INVALID,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::new(code_of(&err), err.to_string())
    }
}

impl From<LoadError> for Failure {
    fn from(err: LoadError) -> Self {
        match err {
            LoadError::Model(e) => e.into(),
            other => Failure::new(PARSE, other.to_string()),
        }
    }
}
