//! Exit codes: 0 ok, 2 invalid input or configuration, 3 training
//! divergence, 4 file-system errors.

use std::fmt;

use kinetrace::Error;

pub const OK: u8 = 0;
pub const INVALID: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const IO: u8 = 4;

#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    Invalid(message.into()).into()
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } => DIVERGENCE,
                Error::Io { .. } => IO,
                _ => INVALID,
            };
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    INVALID
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification() {
        let div: anyhow::Error = Error::Divergence { epoch: 4 }.into();
        assert_eq!(code_for(&div.context("cell FB1")), DIVERGENCE);
        let io: anyhow::Result<()> = Err(std::io::Error::other("gone")).context("reading");
        assert_eq!(code_for(&io.unwrap_err()), IO);
        assert_eq!(code_for(&invalid("bad")), INVALID);
        assert_eq!(code_for(&Error::Argument("x".into()).into()), INVALID);
    }
}
