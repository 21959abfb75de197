use std::process::ExitCode;

use cmkt_core::Error as CoreError;

pub const SUCCESS: u8 = 0;
pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

/// Bad flags, configuration or preconditions.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A numeric check failed (for example a gradient slot over tolerance).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericFailure(pub String);

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidArgument(_) => USAGE,
        e if e.is_numeric() => NUMERIC,
        _ => DATA,
    }
}

/// Maps an error chain to the process exit code.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return USAGE;
        }
        if cause.downcast_ref::<NumericFailure>().is_some() {
            return NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    DATA
}

pub fn exit_code(code: u8) -> ExitCode {
    ExitCode::from(code)
}
