use std::fmt;
use std::io;

/// Process exit codes. Stable; documented in the README.
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_SHAPE: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

/// An error together with the exit code it maps to.
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit {}: {:#}", self.code, self.error)
    }
}

fn classify(error: &anyhow::Error) -> i32 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return EXIT_MISSING_FILE;
            }
        }
        if let Some(fishcore::Error::Shape(_)) = cause.downcast_ref::<fishcore::Error>() {
            return EXIT_SHAPE;
        }
    }
    EXIT_OTHER
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        Self {
            code: classify(&error),
            error,
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

/// Forces a specific exit code onto a failing result, keeping
/// missing-file failures as they are.
pub trait ExitCode<T> {
    fn exit_code(self, code: i32) -> CmdResult<T>;
}

impl<T, E: Into<Failure>> ExitCode<T> for std::result::Result<T, E> {
    fn exit_code(self, code: i32) -> CmdResult<T> {
        self.map_err(|e| {
            let mut f = e.into();
            if f.code != EXIT_MISSING_FILE {
                f.code = code;
            }
            f
        })
    }
}
