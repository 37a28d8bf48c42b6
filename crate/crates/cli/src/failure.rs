use std::process::ExitCode;

/// Command failure, classified by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] anyhow::Error),
    #[error("{0:#}")]
    Internal(anyhow::Error),
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Marks output-side failures (the run directory could not be written).
pub trait OutputContext<T> {
    fn output(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OutputContext<T> for Result<T, E> {
    fn output(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Internal(e.into().context(format!("writing {what}"))))
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.into())
            }
        }
    )*};
}

data_errors!(
    foodseg_core::Error,
    foodseg_nn::NnError,
    foodseg_relem::ReLeMError,
    foodseg_segmenter::SegError
);
