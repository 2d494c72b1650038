use btfilter::corpus::CorpusError;
use btfilter::filter::PipelineError;
use btfilter::report::ReportError;
use btfilter::translate::TranslateError;
use btfilter::error::ArgumentError;
use btfilter::ErrorKind;

/// A failed command: what to print and which exit code to use.
#[derive(Debug)]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Transport => 3,
        }
    }
}

impl From<btfilter::Error> for Failure {
    fn from(e: btfilter::Error) -> Self {
        let kind = e.kind();
        // Include the whole source chain; transport errors bury the cause.
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            let text = s.to_string();
            if !message.contains(&text) {
                message.push_str(": ");
                message.push_str(&text);
            }
            source = s.source();
        }
        Failure { kind, message }
    }
}

macro_rules! via_core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                btfilter::Error::from(e).into()
            }
        }
    )*};
}

via_core_error!(ArgumentError, CorpusError, TranslateError, PipelineError, ReportError);
