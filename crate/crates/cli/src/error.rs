use std::fmt;

use vslr_core::video::VideoError;
use vslr_core::ModelError;

/// A failure reported as one `error: <class>: <detail>` line.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub detail: String,
}

impl CliError {
    pub fn new(class: &'static str, detail: impl Into<String>) -> Self {
        Self {
            class,
            detail: detail.into(),
        }
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        Self::new("usage", detail)
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new("config", detail)
    }

    pub fn io(detail: impl Into<String>) -> Self {
        Self::new("io", detail)
    }

    pub fn with_context(self, what: &str) -> Self {
        Self {
            detail: format!("{what}: {}", self.detail),
            ..self
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            "usage" | "conflicting flags" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail = self.detail.replace('\n', " ");
        // Core messages sometimes already lead with the class.
        let detail = detail
            .strip_prefix(self.class)
            .and_then(|d| d.strip_prefix(": "))
            .unwrap_or(&detail);
        write!(f, "error: {}: {detail}", self.class)
    }
}

fn video_class(e: &VideoError) -> &'static str {
    match e {
        VideoError::Manifest { .. } => "manifest",
        VideoError::Container(_) => "video container",
        VideoError::Io(_) => "io",
        VideoError::Config(_) | VideoError::InvalidTarget(_) => "config",
        _ => "video",
    }
}

impl From<VideoError> for CliError {
    fn from(e: VideoError) -> Self {
        Self::new(video_class(&e), e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let class = match &e {
            ModelError::Video(v) => video_class(v),
            ModelError::ClassMismatch { .. } => "head/class mismatch",
            ModelError::NonFinite { .. } => "non-finite loss",
            ModelError::Checkpoint(_) => "checkpoint",
            ModelError::Io(_) => "io",
            ModelError::Config(_) | ModelError::HeadDivisibility { .. } | ModelError::Divisibility { .. } => "config",
            _ => "model",
        };
        Self::new(class, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
