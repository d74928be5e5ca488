use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible with the operation.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    /// A caller broke a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed container or checkpoint file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// An error raised inside a named layer.
    #[error("{layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Shape {
            op,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    /// Wrap this error with the name of the layer that raised it.
    pub fn in_layer(self, layer: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }

    /// True if this error (or a wrapped cause) reports a non-finite value.
    pub fn is_non_finite(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Layer { source, .. } => source.is_non_finite(),
            _ => false,
        }
    }
}

/// Attach a layer name to the error of a fallible result.
pub(crate) trait LayerContext<T> {
    fn layer(self, name: &str) -> Result<T>;
}

impl<T> LayerContext<T> for Result<T> {
    fn layer(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_layer(name))
    }
}
