use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in `{param}` at index {index}{context}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        context: String,
    },

    #[error("non-finite loss ({component} = {value}){context}")]
    NonFiniteLoss {
        component: &'static str,
        value: f64,
        context: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Dataset(#[from] crate::expert_data::DatasetError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches batch/update context to gradient and loss failures.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::NonFiniteGradient { param, index, .. } => Error::NonFiniteGradient {
                param,
                index,
                context: format!(" ({ctx})"),
            },
            Error::NonFiniteLoss {
                component, value, ..
            } => Error::NonFiniteLoss {
                component,
                value,
                context: format!(" ({ctx})"),
            },
            other => other,
        }
    }
}
