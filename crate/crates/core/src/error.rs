// Copyright 2026 The sgfusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value fell outside the range it is required to lie in.
    #[error("range error: {0}")]
    Range(String),

    /// Mismatched shapes: bin edges, dimensions, key sets.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A malformed artifact or text input.
    #[error("parse error: {0}")]
    Parse(String),

    /// A pipeline stage was run before the stage that produces its inputs.
    #[error("missing upstream artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's input rather than by the run
    /// itself, including stages invoked before their inputs exist.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingArtifact { .. })
    }
}
