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

//! Experiment configuration.
//!
//! A single TOML file. Every field has a default, and the fully resolved
//! configuration is echoed into `report.json`.
//!
//! ```toml
//! master_seed = 7
//! output_dir = "out"
//! metric = "euclidean"
//! algorithms = ["sgeofl", "dzgd", "sgfusion", "topk_sgfusion(3)"]
//!
//! [world]
//! zones = 16
//! non_iid_tau = 2.0
//!
//! [dp]
//! enabled = true
//! epsilon = 10.0
//!
//! [mcmc]
//! max_steps = 200000
//!
//! [train]
//! rounds = 200
//! schedule = { mode = "inverse_mu_t", mu = 1.0 }
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dendrogram::McmcConfig;
use crate::error::{Error, Result};
use crate::fed_sim::{AlgorithmSpec, AlgorithmTag, TrainOptions, WorldSpec};
use crate::fusion::{Similarity, TrainingSchedule};
use crate::label_stats::{DpConfig, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: u64,
    pub schedule: TrainingSchedule,
    pub attention_similarity: Similarity,
    pub users_per_round: Option<usize>,
    pub record_every: u64,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = TrainOptions::default();
        TrainConfig {
            rounds: 200,
            schedule: TrainingSchedule::default(),
            attention_similarity: o.attention_similarity,
            users_per_round: Some(3),
            record_every: o.record_every,
            parallel: o.parallel,
        }
    }
}

impl TrainConfig {
    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            attention_similarity: self.attention_similarity,
            users_per_round: self.users_per_round,
            record_every: self.record_every,
            parallel: self.parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub metric: Metric,
    pub algorithms: Vec<AlgorithmTag>,
    pub world: WorldSpec,
    pub dp: DpConfig,
    pub mcmc: McmcConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            metric: Metric::Euclidean,
            algorithms: vec![AlgorithmTag::Sgeofl, AlgorithmTag::Dzgd, AlgorithmTag::Sgfusion],
            world: WorldSpec::default(),
            dp: DpConfig::default(),
            mcmc: McmcConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry the line of the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(with_line(text, &msg)),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms: at least one algorithm is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.algorithms {
            if !seen.insert(a.file_stem()) {
                return Err(Error::Config(format!("algorithms: `{a}` is listed twice")));
            }
        }
        self.metric
            .validate()
            .map_err(|e| Error::Config(format!("metric: {e}")))?;
        self.world.validate()?;
        if self.world.zones < 2 {
            return Err(Error::Config("world.zones: the pipeline needs at least 2 zones".into()));
        }
        self.dp
            .validate()
            .map_err(|e| Error::Config(format!("dp.epsilon: {e}")))?;
        if self.world.zones >= 3 {
            self.mcmc.validate().map_err(|e| Error::Config(format!("mcmc: {e}")))?;
        }
        for spec in self.algorithm_specs() {
            spec.validate()
                .map_err(|e| Error::Config(format!("train.schedule: {e}")))?;
        }
        self.train.options().validate()
    }

    pub fn algorithm_specs(&self) -> Vec<AlgorithmSpec> {
        self.algorithms
            .iter()
            .map(|&tag| AlgorithmSpec::new(tag, self.train.rounds, self.train.schedule))
            .collect()
    }

    /// Parses a comma-separated algorithm list, as given on the command line.
    pub fn parse_algorithms(list: &str) -> Result<Vec<AlgorithmTag>> {
        split_top_level(list).iter().map(|s| s.parse()).collect()
    }
}

/// Splits on commas that are not inside parentheses.
fn split_top_level(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in list.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

/// Prefixes a `section.key: message` error with the line where the key is
/// set, or marks it as a default when the key is absent.
fn with_line(text: &str, msg: &str) -> String {
    let Some((path, _)) = msg.split_once(": ") else {
        return msg.to_string();
    };
    if path.contains(' ') {
        return msg.to_string();
    }
    let (section, key) = match path.split_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, path),
    };
    let mut in_section = section.is_none();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') {
            if section.is_none() && l == format!("[{key}]") {
                return format!("line {}: {msg}", i + 1);
            }
            in_section = section.is_some_and(|s| l.trim_matches(|c| c == '[' || c == ']').trim() == s);
            continue;
        }
        let key_here = l.split('=').next().map(str::trim) == Some(key);
        let inline =
            section.is_some_and(|s| l.split('=').next().map(str::trim) == Some(s) && l.contains(&format!("{key} =")));
        if (in_section && key_here) || inline {
            return format!("line {}: {msg}", i + 1);
        }
    }
    format!("{msg} (default value)")
}
