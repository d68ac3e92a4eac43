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

//! The federated world and the per-zone training loop.

mod objective;
mod run;
mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::TrainingSchedule;

pub use objective::{Evaluation, Objective, ObjectiveKind};
pub use run::{
    estimate_gradient_bound, measure_constants, run, traces_from_csv, traces_to_csv, FusionArtifacts, RoundTrace,
    RunConstants, RunOutput, TrainOptions,
};
pub use world::{
    generate_world, poland_like, ClusterLayout, UserDataset, World, WorldSpec, WorldSummary, Zone, ZoneSummary,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmTag {
    /// One global model trained on the mean of all zone gradients.
    Fedavg,
    /// Independent zone models, no fusion.
    Sgeofl,
    /// Fusion with the fixed 4-adjacent grid neighbours.
    Dzgd,
    Sgfusion,
    /// Exactly `chi` zones per round, drawn without replacement with weights
    /// `p_{z, z'}`. `None` uses each zone's grid degree.
    ChiSgfusion(Option<usize>),
    /// The `k` zones with the smallest label-distribution distance.
    TopkSgfusion(usize),
}

impl AlgorithmTag {
    /// File-name form: `topk_sgfusion(3)` becomes `topk_sgfusion_3`.
    pub fn file_stem(&self) -> String {
        self.to_string().replace('(', "_").replace(')', "")
    }

    pub fn needs_dendrogram(&self) -> bool {
        matches!(self, AlgorithmTag::Sgfusion | AlgorithmTag::ChiSgfusion(_))
    }
}

impl fmt::Display for AlgorithmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmTag::Fedavg => f.write_str("fedavg"),
            AlgorithmTag::Sgeofl => f.write_str("sgeofl"),
            AlgorithmTag::Dzgd => f.write_str("dzgd"),
            AlgorithmTag::Sgfusion => f.write_str("sgfusion"),
            AlgorithmTag::ChiSgfusion(None) => f.write_str("chi_sgfusion"),
            AlgorithmTag::ChiSgfusion(Some(c)) => write!(f, "chi_sgfusion({c})"),
            AlgorithmTag::TopkSgfusion(k) => write!(f, "topk_sgfusion({k})"),
        }
    }
}

impl FromStr for AlgorithmTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("unbalanced parenthesis in algorithm `{s}`")))?;
                let n = inner
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad count in algorithm `{s}`")))?;
                (name.trim(), Some(n))
            }
            None => (s, None),
        };
        match (name, arg) {
            ("fedavg", None) => Ok(AlgorithmTag::Fedavg),
            ("sgeofl", None) => Ok(AlgorithmTag::Sgeofl),
            ("dzgd", None) => Ok(AlgorithmTag::Dzgd),
            ("sgfusion", None) => Ok(AlgorithmTag::Sgfusion),
            ("chi_sgfusion", chi) => Ok(AlgorithmTag::ChiSgfusion(chi)),
            ("topk_sgfusion", Some(k)) => Ok(AlgorithmTag::TopkSgfusion(k)),
            ("topk_sgfusion", None) => Err(Error::Config(
                "topk_sgfusion needs a count, e.g. topk_sgfusion(3)".into(),
            )),
            _ => Err(Error::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl Serialize for AlgorithmTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AlgorithmTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub tag: AlgorithmTag,
    pub rounds: u64,
    pub schedule: TrainingSchedule,
}

impl AlgorithmSpec {
    pub fn new(tag: AlgorithmTag, rounds: u64, schedule: TrainingSchedule) -> Self {
        AlgorithmSpec { tag, rounds, schedule }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("train.rounds: must be at least 1".into()));
        }
        self.schedule.validate()
    }
}
