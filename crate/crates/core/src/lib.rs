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

//! Zone-based federated learning with stochastic geographic gradient fusion.
//!
//! Zones publish label histograms, a hierarchical random graph is fitted
//! over their pairwise distances, and each zone trains its own model while
//! fusing gradients from zones sampled out of that hierarchy.
//!
//! ```
//! use sgfusion::dendrogram::McmcConfig;
//! use sgfusion::fed_sim::{generate_world, run, AlgorithmSpec, AlgorithmTag, FusionArtifacts, TrainOptions, WorldSpec};
//! use sgfusion::fusion::TrainingSchedule;
//! use sgfusion::label_stats::{build_zone_graph, DpConfig, Metric};
//! use sgfusion::pipeline::{fit_hrg, zone_histograms};
//!
//! let world = generate_world(&WorldSpec { zones: 6, clusters: 3, ..WorldSpec::default() }, 7)?;
//! let hists = zone_histograms(&world, &DpConfig::default(), 7)?;
//! let graph = build_zone_graph(&world.zone_ids(), &hists, Metric::Euclidean)?;
//! let (_, pds) = fit_hrg(&graph, &McmcConfig::default(), 7)?;
//! let art = FusionArtifacts { graph: Some(&graph), pds: Some(&pds) };
//! let spec = AlgorithmSpec::new(AlgorithmTag::Sgfusion, 50, TrainingSchedule::default());
//! let out = run(&spec, &TrainOptions::default(), &world, &art, 7)?;
//! assert_eq!(out.final_thetas.len(), 6);
//! # Ok::<(), sgfusion::Error>(())
//! ```

pub mod analysis;
pub mod dendrogram;
pub mod error;
pub mod fed_sim;
pub mod fusion;
pub mod label_stats;
pub mod pipeline;
pub mod rng;
pub mod zone_sampler;

pub use error::{Error, Result};
