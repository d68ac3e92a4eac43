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

//! Experiment stages and their artifacts.
//!
//! | stage       | reads                                        | writes |
//! |-------------|----------------------------------------------|--------|
//! | `gen-world` | config                                       | `world.json`, `histograms.csv`, `graph.csv` |
//! | `build-hrg` | `graph.csv`                                  | `dendrogram.txt`, `prob_dendrograms.txt`, `hrg.json` |
//! | `train`     | `world.json`, `graph.csv`, `dendrogram.txt`  | `trace_<tag>.csv`, `run_meta.json` |
//! | `report`    | all of the above                             | `report.json`, `report.csv` |
//! | `validate`  | `graph.csv`, `dendrogram.txt`, `prob_dendrograms.txt` | nothing |
//!
//! A full run executes the stages in order against the output directory, so
//! staged and monolithic runs produce the same bytes. Each file is written to
//! a temporary name and renamed into place; if a stage fails, every file the
//! invocation wrote is removed.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{self, BoundInputs, ComparisonReport, MeanEstimate, ZoneReportRow};
use crate::dendrogram::{self, Dendrogram, McmcConfig, McmcOutcome};
use crate::error::{Error, Result};
use crate::fed_sim::{self, AlgorithmTag, FusionArtifacts, RoundTrace, RunConstants, World, WorldSummary};
use crate::fusion::{ParamVector, TrainingSchedule};
use crate::label_stats::{
    aggregate_zone_histogram, build_user_histogram, build_zone_graph, dp_perturb, histograms_to_csv, DpConfig,
    LabelHistogram, Metric, ZoneDistanceGraph,
};
use crate::rng::{self, NONE};
use crate::zone_sampler::{build_all, build_prob_dendrogram, ProbDendrogram};

pub use config::{ExperimentConfig, TrainConfig};

pub const WORLD: &str = "world.json";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const GRAPH: &str = "graph.csv";
pub const DENDROGRAM: &str = "dendrogram.txt";
pub const PROB_DENDROGRAMS: &str = "prob_dendrograms.txt";
pub const HRG_META: &str = "hrg.json";
pub const RUN_META: &str = "run_meta.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

pub fn trace_file(tag: AlgorithmTag) -> String {
    format!("trace_{}.csv", tag.file_stem())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenWorld,
    BuildHrg,
    Train,
    Report,
    Validate,
}

impl Stage {
    pub const PIPELINE: [Stage; 4] = [Stage::GenWorld, Stage::BuildHrg, Stage::Train, Stage::Report];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenWorld => "gen-world",
            Stage::BuildHrg => "build-hrg",
            Stage::Train => "train",
            Stage::Report => "report",
            Stage::Validate => "validate",
        }
    }
}

/// Files written and one-line notes from a stage.
#[derive(Clone, Debug, Default)]
pub struct StageOutcome {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

struct ArtifactDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactDir {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ArtifactDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        self.put(name, &text)
    }

    fn get(&self, name: &str, stage: Stage) -> Result<String> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                stage: stage.name(),
            });
        }
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    fn get_json<T: for<'de> Deserialize<'de>>(&self, name: &str, stage: Stage) -> Result<T> {
        serde_json::from_str(&self.get(name, stage)?).map_err(|e| Error::Parse(format!("{name}: {e}")))
    }

    fn rollback(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

/// Per-zone label histograms: per-user histograms of training labels,
/// perturbed by the Laplace mechanism when enabled, then averaged per zone.
pub fn zone_histograms(world: &World, dp: &DpConfig, master_seed: u64) -> Result<Vec<LabelHistogram>> {
    let edges = world.label_edges()?;
    world
        .zones
        .iter()
        .enumerate()
        .map(|(z, zone)| {
            let users = zone
                .users
                .iter()
                .enumerate()
                .map(|(u, user)| {
                    let clean = build_user_histogram(user.train_labels(), &edges)?;
                    dp_perturb(&clean, dp, &mut rng::stream(master_seed, "dp", z as u64, u as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            aggregate_zone_histogram(&users, zone.m_z())
        })
        .collect()
}

/// Fits the dendrogram and derives one probabilistic dendrogram per zone.
pub fn fit_hrg(
    graph: &ZoneDistanceGraph,
    mcmc: &McmcConfig,
    master_seed: u64,
) -> Result<(McmcOutcome, Vec<ProbDendrogram>)> {
    let mut r = rng::stream(master_seed, "hrg", mcmc.seed, NONE);
    let out = dendrogram::optimize(graph, mcmc, &mut r)?;
    let pds = build_all(&out.best);
    Ok((out, pds))
}

/// One line per zone: `owner<TAB>tree`, where the owner's ancestors carry `@p`.
pub fn prob_dendrograms_text(t: &Dendrogram) -> Result<String> {
    let mut out = String::new();
    for z in 0..t.zone_count() {
        let pd = build_prob_dendrogram(t, z)?;
        let probs: BTreeMap<usize, f64> = pd.ancestors().iter().map(|a| (a.node, a.prob)).collect();
        out.push_str(&t.zone_ids()[z]);
        out.push('\t');
        out.push_str(&t.to_text_annotated(|id| probs.get(&id).copied()));
        out.push('\n');
    }
    Ok(out)
}

fn load_world(dir: &ArtifactDir) -> Result<World> {
    let summary: WorldSummary = dir.get_json(WORLD, Stage::GenWorld)?;
    let world = fed_sim::generate_world(&summary.spec, summary.seed)?;
    if world.summary() != summary {
        return Err(Error::Parse(format!(
            "{WORLD} does not match the world its spec generates"
        )));
    }
    Ok(world)
}

fn load_graph(dir: &ArtifactDir, metric: Metric) -> Result<ZoneDistanceGraph> {
    ZoneDistanceGraph::from_csv(&dir.get(GRAPH, Stage::GenWorld)?, metric)
}

fn load_dendrogram(dir: &ArtifactDir, graph: &ZoneDistanceGraph) -> Result<Dendrogram> {
    let t = Dendrogram::from_text(dir.get(DENDROGRAM, Stage::BuildHrg)?.trim(), graph.zone_ids())?;
    t.validate(Some(graph))?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrgMeta {
    pub loss: f64,
    pub steps: u64,
    pub accepted: u64,
    pub converged: bool,
    pub hit_max_steps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmMeta {
    pub rounds: u64,
    pub schedule: TrainingSchedule,
    pub shared_gradient_evals: u64,
    pub max_grad_norm: f64,
    pub final_thetas: Vec<ParamVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub master_seed: u64,
    pub world_seed: u64,
    pub constants: RunConstants,
    pub algorithms: BTreeMap<String, AlgorithmMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub mean_zone_rmse: f64,
    /// RMSE over all zones' held-out rows, each zone scored with its own model.
    pub pooled_rmse: f64,
    pub mean_excess_risk: f64,
    pub homophily: f64,
    pub shared_gradient_evals: u64,
    pub mean_sampled_zones: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub world: String,
    pub hrg_loss: f64,
    pub constants: RunConstants,
    pub algorithms: BTreeMap<String, AlgorithmSummary>,
    /// Every pair of listed algorithms; `a` is the later one in the list.
    pub comparisons: Vec<ComparisonReport>,
    pub zones: Vec<ZoneReportRow>,
}

fn gen_world_stage(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<Vec<String>> {
    let world = fed_sim::generate_world(&cfg.world, cfg.master_seed)?;
    let hists = zone_histograms(&world, &cfg.dp, cfg.master_seed)?;
    let ids = world.zone_ids();
    let graph = build_zone_graph(&ids, &hists, cfg.metric)?;
    dir.put_json(WORLD, &world.summary())?;
    dir.put(HISTOGRAMS, &histograms_to_csv(&ids, &hists))?;
    dir.put(GRAPH, &graph.to_csv())?;
    Ok(vec![format!("{world}")])
}

fn build_hrg_stage(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<Vec<String>> {
    let graph = load_graph(dir, cfg.metric)?;
    let (out, _) = fit_hrg(&graph, &cfg.mcmc, cfg.master_seed)?;
    dir.put(DENDROGRAM, &format!("{}\n", out.best.to_text()))?;
    dir.put(PROB_DENDROGRAMS, &prob_dendrograms_text(&out.best)?)?;
    dir.put_json(
        HRG_META,
        &HrgMeta {
            loss: out.best_loss,
            steps: out.steps,
            accepted: out.accepted,
            converged: out.converged,
            hit_max_steps: out.hit_max_steps,
        },
    )?;
    Ok(vec![format!(
        "dendrogram loss {:.6} after {} steps ({})",
        out.best_loss,
        out.steps,
        if out.converged { "converged" } else { "step cap reached" }
    )])
}

fn train_stage(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<Vec<String>> {
    let world = load_world(dir)?;
    let graph = load_graph(dir, cfg.metric)?;
    let pds = build_all(&load_dendrogram(dir, &graph)?);
    let art = FusionArtifacts {
        graph: Some(&graph),
        pds: Some(&pds),
    };
    let opts = cfg.train.options();
    let mut metas = BTreeMap::new();
    let mut notes = Vec::new();
    let mut path_max: f64 = 0.0;
    for spec in cfg.algorithm_specs() {
        let out = fed_sim::run(&spec, &opts, &world, &art, cfg.master_seed)?;
        dir.put(&trace_file(spec.tag), &fed_sim::traces_to_csv(&out.traces)?)?;
        let rmse = analysis::final_rmse(&out.traces);
        notes.push(format!(
            "{}: mean zone RMSE {:.6}",
            spec.tag,
            rmse.values().sum::<f64>() / rmse.len() as f64
        ));
        path_max = path_max.max(out.max_grad_norm);
        metas.insert(
            spec.tag.to_string(),
            AlgorithmMeta {
                rounds: spec.rounds,
                schedule: spec.schedule,
                shared_gradient_evals: out.shared_gradient_evals,
                max_grad_norm: out.max_grad_norm,
                final_thetas: out.final_thetas,
            },
        );
    }
    let constants = fed_sim::measure_constants(&world, path_max, cfg.master_seed)?;
    dir.put_json(
        RUN_META,
        &RunMeta {
            master_seed: cfg.master_seed,
            world_seed: world.seed,
            constants,
            algorithms: metas,
        },
    )?;
    Ok(notes)
}

fn report_stage(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<Vec<String>> {
    let world = load_world(dir)?;
    let (ids, hists) = crate::label_stats::histograms_from_csv(&dir.get(HISTOGRAMS, Stage::GenWorld)?)?;
    let graph = load_graph(dir, cfg.metric)?;
    let hrg: HrgMeta = dir.get_json(HRG_META, Stage::BuildHrg)?;
    let pds = build_all(&load_dendrogram(dir, &graph)?);
    let meta: RunMeta = dir.get_json(RUN_META, Stage::Train)?;
    let c = &meta.constants;
    let n = world.len();

    let mut algorithms = BTreeMap::new();
    let mut scores = Vec::new();
    let mut zones = Vec::new();
    for tag in &cfg.algorithms {
        let key = tag.to_string();
        let am = meta.algorithms.get(&key).ok_or_else(|| Error::MissingArtifact {
            path: dir.dir.join(RUN_META),
            stage: Stage::Train.name(),
        })?;
        let traces: Vec<RoundTrace> = fed_sim::traces_from_csv(&dir.get(&trace_file(*tag), Stage::Train)?)?;
        let rmse = analysis::final_rmse(&traces);
        let excess = analysis::excess_risk(&world, &am.final_thetas, &c.optima)?;
        let homophily = analysis::homophily(&traces, &ids, &hists, cfg.metric)?;
        // The bound covers SGFusion's sampling and the no-fusion special case
        // under the 1/(mu t) schedule.
        let p_pairs = match tag {
            AlgorithmTag::Sgfusion => Some(crate::zone_sampler::pair_probabilities(&pds)),
            AlgorithmTag::Sgeofl => Some(vec![vec![0.0; n]; n]),
            _ => None,
        };
        let bound_applies =
            matches!(am.schedule, TrainingSchedule::InverseMuT { mu } if mu <= c.mu + 1e-12) && am.rounds >= 2;
        for (z, zone) in world.zones.iter().enumerate() {
            let bound_rhs = match (&p_pairs, bound_applies) {
                (Some(p), true) => Some(analysis::convergence_bound(
                    &BoundInputs {
                        mu: c.mu,
                        g: c.gradient_bound,
                        tau: c.tau_measured,
                        t: am.rounds,
                        p_pairs: p.clone(),
                    },
                    z,
                )?),
                _ => None,
            };
            zones.push(ZoneReportRow {
                zone_id: zone.zone_id.clone(),
                algorithm: key.clone(),
                rmse: *rmse
                    .get(&zone.zone_id)
                    .ok_or_else(|| Error::Parse(format!("trace for {key} lacks zone {}", zone.zone_id)))?,
                excess_risk: excess[z],
                bound_rhs,
                homophily,
            });
        }
        let sampled: Vec<f64> = traces.iter().map(|t| t.n_sampled as f64).collect();
        algorithms.insert(
            key.clone(),
            AlgorithmSummary {
                mean_zone_rmse: rmse.values().sum::<f64>() / rmse.len().max(1) as f64,
                pooled_rmse: analysis::pooled_rmse(&world, &am.final_thetas)?,
                mean_excess_risk: MeanEstimate::of(&excess).mean,
                homophily,
                shared_gradient_evals: am.shared_gradient_evals,
                mean_sampled_zones: MeanEstimate::of(&sampled).mean,
            },
        );
        scores.push((key, rmse));
    }
    let mut comparisons = Vec::new();
    for j in 0..scores.len() {
        for i in 0..j {
            comparisons.push(analysis::compare(
                &scores[j].0,
                &scores[j].1,
                &scores[i].0,
                &scores[i].1,
            )?);
        }
    }
    let notes = comparisons
        .iter()
        .map(|r| format!("{}: {}", r.table_header(), r.table_row()))
        .collect();
    let report = Report {
        config: cfg.clone(),
        world: format!("{world}"),
        hrg_loss: hrg.loss,
        constants: meta.constants.clone(),
        algorithms,
        comparisons,
        zones,
    };
    dir.put_json(REPORT_JSON, &report)?;
    dir.put(REPORT_CSV, &analysis::report_csv(&report.zones)?)?;
    Ok(notes)
}

fn validate_stage(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<Vec<String>> {
    let graph = load_graph(dir, cfg.metric)?;
    let t = load_dendrogram(dir, &graph)?;
    let text = dir.get(PROB_DENDROGRAMS, Stage::BuildHrg)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != t.zone_count() {
        return Err(Error::Parse(format!(
            "{PROB_DENDROGRAMS} has {} lines for {} zones",
            lines.len(),
            t.zone_count()
        )));
    }
    for (z, line) in lines.iter().enumerate() {
        let (owner, tree) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("{PROB_DENDROGRAMS} line {}: missing tab", z + 1)))?;
        if owner != t.zone_ids()[z] {
            return Err(Error::Parse(format!(
                "{PROB_DENDROGRAMS} line {}: owner `{owner}` out of order",
                z + 1
            )));
        }
        let (parsed, notes) = Dendrogram::from_text_annotated(tree, graph.zone_ids())?;
        if parsed.to_text() != t.to_text() {
            return Err(Error::Parse(format!(
                "{PROB_DENDROGRAMS} line {}: tree differs from {DENDROGRAM}",
                z + 1
            )));
        }
        let pd = build_prob_dendrogram(&parsed, z)?;
        pd.validate()?;
        let expected: BTreeMap<usize, f64> = pd.ancestors().iter().map(|a| (a.node, a.prob)).collect();
        let mut total = 0.0;
        for (node, note) in notes.iter().enumerate() {
            match (note, expected.get(&node)) {
                (Some(p), Some(q)) if (p - q).abs() <= 1e-12 => total += p,
                (None, None) => {}
                _ => {
                    return Err(Error::Parse(format!(
                        "{PROB_DENDROGRAMS} line {}: probabilities disagree with the scores",
                        z + 1
                    )))
                }
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("zone {owner}: probabilities sum to {total}")));
        }
    }
    Ok(vec![format!("{} probabilistic dendrograms are valid", lines.len())])
}

/// Runs one stage against `cfg.output_dir`.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<StageOutcome> {
    run_stages(cfg, &[stage])
}

/// Runs the full pipeline.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<StageOutcome> {
    run_stages(cfg, &Stage::PIPELINE)
}

fn run_stages(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<StageOutcome> {
    cfg.validate()?;
    let mut dir = ArtifactDir::new(&cfg.output_dir)?;
    let mut notes = Vec::new();
    for stage in stages {
        let result = match stage {
            Stage::GenWorld => gen_world_stage(cfg, &mut dir),
            Stage::BuildHrg => build_hrg_stage(cfg, &mut dir),
            Stage::Train => train_stage(cfg, &mut dir),
            Stage::Report => report_stage(cfg, &mut dir),
            Stage::Validate => validate_stage(cfg, &mut dir),
        };
        match result {
            Ok(n) => notes.extend(n.into_iter().map(|l| format!("{}: {l}", stage.name()))),
            Err(e) => {
                dir.rollback();
                return Err(e);
            }
        }
    }
    Ok(StageOutcome {
        files: dir.written,
        notes,
    })
}
