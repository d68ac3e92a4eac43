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

//! The synchronous training loop.
//!
//! Rounds are numbered from 1. In round `t` every zone reads the parameter
//! snapshot taken at the start of the round, picks its fusion set, evaluates
//! its own gradient and those of the fusion-set zones at its own parameters,
//! and takes one fused step. Updates are applied together at the round
//! barrier, so zones may be processed in any order or in parallel.
//!
//! Randomness comes from two pre-derived streams per `(zone, round)`:
//! `train/batch` picks the users that contribute to that zone's gradient
//! when `users_per_round` is set, and `train/<tag>` drives neighbourhood
//! sampling. The batch stream is shared by all algorithms.
//!
//! A trace row reports the model after the round's update, except
//! `grad_norm` and `eta_t`, which describe the step itself.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AlgorithmSpec, AlgorithmTag, World};
use crate::error::{Error, Result};
use crate::fusion::{attention, fused_step, lr_at, ParamVector, SharedGradients, Similarity};
use crate::label_stats::ZoneDistanceGraph;
use crate::rng;
use crate::zone_sampler::{sample_neighborhood, ProbDendrogram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub attention_similarity: Similarity,
    /// Users drawn per zone per round for gradient evaluation; all users when unset.
    pub users_per_round: Option<usize>,
    /// Trace rows are kept for rounds divisible by this and for the last round.
    pub record_every: u64,
    pub parallel: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            attention_similarity: Similarity::Inner,
            users_per_round: None,
            record_every: 1,
            parallel: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::Config("train.record_every: must be at least 1".into()));
        }
        if self.users_per_round == Some(0) {
            return Err(Error::Config("train.users_per_round: must be at least 1".into()));
        }
        Ok(())
    }
}

/// Artifacts the fusion rules read. Which ones are required depends on the tag.
#[derive(Clone, Copy, Debug, Default)]
pub struct FusionArtifacts<'a> {
    pub graph: Option<&'a ZoneDistanceGraph>,
    pub pds: Option<&'a [ProbDendrogram]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u64,
    pub zone_id: String,
    pub algorithm: String,
    pub train_loss: f64,
    pub test_rmse: f64,
    pub n_sampled: usize,
    /// Semicolon-joined zone ids.
    pub sampled_ids: String,
    pub sum_lambda: f64,
    pub grad_norm: f64,
    pub eta_t: f64,
}

impl RoundTrace {
    pub fn sampled(&self) -> Vec<&str> {
        if self.sampled_ids.is_empty() {
            Vec::new()
        } else {
            self.sampled_ids.split(';').collect()
        }
    }
}

pub fn traces_to_csv(traces: &[RoundTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in traces {
        w.serialize(t).map_err(|e| Error::Parse(e.to_string()))?;
    }
    if traces.is_empty() {
        w.write_record([
            "round",
            "zone_id",
            "algorithm",
            "train_loss",
            "test_rmse",
            "n_sampled",
            "sampled_ids",
            "sum_lambda",
            "grad_norm",
            "eta_t",
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn traces_from_csv(text: &str) -> Result<Vec<RoundTrace>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("trace: {e}"))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub algorithm: AlgorithmTag,
    pub traces: Vec<RoundTrace>,
    /// Parameters after the last round, one per zone.
    pub final_thetas: Vec<ParamVector>,
    /// Gradients evaluated on behalf of other zones; equals the summed
    /// neighbourhood sizes over every round.
    pub shared_gradient_evals: u64,
    pub max_grad_norm: f64,
}

enum FusionRule {
    None,
    Fixed(Vec<Vec<usize>>),
    Sampled(Vec<ProbDendrogram>),
    Weighted { counts: Vec<usize>, weights: Vec<Vec<f64>> },
}

impl FusionRule {
    fn new(tag: AlgorithmTag, world: &World, art: &FusionArtifacts<'_>) -> Result<Self> {
        let n = world.len();
        if n == 1 {
            return Ok(FusionRule::None);
        }
        let pds = || -> Result<&[ProbDendrogram]> {
            let pds = art
                .pds
                .ok_or_else(|| Error::Config(format!("{tag} needs probabilistic dendrograms")))?;
            if pds.len() != n
                || pds
                    .iter()
                    .enumerate()
                    .any(|(z, pd)| pd.owner() != z || pd.zone_count() != n)
            {
                return Err(Error::Config(format!(
                    "{tag}: dendrograms do not match the {n}-zone world"
                )));
            }
            Ok(pds)
        };
        Ok(match tag {
            AlgorithmTag::Fedavg | AlgorithmTag::Sgeofl => FusionRule::None,
            AlgorithmTag::Dzgd => FusionRule::Fixed(world.grid_neighbors()),
            AlgorithmTag::Sgfusion => FusionRule::Sampled(pds()?.to_vec()),
            AlgorithmTag::ChiSgfusion(chi) => {
                let pds = pds()?;
                let counts = match chi {
                    Some(c) => vec![c.min(n - 1); n],
                    None => world.grid_neighbors().iter().map(Vec::len).collect(),
                };
                FusionRule::Weighted {
                    counts,
                    weights: pds.iter().map(ProbDendrogram::inclusion_row).collect(),
                }
            }
            AlgorithmTag::TopkSgfusion(k) => {
                let g = art
                    .graph
                    .ok_or_else(|| Error::Config(format!("{tag} needs the zone distance graph")))?;
                if g.len() != n {
                    return Err(Error::Config(format!("{tag}: graph does not match the {n}-zone world")));
                }
                FusionRule::Fixed(
                    (0..n)
                        .map(|z| {
                            let mut others: Vec<usize> = (0..n).filter(|&o| o != z).collect();
                            others.sort_by(|&a, &b| g.distance(z, a).total_cmp(&g.distance(z, b)).then(a.cmp(&b)));
                            others.truncate(k);
                            others.sort_unstable();
                            others
                        })
                        .collect(),
                )
            }
        })
    }

    fn fusion_set<R: Rng + ?Sized>(&self, z: usize, round: u64, rng: &mut R) -> Vec<usize> {
        match self {
            FusionRule::None => Vec::new(),
            FusionRule::Fixed(sets) => sets[z].clone(),
            FusionRule::Sampled(pds) => sample_neighborhood(&pds[z], rng, round).zones,
            FusionRule::Weighted { counts, weights } => {
                let row = &weights[z];
                let w = |i: usize| if i == z { 0.0 } else { row[i] };
                let mut chosen: Vec<usize> = index::sample_weighted(rng, row.len(), w, counts[z])
                    .map(|v| v.into_vec())
                    .unwrap_or_default();
                // Too few positive weights: fill uniformly from the rest.
                if chosen.len() < counts[z] {
                    let rest: Vec<usize> = (0..row.len()).filter(|&i| i != z && !chosen.contains(&i)).collect();
                    let extra = index::sample(rng, rest.len(), counts[z] - chosen.len());
                    chosen.extend(extra.into_iter().map(|i| rest[i]));
                }
                chosen.sort_unstable();
                chosen
            }
        }
    }
}

struct ZoneStep {
    theta: ParamVector,
    sampled: Vec<usize>,
    sum_lambda: f64,
    grad_norm: f64,
    max_norm: f64,
}

pub fn run(
    spec: &AlgorithmSpec,
    opts: &TrainOptions,
    world: &World,
    artifacts: &FusionArtifacts<'_>,
    master_seed: u64,
) -> Result<RunOutput> {
    spec.validate()?;
    opts.validate()?;
    let n = world.len();
    let rule = FusionRule::new(spec.tag, world, artifacts)?;
    let tag_stream = format!("train/{}", spec.tag);
    let obj = &world.objective;
    let mut thetas = vec![ParamVector::zeros(world.dim()); n];
    let mut traces = Vec::new();
    let mut shared_evals = 0u64;
    let mut max_norm: f64 = 0.0;

    let map_zones = |f: &(dyn Fn(usize) -> Result<ZoneStep> + Sync)| -> Result<Vec<ZoneStep>> {
        if opts.parallel {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    };

    for t in 1..=spec.rounds {
        let eta = lr_at(&spec.schedule, t)?;
        let batches: Vec<Option<Vec<usize>>> = world
            .zones
            .iter()
            .enumerate()
            .map(|(z, zone)| {
                opts.users_per_round.filter(|&m| m < zone.m_z()).map(|m| {
                    let mut r = rng::stream(master_seed, "train/batch", z as u64, t);
                    let mut idx = index::sample(&mut r, zone.m_z(), m).into_vec();
                    idx.sort_unstable();
                    idx
                })
            })
            .collect();
        let grad = |z: usize, at: &ParamVector| obj.local_gradient(&world.zones[z], at, batches[z].as_deref());

        let steps: Vec<ZoneStep> = if spec.tag == AlgorithmTag::Fedavg {
            // One global model, stored in every slot.
            let global = &thetas[0];
            let grads: Vec<ParamVector> = (0..n).map(|z| grad(z, global)).collect();
            let mut mean = ParamVector::zeros(global.dim());
            grads.iter().for_each(|g| mean.axpy(1.0 / n as f64, g));
            let mut next = global.clone();
            next.axpy(-eta, &mean);
            let top = grads.iter().map(ParamVector::norm).fold(0.0, f64::max);
            grads
                .iter()
                .map(|g| ZoneStep {
                    theta: next.clone(),
                    sampled: Vec::new(),
                    sum_lambda: 0.0,
                    grad_norm: g.norm(),
                    max_norm: top,
                })
                .collect()
        } else {
            let snapshot = &thetas;
            map_zones(&|z| {
                let mut r = rng::stream(master_seed, &tag_stream, z as u64, t);
                let sampled = rule.fusion_set(z, t, &mut r);
                let theta = &snapshot[z];
                let local = grad(z, theta);
                let shared: SharedGradients = sampled.iter().map(|&o| (o, grad(o, theta))).collect();
                let lam = attention(&local, &shared, opts.attention_similarity)?;
                let next = fused_step(theta, &local, &shared, &lam, eta)?;
                if !next.is_finite() {
                    return Err(Error::Numeric(format!(
                        "zone {} diverged at round {t}",
                        world.zones[z].zone_id
                    )));
                }
                let max_norm = shared.values().map(ParamVector::norm).fold(local.norm(), f64::max);
                Ok(ZoneStep {
                    theta: next,
                    sampled,
                    sum_lambda: lam.sum(),
                    grad_norm: local.norm(),
                    max_norm,
                })
            })?
        };

        let record = t % opts.record_every == 0 || t == spec.rounds;
        for (z, step) in steps.into_iter().enumerate() {
            shared_evals += step.sampled.len() as u64;
            max_norm = max_norm.max(step.max_norm);
            if record {
                let zone = &world.zones[z];
                let eval = obj.evaluate(zone, &step.theta)?;
                traces.push(RoundTrace {
                    round: t,
                    zone_id: zone.zone_id.clone(),
                    algorithm: spec.tag.to_string(),
                    train_loss: obj.loss(zone, &step.theta),
                    test_rmse: eval.rmse,
                    n_sampled: step.sampled.len(),
                    sampled_ids: step
                        .sampled
                        .iter()
                        .map(|&o| world.zones[o].zone_id.as_str())
                        .collect::<Vec<_>>()
                        .join(";"),
                    sum_lambda: step.sum_lambda,
                    grad_norm: step.grad_norm,
                    eta_t: eta,
                });
            }
            thetas[z] = step.theta;
        }
    }
    Ok(RunOutput {
        algorithm: spec.tag,
        traces,
        final_thetas: thetas,
        shared_gradient_evals: shared_evals,
        max_grad_norm: max_norm,
    })
}

/// Largest zone-gradient norm over points of the ball of radius `radius`
/// around `center`: the boundary points towards and away from every zone
/// optimum, the centre, and `directions` random boundary points.
pub fn estimate_gradient_bound(
    world: &World,
    optima: &[ParamVector],
    center: &ParamVector,
    radius: f64,
    directions: usize,
    master_seed: u64,
) -> f64 {
    let p = center.dim();
    let mut points = vec![center.clone()];
    let mut push_dir = |d: &[f64]| {
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for sign in [1.0, -1.0] {
                let mut pt = center.clone();
                for (v, di) in pt.as_mut_slice().iter_mut().zip(d) {
                    *v += sign * radius * di / norm;
                }
                points.push(pt);
            }
        }
    };
    for o in optima {
        let d: Vec<f64> = o.as_slice().iter().zip(center.as_slice()).map(|(a, b)| a - b).collect();
        push_dir(&d);
    }
    let mut r = rng::stage_stream(master_seed, "bound/ball");
    for _ in 0..directions {
        let d: Vec<f64> = (0..p).map(|_| r.sample(StandardNormal)).collect();
        push_dir(&d);
    }
    points
        .iter()
        .flat_map(|pt| {
            world
                .zones
                .iter()
                .map(move |z| world.objective.local_gradient(z, pt, None).norm())
        })
        .fold(0.0, f64::max)
}

/// Problem constants for the convergence bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    pub mu: f64,
    /// `1.1 * max(ball estimate, largest norm seen in training)`.
    pub gradient_bound: f64,
    pub ball_radius: f64,
    /// Largest distance between exact zone minimisers.
    pub tau_measured: f64,
    pub tau_spec: f64,
    pub optima: Vec<ParamVector>,
}

/// Measures `mu`, `G` and `tau`. The ball is centred at the zero
/// initialisation with radius `2 max_z |theta*_z| + tau`.
pub fn measure_constants(world: &World, path_max_norm: f64, master_seed: u64) -> Result<RunConstants> {
    let optima: Vec<ParamVector> = world
        .zones
        .iter()
        .map(|z| world.objective.optimum(z))
        .collect::<Result<_>>()?;
    let mu = world
        .zones
        .iter()
        .map(|z| world.objective.strong_convexity(z))
        .fold(f64::INFINITY, f64::min);
    let mut tau: f64 = 0.0;
    for a in &optima {
        for b in &optima {
            tau = tau.max(a.distance(b));
        }
    }
    let center = ParamVector::zeros(world.dim());
    let radius = 2.0 * optima.iter().map(ParamVector::norm).fold(0.0, f64::max) + tau;
    let ball = estimate_gradient_bound(world, &optima, &center, radius, 64, master_seed);
    Ok(RunConstants {
        mu,
        gradient_bound: 1.1 * ball.max(path_max_norm),
        ball_radius: radius,
        tau_measured: tau,
        tau_spec: world.spec.non_iid_tau,
        optima,
    })
}
