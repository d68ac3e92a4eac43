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

//! Synthetic zone worlds.
//!
//! Each zone has a ground-truth optimum `theta*_z`. Zones are grouped into
//! clusters that share a centre; the deviations from the world mean are
//! rescaled so the largest pairwise distance between optima equals
//! `non_iid_tau` exactly. Clusters are laid out on the grid either as
//! contiguous blocks, at random, or interleaved so that no two 4-adjacent
//! cells share a cluster.
//!
//! Feature layouts per objective:
//!
//! * `quadratic`: one-hot rows `x = sqrt(p) e_k`. Training rows cycle through
//!   `k`, so every user's training Hessian is exactly the identity and the
//!   objective is `0.5 |theta - c|^2 + const`.
//! * `ridge_regression`: `x = [1, N(0, 1), ...]`, `y = <theta*, x> + noise`.
//! * `logistic_l2`: the same features, `y ~ Bernoulli(sigmoid(<theta*, x>))`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, ObjectiveKind, RegressionStats};
use crate::error::{Error, Result};
use crate::fusion::ParamVector;
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLayout {
    /// Contiguous row-major blocks: similar zones are neighbours.
    Spatial,
    /// A seeded random permutation of the block assignment.
    Scattered,
    /// `cluster(r, c) = (c + 2 (r mod 2)) mod K`; with `K >= 3` no two
    /// 4-adjacent cells share a cluster.
    #[default]
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub zones: usize,
    /// Grid shape; derived as a near-square grid when unset.
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub users_per_zone: usize,
    pub samples_per_user: usize,
    pub dim: usize,
    pub objective: ObjectiveKind,
    /// L2 coefficient for `ridge_regression` and `logistic_l2`; ignored by `quadratic`.
    pub reg_lambda: f64,
    pub non_iid_tau: f64,
    pub label_noise_sd: f64,
    pub clusters: usize,
    /// Overrides the even block split for `spatial` and `scattered`.
    pub cluster_sizes: Option<Vec<usize>>,
    pub cluster_layout: ClusterLayout,
    /// Spread of zone optima around their cluster centre, before rescaling.
    pub cluster_jitter: f64,
    pub histogram_bins: usize,
    /// World seed; the master seed is used when unset.
    pub seed: Option<u64>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            zones: 16,
            grid_rows: None,
            grid_cols: None,
            users_per_zone: 12,
            samples_per_user: 39,
            dim: 4,
            objective: ObjectiveKind::Quadratic,
            reg_lambda: 0.1,
            non_iid_tau: 2.0,
            label_noise_sd: 1.0,
            clusters: 4,
            cluster_sizes: None,
            cluster_layout: ClusterLayout::default(),
            cluster_jitter: 0.05,
            histogram_bins: 10,
            seed: None,
        }
    }
}

impl WorldSpec {
    pub fn grid_shape(&self) -> (usize, usize) {
        match (self.grid_rows, self.grid_cols) {
            (Some(r), Some(c)) => (r, c),
            (Some(r), None) => (r, self.zones.div_ceil(r.max(1))),
            (None, Some(c)) => (self.zones.div_ceil(c.max(1)), c),
            (None, None) => {
                let c = (self.zones as f64).sqrt().ceil().max(1.0) as usize;
                (self.zones.div_ceil(c), c)
            }
        }
    }

    /// Number of training rows per user.
    pub fn train_rows(&self) -> usize {
        let n = self.samples_per_user;
        match self.objective {
            ObjectiveKind::Quadratic => (4 * n / 5) / self.dim.max(1) * self.dim,
            _ => ((4 * n) / 5).clamp(1, n.saturating_sub(1).max(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("world.{key}: {msg}")));
        if self.zones == 0 {
            return bad("zones", "must be at least 1".into());
        }
        let (r, c) = self.grid_shape();
        if r == 0 || c == 0 || r * c < self.zones {
            return bad("grid_rows", format!("a {r}x{c} grid cannot hold {} zones", self.zones));
        }
        if self.users_per_zone == 0 {
            return bad("users_per_zone", "must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim", "must be at least 1".into());
        }
        if self.samples_per_user < 2 {
            return bad("samples_per_user", "need at least 2 for a train/test split".into());
        }
        let train = self.train_rows();
        if train == 0 || train >= self.samples_per_user {
            return bad(
                "samples_per_user",
                format!(
                    "{} samples leave no balanced training block of dimension {}",
                    self.samples_per_user, self.dim
                ),
            );
        }
        if !(self.non_iid_tau >= 0.0 && self.non_iid_tau.is_finite()) {
            return bad("non_iid_tau", "must be a non-negative real".into());
        }
        if !(self.label_noise_sd >= 0.0 && self.label_noise_sd.is_finite()) {
            return bad("label_noise_sd", "must be a non-negative real".into());
        }
        if !(self.cluster_jitter >= 0.0 && self.cluster_jitter.is_finite()) {
            return bad("cluster_jitter", "must be a non-negative real".into());
        }
        if self.objective != ObjectiveKind::Quadratic && !(self.reg_lambda > 0.0 && self.reg_lambda.is_finite()) {
            return bad("reg_lambda", "must be positive for a strongly convex objective".into());
        }
        if self.clusters == 0 || self.clusters > self.zones {
            return bad("clusters", format!("must lie in 1..={}", self.zones));
        }
        if let Some(sizes) = &self.cluster_sizes {
            if sizes.len() != self.clusters || sizes.iter().sum::<usize>() != self.zones || sizes.contains(&0) {
                return bad(
                    "cluster_sizes",
                    format!("need {} positive sizes summing to {}", self.clusters, self.zones),
                );
            }
            if self.cluster_layout == ClusterLayout::Interleaved {
                return bad("cluster_sizes", "not used by the interleaved layout".into());
            }
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins", "must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserDataset {
    pub user_id: String,
    pub zone: usize,
    dim: usize,
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    test_x: Vec<f64>,
    test_y: Vec<f64>,
}

impl UserDataset {
    pub fn new(
        user_id: String,
        zone: usize,
        dim: usize,
        train: (Vec<f64>, Vec<f64>),
        test: (Vec<f64>, Vec<f64>),
    ) -> Result<Self> {
        for (x, y) in [&train, &test] {
            if x.len() != y.len() * dim {
                return Err(Error::Schema(format!(
                    "user {user_id}: {} features for {} labels of dimension {dim}",
                    x.len(),
                    y.len()
                )));
            }
            if x.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("user {user_id} has non-finite data")));
            }
        }
        if train.1.is_empty() {
            return Err(Error::Domain(format!("user {user_id} has no training rows")));
        }
        Ok(UserDataset {
            user_id,
            zone,
            dim,
            train_x: train.0,
            train_y: train.1,
            test_x: test.0,
            test_y: test.1,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn train_rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.train_x.chunks_exact(self.dim).zip(self.train_y.iter().copied())
    }

    pub fn test_rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.test_x.chunks_exact(self.dim).zip(self.test_y.iter().copied())
    }

    pub fn train_labels(&self) -> &[f64] {
        &self.train_y
    }

    pub fn test_len(&self) -> usize {
        self.test_y.len()
    }
}

#[derive(Clone, Debug)]
pub struct Zone {
    pub zone_id: String,
    pub geo_cell: (usize, usize),
    pub cluster: usize,
    /// Ground-truth parameters the zone's labels were generated from.
    pub ground_truth: ParamVector,
    pub users: Vec<UserDataset>,
    pub(crate) stats: Option<RegressionStats>,
}

impl Zone {
    pub fn new(
        zone_id: String,
        geo_cell: (usize, usize),
        ground_truth: ParamVector,
        users: Vec<UserDataset>,
        objective: &Objective,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Domain(format!("zone {zone_id} has no users")));
        }
        let stats = objective.is_regression().then(|| RegressionStats::from_users(&users));
        Ok(Zone {
            zone_id,
            geo_cell,
            cluster: 0,
            ground_truth,
            users,
            stats,
        })
    }

    pub fn m_z(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.ground_truth.dim()
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub seed: u64,
    pub objective: Objective,
    pub zones: Vec<Zone>,
}

impl World {
    pub fn from_zones(spec: WorldSpec, seed: u64, objective: Objective, zones: Vec<Zone>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Domain("a world needs at least one zone".into()));
        }
        let d = zones[0].dim();
        if zones
            .iter()
            .any(|z| z.dim() != d || z.users.iter().any(|u| u.dim() != d))
        {
            return Err(Error::Schema("zones disagree on the parameter dimension".into()));
        }
        Ok(World {
            spec,
            seed,
            objective,
            zones,
        })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.zones[0].dim()
    }

    pub fn zone_ids(&self) -> Vec<String> {
        self.zones.iter().map(|z| z.zone_id.clone()).collect()
    }

    pub fn max_optimum_spread(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in &self.zones {
            for b in &self.zones {
                best = best.max(a.ground_truth.distance(&b.ground_truth));
            }
        }
        best
    }

    /// 4-neighbour adjacency of the zones' grid cells, as sorted index lists.
    pub fn grid_neighbors(&self) -> Vec<Vec<usize>> {
        self.zones
            .iter()
            .map(|a| {
                self.zones
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| a.geo_cell.0.abs_diff(b.geo_cell.0) + a.geo_cell.1.abs_diff(b.geo_cell.1) == 1)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect()
    }

    /// Bin edges covering every training label in the world.
    pub fn label_edges(&self) -> Result<Vec<f64>> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for u in self.zones.iter().flat_map(|z| &z.users) {
            for &y in u.train_labels() {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        crate::label_stats::uniform_edges(lo, hi, self.spec.histogram_bins)
    }

    pub fn summary(&self) -> WorldSummary {
        WorldSummary {
            spec: self.spec.clone(),
            seed: self.seed,
            max_optimum_spread: self.max_optimum_spread(),
            zones: self
                .zones
                .iter()
                .map(|z| ZoneSummary {
                    zone_id: z.zone_id.clone(),
                    geo_cell: z.geo_cell,
                    cluster: z.cluster,
                    m_z: z.m_z(),
                    samples: z.users.iter().map(|u| u.train_y.len() + u.test_len()).sum(),
                    ground_truth: z.ground_truth.clone(),
                })
                .collect(),
        }
    }
}

/// The serialisable description of a world. The data itself is a pure
/// function of `spec` and `seed` and is regenerated rather than stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub spec: WorldSpec,
    pub seed: u64,
    pub max_optimum_spread: f64,
    pub zones: Vec<ZoneSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub zone_id: String,
    pub geo_cell: (usize, usize),
    pub cluster: usize,
    pub m_z: usize,
    pub samples: usize,
    pub ground_truth: ParamVector,
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.spec.grid_shape();
        write!(
            f,
            "{} zones on a {r}x{c} grid, {} objective, tau {}",
            self.len(),
            self.objective.kind,
            self.spec.non_iid_tau
        )
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn cluster_assignment(spec: &WorldSpec, seed: u64) -> Vec<usize> {
    let (_, cols) = spec.grid_shape();
    let k = spec.clusters;
    if spec.cluster_layout == ClusterLayout::Interleaved {
        return (0..spec.zones).map(|i| (i % cols + 2 * ((i / cols) % 2)) % k).collect();
    }
    let sizes = spec
        .cluster_sizes
        .clone()
        .unwrap_or_else(|| (0..k).map(|c| (c + 1) * spec.zones / k - c * spec.zones / k).collect());
    let mut blocks: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    if spec.cluster_layout == ClusterLayout::Scattered {
        blocks.shuffle(&mut rng::stage_stream(seed, "world/layout"));
    }
    blocks
}

fn draw_optima(spec: &WorldSpec, seed: u64, clusters: &[usize]) -> Result<Vec<ParamVector>> {
    let p = spec.dim;
    let mut rng = rng::stage_stream(seed, "world/optima");
    let base = normal_vec(&mut rng, p);
    let centers: Vec<Vec<f64>> = (0..spec.clusters).map(|_| normal_vec(&mut rng, p)).collect();
    let mut dev: Vec<Vec<f64>> = clusters
        .iter()
        .map(|&c| {
            let eps = normal_vec(&mut rng, p);
            (0..p).map(|i| centers[c][i] + spec.cluster_jitter * eps[i]).collect()
        })
        .collect();
    let n = dev.len() as f64;
    let mean: Vec<f64> = (0..p).map(|i| dev.iter().map(|d| d[i]).sum::<f64>() / n).collect();
    for d in &mut dev {
        d.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let mut spread: f64 = 0.0;
    for a in &dev {
        for b in &dev {
            let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            spread = spread.max(s.sqrt());
        }
    }
    let scale = if spec.non_iid_tau == 0.0 || dev.len() == 1 {
        0.0
    } else if spread > 0.0 {
        spec.non_iid_tau / spread
    } else {
        return Err(Error::Config(
            "world.non_iid_tau: a positive spread needs more than one cluster or a positive cluster_jitter".into(),
        ));
    };
    Ok(dev
        .iter()
        .map(|d| ParamVector::new((0..p).map(|i| base[i] + scale * d[i]).collect()))
        .collect())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_rows<R: Rng + ?Sized>(
    spec: &WorldSpec,
    theta: &ParamVector,
    rows: usize,
    balanced: bool,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let p = spec.dim;
    let mut xs = Vec::with_capacity(rows * p);
    let mut ys = Vec::with_capacity(rows);
    for i in 0..rows {
        let x: Vec<f64> = match spec.objective {
            ObjectiveKind::Quadratic => {
                let k = if balanced { i % p } else { rng.random_range(0..p) };
                let mut x = vec![0.0; p];
                x[k] = (p as f64).sqrt();
                x
            }
            _ => {
                let mut x = normal_vec(rng, p);
                x[0] = 1.0;
                x
            }
        };
        let z: f64 = x.iter().zip(theta.as_slice()).map(|(a, b)| a * b).sum();
        let y = match spec.objective {
            ObjectiveKind::LogisticL2 => f64::from(rng.random_bool(sigmoid(z))),
            _ => {
                let e: f64 = rng.sample(StandardNormal);
                z + spec.label_noise_sd * e
            }
        };
        xs.extend(x);
        ys.push(y);
    }
    (xs, ys)
}

fn zone_id(i: usize, n: usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(2);
    format!("z{i:0width$}")
}

/// Builds the world for `spec`. The world seed is `spec.seed` when set and
/// `master_seed` otherwise.
pub fn generate_world(spec: &WorldSpec, master_seed: u64) -> Result<World> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or(master_seed);
    let objective = Objective::new(spec.objective, spec.reg_lambda);
    let clusters = cluster_assignment(spec, seed);
    let optima = draw_optima(spec, seed, &clusters)?;
    let (_, cols) = spec.grid_shape();
    let train_rows = spec.train_rows();
    let test_rows = spec.samples_per_user - train_rows;
    let mut zones = Vec::with_capacity(spec.zones);
    for (z, theta) in optima.into_iter().enumerate() {
        let id = zone_id(z, spec.zones);
        let users = (0..spec.users_per_zone)
            .map(|u| {
                let mut rng = rng::stream(seed, "world/data", z as u64, u as u64);
                let train = draw_rows(spec, &theta, train_rows, true, &mut rng);
                let test = draw_rows(spec, &theta, test_rows, false, &mut rng);
                UserDataset::new(format!("{id}-u{u:02}"), z, spec.dim, train, test)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut zone = Zone::new(id, (z / cols, z % cols), theta, users, &objective)?;
        zone.cluster = clusters[z];
        zones.push(zone);
    }
    World::from_zones(spec.clone(), seed, objective, zones)
}

/// Spec matching the scale of the 16-zone country in the source data:
/// 16 zones of 12 users and about 460 samples per zone.
pub fn poland_like() -> WorldSpec {
    WorldSpec {
        zones: 16,
        grid_rows: Some(4),
        grid_cols: Some(4),
        users_per_zone: 12,
        samples_per_user: 39,
        ..WorldSpec::default()
    }
}
