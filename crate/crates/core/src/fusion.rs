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

//! Self-attention over shared gradients and the fused descent step
//!
//! ```text
//! e_{z,z'}      = sigmoid(<g_z, g_z'>)
//! lambda_{z,z'} = softmax_{z' in N}(e_{z,z'})
//! theta'        = theta - eta * (g_z + sum_{z' in N} lambda_{z,z'} g_z')
//! ```

use std::collections::BTreeMap;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Shared gradients keyed by zone index. Ordered keys make every reduction
/// over the map independent of insertion order.
pub type SharedGradients = BTreeMap<usize, ParamVector>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionWeights(BTreeMap<usize, f64>);

impl AttentionWeights {
    pub fn get(&self, zone: usize) -> Option<f64> {
        self.0.get(&zone).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn from_map(map: BTreeMap<usize, f64>) -> Self {
        AttentionWeights(map)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Raw inner product, as in the attention definition.
    #[default]
    Inner,
    /// Cosine similarity; an ablation that avoids sigmoid saturation.
    Cosine,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn attention(local: &ParamVector, shared: &SharedGradients, similarity: Similarity) -> Result<AttentionWeights> {
    if shared.is_empty() {
        return Ok(AttentionWeights::default());
    }
    let mut scores = BTreeMap::new();
    for (&zone, g) in shared {
        if g.dim() != local.dim() {
            return Err(Error::Schema(format!(
                "gradient of zone {zone} has dimension {}, expected {}",
                g.dim(),
                local.dim()
            )));
        }
        let s = match similarity {
            Similarity::Inner => local.dot(g),
            Similarity::Cosine => {
                let denom = local.norm() * g.norm();
                if denom > 0.0 {
                    local.dot(g) / denom
                } else {
                    0.0
                }
            }
        };
        scores.insert(zone, sigmoid(s));
    }
    // e lies in [0, 1], so exp cannot overflow and no shift is needed.
    let total: f64 = scores.values().map(|e| e.exp()).sum();
    Ok(AttentionWeights(
        scores.into_iter().map(|(z, e)| (z, e.exp() / total)).collect(),
    ))
}

/// The fused direction `g_local + sum lambda * g_shared`.
pub fn fused_direction(
    local_grad: &ParamVector,
    shared: &SharedGradients,
    lam: &AttentionWeights,
) -> Result<ParamVector> {
    if shared.len() != lam.len() || shared.keys().any(|k| lam.get(*k).is_none()) {
        return Err(Error::Schema(
            "attention weights and shared gradients have different zones".into(),
        ));
    }
    let mut dir = local_grad.clone();
    for (zone, g) in shared {
        if g.dim() != dir.dim() {
            return Err(Error::Schema(format!(
                "gradient of zone {zone} has the wrong dimension"
            )));
        }
        dir.axpy(lam.get(*zone).unwrap_or(0.0), g);
    }
    Ok(dir)
}

pub fn fused_step(
    theta: &ParamVector,
    local_grad: &ParamVector,
    shared: &SharedGradients,
    lam: &AttentionWeights,
    eta: f64,
) -> Result<ParamVector> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("learning rate must be positive, got {eta}")));
    }
    if theta.dim() != local_grad.dim() {
        return Err(Error::Schema("parameter and gradient dimensions differ".into()));
    }
    let dir = fused_direction(local_grad, shared, lam)?;
    let mut next = theta.clone();
    next.axpy(-eta, &dir);
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrainingSchedule {
    /// `eta_t = 1 / (mu * t)`
    InverseMuT {
        mu: f64,
    },
    Constant {
        eta0: f64,
    },
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule::InverseMuT { mu: 1.0 }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let rate = match *self {
            TrainingSchedule::InverseMuT { mu } => mu,
            TrainingSchedule::Constant { eta0 } => eta0,
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Config(format!("schedule rate must be positive, got {rate}")));
        }
        Ok(())
    }
}

/// Step size for round `t >= 1`.
///
/// ```
/// use sgfusion::fusion::{lr_at, TrainingSchedule};
/// assert_eq!(lr_at(&TrainingSchedule::InverseMuT { mu: 2.0 }, 10).unwrap(), 0.05);
/// assert!(lr_at(&TrainingSchedule::InverseMuT { mu: 1.0 }, 0).is_err());
/// ```
pub fn lr_at(schedule: &TrainingSchedule, t: u64) -> Result<f64> {
    if t < 1 {
        return Err(Error::Domain("rounds are numbered from 1".into()));
    }
    Ok(match *schedule {
        TrainingSchedule::InverseMuT { mu } => 1.0 / (mu * t as f64),
        TrainingSchedule::Constant { eta0 } => eta0,
    })
}
