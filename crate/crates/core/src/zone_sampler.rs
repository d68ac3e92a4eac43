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

//! Per-zone probabilistic dendrograms and bottom-up neighbourhood sampling.
//!
//! For zone `z` with internal ancestors `S_z`, each ancestor `r` gets
//! `p_r = exp(-d_r) / sum_{r' in S_z} exp(-d_r')`. At sampling time every zone
//! in the subtree of `r` that does not contain `z` is included independently
//! with probability `p_r`. A zone `z'` is therefore only ever considered at
//! `LCA(z, z')`, and its inclusion probability is `p_{LCA(z, z')}`.

use rand::Rng;

use crate::dendrogram::{Dendrogram, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AncestorRecord {
    pub node: NodeId,
    pub score: f64,
    pub prob: f64,
    /// Sorted zones under this ancestor on the side away from the owner.
    pub siblings: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbDendrogram {
    owner: usize,
    zone_count: usize,
    /// Leaf-parent first, root last.
    ancestors: Vec<AncestorRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledNeighborhood {
    pub round: u64,
    /// Sorted, without duplicates, never containing the owner.
    pub zones: Vec<usize>,
}

pub fn build_prob_dendrogram(t: &Dendrogram, zone: usize) -> Result<ProbDendrogram> {
    if zone >= t.zone_count() {
        return Err(Error::Lookup(format!(
            "zone index {zone} is not a leaf of a {}-zone dendrogram",
            t.zone_count()
        )));
    }
    let path = t.ancestors(zone);
    let min_score = path.iter().map(|&r| t.score(r)).fold(f64::INFINITY, f64::min);
    // Shifting by the smallest score leaves the softmax unchanged.
    let weights: Vec<f64> = path.iter().map(|&r| (min_score - t.score(r)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut below = zone;
    let ancestors = path
        .iter()
        .zip(&weights)
        .map(|(&r, &w)| {
            let (l, rr) = t.children(r).expect("ancestor is internal");
            let away = if l == below { rr } else { l };
            below = r;
            AncestorRecord {
                node: r,
                score: t.score(r),
                prob: w / total,
                siblings: t.leaves(away).to_vec(),
            }
        })
        .collect();
    Ok(ProbDendrogram {
        owner: zone,
        zone_count: t.zone_count(),
        ancestors,
    })
}

/// One probabilistic dendrogram per zone, in zone order.
pub fn build_all(t: &Dendrogram) -> Vec<ProbDendrogram> {
    (0..t.zone_count())
        .map(|z| build_prob_dendrogram(t, z).expect("every zone is a leaf"))
        .collect()
}

impl ProbDendrogram {
    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn zone_count(&self) -> usize {
        self.zone_count
    }

    pub fn ancestors(&self) -> &[AncestorRecord] {
        &self.ancestors
    }

    /// Replaces the ancestor probabilities, e.g. to pin a degenerate sampler.
    /// No normalization is applied.
    pub fn with_probabilities(mut self, probs: &[f64]) -> Result<Self> {
        if probs.len() != self.ancestors.len() {
            return Err(Error::Schema(format!(
                "{} probabilities for {} ancestors",
                probs.len(),
                self.ancestors.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Range(format!("probability {p} outside [0, 1]")));
        }
        for (a, &p) in self.ancestors.iter_mut().zip(probs) {
            a.prob = p;
        }
        Ok(self)
    }

    /// Inclusion probability of every zone for this owner (0 for the owner).
    pub fn inclusion_row(&self) -> Vec<f64> {
        let mut row = vec![0.0; self.zone_count];
        for a in &self.ancestors {
            for &z in &a.siblings {
                row[z] = a.prob;
            }
        }
        row
    }

    /// Checks normalization, the sibling partition and softmax consistency
    /// with the recorded scores.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(format!("invalid probabilistic dendrogram: {m}")));
        if self.ancestors.is_empty() && self.zone_count > 1 {
            return bad("no ancestors".into());
        }
        let sum: f64 = self.ancestors.iter().map(|a| a.prob).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("probabilities sum to {sum}"));
        }
        let mut covered = vec![false; self.zone_count];
        covered[self.owner] = true;
        for a in &self.ancestors {
            for &z in &a.siblings {
                if z >= self.zone_count || std::mem::replace(&mut covered[z], true) {
                    return bad(format!("zone {z} appears in two sibling sets"));
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return bad("sibling sets do not cover every other zone".into());
        }
        let min_score = self.ancestors.iter().map(|a| a.score).fold(f64::INFINITY, f64::min);
        let total: f64 = self.ancestors.iter().map(|a| (min_score - a.score).exp()).sum();
        for a in &self.ancestors {
            let expected = (min_score - a.score).exp() / total;
            if (expected - a.prob).abs() > 1e-12 {
                return bad(format!("p = {} where softmax gives {expected}", a.prob));
            }
        }
        Ok(())
    }
}

/// Walks the ancestors bottom-up, including each zone of each sibling
/// subtree independently with that ancestor's probability.
pub fn sample_neighborhood<R: Rng + ?Sized>(pd: &ProbDendrogram, rng: &mut R, round: u64) -> SampledNeighborhood {
    let mut zones = Vec::new();
    for a in &pd.ancestors {
        for &z in &a.siblings {
            if a.prob >= 1.0 || (a.prob > 0.0 && rng.random::<f64>() < a.prob) {
                zones.push(z);
            }
        }
    }
    zones.sort_unstable();
    SampledNeighborhood { round, zones }
}

pub fn expected_neighborhood_size(pd: &ProbDendrogram) -> f64 {
    pd.ancestors.iter().map(|a| a.prob * a.siblings.len() as f64).sum()
}

/// `P[z][z'] = p_{LCA(z, z')}` as seen from each owner's dendrogram.
pub fn pair_probabilities(pds: &[ProbDendrogram]) -> Vec<Vec<f64>> {
    pds.iter().map(ProbDendrogram::inclusion_row).collect()
}
