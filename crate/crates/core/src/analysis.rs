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

//! Post-processing: the convergence bound, excess risk, homophily, and
//! zone-level win counts.
//!
//! ```text
//! Gbar = G^2 [1 + 2 S + V + S^2],  S = sum_{z'} p_{z,z'},  V = sum_{z'} p_{z,z'} (1 - p_{z,z'})
//!
//! RHS  = 10 G^2 / (mu T) + 16 G^2 / (mu T) (1 + ln(T / 2))
//!      + Gbar / (2 mu) (1 + ln T) / T + (3 G tau / 2) S
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed_sim::{RoundTrace, World};
use crate::fusion::ParamVector;
use crate::label_stats::{zone_distance, LabelHistogram, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub mu: f64,
    pub g: f64,
    pub tau: f64,
    pub t: u64,
    /// `p_pairs[z][z']`, the probability that `z` samples `z'`.
    pub p_pairs: Vec<Vec<f64>>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if !finite_pos(self.mu) || !(self.g >= 0.0 && self.g.is_finite()) || !(self.tau >= 0.0 && self.tau.is_finite())
        {
            return Err(Error::Range(format!(
                "bound constants out of range: mu {}, G {}, tau {}",
                self.mu, self.g, self.tau
            )));
        }
        let n = self.p_pairs.len();
        for row in &self.p_pairs {
            if row.len() != n {
                return Err(Error::Schema("p_pairs is not square".into()));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Range("p_pairs entries must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn row_sums(&self, z: usize) -> Result<(f64, f64)> {
        let row = self
            .p_pairs
            .get(z)
            .ok_or_else(|| Error::Lookup(format!("zone index {z} outside the {}-zone matrix", self.p_pairs.len())))?;
        let others = row.iter().enumerate().filter(|(j, _)| *j != z).map(|(_, p)| *p);
        Ok(others.fold((0.0, 0.0), |(s, v), p| (s + p, v + p * (1.0 - p))))
    }
}

pub fn gbar(inputs: &BoundInputs, z: usize) -> Result<f64> {
    inputs.validate()?;
    let (s, v) = inputs.row_sums(z)?;
    Ok(inputs.g * inputs.g * (1.0 + 2.0 * s + v + s * s))
}

pub fn convergence_bound(inputs: &BoundInputs, z: usize) -> Result<f64> {
    if inputs.t < 2 {
        return Err(Error::Domain(format!("the bound needs T >= 2, got {}", inputs.t)));
    }
    let gb = gbar(inputs, z)?;
    let (s, _) = inputs.row_sums(z)?;
    let (g, mu, t) = (inputs.g, inputs.mu, inputs.t as f64);
    Ok(10.0 * g * g / (mu * t)
        + 16.0 * g * g / (mu * t) * (1.0 + (t / 2.0).ln())
        + gb / (2.0 * mu) * (1.0 + t.ln()) / t
        + 1.5 * g * inputs.tau * s)
}

/// `F_z(theta_z) - F_z(theta*_z)` for each zone.
pub fn excess_risk(world: &World, thetas: &[ParamVector], optima: &[ParamVector]) -> Result<Vec<f64>> {
    if thetas.len() != world.len() || optima.len() != world.len() {
        return Err(Error::Schema("one parameter vector per zone is required".into()));
    }
    Ok(world
        .zones
        .iter()
        .zip(thetas.iter().zip(optima))
        .map(|(zone, (th, opt))| world.objective.excess_risk(zone, th, opt))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate { mean, stderr, n }
    }

    /// `mean + 2 stderr`, the value compared against the bound.
    pub fn upper(&self) -> f64 {
        self.mean + 2.0 * self.stderr
    }
}

/// Average label-distribution distance between each zone and its fusion
/// partners, over zones and then over recorded rounds. A zone with an empty
/// neighbourhood contributes 0 but still counts in the zone average.
pub fn homophily(traces: &[RoundTrace], zone_ids: &[String], hists: &[LabelHistogram], metric: Metric) -> Result<f64> {
    if zone_ids.len() != hists.len() {
        return Err(Error::Schema("one histogram per zone id is required".into()));
    }
    let index: BTreeMap<&str, usize> = zone_ids.iter().enumerate().map(|(i, z)| (z.as_str(), i)).collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("trace names unknown zone `{id}`")))
    };
    let mut per_round: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for tr in traces {
        let z = lookup(&tr.zone_id)?;
        let sampled = tr.sampled();
        let mut avg = 0.0;
        if !sampled.is_empty() {
            for id in &sampled {
                avg += zone_distance(&hists[z], &hists[lookup(id)?], metric)?;
            }
            avg /= sampled.len() as f64;
        }
        let e = per_round.entry(tr.round).or_insert((0.0, 0));
        e.0 += avg;
        e.1 += 1;
    }
    if per_round.is_empty() {
        return Ok(0.0);
    }
    Ok(per_round.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_round.len() as f64)
}

/// Per-zone metric of one algorithm, keyed by zone id.
pub type ZoneScores = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// `(wins_a - wins_b) / wins_b * 100`; undefined when `wins_b == 0`.
    pub gain_percent: Option<f64>,
}

impl ComparisonReport {
    /// `B | A | (%) Gain`, the column order of a zone-win table.
    pub fn table_header(&self) -> String {
        format!("{} | {} | (%) Gain", self.b, self.a)
    }

    /// `4 | 12 | 200.00%`; the gain reads `n/a` when B won no zone.
    pub fn table_row(&self) -> String {
        let gain = self
            .gain_percent
            .map_or_else(|| "n/a".to_string(), |g| format!("{g:.2}%"));
        format!("{} | {} | {gain}", self.wins_b, self.wins_a)
    }
}

pub const TIE_TOL: f64 = 1e-9;

/// Counts the zones where each algorithm has the lower RMSE.
pub fn compare(a_name: &str, a: &ZoneScores, b_name: &str, b: &ZoneScores) -> Result<ComparisonReport> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Schema(format!("{a_name} and {b_name} cover different zones")));
    }
    let (mut wins_a, mut wins_b) = (0, 0);
    for (ra, rb) in a.values().zip(b.values()) {
        if *ra < rb - TIE_TOL {
            wins_a += 1;
        } else if *rb < ra - TIE_TOL {
            wins_b += 1;
        }
    }
    let gain_percent = (wins_b > 0).then(|| (wins_a as f64 - wins_b as f64) / wins_b as f64 * 100.0);
    Ok(ComparisonReport {
        a: a_name.to_string(),
        b: b_name.to_string(),
        wins_a,
        wins_b,
        ties: a.len() - wins_a - wins_b,
        gain_percent,
    })
}

/// The final recorded RMSE of every zone in a trace.
pub fn final_rmse(traces: &[RoundTrace]) -> ZoneScores {
    let last = traces.iter().map(|t| t.round).max().unwrap_or(0);
    traces
        .iter()
        .filter(|t| t.round == last)
        .map(|t| (t.zone_id.clone(), t.test_rmse))
        .collect()
}

/// RMSE over the pooled held-out rows of all zones, each zone scored with its own model.
pub fn pooled_rmse(world: &World, thetas: &[ParamVector]) -> Result<f64> {
    let (mut sq, mut n) = (0.0, 0usize);
    for (zone, th) in world.zones.iter().zip(thetas) {
        let e = world.objective.evaluate(zone, th)?;
        let rows: usize = zone.users.iter().map(|u| u.test_len()).sum();
        sq += e.rmse * e.rmse * rows as f64;
        n += rows;
    }
    Ok((sq / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneReportRow {
    pub zone_id: String,
    pub algorithm: String,
    pub rmse: f64,
    pub excess_risk: f64,
    /// Empty when the bound does not apply to the algorithm.
    pub bound_rhs: Option<f64>,
    pub homophily: f64,
}

pub fn report_csv(rows: &[ZoneReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
