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

//! Label histograms, their Laplace-mechanism release, zone-level aggregation
//! and the fully connected zone distance graph built from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global sensitivity of a raw-count label histogram under replace-one-label
/// adjacency: a single label move changes two bins by one each.
pub const HISTOGRAM_SENSITIVITY: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
}

impl LabelHistogram {
    pub fn new(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        if counts.len() + 1 != edges.len() {
            return Err(Error::Schema(format!(
                "{} counts for {} bin edges",
                counts.len(),
                edges.len()
            )));
        }
        if let Some(c) = counts.iter().find(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("non-finite histogram count {c}")));
        }
        Ok(LabelHistogram { edges, counts })
    }

    pub fn zeros(edges: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        let counts = vec![0.0; edges.len() - 1];
        Ok(LabelHistogram { edges, counts })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Counts scaled to unit L1 mass of their absolute values. An all-zero
    /// histogram stays all-zero.
    pub fn normalized(&self) -> Vec<f64> {
        let mass: f64 = self.counts.iter().map(|c| c.abs()).sum();
        if mass == 0.0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|c| c / mass).collect()
    }

    fn same_bins(&self, other: &LabelHistogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Schema("histograms use different bin edges".into()));
        }
        Ok(())
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Config(format!(
            "need at least two bin edges, got {}",
            edges.len()
        )));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bin edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// `bins` equal-width bins spanning `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::Config(format!(
            "cannot build {bins} uniform bins over [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    Ok(edges)
}

/// Index of the bin holding `y`: bins are left-closed and right-open, except
/// the last which also includes the final edge.
fn bin_index(edges: &[f64], y: f64) -> Option<usize> {
    let last = *edges.last()?;
    if !(y >= edges[0] && y <= last) {
        return None;
    }
    if y == last {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|&e| e <= y) - 1)
}

pub fn build_user_histogram(labels: &[f64], edges: &[f64]) -> Result<LabelHistogram> {
    if edges.is_empty() {
        return Err(Error::Config("empty bin edges".into()));
    }
    let mut hist = LabelHistogram::zeros(edges.to_vec())?;
    for &y in labels {
        let b = bin_index(edges, y).ok_or_else(|| {
            Error::Range(format!(
                "label {y} outside histogram range [{}, {}]",
                edges[0],
                edges[edges.len() - 1]
            ))
        })?;
        hist.counts[b] += 1.0;
    }
    Ok(hist)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub enabled: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            epsilon: 10.0,
            enabled: false,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "privacy budget epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn noise_scale(&self) -> f64 {
        HISTOGRAM_SENSITIVITY / self.epsilon
    }
}

/// One draw from Laplace(0, `scale`), as the difference of two unit exponentials.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let a: f64 = rng.sample(Exp1);
    let b: f64 = rng.sample(Exp1);
    scale * (a - b)
}

/// Laplace mechanism over every bin. Counts are released unclipped, so they
/// may be negative. With `enabled == false` the histogram is returned as is.
pub fn dp_perturb<R: Rng + ?Sized>(hist: &LabelHistogram, cfg: &DpConfig, rng: &mut R) -> Result<LabelHistogram> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(hist.clone());
    }
    let scale = cfg.noise_scale();
    let counts = hist.counts.iter().map(|c| c + sample_laplace(rng, scale)).collect();
    Ok(LabelHistogram {
        edges: hist.edges.clone(),
        counts,
    })
}

/// Elementwise mean of the users' histograms.
pub fn aggregate_zone_histogram(users: &[LabelHistogram], m_z: usize) -> Result<LabelHistogram> {
    let first = users
        .first()
        .ok_or_else(|| Error::Domain("zone has no user histograms".into()))?;
    if m_z != users.len() {
        return Err(Error::Domain(format!(
            "m_z = {m_z} but {} user histograms were given",
            users.len()
        )));
    }
    let mut counts = vec![0.0; first.bins()];
    for u in users {
        first.same_bins(u)?;
        for (acc, c) in counts.iter_mut().zip(&u.counts) {
            *acc += c;
        }
    }
    let m = m_z as f64;
    counts.iter_mut().for_each(|c| *c /= m);
    Ok(LabelHistogram {
        edges: first.edges.clone(),
        counts,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Minkowski(f64),
}

impl Metric {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::Minkowski(p) if !(p >= 1.0 && p.is_finite()) => Err(Error::Config(format!(
                "minkowski order must be a finite p >= 1, got {p}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match *self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.sum(),
            Metric::Minkowski(p) => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => f.write_str("euclidean"),
            Metric::Manhattan => f.write_str("manhattan"),
            Metric::Minkowski(p) => write!(f, "minkowski({p})"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let metric = match s {
            "euclidean" => Metric::Euclidean,
            "manhattan" => Metric::Manhattan,
            _ => {
                let p = s
                    .strip_prefix("minkowski(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|p| p.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))?;
                Metric::Minkowski(p)
            }
        };
        metric.validate()?;
        Ok(metric)
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Distance between two histograms after normalizing each to unit L1 mass.
pub fn zone_distance(a: &LabelHistogram, b: &LabelHistogram, metric: Metric) -> Result<f64> {
    metric.validate()?;
    a.same_bins(b)?;
    Ok(metric.eval(&a.normalized(), &b.normalized()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneDistanceGraph {
    zone_ids: Vec<String>,
    distances: Vec<Vec<f64>>,
    metric: Metric,
}

impl ZoneDistanceGraph {
    /// Validates symmetry, zero diagonal and finite non-negative entries.
    pub fn from_matrix(zone_ids: Vec<String>, distances: Vec<Vec<f64>>, metric: Metric) -> Result<Self> {
        let n = zone_ids.len();
        if distances.len() != n || distances.iter().any(|row| row.len() != n) {
            return Err(Error::Schema(format!("distance matrix is not {n}x{n}")));
        }
        for (i, id) in zone_ids.iter().enumerate() {
            crate::dendrogram::check_zone_id(id)?;
            if zone_ids[..i].contains(id) {
                return Err(Error::Schema(format!("duplicate zone id `{id}`")));
            }
        }
        for i in 0..n {
            if distances[i][i] != 0.0 {
                return Err(Error::Schema(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let d = distances[i][j];
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::Numeric(format!("invalid distance {d} at ({i}, {j})")));
                }
                if d != distances[j][i] {
                    return Err(Error::Schema(format!("asymmetric distances at ({i}, {j})")));
                }
            }
        }
        Ok(ZoneDistanceGraph {
            zone_ids,
            distances,
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zone_ids.is_empty()
    }

    pub fn zone_ids(&self) -> &[String] {
        &self.zone_ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i][j]
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.distances
    }

    pub fn index_of(&self, zone_id: &str) -> Option<usize> {
        self.zone_ids.iter().position(|z| z == zone_id)
    }

    /// Header row of zone ids, then one row of distances per zone in header order.
    pub fn to_csv(&self) -> String {
        let mut out = self.zone_ids.join(",");
        out.push('\n');
        for row in &self.distances {
            let cells: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, metric: Metric) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty graph csv".into()))?;
        let zone_ids: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut distances = Vec::with_capacity(zone_ids.len());
        for (lineno, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("graph csv line {}: {e}", lineno + 2)))?;
            distances.push(row);
        }
        ZoneDistanceGraph::from_matrix(zone_ids, distances, metric)
    }
}

pub fn build_zone_graph(zone_ids: &[String], zones: &[LabelHistogram], metric: Metric) -> Result<ZoneDistanceGraph> {
    if zones.len() < 2 {
        return Err(Error::Domain(format!(
            "a zone graph needs at least 2 zones, got {}",
            zones.len()
        )));
    }
    if zone_ids.len() != zones.len() {
        return Err(Error::Schema(format!(
            "{} zone ids for {} histograms",
            zone_ids.len(),
            zones.len()
        )));
    }
    metric.validate()?;
    let n = zones.len();
    let normalized: Vec<Vec<f64>> = zones
        .iter()
        .map(|h| zones[0].same_bins(h).map(|_| h.normalized()))
        .collect::<Result<_>>()?;
    let mut distances = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric.eval(&normalized[i], &normalized[j]);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    ZoneDistanceGraph::from_matrix(zone_ids.to_vec(), distances, metric)
}

/// `zone_id,bin_lo,bin_hi,count` rows, one per bin, with a header line.
pub fn histograms_to_csv(zone_ids: &[String], hists: &[LabelHistogram]) -> String {
    let mut out = String::from("zone_id,bin_lo,bin_hi,count\n");
    for (id, h) in zone_ids.iter().zip(hists) {
        for (b, c) in h.counts.iter().enumerate() {
            out.push_str(&format!("{id},{},{},{c}\n", h.edges[b], h.edges[b + 1]));
        }
    }
    out
}

pub fn histograms_from_csv(text: &str) -> Result<(Vec<String>, Vec<LabelHistogram>)> {
    let mut ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("zone_id") || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("histogram csv line {}: {what}", lineno + 1));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
        let row = (num(cells[1])?, num(cells[2])?, num(cells[3])?);
        let id = cells[0].trim();
        match ids.iter().position(|z| z == id) {
            Some(k) if k + 1 == ids.len() => rows[k].push(row),
            Some(_) => return Err(bad("zone rows are not contiguous")),
            None => {
                ids.push(id.to_string());
                rows.push(vec![row]);
            }
        }
    }
    let hists = rows
        .into_iter()
        .map(|bins| {
            let mut edges: Vec<f64> = bins.iter().map(|r| r.0).collect();
            edges.push(bins.last().map(|r| r.1).unwrap_or(f64::NAN));
            if bins.windows(2).any(|w| w[0].1 != w[1].0) {
                return Err(Error::Parse("histogram bins are not contiguous".into()));
            }
            LabelHistogram::new(edges, bins.iter().map(|r| r.2).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, hists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn hist(counts: &[f64]) -> LabelHistogram {
        let edges = (0..=counts.len()).map(|i| i as f64).collect();
        LabelHistogram::new(edges, counts.to_vec()).unwrap()
    }

    #[test]
    fn empty_labels_give_zero_counts() {
        let h = build_user_histogram(&[], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.counts(), &[0.0, 0.0]);
    }

    #[test]
    fn counts_direct() {
        let h = build_user_histogram(&[0.5, 0.5, 1.5], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.counts(), &[2.0, 1.0]);
    }

    #[test]
    fn boundaries_go_left_closed_last_closed() {
        let h = build_user_histogram(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h.counts(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn out_of_range_label_is_named() {
        let err = build_user_histogram(&[0.5, 7.25], &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Range(ref m) if m.contains("7.25")), "{err}");
        assert!(matches!(build_user_histogram(&[0.5], &[]), Err(Error::Config(_))));
        assert!(build_user_histogram(&[f64::NAN], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn seeded_counts_match_one_pass_oracle() {
        let mut rng = SimRng::seed_from_u64(11);
        let labels: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..=10.0)).collect();
        let edges = uniform_edges(0.0, 10.0, 10).unwrap();
        let h = build_user_histogram(&labels, &edges).unwrap();
        let mut oracle = [0.0; 10];
        for &y in &labels {
            // floor of the unit-width bin, with the closed right edge folded into bin 9
            let b = (y.floor() as usize).min(9);
            oracle[b] += 1.0;
        }
        assert_eq!(h.counts(), &oracle);
        assert_eq!(h.total(), 1000.0);
    }

    #[test]
    fn dp_vanishing_noise_limit() {
        let h = hist(&[3.0, 0.0, 5.0]);
        let cfg = DpConfig {
            epsilon: 1e9,
            enabled: true,
        };
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..100 {
            let out = dp_perturb(&h, &cfg, &mut rng).unwrap();
            assert_eq!(out.edges(), h.edges());
            for (a, b) in out.counts().iter().zip(h.counts()) {
                assert!((a - b).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dp_disabled_is_identity_and_bad_epsilon_rejected() {
        let h = hist(&[1.0, 2.0]);
        let mut rng = SimRng::seed_from_u64(2);
        let off = DpConfig {
            epsilon: -1.0,
            enabled: false,
        };
        assert_eq!(dp_perturb(&h, &off, &mut rng).unwrap(), h);
        for eps in [0.0, -2.0, f64::NAN] {
            let cfg = DpConfig {
                epsilon: eps,
                enabled: true,
            };
            assert!(matches!(dp_perturb(&h, &cfg, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn laplace_variance_is_two_b_squared() {
        let h = hist(&[0.0]);
        let cfg = DpConfig {
            epsilon: 1.0,
            enabled: true,
        };
        let mut rng = SimRng::seed_from_u64(3);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| dp_perturb(&h, &cfg, &mut rng).unwrap().counts()[0])
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 2.0).abs() / 2.0 < 0.05, "variance {var}");
    }

    #[test]
    fn adjacent_histograms_density_ratio_bounded() {
        // Outputs for counts 5 and 6 binned on a grid; each bin's frequency ratio
        // must stay under e^eps up to Monte-Carlo error.
        let cfg = DpConfig {
            epsilon: 1.0,
            enabled: true,
        };
        let a = hist(&[5.0]);
        let b = hist(&[6.0]);
        let mut rng = SimRng::seed_from_u64(4);
        let n = 1_000_000;
        let width = 0.5;
        let lo = 1.0;
        let nbins = 20;
        let mut fa = vec![0u64; nbins];
        let mut fb = vec![0u64; nbins];
        for _ in 0..n {
            for (h, f) in [(&a, &mut fa), (&b, &mut fb)] {
                let x = dp_perturb(h, &cfg, &mut rng).unwrap().counts()[0];
                let k = ((x - lo) / width).floor();
                if k >= 0.0 && (k as usize) < nbins {
                    f[k as usize] += 1;
                }
            }
        }
        for k in 0..nbins {
            let (ca, cb) = (fa[k] as f64, fb[k] as f64);
            let ratio = ca.max(cb) / ca.min(cb);
            // 4 standard errors of the log-ratio estimate
            let slack = 4.0 * (1.0 / ca + 1.0 / cb).sqrt();
            assert!(
                ratio.ln() <= cfg.epsilon + slack,
                "bin {k}: ratio {ratio} ({ca} vs {cb})"
            );
        }
    }

    #[test]
    fn aggregate_is_the_mean() {
        let a = hist(&[2.0, 0.0]);
        let b = hist(&[0.0, 2.0]);
        assert_eq!(aggregate_zone_histogram(std::slice::from_ref(&a), 1).unwrap(), a);
        let m = aggregate_zone_histogram(&[a.clone(), b], 2).unwrap();
        assert_eq!(m.counts(), &[1.0, 1.0]);
        assert!(matches!(aggregate_zone_histogram(&[], 1), Err(Error::Domain(_))));
        let other = LabelHistogram::new(vec![0.0, 1.0, 3.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            aggregate_zone_histogram(&[a, other], 2),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn aggregation_commutes_with_noise_in_expectation() {
        let users: Vec<LabelHistogram> = (0..5).map(|u| hist(&[u as f64, 3.0, 10.0 - u as f64])).collect();
        let clean = aggregate_zone_histogram(&users, 5).unwrap();
        let cfg = DpConfig {
            epsilon: 0.5,
            enabled: true,
        };
        let mut rng = SimRng::seed_from_u64(5);
        let seeds = 4000;
        let mut mean = [0.0; 3];
        for _ in 0..seeds {
            let noised: Vec<_> = users.iter().map(|u| dp_perturb(u, &cfg, &mut rng).unwrap()).collect();
            let agg = aggregate_zone_histogram(&noised, 5).unwrap();
            for (m, c) in mean.iter_mut().zip(agg.counts()) {
                *m += c / seeds as f64;
            }
        }
        // sd of one aggregated bin is sqrt(2) * b / sqrt(m_z)
        let sigma = (2.0f64).sqrt() * cfg.noise_scale() / (5.0f64).sqrt() / (seeds as f64).sqrt();
        for (m, c) in mean.iter().zip(clean.counts()) {
            assert!((m - c).abs() < 3.0 * sigma, "{m} vs {c}");
        }
    }

    #[test]
    fn two_bin_analytic_distances() {
        let a = hist(&[1.0, 0.0]);
        let b = hist(&[0.0, 1.0]);
        for m in [Metric::Euclidean, Metric::Manhattan, Metric::Minkowski(3.0)] {
            assert_eq!(zone_distance(&a, &a, m).unwrap(), 0.0);
        }
        let e = zone_distance(&a, &b, Metric::Euclidean).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(zone_distance(&a, &b, Metric::Manhattan).unwrap(), 2.0);
        assert!(matches!(
            zone_distance(&a, &b, Metric::Minkowski(0.5)),
            Err(Error::Config(_))
        ));
        let c = LabelHistogram::new(vec![0.0, 1.0, 5.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            zone_distance(&a, &c, Metric::Euclidean),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn distances_compare_normalized_mass() {
        // Scaling counts does not move a zone; negative counts use |c| mass.
        let a = hist(&[1.0, 3.0]);
        let b = hist(&[10.0, 30.0]);
        assert_eq!(zone_distance(&a, &b, Metric::Manhattan).unwrap(), 0.0);
        let neg = hist(&[-1.0, 3.0]);
        assert_eq!(neg.normalized(), vec![-0.25, 0.75]);
    }

    #[test]
    fn minkowski_matches_direct_summation() {
        let mut rng = SimRng::seed_from_u64(6);
        let a = hist(&(0..10).map(|_| rng.random_range(0.0..50.0)).collect::<Vec<_>>());
        let b = hist(&(0..10).map(|_| rng.random_range(0.0..50.0)).collect::<Vec<_>>());
        let (na, nb) = (a.normalized(), b.normalized());
        // Kahan-compensated sum as the higher-precision reference
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for i in 0..10 {
            let term = (na[i] - nb[i]).abs().powi(3) - comp;
            let t = s + term;
            comp = (t - s) - term;
            s = t;
        }
        let oracle = s.cbrt();
        let got = zone_distance(&a, &b, Metric::Minkowski(3.0)).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn metric_text_roundtrip() {
        for m in [Metric::Euclidean, Metric::Manhattan, Metric::Minkowski(2.5)] {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert!("chebyshev".parse::<Metric>().is_err());
        assert!("minkowski(0.2)".parse::<Metric>().is_err());
    }

    #[test]
    fn graph_sizes_and_errors() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let same = hist(&[1.0, 2.0]);
        let g = build_zone_graph(&ids[..2], &[same.clone(), same.clone()], Metric::Euclidean).unwrap();
        assert_eq!(g.matrix(), &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let hs = [hist(&[1.0, 0.0]), hist(&[0.0, 1.0]), hist(&[1.0, 1.0])];
        let g = build_zone_graph(&ids, &hs, Metric::Manhattan).unwrap();
        let pairs = (0..3).flat_map(|i| (i + 1..3).map(move |j| (i, j))).count();
        assert_eq!(pairs, 3);
        assert_eq!(g.distance(0, 1), 2.0);
        assert_eq!(g.distance(0, 2), 1.0);
        assert!(matches!(
            build_zone_graph(&ids[..1], &hs[..1], Metric::Euclidean),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn csv_roundtrips() {
        let ids: Vec<String> = ["north", "south"].iter().map(|s| s.to_string()).collect();
        let hs = vec![hist(&[1.5, -0.25, 3.0]), hist(&[0.1, 0.2, 0.3])];
        let (ids2, hs2) = histograms_from_csv(&histograms_to_csv(&ids, &hs)).unwrap();
        assert_eq!((ids2, hs2), (ids.clone(), hs.clone()));
        let g = build_zone_graph(&ids, &hs, Metric::Euclidean).unwrap();
        assert_eq!(ZoneDistanceGraph::from_csv(&g.to_csv(), Metric::Euclidean).unwrap(), g);
    }

    fn arb_hist(bins: usize) -> impl Strategy<Value = LabelHistogram> {
        proptest::collection::vec(0.0f64..100.0, bins).prop_map(|c| hist(&c))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn metric_axioms(a in arb_hist(6), b in arb_hist(6), c in arb_hist(6), p in 1.0f64..6.0) {
            for m in [Metric::Euclidean, Metric::Manhattan, Metric::Minkowski(p)] {
                let ab = zone_distance(&a, &b, m).unwrap();
                let ba = zone_distance(&b, &a, m).unwrap();
                let ac = zone_distance(&a, &c, m).unwrap();
                let bc = zone_distance(&b, &c, m).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert_eq!(zone_distance(&a, &a, m).unwrap(), 0.0);
                prop_assert!(ac <= ab + bc + 1e-12);
                if ab == 0.0 {
                    prop_assert!(a.normalized().iter().zip(b.normalized()).all(|(x, y)| (x - y).abs() < 1e-12));
                }
            }
        }

        #[test]
        fn graph_is_permutation_equivariant(hs in proptest::collection::vec(arb_hist(4), 2..7), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let ids: Vec<String> = (0..hs.len()).map(|i| format!("z{i}")).collect();
            let g = build_zone_graph(&ids, &hs, Metric::Euclidean).unwrap();
            let mut perm: Vec<usize> = (0..hs.len()).collect();
            perm.shuffle(&mut SimRng::seed_from_u64(seed));
            let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
            let phs: Vec<LabelHistogram> = perm.iter().map(|&i| hs[i].clone()).collect();
            let pg = build_zone_graph(&pids, &phs, Metric::Euclidean).unwrap();
            for i in 0..hs.len() {
                for j in 0..hs.len() {
                    prop_assert_eq!(pg.distance(i, j), g.distance(perm[i], perm[j]));
                }
            }
        }
    }
}
