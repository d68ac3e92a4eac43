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

//! Strongly convex zone objectives.
//!
//! `F_z(theta) = (1 / m_z) sum_u mean_{(x, y) in D_u} l(theta; x, y) + (lambda / 2) |theta|^2`
//!
//! Squared-error objectives are evaluated from per-user sufficient
//! statistics `H_u = mean x x^T`, `b_u = mean y x` and `c_u = mean y^2`, so a
//! gradient costs `O(p^2)` per user regardless of sample count.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::world::{UserDataset, Zone};
use crate::error::{Error, Result};
use crate::fusion::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Quadratic,
    RidgeRegression,
    LogisticL2,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Quadratic => "quadratic",
            ObjectiveKind::RidgeRegression => "ridge_regression",
            ObjectiveKind::LogisticL2 => "logistic_l2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    /// L2 coefficient; always 0 for `quadratic`.
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub rmse: f64,
    /// Mean held-out loss: half squared error, or log-loss for `logistic_l2`.
    pub loss: f64,
}

#[derive(Clone, Debug)]
struct UserStats {
    h: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct RegressionStats {
    dim: usize,
    users: Vec<UserStats>,
    mean: UserStats,
}

impl RegressionStats {
    pub(crate) fn from_users(users: &[UserDataset]) -> Self {
        let dim = users[0].dim();
        let per_user: Vec<UserStats> = users
            .iter()
            .map(|u| {
                let mut s = UserStats {
                    h: vec![0.0; dim * dim],
                    b: vec![0.0; dim],
                    c: 0.0,
                };
                let mut n = 0.0;
                for (x, y) in u.train_rows() {
                    for i in 0..dim {
                        s.b[i] += y * x[i];
                        for j in 0..dim {
                            s.h[i * dim + j] += x[i] * x[j];
                        }
                    }
                    s.c += y * y;
                    n += 1.0;
                }
                s.h.iter_mut().chain(s.b.iter_mut()).for_each(|v| *v /= n);
                s.c /= n;
                s
            })
            .collect();
        let mean = Self::average(dim, per_user.iter());
        RegressionStats {
            dim,
            users: per_user,
            mean,
        }
    }

    fn average<'a>(dim: usize, it: impl Iterator<Item = &'a UserStats>) -> UserStats {
        let mut acc = UserStats {
            h: vec![0.0; dim * dim],
            b: vec![0.0; dim],
            c: 0.0,
        };
        let mut n = 0.0;
        for s in it {
            acc.h.iter_mut().zip(&s.h).for_each(|(a, v)| *a += v);
            acc.b.iter_mut().zip(&s.b).for_each(|(a, v)| *a += v);
            acc.c += s.c;
            n += 1.0;
        }
        acc.h.iter_mut().chain(acc.b.iter_mut()).for_each(|v| *v /= n);
        acc.c /= n;
        acc
    }

    fn subset(&self, users: Option<&[usize]>) -> std::borrow::Cow<'_, UserStats> {
        match users {
            None => std::borrow::Cow::Borrowed(&self.mean),
            Some(idx) => std::borrow::Cow::Owned(Self::average(self.dim, idx.iter().map(|&i| &self.users[i]))),
        }
    }

    fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.mean.h)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Objective {
    pub fn new(kind: ObjectiveKind, lambda: f64) -> Self {
        let lambda = if kind == ObjectiveKind::Quadratic { 0.0 } else { lambda };
        Objective { kind, lambda }
    }

    pub fn is_regression(&self) -> bool {
        self.kind != ObjectiveKind::LogisticL2
    }

    fn sample_loss(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let z = dot(x, theta);
        match self.kind {
            ObjectiveKind::LogisticL2 => softplus(z) - y * z,
            _ => 0.5 * (z - y) * (z - y),
        }
    }

    fn sample_residual(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let z = dot(x, theta);
        match self.kind {
            ObjectiveKind::LogisticL2 => sigmoid(z) - y,
            _ => z - y,
        }
    }

    /// Gradient of one user's mean training loss plus the regulariser,
    /// computed directly from the samples.
    pub fn user_gradient(&self, user: &UserDataset, theta: &ParamVector) -> ParamVector {
        let mut g = vec![0.0; theta.dim()];
        let mut n = 0.0;
        for (x, y) in user.train_rows() {
            let r = self.sample_residual(x, y, theta.as_slice());
            g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += r * xi);
            n += 1.0;
        }
        for (gi, t) in g.iter_mut().zip(theta.as_slice()) {
            *gi = *gi / n + self.lambda * t;
        }
        ParamVector::new(g)
    }

    /// Mean over the zone's users of per-user gradients, from raw samples.
    pub fn reference_gradient(&self, zone: &Zone, theta: &ParamVector) -> ParamVector {
        let mut g = ParamVector::zeros(theta.dim());
        for u in &zone.users {
            g.axpy(1.0, &self.user_gradient(u, theta));
        }
        g.scale(1.0 / zone.m_z() as f64);
        g
    }

    /// Zone gradient at `theta`, over all users or the given user subset.
    pub fn local_gradient(&self, zone: &Zone, theta: &ParamVector, users: Option<&[usize]>) -> ParamVector {
        match &zone.stats {
            Some(stats) => {
                let s = stats.subset(users);
                let p = stats.dim;
                let t = theta.as_slice();
                ParamVector::new(
                    (0..p)
                        .map(|i| dot(&s.h[i * p..(i + 1) * p], t) - s.b[i] + self.lambda * t[i])
                        .collect(),
                )
            }
            None => {
                let chosen: Vec<&UserDataset> = match users {
                    None => zone.users.iter().collect(),
                    Some(idx) => idx.iter().map(|&i| &zone.users[i]).collect(),
                };
                let mut g = ParamVector::zeros(theta.dim());
                for u in &chosen {
                    g.axpy(1.0, &self.user_gradient(u, theta));
                }
                g.scale(1.0 / chosen.len() as f64);
                g
            }
        }
    }

    /// Training objective `F_z(theta)`.
    pub fn loss(&self, zone: &Zone, theta: &ParamVector) -> f64 {
        let t = theta.as_slice();
        let reg = 0.5 * self.lambda * dot(t, t);
        match &zone.stats {
            Some(stats) => {
                let s = &stats.mean;
                let p = stats.dim;
                let quad: f64 = (0..p).map(|i| t[i] * dot(&s.h[i * p..(i + 1) * p], t)).sum();
                0.5 * quad - dot(&s.b, t) + 0.5 * s.c + reg
            }
            None => {
                let per_user: f64 = zone
                    .users
                    .iter()
                    .map(|u| {
                        let (sum, n) = u
                            .train_rows()
                            .fold((0.0, 0.0), |(s, n), (x, y)| (s + self.sample_loss(x, y, t), n + 1.0));
                        sum / n
                    })
                    .sum();
                per_user / zone.m_z() as f64 + reg
            }
        }
    }

    /// RMSE and mean loss over the union of the zone users' held-out rows.
    pub fn evaluate(&self, zone: &Zone, theta: &ParamVector) -> Result<Evaluation> {
        let t = theta.as_slice();
        let (mut sq, mut loss, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in zone.users.iter().flat_map(|u| u.test_rows()) {
            let z = dot(x, t);
            let pred = if self.kind == ObjectiveKind::LogisticL2 {
                sigmoid(z)
            } else {
                z
            };
            sq += (pred - y) * (pred - y);
            loss += self.sample_loss(x, y, t);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Domain(format!("zone {} has no held-out rows", zone.zone_id)));
        }
        Ok(Evaluation {
            rmse: (sq / n as f64).sqrt(),
            loss: loss / n as f64,
        })
    }

    /// Strong convexity constant of `F_z`.
    pub fn strong_convexity(&self, zone: &Zone) -> f64 {
        match (&zone.stats, self.kind) {
            (Some(stats), _) => stats.h_matrix().symmetric_eigenvalues().min().max(0.0) + self.lambda,
            (None, _) => self.lambda,
        }
    }

    /// The exact minimiser of `F_z`: a linear solve for squared error and
    /// Newton's method for the logistic loss.
    pub fn optimum(&self, zone: &Zone) -> Result<ParamVector> {
        let p = zone.dim();
        if let Some(stats) = &zone.stats {
            let a = stats.h_matrix() + DMatrix::identity(p, p) * self.lambda;
            let b = DVector::from_column_slice(&stats.mean.b);
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::Numeric(format!("zone {} Hessian is singular", zone.zone_id)))?;
            return Ok(ParamVector::new(chol.solve(&b).iter().copied().collect()));
        }
        let mut theta = ParamVector::zeros(p);
        for _ in 0..100 {
            let g = self.reference_gradient(zone, &theta);
            if g.norm() < 1e-14 {
                break;
            }
            let mut h = DMatrix::identity(p, p) * self.lambda;
            for u in &zone.users {
                let n = u.train_rows().count() as f64;
                for (x, _) in u.train_rows() {
                    let s = sigmoid(dot(x, theta.as_slice()));
                    let w = s * (1.0 - s) / (n * zone.m_z() as f64);
                    let xv = DVector::from_column_slice(x);
                    h += &xv * xv.transpose() * w;
                }
            }
            let step = h
                .cholesky()
                .ok_or_else(|| Error::Numeric("logistic Hessian is not positive definite".into()))?
                .solve(&DVector::from_column_slice(g.as_slice()));
            for (t, s) in theta.as_mut_slice().iter_mut().zip(step.iter()) {
                *t -= s;
            }
        }
        Ok(theta)
    }

    /// `F_z(theta) - F_z(theta*)`. Squared-error objectives use the exact
    /// quadratic form `0.5 (theta - theta*)^T (H + lambda I) (theta - theta*)`.
    pub fn excess_risk(&self, zone: &Zone, theta: &ParamVector, optimum: &ParamVector) -> f64 {
        match &zone.stats {
            Some(stats) => {
                let p = stats.dim;
                let d: Vec<f64> = theta
                    .as_slice()
                    .iter()
                    .zip(optimum.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                let quad: f64 = (0..p)
                    .map(|i| d[i] * (dot(&stats.mean.h[i * p..(i + 1) * p], &d) + self.lambda * d[i]))
                    .sum();
                0.5 * quad
            }
            None => (self.loss(zone, theta) - self.loss(zone, optimum)).max(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed_sim::world::{generate_world, WorldSpec};
    use crate::rng::SimRng;
    use rand::{Rng, SeedableRng};

    fn world(kind: ObjectiveKind, seed: u64) -> crate::fed_sim::World {
        let spec = WorldSpec {
            objective: kind,
            zones: 4,
            users_per_zone: 3,
            samples_per_user: 30,
            ..WorldSpec::default()
        };
        generate_world(&spec, seed).unwrap()
    }

    fn random_theta(rng: &mut SimRng, p: usize) -> ParamVector {
        ParamVector::new((0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    fn finite_difference(obj: &Objective, zone: &Zone, theta: &ParamVector) -> Vec<f64> {
        let h = 1e-6;
        (0..theta.dim())
            .map(|i| {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a.as_mut_slice()[i] += h;
                b.as_mut_slice()[i] -= h;
                (obj.loss(zone, &a) - obj.loss(zone, &b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_gradient_vanishes_at_the_optimum() {
        let w = world(ObjectiveKind::Quadratic, 1);
        let zone = &w.zones[0];
        let opt = w.objective.optimum(zone).unwrap();
        assert!(w.objective.local_gradient(zone, &opt, None).norm() < 1e-12);
        assert!((w.objective.strong_convexity(zone) - 1.0).abs() < 1e-12);
        // With an identity Hessian the gradient is theta - c.
        let theta = ParamVector::new(vec![1.0, -1.0, 0.5, 2.0]);
        let g = w.objective.local_gradient(zone, &theta, None);
        for i in 0..4 {
            assert!((g[i] - (theta[i] - opt[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [ObjectiveKind::RidgeRegression, ObjectiveKind::LogisticL2] {
            let w = world(kind, 2);
            let mut rng = SimRng::seed_from_u64(7);
            for k in 0..50 {
                let zone = &w.zones[k % w.len()];
                let theta = random_theta(&mut rng, w.dim());
                let g = w.objective.local_gradient(zone, &theta, None);
                let fd = finite_difference(&w.objective, zone, &theta);
                let rel = g
                    .as_slice()
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / g.norm().max(1e-12);
                assert!(rel < 1e-6, "{kind}: {rel}");
            }
        }
    }

    #[test]
    fn fast_path_matches_raw_samples() {
        for kind in [ObjectiveKind::Quadratic, ObjectiveKind::RidgeRegression] {
            let w = world(kind, 3);
            let theta = ParamVector::new(vec![0.3, -0.7, 1.1, 0.0]);
            for zone in &w.zones {
                let a = w.objective.local_gradient(zone, &theta, None);
                let b = w.objective.reference_gradient(zone, &theta);
                assert!(a.distance(&b) < 1e-12);
                let sub = w.objective.local_gradient(zone, &theta, Some(&[0, 2]));
                let mut manual = w.objective.user_gradient(&zone.users[0], &theta);
                manual.axpy(1.0, &w.objective.user_gradient(&zone.users[2], &theta));
                manual.scale(0.5);
                assert!(sub.distance(&manual) < 1e-12);
            }
        }
    }

    #[test]
    fn zone_gradient_is_the_user_mean() {
        let w = world(ObjectiveKind::LogisticL2, 4);
        let zone = &w.zones[1];
        let theta = ParamVector::new(vec![0.1, 0.2, -0.3, 0.4]);
        let g1 = w.objective.user_gradient(&zone.users[0], &theta);
        let g2 = w.objective.user_gradient(&zone.users[1], &theta);
        let both = w.objective.local_gradient(zone, &theta, Some(&[0, 1]));
        for i in 0..4 {
            assert!((both[i] - (g1[i] + g2[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn optimum_minimises_each_objective() {
        for kind in [
            ObjectiveKind::Quadratic,
            ObjectiveKind::RidgeRegression,
            ObjectiveKind::LogisticL2,
        ] {
            let w = world(kind, 5);
            for zone in &w.zones {
                let opt = w.objective.optimum(zone).unwrap();
                assert!(w.objective.reference_gradient(zone, &opt).norm() < 1e-10, "{kind}");
                assert_eq!(w.objective.excess_risk(zone, &opt, &opt), 0.0);
                let mut off = opt.clone();
                off.as_mut_slice()[0] += 0.1;
                let ex = w.objective.excess_risk(zone, &off, &opt);
                let direct = w.objective.loss(zone, &off) - w.objective.loss(zone, &opt);
                assert!(ex > 0.0 && (ex - direct).abs() < 1e-10, "{kind}: {ex} vs {direct}");
            }
        }
    }

    #[test]
    fn quadratic_excess_risk_is_half_squared_distance() {
        let w = world(ObjectiveKind::Quadratic, 6);
        let zone = &w.zones[2];
        let opt = w.objective.optimum(zone).unwrap();
        let theta = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0]);
        let d = theta.distance(&opt);
        assert!((w.objective.excess_risk(zone, &theta, &opt) - 0.5 * d * d).abs() < 1e-12);
    }

    #[test]
    fn evaluation_examples() {
        let obj = Objective::new(ObjectiveKind::RidgeRegression, 0.1);
        let user = UserDataset::new(
            "u".into(),
            0,
            1,
            (vec![1.0], vec![0.0]),
            (vec![1.0, 1.0], vec![3.0, 4.0]),
        )
        .unwrap();
        let zone = Zone::new("z".into(), (0, 0), ParamVector::zeros(1), vec![user], &obj).unwrap();
        let e = obj.evaluate(&zone, &ParamVector::zeros(1)).unwrap();
        assert!((e.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((e.rmse - 3.53553).abs() < 1e-5);

        let noiseless = WorldSpec {
            objective: ObjectiveKind::RidgeRegression,
            label_noise_sd: 0.0,
            ..WorldSpec::default()
        };
        let w = generate_world(&noiseless, 1).unwrap();
        for zone in &w.zones {
            assert!(obj.evaluate(zone, &zone.ground_truth).unwrap().rmse < 1e-12);
        }
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let w = world(ObjectiveKind::RidgeRegression, 8);
        let mut rng = SimRng::seed_from_u64(1);
        for zone in &w.zones {
            let theta = random_theta(&mut rng, w.dim());
            let residuals: Vec<f64> = zone
                .users
                .iter()
                .flat_map(|u| {
                    u.test_rows()
                        .map(|(x, y)| dot(x, theta.as_slice()) - y)
                        .collect::<Vec<_>>()
                })
                .collect();
            let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
            let got = w.objective.evaluate(zone, &theta).unwrap().rmse;
            assert!((got - mean_sq.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_test_split_is_a_domain_error() {
        let obj = Objective::new(ObjectiveKind::Quadratic, 0.0);
        let user = UserDataset::new("u".into(), 0, 1, (vec![1.0], vec![1.0]), (vec![], vec![])).unwrap();
        let zone = Zone::new("z".into(), (0, 0), ParamVector::zeros(1), vec![user], &obj).unwrap();
        assert!(matches!(
            obj.evaluate(&zone, &ParamVector::zeros(1)),
            Err(Error::Domain(_))
        ));
    }
}
