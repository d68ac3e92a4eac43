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

//! Metropolis search over dendrograms, targeting `exp(-loss / temperature)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dendrogram, NodeId, Transition};
use crate::error::{Error, Result};
use crate::label_stats::ZoneDistanceGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub max_steps: u64,
    /// Steps without a best-loss improvement larger than `convergence_tol`
    /// after which the chain is declared converged.
    pub convergence_window: u64,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Divides the loss difference in the acceptance ratio. 1 is the plain
    /// `exp(loss_old - loss_new)` rule.
    pub temperature: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            max_steps: 200_000,
            convergence_window: 5_000,
            convergence_tol: 1e-9,
            seed: 0,
            temperature: 1.0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.convergence_window == 0 {
            return Err(Error::Config("mcmc steps and window must be positive".into()));
        }
        if self.convergence_window > self.max_steps {
            return Err(Error::Config(format!(
                "convergence_window {} exceeds max_steps {}",
                self.convergence_window, self.max_steps
            )));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be non-negative".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// `min(1, exp(loss_old - loss_new))`.
pub fn accept_prob(loss_old: f64, loss_new: f64) -> Result<f64> {
    accept_prob_at(loss_old, loss_new, 1.0)
}

pub(crate) fn accept_prob_at(loss_old: f64, loss_new: f64, temperature: f64) -> Result<f64> {
    if !loss_old.is_finite() || !loss_new.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss in acceptance ratio ({loss_old}, {loss_new})"
        )));
    }
    let delta = (loss_old - loss_new) / temperature;
    Ok(if delta >= 0.0 { 1.0 } else { delta.exp() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub node: NodeId,
    pub kind: Transition,
    pub accepted: bool,
    pub touched: [NodeId; 2],
}

/// A running chain. The state is mutated in place; rejected moves are undone
/// by re-applying the same transition.
pub struct MetropolisChain<'g> {
    graph: &'g ZoneDistanceGraph,
    state: Dendrogram,
    eligible: Vec<NodeId>,
    loss: f64,
    temperature: f64,
}

impl<'g> MetropolisChain<'g> {
    pub fn new(graph: &'g ZoneDistanceGraph, start: Dendrogram, temperature: f64) -> Result<Self> {
        if start.zone_count() < 3 {
            return Err(Error::Domain("a chain needs at least 3 zones".into()));
        }
        // The root never moves under these transitions, so the eligible set is fixed.
        let eligible = start.eligible_nodes();
        let loss = start.loss();
        Ok(MetropolisChain {
            graph,
            state: start,
            eligible,
            loss,
            temperature,
        })
    }

    pub fn state(&self) -> &Dendrogram {
        &self.state
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn into_state(self) -> Dendrogram {
        self.state
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Step> {
        let node = self.eligible[rng.random_range(0..self.eligible.len())];
        let kind = if rng.random_bool(0.5) {
            Transition::Alpha
        } else {
            Transition::Beta
        };
        let before = [
            self.state.score(node),
            self.state.score(self.state.parent(node).unwrap()),
        ];
        let touched = self.state.apply(node, kind, self.graph)?;
        let new_loss = self.loss - before[0] - before[1] + self.state.score(touched[0]) + self.state.score(touched[1]);
        let rho = accept_prob_at(self.loss, new_loss, self.temperature)?;
        let accepted = rho >= 1.0 || rng.random::<f64>() < rho;
        if accepted {
            // Re-sum rather than carry the running difference, so the tracked
            // loss equals `state.loss()` bit for bit.
            self.loss = self.state.loss();
        } else {
            self.state.apply(node, kind, self.graph)?;
        }
        Ok(Step {
            node,
            kind,
            accepted,
            touched,
        })
    }
}

#[derive(Clone, Debug)]
pub struct McmcOutcome {
    /// Lowest-loss dendrogram visited.
    pub best: Dendrogram,
    pub best_loss: f64,
    pub steps: u64,
    pub accepted: u64,
    pub converged: bool,
    pub hit_max_steps: bool,
}

/// Runs the chain from a random start and returns the best tree seen.
pub fn optimize<R: Rng + ?Sized>(graph: &ZoneDistanceGraph, cfg: &McmcConfig, rng: &mut R) -> Result<McmcOutcome> {
    cfg.validate()?;
    let start = Dendrogram::random(graph, rng)?;
    if graph.len() < 3 {
        let best_loss = start.loss();
        return Ok(McmcOutcome {
            best: start,
            best_loss,
            steps: 0,
            accepted: 0,
            converged: true,
            hit_max_steps: false,
        });
    }
    let mut chain = MetropolisChain::new(graph, start, cfg.temperature)?;
    let mut best = chain.state().clone();
    let mut best_loss = chain.loss();
    let mut plateau_ref = best_loss;
    let mut since_improvement = 0u64;
    let mut accepted = 0u64;
    let mut steps = 0u64;
    let mut converged = false;
    while steps < cfg.max_steps {
        let step = chain.step(rng)?;
        steps += 1;
        if step.accepted {
            accepted += 1;
            if chain.loss() < best_loss {
                best_loss = chain.loss();
                best.clone_from(chain.state());
            }
        }
        if plateau_ref - best_loss > cfg.convergence_tol {
            plateau_ref = best_loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.convergence_window {
                converged = true;
                break;
            }
        }
    }
    Ok(McmcOutcome {
        best,
        best_loss,
        steps,
        accepted,
        converged,
        hit_max_steps: !converged,
    })
}
