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

//! Seed fan-out.
//!
//! Every random stream in a run is derived from the master seed by hashing
//! `SHA-256(master_seed_le || stage || 0x00 || zone_le || round_le)` and taking
//! the first eight bytes as a little-endian `u64`. The stream for a given
//! `(stage, zone, round)` is therefore independent of how many other stages,
//! zones, or rounds exist, and of the order in which they are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Sentinel used for the zone or round slot when a stream is not per-zone or per-round.
pub const NONE: u64 = u64::MAX;

pub fn derive_seed(master: u64, stage: &str, zone: u64, round: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(zone.to_le_bytes());
    h.update(round.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(master: u64, stage: &str, zone: u64, round: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stage, zone, round))
}

pub fn stage_stream(master: u64, stage: &str) -> SimRng {
    stream(master, stage, NONE, NONE)
}
