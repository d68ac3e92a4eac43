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

//! Nested-parenthesis text form: internal nodes are written `(left,right):d_r`
//! and leaves by zone id. An optional `@p` suffix after the score carries a
//! sampling probability.

use super::{Dendrogram, Node, NodeId};
use crate::error::{Error, Result};

const RESERVED: &[char] = &['(', ')', ',', ':', '@'];

pub(crate) fn check_zone_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| RESERVED.contains(&c) || c.is_whitespace()) {
        return Err(Error::Config(format!(
            "zone id `{id}` is empty or contains one of ( ) , : @ or whitespace"
        )));
    }
    Ok(())
}

impl Dendrogram {
    pub fn to_text(&self) -> String {
        self.to_text_annotated(|_| None)
    }

    pub fn to_text_annotated(&self, annotation: impl Fn(NodeId) -> Option<f64>) -> String {
        let mut out = String::new();
        self.write_node(self.root, &annotation, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, annotation: &dyn Fn(NodeId) -> Option<f64>, out: &mut String) {
        match self.nodes[id].children {
            None => out.push_str(&self.zone_ids[id]),
            Some((l, r)) => {
                out.push('(');
                self.write_node(l, annotation, out);
                out.push(',');
                self.write_node(r, annotation, out);
                out.push_str("):");
                out.push_str(&self.nodes[id].score.to_string());
                if let Some(p) = annotation(id) {
                    out.push('@');
                    out.push_str(&p.to_string());
                }
            }
        }
    }

    /// Parses the text form. Leaf `i` of the result is `zone_ids[i]`; scores
    /// are taken as written.
    pub fn from_text(text: &str, zone_ids: &[String]) -> Result<Dendrogram> {
        Ok(Self::from_text_annotated(text, zone_ids)?.0)
    }

    /// Like [`Dendrogram::from_text`], also returning any `@p` annotation per node.
    pub fn from_text_annotated(text: &str, zone_ids: &[String]) -> Result<(Dendrogram, Vec<Option<f64>>)> {
        let n = zone_ids.len();
        if n < 2 {
            return Err(Error::Domain("a dendrogram needs at least 2 zones".into()));
        }
        let mut p = Parser {
            src: text.trim().as_bytes(),
            pos: 0,
            zone_ids,
            nodes: (0..2 * n - 1)
                .map(|id| Node {
                    parent: None,
                    children: None,
                    leaves: if id < n { vec![id] } else { Vec::new() },
                    score: 0.0,
                })
                .collect(),
            notes: vec![None; 2 * n - 1],
            next: n,
            seen: vec![false; n],
        };
        let root = p.node()?;
        if p.pos != p.src.len() {
            return Err(p.error("trailing characters"));
        }
        if p.seen.iter().any(|s| !s) {
            return Err(Error::Parse("dendrogram text is missing zones".into()));
        }
        let Parser { mut nodes, notes, .. } = p;
        for id in super::post_order(&nodes, root) {
            if let Some((l, r)) = nodes[id].children {
                nodes[id].leaves = super::merge_sorted(&nodes[l].leaves, &nodes[r].leaves);
            }
        }
        let t = Dendrogram {
            zone_ids: zone_ids.to_vec(),
            nodes,
            root,
        };
        t.validate(None)?;
        Ok((t, notes))
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    zone_ids: &'a [String],
    nodes: Vec<Node>,
    notes: Vec<Option<f64>>,
    next: NodeId,
    seen: Vec<bool>,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::Parse(format!("dendrogram text at byte {}: {what}", self.pos))
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn token(&mut self) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if RESERVED.contains(&(c as char)) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn number(&mut self) -> Result<f64> {
        let tok = self.token().to_string();
        tok.parse::<f64>()
            .map_err(|_| self.error(&format!("bad number `{tok}`")))
    }

    fn node(&mut self) -> Result<NodeId> {
        if self.peek() != Some(b'(') {
            let tok = self.token().to_string();
            let leaf = self
                .zone_ids
                .iter()
                .position(|z| *z == tok)
                .ok_or_else(|| self.error(&format!("unknown zone `{tok}`")))?;
            if std::mem::replace(&mut self.seen[leaf], true) {
                return Err(self.error(&format!("zone `{tok}` appears twice")));
            }
            return Ok(leaf);
        }
        self.expect(b'(')?;
        if self.next >= self.nodes.len() {
            return Err(self.error("too many internal nodes"));
        }
        let id = self.next;
        self.next += 1;
        let l = self.node()?;
        self.expect(b',')?;
        let r = self.node()?;
        self.expect(b')')?;
        self.expect(b':')?;
        let score = self.number()?;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            self.notes[id] = Some(self.number()?);
        }
        self.nodes[id].children = Some((l, r));
        self.nodes[id].score = score;
        self.nodes[l].parent = Some(id);
        self.nodes[r].parent = Some(id);
        Ok(id)
    }
}
