//! Binary SHA-256 Merkle tree over transaction leaves.
//!
//! Levels are built by pairing adjacent nodes left to right. When a level has
//! an odd number of nodes the last one is carried up unchanged. Only parents of
//! complete pairs are cached, which lets the tree answer roots and proofs for
//! any earlier size and truncate cheaply.

use serde::{Deserialize, Serialize};

use crate::types::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One proof step: combine the running digest with `digest` placed on `side`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub side: Side,
    pub digest: Digest,
}

/// Steps from a leaf up to the root, bottom-up.
pub type ProofPath = Vec<ProofStep>;

pub fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    Digest::of_parts(&[left.as_bytes(), right.as_bytes()])
}

/// Fold a leaf through its proof.
pub fn fold_proof(leaf: &Digest, proof: &[ProofStep]) -> Digest {
    proof.iter().fold(*leaf, |acc, step| match step.side {
        Side::Left => hash_pair(&step.digest, &acc),
        Side::Right => hash_pair(&acc, &step.digest),
    })
}

/// Root of the empty tree.
pub fn empty_root() -> Digest {
    Digest::of(b"")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` holds the leaves; `levels[l + 1][i]` hashes the full pair
    /// `levels[l][2i], levels[l][2i + 1]`.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new() -> Self {
        MerkleTree { levels: vec![Vec::new()] }
    }

    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, index: usize) -> Option<Digest> {
        self.levels.first().and_then(|l| l.get(index)).copied()
    }

    pub fn append(&mut self, leaf: Digest) {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf);
        let mut l = 0;
        while self.levels[l].len() % 2 == 0 {
            let n = self.levels[l].len();
            let parent = hash_pair(&self.levels[l][n - 2], &self.levels[l][n - 1]);
            if self.levels.len() == l + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[l + 1].push(parent);
            l += 1;
        }
    }

    /// Drop every leaf at index `size` and above.
    pub fn truncate(&mut self, size: usize) {
        let mut keep = size;
        for level in &mut self.levels {
            level.truncate(keep);
            keep /= 2;
        }
        while self.levels.len() > 1 && self.levels.last().is_some_and(Vec::is_empty) {
            self.levels.pop();
        }
    }

    pub fn root(&self) -> Digest {
        self.root_at(self.len()).expect("current size is valid")
    }

    /// Root of the tree made of the first `size` leaves.
    pub fn root_at(&self, size: usize) -> Option<Digest> {
        if size > self.len() {
            return None;
        }
        if size == 0 {
            return Some(empty_root());
        }
        Some(self.node(height(size), 0, size))
    }

    /// Proof for leaf `index` against the root at `size`.
    pub fn proof(&self, index: usize, size: usize) -> Option<ProofPath> {
        if index >= size || size > self.len() {
            return None;
        }
        let mut steps = Vec::new();
        let mut width = size;
        let mut idx = index;
        for l in 0..height(size) {
            let sibling = idx ^ 1;
            if sibling < width {
                steps.push(ProofStep {
                    side: if idx % 2 == 0 { Side::Right } else { Side::Left },
                    digest: self.node(l, sibling, size),
                });
            }
            idx /= 2;
            width = width.div_ceil(2);
        }
        Some(steps)
    }

    /// Node `idx` at `level` in the tree of the first `size` leaves.
    fn node(&self, level: usize, idx: usize, size: usize) -> Digest {
        if ((idx + 1) << level) <= size {
            return self.levels[level][idx];
        }
        let below = width_at(size, level - 1);
        let left = self.node(level - 1, 2 * idx, size);
        if 2 * idx + 1 < below {
            hash_pair(&left, &self.node(level - 1, 2 * idx + 1, size))
        } else {
            left
        }
    }
}

/// Number of levels above the leaves for a tree of `size` leaves.
fn height(size: usize) -> usize {
    let mut h = 0;
    let mut w = size;
    while w > 1 {
        w = w.div_ceil(2);
        h += 1;
    }
    h
}

fn width_at(size: usize, level: usize) -> usize {
    (0..level).fold(size, |w, _| w.div_ceil(2))
}
