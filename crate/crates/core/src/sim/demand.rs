use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Chunk requests of one slot, grouped by chunk position.
///
/// Users are indexed the way the delivery algorithms see them: all users
/// requesting a first chunk, then those requesting a second chunk, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotDemand {
    /// `by_position[j]` lists the requested file of every user at position `j`.
    by_position: Vec<Vec<usize>>,
}

impl SlotDemand {
    pub fn new(num_chunks: usize) -> Self {
        Self { by_position: vec![Vec::new(); num_chunks] }
    }

    pub fn from_positions(by_position: Vec<Vec<usize>>) -> Self {
        Self { by_position }
    }

    /// Builds a demand from `(file, position)` pairs in any order.
    pub fn from_requests(num_chunks: usize, requests: &[(usize, usize)]) -> Self {
        let mut d = Self::new(num_chunks);
        for &(file, position) in requests {
            d.push(file, position);
        }
        d
    }

    pub fn push(&mut self, file: usize, position: usize) {
        self.by_position[position].push(file);
    }

    pub fn num_chunks(&self) -> usize {
        self.by_position.len()
    }

    pub fn by_position(&self) -> &[Vec<usize>] {
        &self.by_position
    }

    /// `K_j` for every position.
    pub fn counts(&self) -> Vec<usize> {
        self.by_position.iter().map(Vec::len).collect()
    }

    /// `K`.
    pub fn total(&self) -> usize {
        self.by_position.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Flat chunk index (`file * B + position`) of every user, in user order.
    pub fn user_chunks(&self) -> Vec<usize> {
        let b = self.num_chunks();
        self.by_position.iter().enumerate().flat_map(|(j, files)| files.iter().map(move |&i| i * b + j)).collect()
    }

    /// Distinct requested chunks with their request multiplicity, ordered by
    /// chunk index.
    pub fn distinct_chunks(&self) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for c in self.user_chunks() {
            *counts.entry(c).or_default() += 1;
        }
        counts.into_iter().collect()
    }
}
