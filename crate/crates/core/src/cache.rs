//! Decentralized cache content distribution and exclusive subfile sizes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CAPACITY_TOL: f64 = 1e-9;

/// Per-chunk caching fractions `q_ij` for a library of `N` files with `B`
/// chunks each, together with the cache capacity `M` (in files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheDistribution {
    num_files: usize,
    num_chunks: usize,
    capacity: f64,
    /// Row-major N x B.
    q: Vec<f64>,
}

impl CacheDistribution {
    /// Builds a distribution without checking it; see [`validate`].
    pub fn from_flat(num_files: usize, num_chunks: usize, capacity: f64, q: Vec<f64>) -> Result<Self> {
        if q.len() != num_files * num_chunks {
            return Err(Error::InvalidConfig(format!(
                "cache distribution has {} entries, expected {}",
                q.len(),
                num_files * num_chunks
            )));
        }
        Ok(Self { num_files, num_chunks, capacity, q })
    }

    /// Same fraction for every chunk; capacity is implied.
    pub fn uniform(num_files: usize, num_chunks: usize, fraction: f64) -> Self {
        Self { num_files, num_chunks, capacity: fraction * num_files as f64, q: vec![fraction; num_files * num_chunks] }
    }

    /// Nothing cached.
    pub fn empty(num_files: usize, num_chunks: usize) -> Self {
        Self::uniform(num_files, num_chunks, 0.0)
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn fractions(&self) -> &[f64] {
        &self.q
    }

    pub fn get(&self, file: usize, position: usize) -> f64 {
        self.q[file * self.num_chunks + position]
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// Writes `file_index,chunk_index,q` rows with one-based indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["file_index", "chunk_index", "q"])?;
        for (c, q) in self.q.iter().enumerate() {
            w.serialize((c / self.num_chunks + 1, c % self.num_chunks + 1, q))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`]. Missing chunks default to 0;
    /// the capacity is taken as `sum(q) / B`.
    pub fn read_csv<R: Read>(input: R, num_files: usize, num_chunks: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut q = vec![0.0; num_files * num_chunks];
        for (line, row) in rdr.deserialize::<(usize, usize, f64)>().enumerate() {
            let (i, j, v) = row?;
            if i == 0 || i > num_files || j == 0 || j > num_chunks {
                return Err(Error::InvalidConfig(format!(
                    "Q csv line {}: chunk ({i},{j}) outside {num_files}x{num_chunks}",
                    line + 2
                )));
            }
            q[(i - 1) * num_chunks + (j - 1)] = v;
        }
        let capacity = q.iter().sum::<f64>() / num_chunks as f64;
        Self::from_flat(num_files, num_chunks, capacity, q)
    }
}

/// Normalized size of the bits of a chunk cached by exactly `l_prime` of
/// `l` given users: `q^l' (1-q)^(l-l')`, with `0^0 = 1`. The `l_prime = -1`
/// convention (no subset to serve) yields 0.
pub fn exclusive_fraction(q: f64, l: usize, l_prime: i64) -> Result<f64> {
    if l_prime < -1 || l_prime > l as i64 {
        return Err(Error::Domain(format!("exclusive fraction needs -1 <= l' <= l, got l={l}, l'={l_prime}")));
    }
    if l_prime < 0 {
        return Ok(0.0);
    }
    Ok(subfile_size(q, l, l_prime as usize))
}

/// Unchecked `q^l' (1-q)^(l-l')` for `l' <= l`.
#[inline]
pub fn subfile_size(q: f64, l: usize, l_prime: usize) -> f64 {
    q.powi(l_prime as i32) * (1.0 - q).powi((l - l_prime) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Range { file: usize, position: usize, q: f64 },
    Capacity { total: f64, expected: f64 },
}

/// Outcome of [`validate`]: empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `0 <= q_ij <= 1` and `sum q_ij = M B` within 1e-9.
pub fn validate(dist: &CacheDistribution) -> ValidationReport {
    let mut violations = Vec::new();
    for (c, &q) in dist.q.iter().enumerate() {
        if !(0.0..=1.0).contains(&q) {
            violations.push(Violation::Range { file: c / dist.num_chunks, position: c % dist.num_chunks, q });
        }
    }
    let total = dist.total();
    let expected = dist.capacity * dist.num_chunks as f64;
    if !((total - expected).abs() <= CAPACITY_TOL) {
        violations.push(Violation::Capacity { total, expected });
    }
    ValidationReport { violations }
}

/// Chunks sharing an identical caching fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualQGroups {
    /// Flat chunk indices per group, groups ordered by first member.
    pub groups: Vec<Vec<usize>>,
}

/// Groups chunks by exact equality of `q`.
pub fn equal_q_groups(dist: &CacheDistribution) -> EqualQGroups {
    let mut by_value: BTreeMap<u64, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (c, &q) in dist.q.iter().enumerate() {
        // +0.0 and -0.0 are the same fraction.
        let key = if q == 0.0 { 0 } else { q.to_bits() };
        match by_value.get(&key) {
            Some(&g) => groups[g].push(c),
            None => {
                by_value.insert(key, groups.len());
                groups.push(vec![c]);
            }
        }
    }
    EqualQGroups { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exclusive_fraction_examples() {
        assert_eq!(exclusive_fraction(0.5, 2, 1).unwrap(), 0.25);
        assert_eq!(exclusive_fraction(0.3, 4, -1).unwrap(), 0.0);
        assert_eq!(exclusive_fraction(0.0, 5, 0).unwrap(), 1.0);
        assert_eq!(exclusive_fraction(0.0, 5, 1).unwrap(), 0.0);
        assert_eq!(exclusive_fraction(1.0, 5, 4).unwrap(), 0.0);
        assert_eq!(exclusive_fraction(1.0, 5, 5).unwrap(), 1.0);
    }

    #[test]
    fn exclusive_fraction_domain() {
        assert!(matches!(exclusive_fraction(0.5, 2, 3), Err(Error::Domain(_))));
        assert!(matches!(exclusive_fraction(0.5, 2, -2), Err(Error::Domain(_))));
    }

    #[test]
    fn validate_examples() {
        let d = CacheDistribution::uniform(4, 3, 0.5);
        assert!(validate(&d).is_ok());

        let mut q = vec![0.5; 12];
        q[0] += 0.1;
        let over = CacheDistribution::from_flat(4, 3, 2.0, q).unwrap();
        assert!(matches!(validate(&over).violations[..], [Violation::Capacity { .. }]));

        let mut q = vec![0.0; 4];
        q[0] = 1.2;
        let bad = CacheDistribution::from_flat(2, 2, 0.6, q).unwrap();
        assert_eq!(validate(&bad).violations, vec![Violation::Range { file: 0, position: 0, q: 1.2 }]);
    }

    #[test]
    fn grouping_examples() {
        assert_eq!(equal_q_groups(&CacheDistribution::uniform(2, 3, 0.4)).groups, vec![vec![0, 1, 2, 3, 4, 5]]);
        let distinct = CacheDistribution::from_flat(1, 3, 0.6, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(equal_q_groups(&distinct).groups.len(), 3);
        let mixed = CacheDistribution::from_flat(3, 1, 1.2, vec![0.5, 0.5, 0.2]).unwrap();
        assert_eq!(equal_q_groups(&mixed).groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn csv_roundtrip() {
        let d = CacheDistribution::from_flat(2, 2, 1.0, vec![1.0, 0.5, 0.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("file_index,chunk_index,q\n1,1,1.0\n"));
        let back = CacheDistribution::read_csv(&buf[..], 2, 2).unwrap();
        assert_eq!(back, d);
        assert!(CacheDistribution::read_csv("file_index,chunk_index,q\n3,1,0.5\n".as_bytes(), 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn binomial_completeness(q in 0.0f64..=1.0, l in 0usize..=50) {
            let total: f64 = (0..=l)
                .map(|lp| crate::numeric::binomial(l, lp) * exclusive_fraction(q, l, lp as i64).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
        }

        #[test]
        fn non_increasing_in_l(q in 0.0f64..0.999, lp in 0usize..10, extra in 0usize..20) {
            let l = lp + extra;
            let a = exclusive_fraction(q, l, lp as i64).unwrap();
            let b = exclusive_fraction(q, l + 1, lp as i64).unwrap();
            prop_assert!(b <= a);
        }
    }
}
