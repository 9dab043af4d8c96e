use crate::cache::{subfile_size, CacheDistribution};
use crate::error::{Error, Result};

use super::SlotDemand;

pub const MAX_BRUTE_FORCE_USERS: usize = 12;

/// Subset-XOR delivery cost of one demand by enumerating all `2^K` user
/// subsets: `sum_P max_{k in P} g_{d_k}(K, |P| - 1)`.
pub fn brute_force_man_slot(demand: &SlotDemand, q: &CacheDistribution) -> Result<f64> {
    let users = demand.total();
    if users > MAX_BRUTE_FORCE_USERS {
        return Err(Error::TooManyUsers { users, limit: MAX_BRUTE_FORCE_USERS });
    }
    let chunks = demand.user_chunks();
    let mut total = 0.0;
    for mask in 1u32..(1u32 << users) {
        let size = mask.count_ones() as usize;
        let largest = (0..users)
            .filter(|k| mask >> k & 1 == 1)
            .map(|k| subfile_size(q.fractions()[chunks[k]], users, size - 1))
            .fold(0.0, f64::max);
        total += largest;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_user() {
        let q = CacheDistribution::uniform(1, 1, 0.3);
        let d = SlotDemand::from_requests(1, &[(0, 0)]);
        assert!((brute_force_man_slot(&d, &q).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_distinct_users() {
        let q = CacheDistribution::from_flat(2, 1, 0.4, vec![0.6, 0.2]).unwrap();
        let d = SlotDemand::from_requests(1, &[(0, 0), (1, 0)]);
        let expect = 0.4 * 0.4 + 0.8 * 0.8 + f64::max(0.6 * 0.4, 0.2 * 0.8);
        assert!((brute_force_man_slot(&d, &q).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_demands() {
        let q = CacheDistribution::uniform(1, 1, 0.3);
        let d = SlotDemand::from_positions(vec![vec![0; 13]]);
        assert!(matches!(brute_force_man_slot(&d, &q), Err(Error::TooManyUsers { users: 13, .. })));
    }
}
