use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::layers::shuffle_permutation;

/// Inter-group connection counts between two consecutive group
/// convolutions with `channels` channels in `groups` groups.
///
/// Counts are exact rationals: the closed form for the shuffled case is not
/// an integer unless `groups²` divides `channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectivityReport {
    pub channels: usize,
    pub groups: usize,
    /// Cross-group channel pairs a dense channel mixer would connect.
    pub n_total: Ratio<u64>,
    /// Cross-group pairs that survive one channel shuffle.
    pub n_actual: Ratio<u64>,
    pub lost_ratio: Ratio<u64>,
}

impl ConnectivityReport {
    pub fn lost_ratio_f64(&self) -> f64 {
        *self.lost_ratio.numer() as f64 / *self.lost_ratio.denom() as f64
    }

    fn ratio_of(n_total: Ratio<u64>, n_actual: Ratio<u64>) -> Ratio<u64> {
        if n_total == Ratio::from_integer(0) {
            Ratio::from_integer(0)
        } else {
            Ratio::from_integer(1) - n_actual / n_total
        }
    }
}

fn check(channels: usize, groups: usize) -> Result<()> {
    if channels == 0 || groups == 0 || channels % groups != 0 {
        return Err(Error::Indivisible {
            op: "connectivity",
            channels,
            groups,
        });
    }
    Ok(())
}

/// Closed forms: `C²(G−1)/(2G)`, `C²(G−1)/(2G²)` and `(G−1)/G`.
pub fn connectivity_formula(channels: usize, groups: usize) -> Result<ConnectivityReport> {
    check(channels, groups)?;
    let (c, g) = (channels as u64, groups as u64);
    let n_total = Ratio::new(c * c * (g - 1), 2 * g);
    let n_actual = Ratio::new(c * c * (g - 1), 2 * g * g);
    Ok(ConnectivityReport {
        channels,
        groups,
        n_total,
        n_actual,
        lost_ratio: Ratio::new(g - 1, g),
    })
}

/// Explicit enumeration. `n_total` counts unordered channel pairs in
/// different groups. `n_actual` walks every second-layer output channel
/// after the shuffle, counts the sources it reads that come from a group
/// other than its own, and halves the sum.
pub fn connectivity_bruteforce(channels: usize, groups: usize) -> Result<ConnectivityReport> {
    check(channels, groups)?;
    let per = channels / groups;
    let group_of = |ch: usize| ch / per;

    let mut pairs = 0u64;
    for i in 0..channels {
        for j in i + 1..channels {
            if group_of(i) != group_of(j) {
                pairs += 1;
            }
        }
    }

    let perm = shuffle_permutation(channels, groups)?;
    let mut reads = 0u64;
    for out in 0..channels {
        let b = group_of(out);
        // a grouped layer gives output channel `out` every position of group b
        reads += (b * per..(b + 1) * per).filter(|&p| group_of(perm[p]) != b).count() as u64;
    }

    let n_total = Ratio::from_integer(pairs);
    let n_actual = Ratio::new(reads, 2);
    Ok(ConnectivityReport {
        channels,
        groups,
        n_total,
        n_actual,
        lost_ratio: ConnectivityReport::ratio_of(n_total, n_actual),
    })
}
