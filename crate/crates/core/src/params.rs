//! Scheme parameters and the quantities derived from them.

use num::integer::lcm;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PrimeField;

/// The `(n, k, t, m, q, s)` tuple together with the staircase layout numbers.
///
/// Block `j` (0-based here) corresponds to waiting for `mu_j = n - j`
/// responders; `alpha_j = mu_j - t` is the number of payload rows of that
/// block. Every query has `alpha` sub-queries and every file is cut into
/// `alpha' = (k - t) * alpha` parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SchemeParams {
    n: usize,
    k: usize,
    t: usize,
    m: usize,
    q: u64,
    s: usize,
    mus: Vec<usize>,
    alphas: Vec<usize>,
    alpha: usize,
    alpha_prime: usize,
    block_cols: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawParams {
    n: usize,
    k: usize,
    t: usize,
    m: usize,
    q: u64,
    s: usize,
}

impl TryFrom<RawParams> for SchemeParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        SchemeParams::derive(r.n, r.k, r.t, r.m, r.q, r.s, true)
    }
}

impl From<SchemeParams> for RawParams {
    fn from(p: SchemeParams) -> Self {
        RawParams {
            n: p.n,
            k: p.k,
            t: p.t,
            m: p.m,
            q: p.q,
            s: p.s,
        }
    }
}

impl SchemeParams {
    /// Validates `1 <= t < k <= n`, `q` prime with `q > n`, `m, s >= 1` and
    /// computes the derived layout.
    pub fn new(n: usize, k: usize, t: usize, m: usize, q: u64, s: usize) -> Result<Self> {
        Self::derive(n, k, t, m, q, s, true)
    }

    /// Like [`SchemeParams::new`] but allows `q <= n`. A Vandermonde matrix
    /// with distinct nonzero points does not exist then, so such parameters
    /// are only usable with an explicit encoding matrix that passes
    /// [`crate::field::validate_encoding_matrix`].
    pub fn with_small_field(
        n: usize,
        k: usize,
        t: usize,
        m: usize,
        q: u64,
        s: usize,
    ) -> Result<Self> {
        Self::derive(n, k, t, m, q, s, false)
    }

    fn derive(
        n: usize,
        k: usize,
        t: usize,
        m: usize,
        q: u64,
        s: usize,
        require_q_gt_n: bool,
    ) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        if t == 0 || t >= k {
            return Err(Error::InvalidThreshold { t, k });
        }
        PrimeField::new(q)?;
        if require_q_gt_n && q <= n as u64 {
            return Err(Error::FieldTooSmall { q, n });
        }
        if m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if s == 0 {
            return Err(Error::InvalidParameter(
                "batch width s must be at least 1".into(),
            ));
        }
        let h = n - k + 1;
        let mus: Vec<usize> = (0..h).map(|j| n - j).collect();
        let alphas: Vec<usize> = mus.iter().map(|mu| mu - t).collect();
        // the last level (mu = k) does not enter the LCM
        let alpha = alphas[..h - 1].iter().fold(1, |acc, &a| lcm(acc, a));
        let alpha_prime = (k - t) * alpha;
        let block_cols: Vec<usize> = (0..h)
            .map(|j| {
                if j == 0 {
                    alpha_prime / alphas[0]
                } else {
                    alpha_prime / (alphas[j] * alphas[j - 1])
                }
            })
            .collect();
        debug_assert_eq!(block_cols.iter().sum::<usize>(), alpha);
        Ok(SchemeParams {
            n,
            k,
            t,
            m,
            q,
            s,
            mus,
            alphas,
            alpha,
            alpha_prime,
            block_cols,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> u64 {
        self.q
    }
    /// Batch width: field symbols per file part.
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn field(&self) -> PrimeField {
        PrimeField::new(self.q).expect("validated at construction")
    }

    /// Number of blocks, `n - k + 1`.
    pub fn h(&self) -> usize {
        self.mus.len()
    }

    /// Responder counts per level, `(n, n-1, ..., k)`.
    pub fn mus(&self) -> &[usize] {
        &self.mus
    }

    /// Payload rows per level, `mu_j - t`.
    pub fn alphas(&self) -> &[usize] {
        &self.alphas
    }

    /// Sub-queries per server.
    pub fn alpha(&self) -> usize {
        self.alpha
    }

    /// Parts per file.
    pub fn alpha_prime(&self) -> usize {
        self.alpha_prime
    }

    pub fn block_cols(&self) -> &[usize] {
        &self.block_cols
    }

    /// First grid column of block `j`.
    pub fn block_start(&self, j: usize) -> usize {
        self.block_cols[..j].iter().sum()
    }

    /// Number of random vectors, `t * alpha`.
    pub fn randomness_count(&self) -> usize {
        self.t * self.alpha
    }

    /// Length of every grid entry and sub-query: `alpha' * m * s`.
    pub fn vector_len(&self) -> usize {
        self.alpha_prime * self.m * self.s
    }

    /// Symbols per file, `alpha' * s`.
    pub fn file_symbols(&self) -> usize {
        self.alpha_prime * self.s
    }

    /// 0-based level for `mu` responders (`n - mu`).
    pub fn level_for(&self, mu: usize) -> Result<usize> {
        if mu < self.k || mu > self.n {
            return Err(Error::OutOfRange {
                mu,
                k: self.k,
                n: self.n,
            });
        }
        Ok(self.n - mu)
    }

    /// Sub-queries downloaded per responder when `mu` servers answer:
    /// `alpha' / alpha_j`.
    pub fn prefix_len(&self, mu: usize) -> Result<usize> {
        let j = self.level_for(mu)?;
        Ok(self.alpha_prime / self.alphas[j])
    }

    /// Copy with a different file count / batch width.
    pub fn with_files(&self, m: usize, s: usize) -> Result<Self> {
        Self::derive(self.n, self.k, self.t, m, self.q, s, false)
    }
}

/// Free-function form of [`SchemeParams::new`].
pub fn derive_params(
    n: usize,
    k: usize,
    t: usize,
    m: usize,
    q: u64,
    s: usize,
) -> Result<SchemeParams> {
    SchemeParams::new(n, k, t, m, q, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_four_two_one() {
        let p = derive_params(4, 2, 1, 3, 5, 1).unwrap();
        assert_eq!(p.mus(), &[4, 3, 2]);
        assert_eq!(p.alphas(), &[3, 2, 1]);
        assert_eq!(p.alpha(), 6);
        assert_eq!(p.alpha_prime(), 6);
        assert_eq!(p.block_cols(), &[2, 1, 3]);
        assert_eq!(p.randomness_count(), 6);
        assert_eq!(p.prefix_len(4).unwrap(), 2);
        assert_eq!(p.prefix_len(3).unwrap(), 3);
        assert_eq!(p.prefix_len(2).unwrap(), 6);
        assert!(matches!(p.prefix_len(1), Err(Error::OutOfRange { .. })));
        assert!(matches!(p.prefix_len(5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn example_three_two_one() {
        let p = derive_params(3, 2, 1, 2, 5, 1).unwrap();
        assert_eq!(p.alpha(), 2);
        assert_eq!(p.alpha_prime(), 2);
        assert_eq!(p.block_cols(), &[1, 1]);
        assert_eq!(p.randomness_count(), 2);
    }

    #[test]
    fn no_straggler_degenerate_case() {
        let p = derive_params(3, 3, 1, 1, 5, 1).unwrap();
        assert_eq!(p.h(), 1);
        assert_eq!(p.alpha(), 1);
        assert_eq!(p.alpha_prime(), 2);
        // E is alpha_1 x alpha'/alpha_1 = 2 x 1
        assert_eq!(p.block_cols(), &[1]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            derive_params(4, 2, 2, 1, 5, 1),
            Err(Error::InvalidThreshold { .. })
        ));
        assert!(matches!(
            derive_params(4, 2, 0, 1, 5, 1),
            Err(Error::InvalidThreshold { .. })
        ));
        assert!(matches!(
            derive_params(3, 4, 1, 1, 5, 1),
            Err(Error::InvalidK { .. })
        ));
        assert!(matches!(
            derive_params(5, 2, 1, 1, 5, 1),
            Err(Error::FieldTooSmall { .. })
        ));
        assert!(matches!(
            derive_params(4, 2, 1, 1, 9, 1),
            Err(Error::NotPrime(9))
        ));
        assert!(derive_params(4, 2, 1, 0, 5, 1).is_err());
        assert!(derive_params(4, 2, 1, 1, 5, 0).is_err());
        assert!(SchemeParams::with_small_field(3, 2, 1, 2, 3, 1).is_ok());
    }

    #[test]
    fn column_counts_telescope() {
        for n in 2..=10 {
            for k in 2..=n {
                for t in 1..k {
                    let p = derive_params(n, k, t, 1, 11, 1).unwrap();
                    assert_eq!(
                        p.block_cols().iter().sum::<usize>(),
                        p.alpha(),
                        "({n},{k},{t})"
                    );
                    let mut acc = 0;
                    for j in 0..p.h() {
                        acc += p.block_cols()[j];
                        assert_eq!(acc, p.alpha_prime() / p.alphas()[j], "({n},{k},{t}) j={j}");
                    }
                    assert_eq!(p.randomness_count(), t * p.alpha());
                }
            }
        }
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let p = derive_params(4, 2, 1, 3, 5, 2).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"n":4,"k":2,"t":1,"m":3,"q":5,"s":2}"#);
        let back: SchemeParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(
            serde_json::from_str::<SchemeParams>(r#"{"n":4,"k":2,"t":2,"m":3,"q":5,"s":2}"#)
                .is_err()
        );
    }
}
