//! Linear secret sharing and the secret-sharing-to-PIR construction.
//!
//! Any linear `(n, k, t)` scheme gives a robust PIR scheme: share the unit
//! vectors selecting the wanted file, send share `l` to server `l` as its
//! query, and run reconstruction on the servers' projections instead of on
//! the shares. A communication-efficient scheme (one that reconstructs from
//! partial shares of any `d >= k` holders) makes the result universal.

use num::rational::Rational64;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::field::{for_each_subset, vandermonde, FieldMatrix, PrimeField, SymbolVector};
use crate::protocol::Database;
use crate::staircase::{random_vectors, StaircaseCode};

/// A linear `(n, k, t)` secret sharing scheme over vectors of any length.
///
/// A secret is `secret_width` vectors; each share is `pieces_per_share`
/// vectors of the same length. Shares are linear in (secret, randomness).
pub trait LinearSecretSharing {
    fn field(&self) -> PrimeField;
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    fn t(&self) -> usize;
    fn secret_width(&self) -> usize;
    fn randomness_width(&self) -> usize;
    fn pieces_per_share(&self) -> usize;

    /// Deterministic sharing with caller-supplied randomness.
    fn share_with(
        &self,
        secret: &[SymbolVector],
        randomness: &[SymbolVector],
    ) -> Result<Vec<Vec<SymbolVector>>>;

    /// Reconstructs from at least `k` complete shares.
    fn reconstruct(
        &self,
        holders: &[usize],
        shares: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>>;

    /// Pieces needed from each of `d` holders. Schemes that are not
    /// communication efficient need whole shares.
    fn pieces_needed(&self, d: usize) -> Result<usize> {
        if d < self.k() || d > self.n() {
            return Err(Error::OutOfRange {
                mu: d,
                k: self.k(),
                n: self.n(),
            });
        }
        Ok(self.pieces_per_share())
    }

    /// Reconstructs from the first `pieces_needed(d)` pieces of `d` shares.
    fn reconstruct_from_prefixes(
        &self,
        holders: &[usize],
        prefixes: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        self.reconstruct(holders, prefixes)
    }

    fn share(
        &self,
        secret: &[SymbolVector],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<SymbolVector>>> {
        let len = secret.first().map_or(0, SymbolVector::len);
        let randomness = random_vectors(rng, self.field(), self.randomness_width(), len);
        self.share_with(secret, &randomness)
    }
}

/// `(n, k, t)` ramp scheme: share `l` is row `l` of an `n x k` Vandermonde
/// matrix applied to `[secret (k - t vectors); randomness (t vectors)]`.
#[derive(Clone, Debug)]
pub struct RampScheme {
    n: usize,
    k: usize,
    t: usize,
    v: FieldMatrix,
}

impl RampScheme {
    /// Builds the scheme on points `1..=n` and checks both the MDS property
    /// (every `k` rows invertible) and secrecy (every `t` rows restricted to
    /// the randomness columns invertible).
    pub fn new(n: usize, k: usize, t: usize, q: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        if t == 0 || t >= k {
            return Err(Error::InvalidThreshold { t, k });
        }
        let field = PrimeField::new(q)?;
        if q <= n as u64 {
            return Err(Error::FieldTooSmall { q, n });
        }
        let points: Vec<u64> = (1..=n as u64).collect();
        let v = vandermonde(field, &points, k)?;
        let all: Vec<usize> = (0..k).collect();
        let random_cols: Vec<usize> = (k - t..k).collect();
        let mut ok = true;
        for_each_subset(n, k, |rows| ok &= v.submatrix(rows, &all).is_invertible());
        for_each_subset(n, t, |rows| {
            ok &= v.submatrix(rows, &random_cols).is_invertible()
        });
        if !ok {
            return Err(Error::BadEncodingMatrix);
        }
        Ok(RampScheme { n, k, t, v })
    }

    pub fn matrix(&self) -> &FieldMatrix {
        &self.v
    }
}

impl LinearSecretSharing for RampScheme {
    fn field(&self) -> PrimeField {
        self.v.field()
    }
    fn n(&self) -> usize {
        self.n
    }
    fn k(&self) -> usize {
        self.k
    }
    fn t(&self) -> usize {
        self.t
    }
    fn secret_width(&self) -> usize {
        self.k - self.t
    }
    fn randomness_width(&self) -> usize {
        self.t
    }
    fn pieces_per_share(&self) -> usize {
        1
    }

    fn share_with(
        &self,
        secret: &[SymbolVector],
        randomness: &[SymbolVector],
    ) -> Result<Vec<Vec<SymbolVector>>> {
        if secret.len() != self.secret_width() || randomness.len() != self.t {
            return Err(Error::DimensionMismatch(format!(
                "ramp scheme takes {} secret and {} random vectors",
                self.secret_width(),
                self.t
            )));
        }
        let f = self.field();
        let len = secret[0].len();
        let message: Vec<&SymbolVector> = secret.iter().chain(randomness).collect();
        if message.iter().any(|v| v.len() != len) {
            return Err(Error::DimensionMismatch(
                "message vectors differ in length".into(),
            ));
        }
        Ok((0..self.n)
            .map(|l| {
                let mut acc = SymbolVector::zeros(len);
                for (c, v) in message.iter().enumerate() {
                    acc.axpy(&f, self.v.get(l, c), v);
                }
                vec![acc]
            })
            .collect())
    }

    fn reconstruct(
        &self,
        holders: &[usize],
        shares: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        if holders.len() < self.k || shares.len() < self.k {
            return Err(Error::NotEnoughShares {
                have: holders.len().min(shares.len()),
                need: self.k,
            });
        }
        let f = self.field();
        let rows = &holders[..self.k];
        let all: Vec<usize> = (0..self.k).collect();
        let inv = self.v.submatrix(rows, &all).inverse()?;
        let len = shares[0][0].len();
        Ok((0..self.secret_width())
            .map(|c| {
                let mut acc = SymbolVector::zeros(len);
                for (i, share) in shares[..self.k].iter().enumerate() {
                    acc.axpy(&f, inv.get(c, i), &share[0]);
                }
                acc
            })
            .collect())
    }
}

impl LinearSecretSharing for StaircaseCode {
    fn field(&self) -> PrimeField {
        self.v().field()
    }
    fn n(&self) -> usize {
        self.params().n()
    }
    fn k(&self) -> usize {
        self.params().k()
    }
    fn t(&self) -> usize {
        self.params().t()
    }
    fn secret_width(&self) -> usize {
        self.params().alpha_prime()
    }
    fn randomness_width(&self) -> usize {
        self.params().randomness_count()
    }
    fn pieces_per_share(&self) -> usize {
        self.params().alpha()
    }

    fn share_with(
        &self,
        secret: &[SymbolVector],
        randomness: &[SymbolVector],
    ) -> Result<Vec<Vec<SymbolVector>>> {
        Ok(self.encode(&self.grid(secret, randomness)?)?.rows)
    }

    fn reconstruct(
        &self,
        holders: &[usize],
        shares: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        if holders.len() < self.k() {
            return Err(Error::NotEnoughShares {
                have: holders.len(),
                need: self.k(),
            });
        }
        self.peel_decode(holders, shares)
    }

    fn pieces_needed(&self, d: usize) -> Result<usize> {
        self.params().prefix_len(d)
    }

    fn reconstruct_from_prefixes(
        &self,
        holders: &[usize],
        prefixes: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        self.peel_decode(holders, prefixes)
    }
}

/// Result of an adapter retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterRetrieval {
    pub file: Vec<u64>,
    pub downloaded_symbols: usize,
    pub rate: Rational64,
    /// Download in units where the file is `k - t` units.
    pub units: Rational64,
}

/// Robust PIR from a linear secret sharing scheme: the query to server `l`
/// is share `l` of the unit vectors selecting the wanted file's parts.
pub struct SsPirAdapter<'a, S: LinearSecretSharing + ?Sized> {
    scheme: &'a S,
    db: &'a Database,
}

impl<'a, S: LinearSecretSharing + ?Sized> SsPirAdapter<'a, S> {
    pub fn new(scheme: &'a S, db: &'a Database) -> Result<Self> {
        if db.parts() != scheme.secret_width() {
            return Err(Error::DimensionMismatch(format!(
                "database cuts files into {} parts, scheme shares {} vectors",
                db.parts(),
                scheme.secret_width()
            )));
        }
        if db.field() != scheme.field() {
            return Err(Error::DimensionMismatch(
                "database and scheme fields differ".into(),
            ));
        }
        Ok(SsPirAdapter { scheme, db })
    }

    /// Shares of `e'_{c, file}` for every part `c`.
    pub fn queries(&self, file: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<SymbolVector>>> {
        let m = self.db.m();
        if file >= m {
            return Err(Error::FileIndexOutOfRange { index: file, m });
        }
        let s = self.db.s();
        let len = self.db.data().len();
        let secret: Vec<SymbolVector> = (0..self.scheme.secret_width())
            .map(|c| SymbolVector::unit_slab(len, (c * m + file) * s, s))
            .collect();
        self.scheme.share(&secret, rng)
    }

    fn respond(&self, query: &[SymbolVector], pieces: usize) -> Result<Vec<SymbolVector>> {
        query[..pieces].iter().map(|q| self.db.project(q)).collect()
    }

    fn finish(&self, parts: Vec<SymbolVector>, downloaded: usize) -> AdapterRetrieval {
        let file: Vec<u64> = parts.into_iter().flat_map(|v| v.0).collect();
        let rate = Rational64::new(file.len() as i64, downloaded as i64);
        let kt = (self.scheme.k() - self.scheme.t()) as i64;
        AdapterRetrieval {
            units: Rational64::new(downloaded as i64 * kt, file.len() as i64),
            downloaded_symbols: downloaded,
            rate,
            file,
        }
    }

    fn check_responders(&self, responders: &[usize]) -> Result<()> {
        if responders.len() < self.scheme.k() {
            return Err(Error::InsufficientResponders {
                have: responders.len(),
                need: self.scheme.k(),
            });
        }
        if responders.iter().any(|&l| l >= self.scheme.n()) {
            return Err(Error::InvalidParameter(
                "responder index out of range".into(),
            ));
        }
        Ok(())
    }

    /// Worst-case retrieval: whole responses from exactly `k` of the
    /// responders. Rate `(k - t) / k`.
    pub fn retrieve(
        &self,
        file: usize,
        responders: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<AdapterRetrieval> {
        self.check_responders(responders)?;
        let queries = self.queries(file, rng)?;
        let chosen = &responders[..self.scheme.k()];
        let pieces = self.scheme.pieces_per_share();
        let answers = chosen
            .iter()
            .map(|&l| self.respond(&queries[l], pieces))
            .collect::<Result<Vec<_>>>()?;
        let downloaded = answers.iter().flatten().map(SymbolVector::len).sum();
        let parts = self.scheme.reconstruct(chosen, &answers)?;
        Ok(self.finish(parts, downloaded))
    }

    /// Downloads whole responses from every responder, then reconstructs.
    /// For a scheme designed for `k` responders the extra answers are
    /// redundant, so the rate drops to `(k - t) / mu`.
    pub fn retrieve_full_download(
        &self,
        file: usize,
        responders: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<AdapterRetrieval> {
        self.check_responders(responders)?;
        let queries = self.queries(file, rng)?;
        let pieces = self.scheme.pieces_per_share();
        let answers = responders
            .iter()
            .map(|&l| self.respond(&queries[l], pieces))
            .collect::<Result<Vec<_>>>()?;
        let downloaded = answers.iter().flatten().map(SymbolVector::len).sum();
        let parts = self.scheme.reconstruct(responders, &answers)?;
        Ok(self.finish(parts, downloaded))
    }

    /// Downloads only `pieces_needed(mu)` sub-responses from each of the `mu`
    /// responders. For a communication-efficient scheme the rate is
    /// `(mu - t) / mu`.
    pub fn retrieve_universal(
        &self,
        file: usize,
        responders: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<AdapterRetrieval> {
        self.check_responders(responders)?;
        let queries = self.queries(file, rng)?;
        let pieces = self.scheme.pieces_needed(responders.len())?;
        let answers = responders
            .iter()
            .map(|&l| self.respond(&queries[l], pieces))
            .collect::<Result<Vec<_>>>()?;
        let downloaded = answers.iter().flatten().map(SymbolVector::len).sum();
        let parts = self
            .scheme
            .reconstruct_from_prefixes(responders, &answers)?;
        Ok(self.finish(parts, downloaded))
    }
}

/// Rate of a worst-case scheme when `mu > k` servers answer and the user
/// downloads everything they send (the first `mu` servers are used).
pub fn nonuniversality_demo<S: LinearSecretSharing + ?Sized>(
    adapter: &SsPirAdapter<'_, S>,
    mu: usize,
    rng: &mut dyn RngCore,
) -> Result<Rational64> {
    let responders: Vec<usize> = (0..mu).collect();
    Ok(adapter.retrieve_full_download(0, &responders, rng)?.rate)
}
