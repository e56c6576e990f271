//! User/server protocol: queries for a file index, server projections,
//! download plans, file decoding and rate accounting.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::rational::{BigRational, Rational64};
use num::{One, Zero};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{PrimeField, SymbolVector};
use crate::params::SchemeParams;
use crate::staircase::{generate_randomness, StaircaseCode};

/// The replicated data vector `x`: `m` files of `alpha' * s` symbols each.
///
/// Part `c` of file `i` occupies symbols `[(c*m + i)*s, (c*m + i + 1)*s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Database {
    field: PrimeField,
    m: usize,
    alpha_prime: usize,
    s: usize,
    data: Vec<u64>,
}

impl Database {
    /// Lays out `files` (each at most `alpha' * s` symbols, zero padded).
    pub fn new(params: &SchemeParams, files: &[Vec<u64>]) -> Result<Self> {
        if files.len() != params.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} files supplied, parameters expect {}",
                files.len(),
                params.m()
            )));
        }
        Self::with_layout(params.field(), params.alpha_prime(), params.s(), files)
    }

    /// Generic layout: every file is cut into `parts` slabs of `s` symbols.
    pub fn with_layout(
        field: PrimeField,
        parts: usize,
        s: usize,
        files: &[Vec<u64>],
    ) -> Result<Self> {
        let m = files.len();
        if m == 0 || parts == 0 || s == 0 {
            return Err(Error::InvalidParameter("empty database layout".into()));
        }
        let q = field.modulus();
        let mut data = vec![0; parts * m * s];
        for (i, file) in files.iter().enumerate() {
            if file.len() > parts * s {
                return Err(Error::DimensionMismatch(format!(
                    "file {i} has {} symbols, capacity is {}",
                    file.len(),
                    parts * s
                )));
            }
            if let Some(&bad) = file.iter().find(|&&x| x >= q) {
                return Err(Error::InvalidParameter(format!(
                    "symbol {bad} not below q = {q}"
                )));
            }
            for (p, &sym) in file.iter().enumerate() {
                let (c, off) = (p / s, p % s);
                data[(c * m + i) * s + off] = sym;
            }
        }
        Ok(Database {
            field,
            m,
            alpha_prime: parts,
            s,
            data,
        })
    }

    pub fn random<R: Rng + ?Sized>(params: &SchemeParams, rng: &mut R) -> Self {
        let q = params.q();
        let files: Vec<Vec<u64>> = (0..params.m())
            .map(|_| {
                (0..params.file_symbols())
                    .map(|_| rng.random_range(0..q))
                    .collect()
            })
            .collect();
        Self::new(params, &files).expect("shape follows params")
    }

    pub fn zeros(params: &SchemeParams) -> Self {
        Self::new(params, &vec![Vec::new(); params.m()]).expect("shape follows params")
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Parts per file.
    pub fn parts(&self) -> usize {
        self.alpha_prime
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn file_symbols(&self) -> usize {
        self.alpha_prime * self.s
    }

    /// File `i` read straight from its slabs.
    pub fn file(&self, i: usize) -> Result<Vec<u64>> {
        if i >= self.m {
            return Err(Error::FileIndexOutOfRange {
                index: i,
                m: self.m,
            });
        }
        let s = self.s;
        Ok((0..self.alpha_prime)
            .flat_map(|c| {
                let start = (c * self.m + i) * s;
                self.data[start..start + s].iter().copied()
            })
            .collect())
    }

    /// Lane-wise projection: symbol `j` of the result is
    /// `sum_u v[u*s + j] * x[u*s + j]`.
    pub fn project(&self, v: &SymbolVector) -> Result<SymbolVector> {
        if v.len() != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "sub-query has length {}, data has {}",
                v.len(),
                self.data.len()
            )));
        }
        let f = self.field;
        let s = self.s;
        let mut out = vec![0u64; s];
        for (qs, xs) in v.0.chunks_exact(s).zip(self.data.chunks_exact(s)) {
            for j in 0..s {
                out[j] = f.add(out[j], f.mul(qs[j], xs[j]));
            }
        }
        Ok(SymbolVector(out))
    }
}

/// Digest identifying `(n, k, t, m, q, s)` and the encoding matrix.
pub fn scheme_fingerprint(code: &StaircaseCode) -> [u8; 32] {
    let p = code.params();
    let mut h = Sha256::new();
    for x in [p.n(), p.k(), p.t(), p.m(), p.q() as usize, p.s()] {
        h.update((x as u64).to_le_bytes());
    }
    h.update(code.v().fingerprint());
    h.finalize().into()
}

/// The query sent to one server: its row of `Q = V * M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub server: usize,
    pub sub_queries: Vec<SymbolVector>,
    pub fingerprint: [u8; 32],
}

/// Queries for file `file` (0-based) with fresh randomness drawn from `seed`.
pub fn make_queries(code: &StaircaseCode, file: usize, seed: u64) -> Result<Vec<Query>> {
    let randomness = generate_randomness(code.params(), seed);
    let shares = code.encode(&code.pir_grid(file, &randomness)?)?;
    let fingerprint = scheme_fingerprint(code);
    Ok(shares
        .rows
        .into_iter()
        .enumerate()
        .map(|(server, sub_queries)| Query {
            server,
            sub_queries,
            fingerprint,
        })
        .collect())
}

/// Projects the data on the requested sub-queries of `query`.
pub fn server_respond(
    db: &Database,
    query: &Query,
    columns: &[usize],
) -> Result<Vec<SymbolVector>> {
    let alpha = query.sub_queries.len();
    columns
        .iter()
        .map(|&c| {
            let sub = query
                .sub_queries
                .get(c)
                .ok_or(Error::ColumnOutOfRange { column: c, alpha })?;
            db.project(sub)
        })
        .collect()
}

/// Which sub-responses to fetch for a given responder set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DownloadPlan {
    /// Responding servers, sorted.
    pub responders: Vec<usize>,
    /// 0-based level `n - mu`.
    pub level: usize,
    /// Sub-responses fetched from every responder.
    pub prefix: usize,
    /// Symbols per sub-response.
    pub slab_width: usize,
    pub total_symbols: usize,
}

impl DownloadPlan {
    pub fn mu(&self) -> usize {
        self.responders.len()
    }
}

pub fn plan_download(params: &SchemeParams, responders: &[usize]) -> Result<DownloadPlan> {
    let mut responders = responders.to_vec();
    responders.sort_unstable();
    responders.dedup();
    if let Some(&bad) = responders.iter().find(|&&l| l >= params.n()) {
        return Err(Error::InvalidParameter(format!(
            "server index {bad} >= n = {}",
            params.n()
        )));
    }
    let mu = responders.len();
    if mu < params.k() {
        return Err(Error::InsufficientResponders {
            have: mu,
            need: params.k(),
        });
    }
    let prefix = params.prefix_len(mu)?;
    Ok(DownloadPlan {
        level: params.level_for(mu)?,
        prefix,
        slab_width: params.s(),
        total_symbols: mu * prefix * params.s(),
        responders,
    })
}

/// Response slabs received so far, keyed by server; each server's slabs are
/// its consecutive sub-responses starting at column 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResponseSet {
    slabs: BTreeMap<usize, Vec<SymbolVector>>,
}

impl ResponseSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, server: usize, slabs: impl IntoIterator<Item = SymbolVector>) {
        self.slabs.entry(server).or_default().extend(slabs);
    }

    pub fn received(&self, server: usize) -> usize {
        self.slabs.get(&server).map_or(0, Vec::len)
    }

    pub fn get(&self, server: usize) -> Option<&[SymbolVector]> {
        self.slabs.get(&server).map(Vec::as_slice)
    }

    pub fn symbols(&self) -> usize {
        self.slabs.values().flatten().map(SymbolVector::len).sum()
    }
}

/// Decodes the requested file (`alpha' * s` symbols) from the plan's prefix.
pub fn decode_file(
    code: &StaircaseCode,
    plan: &DownloadPlan,
    responses: &ResponseSet,
) -> Result<Vec<u64>> {
    let mut projections = Vec::with_capacity(plan.mu());
    for &l in &plan.responders {
        let got = responses.get(l).unwrap_or(&[]);
        if got.len() < plan.prefix {
            return Err(Error::MissingResponse {
                server: l,
                column: got.len(),
            });
        }
        projections.push(got[..plan.prefix].to_vec());
    }
    let parts = code.peel_decode(&plan.responders, &projections)?;
    Ok(parts.into_iter().flat_map(|v| v.0).collect())
}

/// `C_m(t, k) = (1 - t/k) / (1 - (t/k)^m)`, exactly.
pub fn capacity_finite(m: usize, t: usize, k: usize) -> Result<BigRational> {
    let (num, den) = capacity_finite_parts(m, t, k)?;
    Ok(BigRational::new(num, den))
}

/// Unreduced numerator and denominator `((k - t) k^(m-1), k^m - t^m)`.
pub fn capacity_finite_parts(m: usize, t: usize, k: usize) -> Result<(BigInt, BigInt)> {
    if t == 0 || t >= k {
        return Err(Error::InvalidThreshold { t, k });
    }
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let kb = BigInt::from(k);
    let tb = BigInt::from(t);
    let num = (&kb - &tb) * num::pow(kb.clone(), m - 1);
    let den = num::pow(kb, m) - num::pow(tb, m);
    Ok((num, den))
}

/// `C(t, k) = 1 - t/k`.
pub fn capacity_asymptotic(t: usize, k: usize) -> Result<Rational64> {
    if t == 0 || t >= k {
        return Err(Error::InvalidThreshold { t, k });
    }
    Ok(Rational64::one() - Rational64::new(t as i64, k as i64))
}

/// File symbols over downloaded symbols.
pub fn rate_achieved(plan: &DownloadPlan, file_symbols: usize) -> Rational64 {
    if plan.total_symbols == 0 {
        return Rational64::zero();
    }
    Rational64::new(file_symbols as i64, plan.total_symbols as i64)
}

pub fn to_big(r: Rational64) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Outcome of one retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Retrieved {
    pub file: Vec<u64>,
    pub plan: DownloadPlan,
    pub rate: Rational64,
}

/// One retrieval from query generation to decoding. The session owns its
/// randomness, plan and response accumulator and is consumed by
/// [`RetrievalSession::finish`], so queries are never reused.
#[derive(Debug)]
pub struct RetrievalSession {
    code: StaircaseCode,
    plan: Option<DownloadPlan>,
    responses: ResponseSet,
}

impl RetrievalSession {
    /// Builds the `n` queries for `file` and an empty session.
    pub fn start(code: &StaircaseCode, file: usize, seed: u64) -> Result<(Self, Vec<Query>)> {
        let queries = make_queries(code, file, seed)?;
        Ok((
            RetrievalSession {
                code: code.clone(),
                plan: None,
                responses: ResponseSet::new(),
            },
            queries,
        ))
    }

    /// Fixes (or re-fixes, with fewer servers) the responder set.
    pub fn plan(&mut self, responders: &[usize]) -> Result<&DownloadPlan> {
        let plan = plan_download(self.code.params(), responders)?;
        Ok(self.plan.insert(plan))
    }

    pub fn current_plan(&self) -> Option<&DownloadPlan> {
        self.plan.as_ref()
    }

    /// Columns still needed from `server` under the current plan.
    pub fn missing_columns(&self, server: usize) -> Vec<usize> {
        match &self.plan {
            Some(plan) if plan.responders.contains(&server) => {
                (self.responses.received(server)..plan.prefix).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Records consecutive slabs from `server`, continuing where it left off.
    pub fn accept(&mut self, server: usize, slabs: Vec<SymbolVector>) {
        self.responses.extend(server, slabs);
    }

    pub fn downloaded_symbols(&self) -> usize {
        self.responses.symbols()
    }

    pub fn finish(self) -> Result<Retrieved> {
        let plan = self.plan.ok_or(Error::InvalidParameter(
            "retrieval finished before planning".into(),
        ))?;
        let file = decode_file(&self.code, &plan, &self.responses)?;
        let rate = Rational64::new(file.len() as i64, self.responses.symbols() as i64);
        Ok(Retrieved { file, plan, rate })
    }
}

/// Full in-process retrieval from the given responders.
pub fn retrieve_local(
    code: &StaircaseCode,
    db: &Database,
    file: usize,
    responders: &[usize],
    seed: u64,
) -> Result<Retrieved> {
    let (mut session, queries) = RetrievalSession::start(code, file, seed)?;
    let plan = session.plan(responders)?.clone();
    let cols: Vec<usize> = (0..plan.prefix).collect();
    for &l in &plan.responders {
        session.accept(l, server_respond(db, &queries[l], &cols)?);
    }
    session.finish()
}
