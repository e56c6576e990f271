//! Checks of privacy, robustness and rate on concrete instances.
//!
//! Privacy is checked two ways. The exhaustive check enumerates every
//! randomness assignment and compares, per `t`-subset of servers, the exact
//! multiset of queries those servers see for each file index. The rank check
//! asks whether the randomness coefficients of the `t * alpha` sub-queries a
//! `t`-subset sees form an invertible matrix; if so the queries are uniform
//! whatever the file index. The rank check is sufficient, not necessary.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use num::rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{subsets, FieldMatrix, SymbolVector};
use crate::params::SchemeParams;
use crate::protocol::{capacity_asymptotic, plan_download, rate_achieved, Database, ResponseSet};
use crate::staircase::{random_vectors, unit_payload, StaircaseCode};

/// Largest number of randomness assignments the exhaustive check enumerates.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyMode {
    Exhaustive,
    Rank,
}

impl fmt::Display for PrivacyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrivacyMode::Exhaustive => write!(f, "exhaustive"),
            PrivacyMode::Rank => write!(f, "rank"),
        }
    }
}

/// Summary of the multiset of query tuples one subset sees for one file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HistogramSummary {
    pub total: u64,
    pub distinct: usize,
    /// SHA-256 over the sorted `(tuple, count)` pairs, hex encoded.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubsetVerdict {
    /// 0-based server indices.
    pub subset: Vec<usize>,
    pub verdict: bool,
    /// Rank of the randomness coefficient matrix (rank mode only).
    pub rank: Option<usize>,
    /// One summary per file index (exhaustive mode only).
    pub histograms: Vec<HistogramSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PrivacyReport {
    pub params: SchemeParams,
    pub mode: PrivacyMode,
    /// Randomness vectors forced to zero (mutation runs).
    pub zeroed: Vec<usize>,
    pub subsets: Vec<SubsetVerdict>,
}

impl PrivacyReport {
    pub fn verdict(&self) -> bool {
        self.subsets.iter().all(|s| s.verdict)
    }

    pub fn to_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.subsets {
            let mut line = format!(
                "privacy {} subset {} {}",
                self.mode,
                subset_label(&s.subset),
                pass_fail(s.verdict)
            );
            if let Some(r) = s.rank {
                line.push_str(&format!(" rank {r}/{}", self.params.randomness_count()));
            }
            for (i, h) in s.histograms.iter().enumerate() {
                line.push_str(&format!(
                    " file{}={}x{}:{}",
                    i + 1,
                    h.distinct,
                    h.total,
                    &h.digest[..12]
                ));
            }
            out.push(line);
        }
        if self.mode == PrivacyMode::Rank && !self.verdict() {
            out.push("rank criterion is only sufficient; run the exhaustive check on a small field before concluding".into());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["subset", "mode", "verdict"])
            .map_err(csv_err)?;
        for s in &self.subsets {
            wtr.write_record([
                subset_label(&s.subset),
                self.mode.to_string(),
                pass_fail(s.verdict).to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubsetOutcome {
    pub subset: Vec<usize>,
    pub trials: usize,
    pub failures: usize,
    pub downloaded_symbols: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub rate: Rational64,
    /// `rate == (mu - t) / mu`.
    pub rate_matches: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RobustnessReport {
    pub params: SchemeParams,
    pub trials: usize,
    pub subsets: Vec<SubsetOutcome>,
}

impl RobustnessReport {
    pub fn verdict(&self) -> bool {
        self.subsets
            .iter()
            .all(|s| s.failures == 0 && s.rate_matches)
    }

    pub fn total_failures(&self) -> usize {
        self.subsets.iter().map(|s| s.failures).sum()
    }

    pub fn to_lines(&self) -> Vec<String> {
        self.subsets
            .iter()
            .map(|s| {
                format!(
                    "robustness subset {} decoded {}/{} rate {} {}",
                    subset_label(&s.subset),
                    s.trials - s.failures,
                    s.trials,
                    s.rate,
                    pass_fail(s.failures == 0 && s.rate_matches)
                )
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["subset", "mode", "verdict"])
            .map_err(csv_err)?;
        for s in &self.subsets {
            let ok = s.failures == 0 && s.rate_matches;
            wtr.write_record([
                subset_label(&s.subset),
                "robustness".into(),
                pass_fail(ok).to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RateRow {
    pub mu: usize,
    pub symbols: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub rate: Rational64,
    #[serde(serialize_with = "ser_ratio")]
    pub capacity: Rational64,
    pub matches: bool,
}

impl fmt::Display for RateRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mu {} symbols {} rate {} capacity {} {}",
            self.mu,
            self.symbols,
            self.rate,
            self.capacity,
            if self.matches { "match" } else { "MISMATCH" }
        )
    }
}

pub(crate) fn ser_ratio<S: serde::Serializer>(
    r: &Rational64,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// `{1,3}` style label with 1-based server numbers.
pub fn subset_label(subset: &[usize]) -> String {
    let inner: Vec<String> = subset.iter().map(|l| (l + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// Number of randomness assignments the exhaustive check would enumerate,
/// or `None` on overflow.
pub fn exhaustive_search_space(params: &SchemeParams, zeroed: &[usize]) -> Option<u128> {
    let free = (0..params.randomness_count())
        .filter(|u| !zeroed.contains(u))
        .count();
    let digits = free.checked_mul(params.vector_len())?;
    (params.q() as u128).checked_pow(u32::try_from(digits).ok()?)
}

pub fn verify_privacy_exhaustive(code: &StaircaseCode) -> Result<PrivacyReport> {
    verify_privacy_exhaustive_with(code, &[])
}

/// Exhaustive check with the listed randomness vectors forced to zero.
pub fn verify_privacy_exhaustive_with(
    code: &StaircaseCode,
    zeroed: &[usize],
) -> Result<PrivacyReport> {
    let p = code.params();
    let space = exhaustive_search_space(p, zeroed).unwrap_or(u128::MAX);
    if space > EXHAUSTIVE_LIMIT {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    let coeffs = code.coefficient_matrix();
    let payloads = (0..p.m())
        .map(|i| unit_payload(p, i))
        .collect::<Result<Vec<_>>>()?;
    let free: Vec<usize> = (0..p.randomness_count())
        .filter(|u| !zeroed.contains(u))
        .collect();
    let subsets_t = subsets(p.n(), p.t());
    let verdicts = subsets_t
        .par_iter()
        .map(|subset| exhaustive_subset(code, &coeffs, &payloads, &free, subset))
        .collect();
    Ok(PrivacyReport {
        params: p.clone(),
        mode: PrivacyMode::Exhaustive,
        zeroed: zeroed.to_vec(),
        subsets: verdicts,
    })
}

fn exhaustive_subset(
    code: &StaircaseCode,
    coeffs: &FieldMatrix,
    payloads: &[Vec<SymbolVector>],
    free: &[usize],
    subset: &[usize],
) -> SubsetVerdict {
    let p = code.params();
    let f = code.field();
    let q = p.q();
    let (alpha, ap, len) = (p.alpha(), p.alpha_prime(), p.vector_len());
    let rows: Vec<usize> = subset
        .iter()
        .flat_map(|&l| (0..alpha).map(move |c| l * alpha + c))
        .collect();

    // payload contribution of every observed sub-query, per file
    let fixed: Vec<Vec<u64>> = payloads
        .iter()
        .map(|parts| {
            let mut flat = Vec::with_capacity(rows.len() * len);
            for &row in &rows {
                let mut acc = SymbolVector::zeros(len);
                for (c, part) in parts.iter().enumerate() {
                    acc.axpy(&f, coeffs.get(row, c), part);
                }
                flat.extend(acc.0);
            }
            flat
        })
        .collect();

    let mut hists: Vec<HashMap<Vec<u64>, u64>> = vec![HashMap::new(); payloads.len()];
    let digits = free.len() * len;
    let mut r = vec![0u64; digits];
    let mut contribution = vec![0u64; rows.len() * len];
    loop {
        for (ri, &row) in rows.iter().enumerate() {
            for x in 0..len {
                let mut acc = 0;
                for (fi, &u) in free.iter().enumerate() {
                    acc = f.add(acc, f.mul(coeffs.get(row, ap + u), r[fi * len + x]));
                }
                contribution[ri * len + x] = acc;
            }
        }
        for (hist, base) in hists.iter_mut().zip(&fixed) {
            let tuple: Vec<u64> = base
                .iter()
                .zip(&contribution)
                .map(|(&a, &b)| f.add(a, b))
                .collect();
            *hist.entry(tuple).or_insert(0) += 1;
        }
        // odometer over all q^digits assignments
        let mut d = 0;
        while d < digits {
            r[d] += 1;
            if r[d] < q {
                break;
            }
            r[d] = 0;
            d += 1;
        }
        if d == digits {
            break;
        }
    }

    let verdict = hists.windows(2).all(|w| w[0] == w[1]);
    SubsetVerdict {
        subset: subset.to_vec(),
        verdict,
        rank: None,
        histograms: hists.iter().map(summarize).collect(),
    }
}

fn summarize(hist: &HashMap<Vec<u64>, u64>) -> HistogramSummary {
    let mut entries: Vec<(&Vec<u64>, &u64)> = hist.iter().collect();
    entries.sort();
    let mut h = Sha256::new();
    for (tuple, count) in &entries {
        for x in tuple.iter() {
            h.update(x.to_le_bytes());
        }
        h.update(count.to_le_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    HistogramSummary {
        total: hist.values().sum(),
        distinct: hist.len(),
        digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
    }
}

pub fn verify_privacy_rank(code: &StaircaseCode) -> PrivacyReport {
    verify_privacy_rank_with(code, &[])
}

/// Rank check with the listed randomness vectors removed from the grid.
pub fn verify_privacy_rank_with(code: &StaircaseCode, zeroed: &[usize]) -> PrivacyReport {
    let p = code.params();
    let coeffs = code.coefficient_matrix();
    let (alpha, ap, ta) = (p.alpha(), p.alpha_prime(), p.randomness_count());
    let cols: Vec<usize> = (0..ta).map(|u| ap + u).collect();
    let verdicts = subsets(p.n(), p.t())
        .par_iter()
        .map(|subset| {
            let rows: Vec<usize> = subset
                .iter()
                .flat_map(|&l| (0..alpha).map(move |c| l * alpha + c))
                .collect();
            let mut m = coeffs.submatrix(&rows, &cols);
            for &u in zeroed {
                for r in 0..m.rows() {
                    if u < ta {
                        m.set(r, u, 0);
                    }
                }
            }
            let rank = m.rank();
            SubsetVerdict {
                subset: subset.clone(),
                verdict: rank == ta,
                rank: Some(rank),
                histograms: Vec::new(),
            }
        })
        .collect();
    PrivacyReport {
        params: p.clone(),
        mode: PrivacyMode::Rank,
        zeroed: zeroed.to_vec(),
        subsets: verdicts,
    }
}

/// Decodes every file from every responder subset of size `k..=n`, with
/// `trials` fresh databases and query randomness per file, and checks the
/// downloaded-symbol rate against `(mu - t) / mu`.
pub fn verify_robustness(
    code: &StaircaseCode,
    trials: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let p = code.params();
    let all: Vec<Vec<usize>> = (p.k()..=p.n()).flat_map(|mu| subsets(p.n(), mu)).collect();
    let mut failures = vec![0usize; all.len()];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let full: Vec<usize> = (0..p.alpha()).collect();
    for _ in 0..trials {
        let db = Database::random(p, &mut rng);
        for file in 0..p.m() {
            let randomness =
                random_vectors(&mut rng, p.field(), p.randomness_count(), p.vector_len());
            let shares = code.encode(&code.pir_grid(file, &randomness)?)?;
            let answers = shares
                .rows
                .iter()
                .map(|row| {
                    full.iter()
                        .map(|&c| db.project(&row[c]))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let expected = db.file(file)?;
            let outcomes: Vec<bool> = all
                .par_iter()
                .map(|subset| {
                    let plan = match plan_download(p, subset) {
                        Ok(plan) => plan,
                        Err(_) => return false,
                    };
                    let mut responses = ResponseSet::new();
                    for &l in subset {
                        responses.extend(l, answers[l][..plan.prefix].iter().cloned());
                    }
                    crate::protocol::decode_file(code, &plan, &responses)
                        .is_ok_and(|got| got == expected)
                })
                .collect();
            for (fail, ok) in failures.iter_mut().zip(outcomes) {
                *fail += usize::from(!ok);
            }
        }
    }
    let subsets = all
        .into_iter()
        .zip(failures)
        .map(|(subset, failures)| {
            let plan = plan_download(p, &subset)?;
            let rate = rate_achieved(&plan, p.file_symbols());
            let mu = subset.len() as i64;
            Ok(SubsetOutcome {
                rate_matches: rate == Rational64::new(mu - p.t() as i64, mu),
                downloaded_symbols: plan.total_symbols,
                trials: trials * p.m(),
                subset,
                failures,
                rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport {
        params: p.clone(),
        trials,
        subsets,
    })
}

/// Symbol-count rate for every `mu` in `k..=n` next to `1 - t/mu`.
pub fn verify_rates(params: &SchemeParams) -> Result<Vec<RateRow>> {
    (params.k()..=params.n())
        .rev()
        .map(|mu| {
            let responders: Vec<usize> = (0..mu).collect();
            let plan = plan_download(params, &responders)?;
            let rate = rate_achieved(&plan, params.file_symbols());
            let capacity = capacity_asymptotic(params.t(), mu)?;
            Ok(RateRow {
                mu,
                symbols: plan.total_symbols,
                rate,
                capacity,
                matches: rate == capacity,
            })
        })
        .collect()
}

/// Checks `Q(a x + b y) = a Q(x) + b Q(y)` for the encoder on random grids.
pub fn verify_linearity(code: &StaircaseCode, trials: usize, seed: u64) -> Result<bool> {
    let p = code.params();
    let f = code.field();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let len = p.vector_len();
    for _ in 0..trials {
        let a = rng.random_range(0..p.q());
        let b = rng.random_range(0..p.q());
        let x = random_vectors(&mut rng, f, p.alpha_prime() + p.randomness_count(), len);
        let y = random_vectors(&mut rng, f, p.alpha_prime() + p.randomness_count(), len);
        let z: Vec<SymbolVector> = x
            .iter()
            .zip(&y)
            .map(|(xv, yv)| {
                let mut acc = SymbolVector::zeros(len);
                acc.axpy(&f, a, xv);
                acc.axpy(&f, b, yv);
                acc
            })
            .collect();
        let enc = |v: &[SymbolVector]| -> Result<Vec<Vec<SymbolVector>>> {
            let (payload, randomness) = v.split_at(p.alpha_prime());
            Ok(code.encode(&code.grid(payload, randomness)?)?.rows)
        };
        let (qx, qy, qz) = (enc(&x)?, enc(&y)?, enc(&z)?);
        for l in 0..p.n() {
            for c in 0..p.alpha() {
                let mut expect = SymbolVector::zeros(len);
                expect.axpy(&f, a, &qx[l][c]);
                expect.axpy(&f, b, &qy[l][c]);
                if expect != qz[l][c] {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
