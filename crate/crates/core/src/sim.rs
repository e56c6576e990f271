//! Discrete-event simulation of a retrieval with slow or silent servers.
//!
//! Each server's whole response becomes available at a sampled time. The
//! client either waits for a fixed number of responders or takes whoever has
//! answered by a deadline, then downloads the matching prefixes and decodes.
//! The clock is integer microseconds and ties are broken by server index.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use num::rational::Rational64;
use num::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{
    capacity_asymptotic, decode_file, make_queries, plan_download, rate_achieved, server_respond,
    Database, ResponseSet,
};
use crate::staircase::StaircaseCode;

/// Response latency of one server, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyModel {
    Deterministic {
        ms: f64,
    },
    Exponential {
        mean_ms: f64,
    },
    /// Never answers with probability `p`, otherwise follows `fallback`.
    Unresponsive {
        p: f64,
        fallback: Box<LatencyModel>,
    },
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            LatencyModel::Deterministic { ms } if !(*ms > 0.0 && ms.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "deterministic latency must be positive, got {ms}"
                )))
            }
            LatencyModel::Exponential { mean_ms } if !(*mean_ms > 0.0 && mean_ms.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "exponential mean must be positive, got {mean_ms}"
                )))
            }
            LatencyModel::Unresponsive { p, fallback } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidParameter(format!(
                        "probability must lie in [0, 1], got {p}"
                    )));
                }
                fallback.validate()
            }
            _ => Ok(()),
        }
    }

    /// Response time in microseconds, `None` if the server never answers.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        match self {
            LatencyModel::Deterministic { ms } => Some(ms_to_us(*ms)),
            LatencyModel::Exponential { mean_ms } => {
                let exp = Exp::new(1.0 / mean_ms).expect("validated mean");
                Some(ms_to_us(exp.sample(rng)))
            }
            LatencyModel::Unresponsive { p, fallback } => {
                if rng.random_bool(*p) {
                    None
                } else {
                    fallback.sample(rng)
                }
            }
        }
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

/// How long the client waits before downloading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Wait for the first `mu` responders.
    WaitFor(usize),
    /// Take everyone who answered within this many milliseconds.
    Deadline(u64),
}

impl Strategy {
    pub fn target(&self) -> Option<usize> {
        match self {
            Strategy::WaitFor(mu) => Some(*mu),
            Strategy::Deadline(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub id: String,
    pub code: StaircaseCode,
    /// One model per server.
    pub latencies: Vec<LatencyModel>,
    pub strategy: Strategy,
    pub seed: u64,
    pub repetitions: usize,
}

impl SimConfig {
    /// Same latency model on every server.
    pub fn uniform(
        id: &str,
        code: StaircaseCode,
        latency: LatencyModel,
        strategy: Strategy,
        seed: u64,
        repetitions: usize,
    ) -> Self {
        let n = code.params().n();
        SimConfig {
            id: id.to_string(),
            code,
            latencies: vec![latency; n],
            strategy,
            seed,
            repetitions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.code.params();
        if self.latencies.len() != p.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} latency models for {} servers",
                self.latencies.len(),
                p.n()
            )));
        }
        for l in &self.latencies {
            l.validate()?;
        }
        if let Strategy::WaitFor(mu) = self.strategy {
            p.level_for(mu)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimMetrics {
    pub repetition: usize,
    pub file: usize,
    pub realized_mu: usize,
    /// Simulated time until the download started, microseconds.
    pub wait_us: u64,
    pub symbols: usize,
    #[serde(serialize_with = "crate::verifier::ser_ratio")]
    pub rate: Rational64,
    /// `1 - t / realized_mu`, zero when fewer than `k` answered.
    #[serde(serialize_with = "crate::verifier::ser_ratio")]
    pub capacity: Rational64,
    pub success: bool,
}

impl SimMetrics {
    pub fn wait_ms(&self) -> f64 {
        self.wait_us as f64 / 1000.0
    }
}

/// Arrival order of the responses: `(time_us, server)` ascending.
pub fn arrivals<R: Rng + ?Sized>(latencies: &[LatencyModel], rng: &mut R) -> Vec<(u64, usize)> {
    let mut heap = BinaryHeap::new();
    for (server, model) in latencies.iter().enumerate() {
        if let Some(at) = model.sample(rng) {
            heap.push(Reverse((at, server)));
        }
    }
    let mut out = Vec::with_capacity(heap.len());
    while let Some(Reverse(ev)) = heap.pop() {
        out.push(ev);
    }
    out
}

pub fn run_simulation(config: &SimConfig) -> Result<Vec<SimMetrics>> {
    config.validate()?;
    let code = &config.code;
    let p = code.params();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let db = Database::random(p, &mut rng);
    let mut out = Vec::with_capacity(config.repetitions);
    for repetition in 0..config.repetitions {
        let file = rng.random_range(0..p.m());
        let query_seed: u64 = rng.random();
        let events = arrivals(&config.latencies, &mut rng);
        let (responders, wait_us): (Vec<usize>, u64) = match config.strategy {
            Strategy::WaitFor(mu) => match events.get(mu - 1) {
                Some(&(at, _)) => (events[..mu].iter().map(|e| e.1).collect(), at),
                None => (
                    events.iter().map(|e| e.1).collect(),
                    events.last().map_or(0, |e| e.0),
                ),
            },
            Strategy::Deadline(ms) => {
                let limit = ms * 1000;
                let arrived: Vec<usize> = events
                    .iter()
                    .filter(|e| e.0 <= limit)
                    .map(|e| e.1)
                    .collect();
                (arrived, limit)
            }
        };
        let realized_mu = responders.len();
        let enough = match config.strategy {
            Strategy::WaitFor(mu) => realized_mu == mu,
            Strategy::Deadline(_) => realized_mu >= p.k(),
        };
        if !enough {
            out.push(SimMetrics {
                repetition,
                file,
                realized_mu,
                wait_us,
                symbols: 0,
                rate: Rational64::zero(),
                capacity: Rational64::zero(),
                success: false,
            });
            continue;
        }
        assert!(
            realized_mu >= p.k(),
            "decoding with fewer than k responders"
        );
        let plan = plan_download(p, &responders)?;
        let queries = make_queries(code, file, query_seed)?;
        let columns: Vec<usize> = (0..plan.prefix).collect();
        let mut responses = ResponseSet::new();
        for &l in &plan.responders {
            responses.extend(l, server_respond(&db, &queries[l], &columns)?);
        }
        let decoded = decode_file(code, &plan, &responses)?;
        let success = decoded == db.file(file)?;
        out.push(SimMetrics {
            repetition,
            file,
            realized_mu,
            wait_us,
            symbols: responses.symbols(),
            rate: rate_achieved(&plan, p.file_symbols()),
            capacity: capacity_asymptotic(p.t(), realized_mu)?,
            success,
        });
    }
    Ok(out)
}

/// Per-run CSV: one row per repetition.
pub fn write_runs_csv<W: Write>(
    w: W,
    config_id: &str,
    strategy: Strategy,
    runs: &[SimMetrics],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "config_id",
        "mu_target",
        "realized_mu",
        "wait_ms",
        "symbols",
        "rate_num",
        "rate_den",
        "success",
    ])
    .map_err(csv_err)?;
    let target = strategy.target().map_or(String::new(), |m| m.to_string());
    for r in runs {
        wtr.write_record([
            config_id.to_string(),
            target.clone(),
            r.realized_mu.to_string(),
            format!("{:.3}", r.wait_ms()),
            r.symbols.to_string(),
            r.rate.numer().to_string(),
            r.rate.denom().to_string(),
            r.success.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Summary of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_id: String,
    pub mu_target: Option<usize>,
    pub runs: usize,
    pub success_fraction: f64,
    pub mean_wait_ms: f64,
    /// Mean achieved rate over successful runs.
    pub mean_rate: f64,
}

pub fn summarize(config: &SimConfig, runs: &[SimMetrics]) -> SweepRow {
    let ok: Vec<&SimMetrics> = runs.iter().filter(|r| r.success).collect();
    let n = runs.len().max(1) as f64;
    SweepRow {
        config_id: config.id.clone(),
        mu_target: config.strategy.target(),
        runs: runs.len(),
        success_fraction: ok.len() as f64 / n,
        mean_wait_ms: runs.iter().map(SimMetrics::wait_ms).sum::<f64>() / n,
        mean_rate: if ok.is_empty() {
            0.0
        } else {
            ok.iter()
                .map(|r| r.rate.to_f64().unwrap_or(0.0))
                .sum::<f64>()
                / ok.len() as f64
        },
    }
}

pub fn sweep(configs: &[SimConfig]) -> Result<Vec<SweepRow>> {
    configs
        .iter()
        .map(|c| Ok(summarize(c, &run_simulation(c)?)))
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "config_id",
        "mu_target",
        "runs",
        "success_fraction",
        "mean_wait_ms",
        "mean_rate",
    ])
    .map_err(csv_err)?;
    for r in rows {
        wtr.write_record([
            r.config_id.clone(),
            r.mu_target.map_or(String::new(), |m| m.to_string()),
            r.runs.to_string(),
            format!("{:.4}", r.success_fraction),
            format!("{:.3}", r.mean_wait_ms),
            format!("{:.6}", r.mean_rate),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SchemeParams;

    fn code421() -> StaircaseCode {
        StaircaseCode::vandermonde(SchemeParams::new(4, 2, 1, 2, 5, 1).unwrap()).unwrap()
    }

    #[test]
    fn order_statistic_with_fixed_latencies() {
        let cfg = SimConfig {
            id: "det".into(),
            code: code421(),
            latencies: [4.0, 2.0, 1.0, 3.0]
                .iter()
                .map(|&ms| LatencyModel::Deterministic { ms })
                .collect(),
            strategy: Strategy::WaitFor(3),
            seed: 1,
            repetitions: 3,
        };
        for r in run_simulation(&cfg).unwrap() {
            assert_eq!(r.wait_us, 3000);
            assert_eq!(r.realized_mu, 3);
            assert_eq!(r.symbols, 9);
            assert_eq!(r.rate, Rational64::new(2, 3));
            assert!(r.success);
        }
    }

    #[test]
    fn deadline_collects_arrivals() {
        let mut cfg = SimConfig {
            id: "dl".into(),
            code: code421(),
            latencies: [1.0, 2.0, 3.0, 4.0]
                .iter()
                .map(|&ms| LatencyModel::Deterministic { ms })
                .collect(),
            strategy: Strategy::Deadline(2),
            seed: 1,
            repetitions: 1,
        };
        let r = &run_simulation(&cfg).unwrap()[0];
        assert_eq!(
            (r.realized_mu, r.rate, r.success),
            (2, Rational64::new(1, 2), true)
        );
        cfg.strategy = Strategy::Deadline(1);
        let r = &run_simulation(&cfg).unwrap()[0];
        assert!(!r.success);
        assert_eq!(r.realized_mu, 1);
    }

    #[test]
    fn silent_servers_fail_without_panicking() {
        let silent = LatencyModel::Unresponsive {
            p: 1.0,
            fallback: Box::new(LatencyModel::Deterministic { ms: 1.0 }),
        };
        for strategy in [Strategy::Deadline(50), Strategy::WaitFor(2)] {
            let cfg = SimConfig::uniform("silent", code421(), silent.clone(), strategy, 3, 5);
            let runs = run_simulation(&cfg).unwrap();
            assert!(runs.iter().all(|r| !r.success && r.realized_mu == 0));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = LatencyModel::Exponential { mean_ms: 0.0 };
        assert!(run_simulation(&SimConfig::uniform(
            "x",
            code421(),
            bad,
            Strategy::WaitFor(2),
            0,
            1
        ))
        .is_err());
        let ok = LatencyModel::Deterministic { ms: 1.0 };
        assert!(run_simulation(&SimConfig::uniform(
            "x",
            code421(),
            ok.clone(),
            Strategy::WaitFor(1),
            0,
            1
        ))
        .is_err());
        let p = LatencyModel::Unresponsive {
            p: 1.5,
            fallback: Box::new(ok),
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_monotone() {
        let exp = LatencyModel::Exponential { mean_ms: 10.0 };
        let configs: Vec<SimConfig> = (2..=4)
            .map(|mu| {
                SimConfig::uniform(
                    &format!("mu{mu}"),
                    code421(),
                    exp.clone(),
                    Strategy::WaitFor(mu),
                    7,
                    200,
                )
            })
            .collect();
        let a = sweep(&configs).unwrap();
        assert_eq!(a, sweep(&configs).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0].mean_wait_ms < w[1].mean_wait_ms));
        assert!(a.windows(2).all(|w| w[0].mean_rate < w[1].mean_rate));
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn runs_csv_columns() {
        let cfg = SimConfig::uniform(
            "c1",
            code421(),
            LatencyModel::Deterministic { ms: 1.5 },
            Strategy::WaitFor(4),
            0,
            2,
        );
        let runs = run_simulation(&cfg).unwrap();
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &cfg.id, cfg.strategy, &runs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "config_id,mu_target,realized_mu,wait_ms,symbols,rate_num,rate_den,success"
        );
        assert_eq!(lines[1], "c1,4,4,1.500,8,3,4,true");
    }
}
