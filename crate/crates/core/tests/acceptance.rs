//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines are always shown.

use std::io::Write;
use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num::rational::Rational64;
use num::{BigInt, BigRational, One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use staircase_pir::field::{subsets, SymbolVector};
use staircase_pir::ingest::ingest;
use staircase_pir::net::{retrieve, serve, ClientOptions, ServeOptions, ServerHandle};
use staircase_pir::protocol::{
    capacity_asymptotic, capacity_finite, capacity_finite_parts, retrieve_local, to_big, Database,
};
use staircase_pir::sharing::{nonuniversality_demo, LinearSecretSharing, RampScheme, SsPirAdapter};
use staircase_pir::sim::{run_simulation, LatencyModel, SimConfig, Strategy};
use staircase_pir::staircase::{random_vectors, Entry};
use staircase_pir::verifier::{
    verify_privacy_exhaustive, verify_privacy_exhaustive_with, verify_privacy_rank,
    verify_privacy_rank_with, verify_robustness,
};
use staircase_pir::{FieldMatrix, RowOrder, SchemeParams, StaircaseCode};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Parses `e'1+2e'2+3r1` into a coefficient vector over
/// `(e'1..e'_{ap}, r1..r_{nr})`.
fn parse_combination(text: &str, ap: usize, nr: usize) -> Vec<u64> {
    let mut out = vec![0; ap + nr];
    for term in text.split('+') {
        let split = term.find(['e', 'r']).expect("term has a name");
        let coeff: u64 = if split == 0 {
            1
        } else {
            term[..split].parse().unwrap()
        };
        let name = &term[split..];
        let idx = if let Some(j) = name.strip_prefix("e'") {
            j.parse::<usize>().unwrap() - 1
        } else {
            ap + name[1..].parse::<usize>().unwrap() - 1
        };
        out[idx] += coeff;
    }
    out
}

fn hand_picked(q: u64, m: usize) -> StaircaseCode {
    let p = SchemeParams::with_small_field(3, 2, 1, m, q, 1).unwrap();
    let v =
        FieldMatrix::from_rows(p.field(), &[vec![1, 0, 0], vec![1, 1, 0], vec![1, 2, 1]]).unwrap();
    StaircaseCode::with_order(p, v, RowOrder::RandomnessFirst).unwrap()
}

fn criterion_1() -> Outcome {
    let m = 3;
    let code = hand_picked(5, m);
    let p = code.params().clone();
    let f = p.field();

    // queries seen by the three servers, over (e_i, e_{m+i}, r1, r2)
    let expected = [
        ["r1", "r2"],
        ["e'1+r1", "e'2+r2"],
        ["2e'1+e'2+r1", "2e'2+r2"],
    ];
    let coeffs = code.coefficient_matrix();
    for (l, row) in expected.iter().enumerate() {
        for (c, text) in row.iter().enumerate() {
            let want = parse_combination(text, 2, 2);
            check(
                coeffs.row(l * 2 + c) == want.as_slice(),
                format!("server {} sub-query {} differs", l + 1, c + 1),
            )?;
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let len = p.vector_len();
    for trial in 0..100 {
        let db = Database::random(&p, &mut rng);
        let x = db.data();
        let r = random_vectors(&mut rng, f, 2, len);
        for i in 0..m {
            let shares = code
                .encode(&code.pir_grid(i, &r).map_err(err)?)
                .map_err(err)?;
            // concrete queries equal the symbolic ones
            let e = |j: usize| SymbolVector::unit_slab(len, j, 1);
            let basis = [e(i), e(m + i), r[0].clone(), r[1].clone()];
            for l in 0..3 {
                for c in 0..2 {
                    let mut want = SymbolVector::zeros(len);
                    for (b, v) in basis.iter().enumerate() {
                        want.axpy(&f, coeffs.get(l * 2 + c, b), v);
                    }
                    check(
                        shares.rows[l][c] == want,
                        format!("trial {trial}: concrete query ({l},{c}) differs"),
                    )?;
                }
            }
            let ans = |l: usize, c: usize| db.project(&shares.rows[l][c]).unwrap().0[0];
            let xi = f.sub(ans(1, 0), ans(0, 0));
            let xmi = f.sub(f.sub(ans(2, 0), ans(0, 0)), f.mul(2, xi));
            check(
                xi == x[i] && xmi == x[m + i],
                format!("trial {trial}: three-server identities fail"),
            )?;
            // server 3 straggling
            let xmi2 = f.sub(ans(1, 1), ans(0, 1));
            check(
                xmi2 == x[m + i],
                format!("trial {trial}: two-server identity fails"),
            )?;
        }
    }
    Ok("coefficient vectors equal; identities hold on 100 random (x, r) for every file".into())
}

fn criterion_2() -> Outcome {
    let p = SchemeParams::new(4, 2, 1, 2, 5, 1).map_err(err)?;
    check(p.mus() == [4, 3, 2], "mu sequence")?;
    check(p.alpha() == 6 && p.alpha_prime() == 6, "alpha, alpha'")?;
    let v = FieldMatrix::from_rows(
        p.field(),
        &[
            vec![1, 1, 1, 1],
            vec![1, 2, 4, 3],
            vec![1, 3, 4, 2],
            vec![1, 4, 1, 4],
        ],
    )
    .map_err(err)?;
    let code = StaircaseCode::new(p.clone(), v).map_err(err)?;

    let grid = [
        ["e'1", "e'4", "r1", "e'3", "e'6", "r3"],
        ["e'2", "e'5", "r2", "r4", "r5", "r6"],
        ["e'3", "e'6", "r3", "0", "0", "0"],
        ["r1", "r2", "0", "0", "0", "0"],
    ];
    for (r, row) in grid.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let got = code.layout().cell(r, c).entry;
            let got = match got {
                Entry::Zero => "0".to_string(),
                other => other.to_string(),
            };
            check(
                got == *want,
                format!("M[{r}][{c}] = {got}, expected {want}"),
            )?;
        }
    }

    let table = [
        [
            "e'1+e'2+e'3+r1",
            "e'4+e'5+e'6+r2",
            "r1+r2+r3",
            "e'3+r4",
            "e'6+r5",
            "r3+r6",
        ],
        [
            "e'1+2e'2+4e'3+3r1",
            "e'4+2e'5+4e'6+3r2",
            "r1+2r2+4r3",
            "e'3+2r4",
            "e'6+2r5",
            "r3+2r6",
        ],
        [
            "e'1+3e'2+4e'3+2r1",
            "e'4+3e'5+4e'6+2r2",
            "r1+3r2+4r3",
            "e'3+3r4",
            "e'6+3r5",
            "r3+3r6",
        ],
        [
            "e'1+4e'2+e'3+4r1",
            "e'4+4e'5+e'6+4r2",
            "r1+4r2+r3",
            "e'3+4r4",
            "e'6+4r5",
            "r3+4r6",
        ],
    ];
    let coeffs = code.coefficient_matrix();
    let mut matched = 0;
    for (l, row) in table.iter().enumerate() {
        for (c, text) in row.iter().enumerate() {
            let want = parse_combination(text, 6, 6);
            check(
                coeffs.row(l * 6 + c) == want.as_slice(),
                format!("response ({}, {}) differs", l + 1, c + 1),
            )?;
            matched += 1;
        }
    }
    check(matched == 24, "24 responses")?;

    let db = Database::random(&p, &mut ChaCha20Rng::seed_from_u64(2));
    for (mu, symbols, rate) in [(2, 12, (1, 2)), (3, 9, (2, 3)), (4, 8, (3, 4))] {
        for subset in subsets(4, mu) {
            for file in 0..2 {
                let got = retrieve_local(&code, &db, file, &subset, 5).map_err(err)?;
                check(
                    got.file == db.file(file).map_err(err)?,
                    format!("decode failed for {subset:?}"),
                )?;
                check(
                    got.plan.total_symbols == symbols,
                    format!("mu {mu}: {} symbols", got.plan.total_symbols),
                )?;
                check(
                    got.rate == Rational64::new(rate.0, rate.1),
                    format!("mu {mu}: rate {}", got.rate),
                )?;
            }
        }
    }
    Ok("layout, 24 responses, downloads 12/9/8 at rates 1/2, 2/3, 3/4".into())
}

const UNIVERSALITY_SETS: [(usize, usize, usize); 5] =
    [(3, 2, 1), (4, 2, 1), (4, 3, 1), (5, 3, 2), (6, 4, 2)];

fn criterion_3() -> Outcome {
    let mut subsets_checked = 0;
    for (n, k, t) in UNIVERSALITY_SETS {
        let code = StaircaseCode::vandermonde(SchemeParams::new(n, k, t, 2, 11, 1).map_err(err)?)
            .map_err(err)?;
        let report = verify_robustness(&code, 50, (n * 100 + k * 10 + t) as u64).map_err(err)?;
        for s in &report.subsets {
            let mu = s.subset.len() as i64;
            check(
                s.failures == 0,
                format!(
                    "({n},{k},{t}) subset {:?}: {} failures",
                    s.subset, s.failures
                ),
            )?;
            check(
                s.rate == Rational64::new(mu - t as i64, mu),
                format!("({n},{k},{t}) subset {:?}: rate {}", s.subset, s.rate),
            )?;
        }
        let expected: usize = (k..=n).map(|mu| subsets(n, mu).len()).sum();
        check(report.subsets.len() == expected, "subset coverage")?;
        subsets_checked += expected;
    }
    Ok(format!(
        "{subsets_checked} responder subsets x 50 trials x 2 files, zero failures"
    ))
}

fn criterion_4() -> Outcome {
    let code = hand_picked(3, 2);
    let report = verify_privacy_exhaustive(&code).map_err(err)?;
    check(report.subsets.len() == 3, "three single-server subsets")?;
    for s in &report.subsets {
        check(
            s.verdict,
            format!("server {:?} distinguishes the files", s.subset),
        )?;
        check(s.histograms[0] == s.histograms[1], "histograms differ")?;
    }
    let mutated = verify_privacy_exhaustive_with(&code, &[0]).map_err(err)?;
    check(!mutated.verdict(), "zeroed r1 went unnoticed")?;
    Ok(format!(
        "{} assignments per file, identical multisets; zeroing r1 is detected",
        report.subsets[0].histograms[0].total
    ))
}

fn criterion_5() -> Outcome {
    let mut count = 0;
    for (n, k, t) in UNIVERSALITY_SETS {
        let code = StaircaseCode::vandermonde(SchemeParams::new(n, k, t, 2, 11, 1).map_err(err)?)
            .map_err(err)?;
        let report = verify_privacy_rank(&code);
        let ta = code.params().randomness_count();
        for s in &report.subsets {
            check(
                s.rank == Some(ta),
                format!(
                    "({n},{k},{t}) subset {:?}: rank {:?} of {ta}",
                    s.subset, s.rank
                ),
            )?;
        }
        count += report.subsets.len();
    }
    // agreement with the exhaustive check on the tiny instance
    let code = hand_picked(3, 2);
    let ex = verify_privacy_exhaustive(&code).map_err(err)?;
    let rk = verify_privacy_rank(&code);
    check(
        ex.verdict() == rk.verdict() && rk.verdict(),
        "rank and exhaustive disagree",
    )?;
    let ex_mut = verify_privacy_exhaustive_with(&code, &[0]).map_err(err)?;
    let rk_mut = verify_privacy_rank_with(&code, &[0]);
    check(
        ex_mut.verdict() == rk_mut.verdict(),
        "rank and exhaustive disagree under mutation",
    )?;
    Ok(format!(
        "{count} t-subsets at full rank; agrees with the exhaustive check"
    ))
}

fn criterion_6() -> Outcome {
    let (num, den) = capacity_finite_parts(3, 1, 10).map_err(err)?;
    check(
        num == BigInt::from(900) && den == BigInt::from(999),
        format!("C_3(1,10) = {num}/{den}"),
    )?;
    let cm = capacity_finite(3, 1, 10).map_err(err)?;
    check(
        cm == BigRational::new(900.into(), 999.into()),
        "reduced value",
    )?;
    let c = to_big(capacity_asymptotic(1, 10).map_err(err)?);
    let ratio = &c / &cm;
    check(
        ratio == BigRational::new(999.into(), 1000.into()),
        format!("ratio {ratio}"),
    )?;
    let r = ratio.to_f64().unwrap();
    check((0.99..=1.0).contains(&r), "ratio outside [0.99, 1]")?;
    let mut checked = 0;
    for k in 2..=12usize {
        for t in 1..k {
            let c = to_big(capacity_asymptotic(t, k).map_err(err)?);
            let base = BigRational::new(t.into(), k.into());
            let mut bound = BigRational::one();
            for m in 1..=20 {
                bound *= &base;
                let gap = capacity_finite(m, t, k).map_err(err)? - &c;
                check(
                    gap <= bound,
                    format!("gap bound fails at t={t} k={k} m={m}"),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "900/999 exact, ratio 999/1000, gap bound on {checked} triples"
    ))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let ramp = RampScheme::new(4, 2, 1, 5).map_err(err)?;
    let files: Vec<Vec<u64>> = (0..3).map(|_| vec![rng.random_range(0..5)]).collect();
    let db = Database::with_layout(ramp.field(), 1, 1, &files).map_err(err)?;
    let adapter = SsPirAdapter::new(&ramp, &db).map_err(err)?;
    let at2 = nonuniversality_demo(&adapter, 2, &mut rng).map_err(err)?;
    let at4 = nonuniversality_demo(&adapter, 4, &mut rng).map_err(err)?;
    check(at2 == Rational64::new(1, 2), format!("ramp at mu=2: {at2}"))?;
    check(at4 == Rational64::new(1, 4), format!("ramp at mu=4: {at4}"))?;
    let full = adapter
        .retrieve_full_download(2, &[0, 1, 2, 3], &mut rng)
        .map_err(err)?;
    check(full.file == files[2], "ramp decode")?;

    let params = SchemeParams::new(4, 2, 1, 3, 5, 1).map_err(err)?;
    let code = StaircaseCode::vandermonde(params.clone()).map_err(err)?;
    let sdb = Database::random(&params, &mut rng);
    let stair = retrieve_local(&code, &sdb, 1, &[0, 1, 2, 3], 3).map_err(err)?;
    check(stair.file == sdb.file(1).map_err(err)?, "staircase decode")?;
    check(
        stair.rate == Rational64::new(3, 4),
        format!("staircase at mu=4: {}", stair.rate),
    )?;
    check(at4 < stair.rate, "no strict gap")?;
    Ok(format!(
        "ramp 1/2 at mu=2 but {at4} at mu=4; staircase {}",
        stair.rate
    ))
}

fn criterion_8() -> Outcome {
    let code = StaircaseCode::vandermonde(SchemeParams::new(4, 2, 1, 2, 5, 1).map_err(err)?)
        .map_err(err)?;
    let mut means = Vec::new();
    for mu in 2..=4usize {
        let cfg = SimConfig::uniform(
            &format!("mu{mu}"),
            code.clone(),
            LatencyModel::Exponential { mean_ms: 10.0 },
            Strategy::WaitFor(mu),
            2024,
            1000,
        );
        let runs = run_simulation(&cfg).map_err(err)?;
        check(runs.len() == 1000, "repetition count")?;
        let want = Rational64::new(mu as i64 - 1, mu as i64);
        let successes: Vec<_> = runs.iter().filter(|r| r.success).collect();
        check(!successes.is_empty(), "no successful runs")?;
        for r in &successes {
            check(r.rate == want, format!("mu {mu}: rate {}", r.rate))?;
            check(
                r.symbols == mu * (6 / (mu - 1)),
                format!("mu {mu}: {} symbols", r.symbols),
            )?;
        }
        means.push(runs.iter().map(|r| r.wait_ms()).sum::<f64>() / runs.len() as f64);
    }
    check(
        means.windows(2).all(|w| w[0] < w[1]),
        format!("mean waits not increasing: {means:?}"),
    )?;
    Ok(format!(
        "all successes at capacity; mean wait {:.2} < {:.2} < {:.2} ms",
        means[0], means[1], means[2]
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let files: Vec<(String, Vec<u8>)> = (0..3)
        .map(|i| {
            let len = 200 + 97 * i;
            (
                format!("file{i}"),
                (0..len).map(|_| rng.random::<u8>()).collect(),
            )
        })
        .collect();
    let (manifest, db) = ingest(&files, 3, 2, 1, 257, 1).map_err(err)?;
    let code = StaircaseCode::vandermonde(manifest.params.clone()).map_err(err)?;
    let db = Arc::new(db);
    let start =
        |opts: ServeOptions| serve("127.0.0.1:0", code.clone(), Arc::clone(&db), opts).map_err(err);
    let opts = |strategy| ClientOptions {
        strategy,
        timeout: Duration::from_secs(5),
        seed: Some(17),
    };

    let servers: Vec<ServerHandle> = (0..3)
        .map(|_| start(ServeOptions::default()))
        .collect::<Result<_, _>>()?;
    let addrs: Vec<SocketAddr> = servers.iter().map(ServerHandle::local_addr).collect();
    let all = retrieve(&addrs, &code, 1, opts(Strategy::WaitFor(3))).map_err(err)?;
    check(
        manifest.restore(1, &all.file).map_err(err)? == files[1].1,
        "bytes differ with all servers",
    )?;
    check(
        all.metrics.rate == Rational64::new(2, 3),
        format!("all alive: rate {}", all.metrics.rate),
    )?;

    // server 3 dies before answering
    let mut servers = servers;
    servers.pop().unwrap().shutdown();
    let got = retrieve(&addrs, &code, 2, opts(Strategy::WaitFor(3))).map_err(err)?;
    check(
        manifest.restore(2, &got.file).map_err(err)? == files[2].1,
        "bytes differ with server 3 down",
    )?;
    check(
        got.responders == vec![0, 1],
        format!("responders {:?}", got.responders),
    )?;
    check(
        got.metrics.rate == Rational64::new(1, 2),
        format!("server 3 down: rate {}", got.metrics.rate),
    )?;

    // server 3 accepts the query then crashes
    let crashing = start(ServeOptions {
        drop_queries: true,
        ..Default::default()
    })?;
    let addrs = vec![addrs[0], addrs[1], crashing.local_addr()];
    let got = retrieve(&addrs, &code, 0, opts(Strategy::WaitFor(3))).map_err(err)?;
    check(
        manifest.restore(0, &got.file).map_err(err)? == files[0].1,
        "bytes differ with crashing server",
    )?;
    check(
        got.metrics.rate == Rational64::new(1, 2),
        format!("crashing server: rate {}", got.metrics.rate),
    )?;
    Ok("rate 2/3 with all servers, 1/2 from the two survivors, files byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "golden (3,2,1) queries and decode identities",
            criterion_1,
            Duration::from_secs(1),
        ),
        (
            "golden (4,2,1) layout, responses and rates",
            criterion_2,
            Duration::from_secs(1),
        ),
        (
            "universality on every responder subset",
            criterion_3,
            Duration::from_secs(120),
        ),
        (
            "exhaustive privacy with mutation control",
            criterion_4,
            Duration::from_secs(60),
        ),
        (
            "rank privacy criterion and oracle agreement",
            criterion_5,
            Duration::from_secs(30),
        ),
        (
            "capacity formulas and gap bound",
            criterion_6,
            Duration::from_secs(5),
        ),
        (
            "worst-case ramp scheme versus staircase",
            criterion_7,
            Duration::from_secs(5),
        ),
        (
            "straggler simulation rate and wait",
            criterion_8,
            Duration::from_secs(30),
        ),
        (
            "socket retrieval with a dead server",
            criterion_9,
            Duration::from_secs(10),
        ),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut passed = 0;
    let mut out = std::io::stdout().lock();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t0.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; exceeded the {budget:?} budget")),
            Err(e) => (false, e),
        };
        passed += usize::from(ok);
        let _ = writeln!(
            out,
            "criterion {} {}: {} ({:.2}s) {}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            detail
        );
    }
    let _ = writeln!(
        out,
        "acceptance: {passed}/{} criteria passed",
        criteria.len()
    );
    let _ = out.flush();
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
