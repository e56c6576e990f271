//! Walkthroughs of two small instances: `(3, 2, 1)` with a hand-picked
//! encoding matrix and `(4, 2, 1)` with a Vandermonde matrix, both over GF(5).

use std::fmt::Write as _;

use num::rational::Rational64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use staircase_pir::protocol::{
    capacity_asymptotic, make_queries, plan_download, rate_achieved, server_respond, Database,
    ResponseSet,
};
use staircase_pir::staircase::describe_combination;
use staircase_pir::verifier::subset_label;
use staircase_pir::{FieldMatrix, Result, RowOrder, SchemeParams, StaircaseCode};

pub fn example_code(example: u8) -> Result<StaircaseCode> {
    match example {
        1 => {
            let p = SchemeParams::new(3, 2, 1, 2, 5, 1)?;
            let v =
                FieldMatrix::from_rows(p.field(), &[vec![1, 0, 0], vec![1, 1, 0], vec![1, 2, 1]])?;
            StaircaseCode::with_order(p, v, RowOrder::RandomnessFirst)
        }
        _ => StaircaseCode::vandermonde(SchemeParams::new(4, 2, 1, 2, 5, 1)?),
    }
}

fn tuple(xs: &[usize]) -> String {
    let parts: Vec<String> = xs.iter().map(usize::to_string).collect();
    format!("({})", parts.join(", "))
}

/// Full text of the walkthrough; `mu = None` traces every level.
pub fn render(example: u8, mu: Option<usize>, seed: u64) -> Result<String> {
    let code = example_code(example)?;
    let p = code.params();
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(
        w,
        "(n, k, t) = ({}, {}, {}) over GF({}), m = {} files, s = {}",
        p.n(),
        p.k(),
        p.t(),
        p.q(),
        p.m(),
        p.s()
    );
    let _ = writeln!(
        w,
        "mu = {}, alpha_j = {}, alpha = {}, alpha' = {}, block columns = {}",
        tuple(p.mus()),
        tuple(p.alphas()),
        p.alpha(),
        p.alpha_prime(),
        tuple(p.block_cols())
    );
    let _ = writeln!(
        w,
        "e'c selects part c of the wanted file; r_u are uniform random vectors\n"
    );
    let _ = writeln!(w, "M =\n{}", code.layout());
    let _ = writeln!(w, "V =\n{}", code.v());

    let coeffs = code.coefficient_matrix();
    let alpha = p.alpha();
    let row_text =
        |l: usize, c: usize| describe_combination(coeffs.row(l * alpha + c), p.alpha_prime());
    let _ = writeln!(
        w,
        "Q = V M, one line per server, sub-queries separated by |"
    );
    for l in 0..p.n() {
        let subs: Vec<String> = (0..alpha).map(|c| row_text(l, c)).collect();
        let _ = writeln!(w, "  server {}: {}", l + 1, subs.join(" | "));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let db = Database::random(p, &mut rng);
    let file = p.m() - 1;
    let queries = make_queries(&code, file, seed)?;
    let levels: Vec<usize> = match mu {
        Some(mu) => {
            p.level_for(mu)?;
            vec![mu]
        }
        None => p.mus().to_vec(),
    };
    for mu in levels {
        let responders: Vec<usize> = (0..mu).collect();
        let plan = plan_download(p, &responders)?;
        let _ = writeln!(
            w,
            "\nwaiting for mu = {mu} servers {}",
            subset_label(&plan.responders)
        );
        let _ = writeln!(
            w,
            "  download the first {} sub-responses of each",
            plan.prefix
        );
        let cols: Vec<usize> = (0..plan.prefix).collect();
        let mut responses = ResponseSet::new();
        for &l in &plan.responders {
            let subs: Vec<String> = cols
                .iter()
                .map(|&c| format!("({})^T x", row_text(l, c)))
                .collect();
            let _ = writeln!(w, "  server {}: {}", l + 1, subs.join(", "));
            responses.extend(l, server_respond(&db, &queries[l], &cols)?);
        }
        for b in (0..=plan.level).rev() {
            let range = p.block_start(b)..p.block_start(b) + p.block_cols()[b];
            let cols = format!(
                "block {} (columns {}..{})",
                b + 1,
                range.start + 1,
                range.end
            );
            if p.mus()[b] > mu {
                let _ = writeln!(
                    w,
                    "  {cols}: rows {}..{} known from blocks already decoded, solve the remaining {mu} rows",
                    mu + 1,
                    p.mus()[b]
                );
            } else {
                let _ = writeln!(
                    w,
                    "  {cols}: solve rows 1..{mu} with the first {mu} columns of V"
                );
            }
        }
        let decoded = staircase_pir::protocol::decode_file(&code, &plan, &responses)?;
        let ok = decoded == db.file(file)?;
        let _ = writeln!(
            w,
            "  file {} of {} decoded from a random database: {}",
            file + 1,
            p.m(),
            if ok { "match" } else { "MISMATCH" }
        );
        let rate = rate_achieved(&plan, p.file_symbols());
        let cap: Rational64 = capacity_asymptotic(p.t(), mu)?;
        let _ = writeln!(
            w,
            "  {} symbols downloaded for {} file symbols, capacity 1 - t/mu = {}, rate {}",
            plan.total_symbols,
            p.file_symbols(),
            cap,
            rate
        );
    }
    Ok(out)
}
