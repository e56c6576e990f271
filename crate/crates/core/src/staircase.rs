//! Staircase message grid, share encoding and the level-by-level peeling
//! decoder.
//!
//! The grid `M` has `n` rows and `alpha` columns split into `h = n - k + 1`
//! blocks. Block `j` (0-based) has `mu_j = n - j` nonzero rows:
//!
//! * block 0 holds the `alpha'` payload vectors (`E`, `alpha_1` rows, filled
//!   column-major) and `t` rows of fresh randomness `R_1`;
//! * block `j >= 1` holds `D_j` (`alpha_j` rows replicating row `mu_{j-1}` of
//!   blocks `0..j`, wrapped column-major) and `t` rows of randomness `R_j`;
//! * rows `mu_j..n` of block `j` are zero.
//!
//! Shares are the rows of `Q = V * M`. A user hearing from `mu_j` servers
//! fetches only the first `alpha' / alpha_j` columns of each share; the zero
//! padding means block `j` is solvable on its own, and each solved block
//! yields the replicated rows needed to peel the block before it.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::field::{
    default_vandermonde, validate_encoding_matrix, FieldMatrix, PrimeField, SymbolVector,
};
use crate::params::SchemeParams;

/// Vertical placement of payload/replica rows and randomness rows inside a
/// block. Both orders decode identically; the choice changes which servers
/// see bare randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RowOrder {
    /// `E` (or `D_{j-1}`) on rows `0..alpha_j`, randomness on `alpha_j..mu_j`.
    #[default]
    PayloadFirst,
    /// Randomness on rows `0..t`, `E` (or `D_{j-1}`) on `t..mu_j`.
    RandomnessFirst,
}

/// What a grid cell ultimately holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Entry {
    Zero,
    /// Payload vector `e'_c` (0-based `c < alpha'`).
    Payload(usize),
    /// Random vector `r_u` (0-based `u < t * alpha`).
    Random(usize),
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Zero => write!(f, "0"),
            Entry::Payload(c) => write!(f, "e'{}", c + 1),
            Entry::Random(u) => write!(f, "r{}", u + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub entry: Entry,
    /// For `D` cells: the `(row, column)` of the earlier cell being copied.
    pub replica_of: Option<(usize, usize)>,
}

const ZERO_CELL: Cell = Cell {
    entry: Entry::Zero,
    replica_of: None,
};

/// The symbolic shape of `M`: which payload/random vector sits in each cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaircaseLayout {
    params: SchemeParams,
    order: RowOrder,
    cells: Vec<Cell>,
}

impl StaircaseLayout {
    pub fn new(params: &SchemeParams, order: RowOrder) -> Self {
        let n = params.n();
        let t = params.t();
        let alpha = params.alpha();
        let mut cells = vec![ZERO_CELL; n * alpha];
        let mut next_random = 0;
        for j in 0..params.h() {
            let start = params.block_start(j);
            let cols = params.block_cols()[j];
            let a = params.alphas()[j];
            let (payload_top, random_top) = match order {
                RowOrder::PayloadFirst => (0, a),
                RowOrder::RandomnessFirst => (t, 0),
            };
            if j == 0 {
                for p in 0..params.alpha_prime() {
                    let (r, c) = (payload_top + p % a, start + p / a);
                    cells[r * alpha + c].entry = Entry::Payload(p);
                }
            } else {
                let src_row = params.mus()[j - 1] - 1;
                for p in 0..start {
                    let src = cells[src_row * alpha + p];
                    let (r, c) = (payload_top + p % a, start + p / a);
                    cells[r * alpha + c] = Cell {
                        entry: src.entry,
                        replica_of: Some((src_row, p)),
                    };
                }
                debug_assert_eq!(start, a * cols);
            }
            for p in 0..t * cols {
                let (r, c) = (random_top + p % t, start + p / t);
                cells[r * alpha + c].entry = Entry::Random(next_random);
                next_random += 1;
            }
        }
        debug_assert_eq!(next_random, params.randomness_count());
        StaircaseLayout {
            params: params.clone(),
            order,
            cells,
        }
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn order(&self) -> RowOrder {
        self.order
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.params.alpha() + col]
    }

    /// Block index owning grid column `col`.
    pub fn block_of(&self, col: usize) -> usize {
        let mut acc = 0;
        for (j, &w) in self.params.block_cols().iter().enumerate() {
            acc += w;
            if col < acc {
                return j;
            }
        }
        panic!("column {col} outside the grid");
    }

    fn block_columns(&self, j: usize) -> Range<usize> {
        let start = self.params.block_start(j);
        start..start + self.params.block_cols()[j]
    }
}

impl fmt::Display for StaircaseLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alpha = self.params.alpha();
        for r in 0..self.params.n() {
            let row: Vec<String> = (0..alpha)
                .map(|c| format!("{:>4}", self.cell(r, c).entry.to_string()))
                .collect();
            writeln!(f, "[{} ]", row.join(" "))?;
        }
        Ok(())
    }
}

/// `M` with concrete vectors in every cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageGrid {
    layout: StaircaseLayout,
    values: Vec<SymbolVector>,
}

impl MessageGrid {
    /// Fills the layout with the given payload (`alpha'` vectors) and
    /// randomness (`t * alpha` vectors), all of one common length.
    pub fn from_parts(
        layout: &StaircaseLayout,
        payload: &[SymbolVector],
        randomness: &[SymbolVector],
    ) -> Result<Self> {
        let p = layout.params();
        if payload.len() != p.alpha_prime() {
            return Err(Error::DimensionMismatch(format!(
                "{} payload vectors, expected {}",
                payload.len(),
                p.alpha_prime()
            )));
        }
        if randomness.len() != p.randomness_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} random vectors, expected {}",
                randomness.len(),
                p.randomness_count()
            )));
        }
        let len = payload[0].len();
        if payload.iter().chain(randomness).any(|v| v.len() != len) {
            return Err(Error::DimensionMismatch(
                "grid vectors differ in length".into(),
            ));
        }
        let values = layout
            .cells
            .iter()
            .map(|cell| match cell.entry {
                Entry::Zero => SymbolVector::zeros(len),
                Entry::Payload(c) => payload[c].clone(),
                Entry::Random(u) => randomness[u].clone(),
            })
            .collect();
        Ok(MessageGrid {
            layout: layout.clone(),
            values,
        })
    }

    pub fn layout(&self) -> &StaircaseLayout {
        &self.layout
    }

    pub fn get(&self, row: usize, col: usize) -> &SymbolVector {
        &self.values[row * self.layout.params.alpha() + col]
    }

    pub fn vector_len(&self) -> usize {
        self.values[0].len()
    }
}

/// Slab index of part `c` of file `i` inside the data vector.
pub fn part_slab(params: &SchemeParams, part: usize, file: usize) -> usize {
    part * params.m() + file
}

/// `e'_{c,i}` for all parts `c` of file `i`: unit slabs of width `s`.
pub fn unit_payload(params: &SchemeParams, file: usize) -> Result<Vec<SymbolVector>> {
    if file >= params.m() {
        return Err(Error::FileIndexOutOfRange {
            index: file,
            m: params.m(),
        });
    }
    let len = params.vector_len();
    let s = params.s();
    Ok((0..params.alpha_prime())
        .map(|c| SymbolVector::unit_slab(len, part_slab(params, c, file) * s, s))
        .collect())
}

/// `count` vectors of length `len` with iid uniform entries in GF(q).
pub fn random_vectors<R: Rng + ?Sized>(
    rng: &mut R,
    field: PrimeField,
    count: usize,
    len: usize,
) -> Vec<SymbolVector> {
    let q = field.modulus();
    (0..count)
        .map(|_| SymbolVector((0..len).map(|_| rng.random_range(0..q)).collect()))
        .collect()
}

/// The `t * alpha` grid random vectors, deterministic in `seed`.
pub fn generate_randomness(params: &SchemeParams, seed: u64) -> Vec<SymbolVector> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    random_vectors(
        &mut rng,
        params.field(),
        params.randomness_count(),
        params.vector_len(),
    )
}

/// PIR grid for file `file` (0-based) in the default row order.
pub fn build_message_grid(
    params: &SchemeParams,
    file: usize,
    randomness: &[SymbolVector],
) -> Result<MessageGrid> {
    let layout = StaircaseLayout::new(params, RowOrder::default());
    MessageGrid::from_parts(&layout, &unit_payload(params, file)?, randomness)
}

/// Columns fetched from each responder when `mu` servers answer.
pub fn prefix_columns(params: &SchemeParams, mu: usize) -> Result<Range<usize>> {
    Ok(0..params.prefix_len(mu)?)
}

/// Renders one row of [`StaircaseCode::coefficient_matrix`] as a sum such as
/// `e'1+2e'2+3r1`.
pub fn describe_combination(row: &[u64], alpha_prime: usize) -> String {
    let terms: Vec<String> = row
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(b, &c)| {
            let name = if b < alpha_prime {
                Entry::Payload(b).to_string()
            } else {
                Entry::Random(b - alpha_prime).to_string()
            };
            if c == 1 {
                name
            } else {
                format!("{c}{name}")
            }
        })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join("+")
    }
}

/// The `n` shares `Q = V * M`, one row of `alpha` vectors per server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareSet {
    pub rows: Vec<Vec<SymbolVector>>,
    pub v: FieldMatrix,
}

/// A validated encoding matrix bound to its parameters and grid layout.
#[derive(Clone, Debug)]
pub struct StaircaseCode {
    params: SchemeParams,
    v: FieldMatrix,
    layout: StaircaseLayout,
}

impl StaircaseCode {
    pub fn new(params: SchemeParams, v: FieldMatrix) -> Result<Self> {
        Self::with_order(params, v, RowOrder::default())
    }

    pub fn with_order(params: SchemeParams, v: FieldMatrix, order: RowOrder) -> Result<Self> {
        if !validate_encoding_matrix(&v, &params)? {
            return Err(Error::BadEncodingMatrix);
        }
        let layout = StaircaseLayout::new(&params, order);
        Ok(StaircaseCode { params, v, layout })
    }

    /// Encoding matrix = Vandermonde on `1..=n`.
    pub fn vandermonde(params: SchemeParams) -> Result<Self> {
        let v = default_vandermonde(params.field(), params.n())?;
        Self::new(params, v)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn v(&self) -> &FieldMatrix {
        &self.v
    }

    pub fn layout(&self) -> &StaircaseLayout {
        &self.layout
    }

    pub fn field(&self) -> PrimeField {
        self.v.field()
    }

    pub fn grid(
        &self,
        payload: &[SymbolVector],
        randomness: &[SymbolVector],
    ) -> Result<MessageGrid> {
        MessageGrid::from_parts(&self.layout, payload, randomness)
    }

    /// PIR grid for `file` using this code's row order.
    pub fn pir_grid(&self, file: usize, randomness: &[SymbolVector]) -> Result<MessageGrid> {
        self.grid(&unit_payload(&self.params, file)?, randomness)
    }

    pub fn encode(&self, grid: &MessageGrid) -> Result<ShareSet> {
        encode_shares(&self.params, &self.v, grid)
    }

    /// Symbolic form of `Q`: row `l * alpha + c` holds the coefficients of
    /// sub-query `(l, c)` over the basis `(e'_1..e'_{alpha'}, r_1..r_{t alpha})`.
    pub fn coefficient_matrix(&self) -> FieldMatrix {
        let p = &self.params;
        let f = self.field();
        let (n, alpha, ap) = (p.n(), p.alpha(), p.alpha_prime());
        let mut out = FieldMatrix::zeros(f, n * alpha, ap + p.randomness_count());
        for l in 0..n {
            for c in 0..alpha {
                for r in 0..n {
                    let basis = match self.layout.cell(r, c).entry {
                        Entry::Zero => continue,
                        Entry::Payload(e) => e,
                        Entry::Random(u) => ap + u,
                    };
                    let row = l * alpha + c;
                    let cur = out.get(row, basis);
                    out.set(row, basis, f.add(cur, self.v.get(l, r)));
                }
            }
        }
        out
    }

    pub fn prefix_columns(&self, mu: usize) -> Result<Range<usize>> {
        prefix_columns(&self.params, mu)
    }

    /// Recovers the payload projections `e'_c^T x` from the prefix
    /// projections of `responders`.
    ///
    /// `projections[i][c]` is the projection of sub-query `c` of server
    /// `responders[i]`; only the first `alpha' / alpha_j` entries are read,
    /// where `j = n - |responders|`. All slabs must share one width.
    pub fn peel_decode(
        &self,
        responders: &[usize],
        projections: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        let p = &self.params;
        let f = self.field();
        let mu = responders.len();
        if mu < p.k() {
            return Err(Error::InsufficientResponders {
                have: mu,
                need: p.k(),
            });
        }
        let level = p.level_for(mu)?;
        if projections.len() != mu {
            return Err(Error::DimensionMismatch(format!(
                "{} projection rows for {mu} responders",
                projections.len()
            )));
        }
        let mut seen = HashSet::new();
        for &l in responders {
            if l >= p.n() || !seen.insert(l) {
                return Err(Error::InvalidParameter(format!("bad responder index {l}")));
            }
        }
        let prefix = p.prefix_len(mu)?;
        for (i, row) in projections.iter().enumerate() {
            if row.len() < prefix {
                return Err(Error::MissingResponse {
                    server: responders[i],
                    column: row.len(),
                });
            }
        }
        let width = projections[0][0].len();
        if projections
            .iter()
            .any(|row| row[..prefix].iter().any(|v| v.len() != width))
        {
            return Err(Error::DimensionMismatch(
                "projection slabs differ in width".into(),
            ));
        }

        let alpha = p.alpha();
        let leading: Vec<usize> = (0..mu).collect();
        let inv = self.v.submatrix(responders, &leading).inverse()?;
        let mut known: Vec<Option<SymbolVector>> = vec![None; p.n() * alpha];

        for b in (0..=level).rev() {
            let mu_b = p.mus()[b];
            let cols = self.layout.block_columns(b);
            for c in cols.clone() {
                // strip the rows above mu that later blocks already revealed
                let rhs: Vec<SymbolVector> = responders
                    .iter()
                    .zip(projections)
                    .map(|(&l, row)| {
                        let mut y = row[c].clone();
                        for r in mu..mu_b {
                            let v = known[r * alpha + c]
                                .as_ref()
                                .expect("replicated row decoded by a later block");
                            y.axpy(&f, f.neg(self.v.get(l, r)), v);
                        }
                        y
                    })
                    .collect();
                for r in 0..mu {
                    let mut x = SymbolVector::zeros(width);
                    for (i, y) in rhs.iter().enumerate() {
                        x.axpy(&f, inv.get(r, i), y);
                    }
                    known[r * alpha + c] = Some(x);
                }
            }
            for c in cols {
                for r in 0..mu_b {
                    if let Some(src) = self.layout.cell(r, c).replica_of {
                        known[src.0 * alpha + src.1] = known[r * alpha + c].clone();
                    }
                }
            }
        }

        let mut payload = vec![None; p.alpha_prime()];
        for c in self.layout.block_columns(0) {
            for r in 0..p.n() {
                if let Entry::Payload(e) = self.layout.cell(r, c).entry {
                    payload[e] = known[r * alpha + c].clone();
                }
            }
        }
        Ok(payload
            .into_iter()
            .map(|v| v.expect("block 0 fully decoded"))
            .collect())
    }

    /// Shares an arbitrary secret of `alpha'` vectors (one common length)
    /// with fresh randomness drawn from `seed`.
    pub fn ss_share(&self, secret: &[SymbolVector], seed: u64) -> Result<ShareSet> {
        let len = secret.first().map_or(0, SymbolVector::len);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let randomness =
            random_vectors(&mut rng, self.field(), self.params.randomness_count(), len);
        self.encode(&self.grid(secret, &randomness)?)
    }

    /// Reconstructs a secret from `d` shares' prefixes, `k <= d <= n`.
    pub fn ss_reconstruct(
        &self,
        holders: &[usize],
        prefixes: &[Vec<SymbolVector>],
    ) -> Result<Vec<SymbolVector>> {
        self.peel_decode(holders, prefixes)
    }
}

/// `Q = V * M` with every cell scaled and summed componentwise.
pub fn encode_shares(
    params: &SchemeParams,
    v: &FieldMatrix,
    grid: &MessageGrid,
) -> Result<ShareSet> {
    if !validate_encoding_matrix(v, params)? {
        return Err(Error::BadEncodingMatrix);
    }
    if grid.layout().params() != params {
        return Err(Error::DimensionMismatch(
            "grid built for other parameters".into(),
        ));
    }
    let f = v.field();
    let len = grid.vector_len();
    let rows = (0..params.n())
        .map(|l| {
            (0..params.alpha())
                .map(|c| {
                    let mut acc = SymbolVector::zeros(len);
                    for r in 0..params.n() {
                        if grid.layout().cell(r, c).entry != Entry::Zero {
                            acc.axpy(&f, v.get(l, r), grid.get(r, c));
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(ShareSet { rows, v: v.clone() })
}
