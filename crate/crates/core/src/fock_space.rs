//! Occupation-number strings and second-quantized operators.
//!
//! A determinant is a 64-bit word; bit `i` holds the occupation of spin-orbital
//! `i` (0-based, α/β interleaved). Creation and annihilation carry the phase
//! (−1)^(number of occupied spin-orbitals below `i`).

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::integrals::SpinIntegrals;
use crate::sparse::CsrMatrix;

pub const MAX_SPIN_ORBITALS: usize = 64;
const ALPHA_MASK: u64 = 0x5555_5555_5555_5555;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Determinant {
    occ: u64,
    m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignedDeterminant {
    pub det: Determinant,
    pub sign: i8,
}

#[inline]
fn mask(m: usize) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

impl Determinant {
    pub fn new(occ: u64, m: usize) -> Result<Self> {
        if m == 0 || m > MAX_SPIN_ORBITALS {
            return Err(Error::Capacity(format!(
                "{m} spin-orbitals (1..=64 supported)"
            )));
        }
        if occ & !mask(m) != 0 {
            return Err(Error::Domain(format!(
                "occupation {occ:#b} wider than {m} spin-orbitals"
            )));
        }
        Ok(Self { occ, m })
    }

    pub fn from_occupied(occupied: impl IntoIterator<Item = usize>, m: usize) -> Result<Self> {
        let mut occ = 0u64;
        for i in occupied {
            if i >= m {
                return Err(Error::Domain(format!("spin-orbital {i} outside 0..{m}")));
            }
            occ |= 1 << i;
        }
        Self::new(occ, m)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.occ
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn is_occupied(&self, i: usize) -> bool {
        i < self.m && self.occ >> i & 1 == 1
    }

    pub fn particle_count(&self) -> usize {
        self.occ.count_ones() as usize
    }

    pub fn n_alpha(&self) -> usize {
        (self.occ & ALPHA_MASK).count_ones() as usize
    }

    pub fn n_beta(&self) -> usize {
        (self.occ & !ALPHA_MASK).count_ones() as usize
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(|&i| self.is_occupied(i))
    }

    pub fn unoccupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(|&i| !self.is_occupied(i))
    }

    /// Number of spin-orbitals occupied in `reference` but empty here.
    pub fn holes_relative_to(&self, reference: &Determinant) -> usize {
        (reference.occ & !self.occ).count_ones() as usize
    }

    /// Number of spin-orbitals in which the two strings differ.
    pub fn difference_count(&self, other: &Determinant) -> usize {
        (self.occ ^ other.occ).count_ones() as usize
    }

    #[inline]
    fn phase(&self, i: usize) -> i8 {
        let below = self.occ & ((1u64 << i) - 1);
        if below.count_ones() % 2 == 0 {
            1
        } else {
            -1
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.m {
            Err(Error::Domain(format!(
                "spin-orbital {i} outside 0..{}",
                self.m
            )))
        } else {
            Ok(())
        }
    }

    /// a_i† |n⟩; `None` when the spin-orbital is already filled.
    pub fn create(&self, i: usize) -> Result<Option<SignedDeterminant>> {
        self.check_index(i)?;
        Ok((!self.is_occupied(i)).then(|| SignedDeterminant {
            det: Determinant {
                occ: self.occ | 1 << i,
                m: self.m,
            },
            sign: self.phase(i),
        }))
    }

    /// a_i |n⟩; `None` when the spin-orbital is empty.
    pub fn annihilate(&self, i: usize) -> Result<Option<SignedDeterminant>> {
        self.check_index(i)?;
        Ok(self.is_occupied(i).then(|| SignedDeterminant {
            det: Determinant {
                occ: self.occ & !(1 << i),
                m: self.m,
            },
            sign: self.phase(i),
        }))
    }

    /// Ket rendering |n_M … n_1⟩, highest spin-orbital first.
    pub fn ket(&self) -> String {
        let digits: String = (0..self.m)
            .rev()
            .map(|i| if self.is_occupied(i) { '1' } else { '0' })
            .collect();
        format!("|{digits}⟩")
    }
}

impl fmt::Display for Determinant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.ket())
    }
}

impl Serialize for Determinant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.ket())
    }
}

pub fn apply_create(d: &Determinant, i: usize) -> Result<Option<SignedDeterminant>> {
    d.create(i)
}

pub fn apply_annihilate(d: &Determinant, i: usize) -> Result<Option<SignedDeterminant>> {
    d.annihilate(i)
}

/// Excitation-rank restriction relative to an N-electron reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub reference: Determinant,
    pub rank: usize,
}

/// Determinants of one (n_α, n_β) sector, sorted by bit value.
#[derive(Clone, Debug)]
pub struct CISpace {
    dets: Vec<Determinant>,
    index: HashMap<u64, usize>,
    pub m: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub truncation: Option<Truncation>,
    fingerprint: u64,
}

impl CISpace {
    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    pub fn dets(&self) -> &[Determinant] {
        &self.dets
    }

    pub fn position(&self, d: &Determinant) -> Option<usize> {
        self.index.get(&d.occ).copied()
    }

    pub fn particle_count(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    /// Stable identity of the determinant list, used to check that vectors
    /// and eigen-solutions refer to the same basis.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn fnv1a(words: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// All k-subsets of n items as bitmasks, ascending.
fn combinations(n: usize, k: usize) -> Vec<u64> {
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut x: u64 = (1u64 << k) - 1;
    let limit = 1u128 << n;
    while (x as u128) < limit {
        out.push(x);
        // Gosper's hack
        let c = x & x.wrapping_neg();
        let r = x + c;
        if r == 0 {
            break;
        }
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Spreads spatial occupation bits onto the α (even) or β (odd) positions.
fn spread(spatial_bits: u64, beta: bool) -> u64 {
    let mut out = 0;
    let mut bits = spatial_bits;
    while bits != 0 {
        let k = bits.trailing_zeros();
        out |= 1u64 << (2 * k + beta as u32);
        bits &= bits - 1;
    }
    out
}

pub fn enumerate_space(
    m: usize,
    n_alpha: usize,
    n_beta: usize,
    truncation: Option<Truncation>,
) -> Result<CISpace> {
    if m == 0 || m > MAX_SPIN_ORBITALS || m % 2 != 0 {
        return Err(Error::Capacity(format!(
            "{m} spin-orbitals (even, at most 64, required)"
        )));
    }
    if let Some(t) = &truncation {
        if t.reference.m != m {
            return Err(Error::Shape(format!(
                "reference has {} spin-orbitals, space has {m}",
                t.reference.m
            )));
        }
        if n_alpha + n_beta < t.reference.particle_count() && t.rank < 1 {
            return Err(Error::Domain(
                "ionized sectors need excitation rank ≥ 1 (every determinant has a hole)".into(),
            ));
        }
    }
    let n_orb = m / 2;
    let alphas = combinations(n_orb, n_alpha);
    let betas = combinations(n_orb, n_beta);
    let mut dets: Vec<Determinant> = Vec::with_capacity(alphas.len() * betas.len());
    for &a in &alphas {
        let a = spread(a, false);
        for &b in &betas {
            let d = Determinant {
                occ: a | spread(b, true),
                m,
            };
            if truncation.map_or(true, |t| d.holes_relative_to(&t.reference) <= t.rank) {
                dets.push(d);
            }
        }
    }
    dets.sort_unstable();
    let index = dets.iter().enumerate().map(|(k, d)| (d.occ, k)).collect();
    let fingerprint = fnv1a(
        [m as u64, n_alpha as u64, n_beta as u64]
            .into_iter()
            .chain(dets.iter().map(|d| d.occ)),
    );
    Ok(CISpace {
        dets,
        index,
        m,
        n_alpha,
        n_beta,
        truncation,
        fingerprint,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create(usize),
    Annihilate(usize),
}

impl Ladder {
    fn index(&self) -> usize {
        match *self {
            Ladder::Create(i) | Ladder::Annihilate(i) => i,
        }
    }
}

/// Sum of scalar-weighted products of ladder operators. Within a product the
/// rightmost factor acts first, as in written operator algebra.
#[derive(Clone, Debug, Default)]
pub struct FermionOperator {
    pub terms: Vec<(f64, Vec<Ladder>)>,
}

impl FermionOperator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(mut self, coef: f64, factors: Vec<Ladder>) -> Self {
        self.push(coef, factors);
        self
    }

    pub fn push(&mut self, coef: f64, factors: Vec<Ladder>) {
        if coef != 0.0 {
            self.terms.push((coef, factors));
        }
    }

    /// Σ_p a_p† a_p
    pub fn number(m: usize) -> Self {
        let mut op = Self::new();
        for p in 0..m {
            op.push(1.0, vec![Ladder::Create(p), Ladder::Annihilate(p)]);
        }
        op
    }

    /// H = E_nuc + Σ h_pq a_p† a_q + ¼ Σ ⟨pq||rs⟩ a_p† a_q† a_s a_r
    pub fn hamiltonian(ints: &SpinIntegrals) -> Self {
        let m = ints.m;
        let mut op = Self::new();
        op.push(ints.e_nuc, Vec::new());
        for p in 0..m {
            for q in 0..m {
                op.push(
                    ints.h[(p, q)],
                    vec![Ladder::Create(p), Ladder::Annihilate(q)],
                );
            }
        }
        for p in 0..m {
            for q in 0..m {
                for r in 0..m {
                    for s in 0..m {
                        op.push(
                            0.25 * ints.v(p, q, r, s),
                            vec![
                                Ladder::Create(p),
                                Ladder::Create(q),
                                Ladder::Annihilate(s),
                                Ladder::Annihilate(r),
                            ],
                        );
                    }
                }
            }
        }
        op
    }

    /// Applies one product to a determinant.
    fn apply_product(factors: &[Ladder], d: &Determinant) -> Result<Option<SignedDeterminant>> {
        let mut cur = SignedDeterminant { det: *d, sign: 1 };
        for f in factors.iter().rev() {
            let next = match *f {
                Ladder::Create(i) => cur.det.create(i)?,
                Ladder::Annihilate(i) => cur.det.annihilate(i)?,
            };
            match next {
                Some(n) => {
                    cur = SignedDeterminant {
                        det: n.det,
                        sign: cur.sign * n.sign,
                    }
                }
                None => return Ok(None),
            }
        }
        Ok(Some(cur))
    }

    /// (Δn_α, Δn_β) of one product.
    fn spin_change(factors: &[Ladder]) -> (i64, i64) {
        let mut d = (0, 0);
        for f in factors {
            let delta = if matches!(f, Ladder::Create(_)) {
                1
            } else {
                -1
            };
            if f.index() % 2 == 0 {
                d.0 += delta;
            } else {
                d.1 += delta;
            }
        }
        d
    }
}

/// Matrix of an operator between two CI spaces (rows: codomain).
#[derive(Clone, Debug)]
pub struct SparseOperatorMatrix {
    pub matrix: CsrMatrix,
    pub domain: u64,
    pub codomain: u64,
}

pub fn operator_matrix(
    op: &FermionOperator,
    domain: &CISpace,
    codomain: &CISpace,
) -> Result<SparseOperatorMatrix> {
    if domain.m != codomain.m {
        return Err(Error::Shape(format!(
            "domain has {} spin-orbitals, codomain {}",
            domain.m, codomain.m
        )));
    }
    let want = (
        codomain.n_alpha as i64 - domain.n_alpha as i64,
        codomain.n_beta as i64 - domain.n_beta as i64,
    );
    for (_, factors) in &op.terms {
        if let Some(&bad) = factors.iter().find(|f| f.index() >= domain.m) {
            return Err(Error::Domain(format!("{bad:?} outside 0..{}", domain.m)));
        }
        let got = FermionOperator::spin_change(factors);
        if got != want {
            return Err(Error::Shape(format!(
                "operator changes (n_α, n_β) by {got:?}, spaces differ by {want:?}"
            )));
        }
    }
    let columns: Vec<Vec<(usize, f64)>> = domain
        .dets()
        .par_iter()
        .map(|d| {
            let mut col = Vec::new();
            for (coef, factors) in &op.terms {
                if let Some(r) = FermionOperator::apply_product(factors, d)? {
                    if let Some(row) = codomain.position(&r.det) {
                        col.push((row, coef * r.sign as f64));
                    }
                }
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut rows = vec![Vec::new(); codomain.len()];
    for (c, col) in columns.into_iter().enumerate() {
        for (r, v) in col {
            rows[r].push((c, v));
        }
    }
    Ok(SparseOperatorMatrix {
        matrix: CsrMatrix::from_rows(domain.len(), rows),
        domain: domain.fingerprint(),
        codomain: codomain.fingerprint(),
    })
}
