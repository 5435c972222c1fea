//! Exact integer linear algebra: Smith normal form, cokernel invariants,
//! the pointed K0 data of a pair, and membership in column images.
//!
//! Arithmetic runs in checked 64-bit integers and retries in arbitrary
//! precision on overflow, so results are exact in all cases. The Smith
//! pivot is always a minimal-absolute-value nonzero entry, ties broken in
//! row-major order, which keeps entry growth down and output deterministic.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::graph::Components;
use crate::pair::DbPair;
use crate::{Error, Result};

/// Unimodular decomposition `U * M * V = S` with `S` diagonal and each
/// diagonal entry dividing the next.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Smith {
    pub u: Vec<Vec<BigInt>>,
    pub v: Vec<Vec<BigInt>>,
    /// Diagonal of `S`, length `min(rows, cols)`, entries nonnegative.
    pub diag: Vec<BigInt>,
    pub rows: usize,
    pub cols: usize,
}

impl Smith {
    pub fn rank(&self) -> usize {
        self.diag.iter().filter(|d| !d.is_zero()).count()
    }

    /// Invariant factors greater than one.
    pub fn factors(&self) -> Vec<BigInt> {
        self.diag
            .iter()
            .filter(|d| !d.is_zero() && !d.is_one())
            .cloned()
            .collect()
    }
}

trait SnfInt: Clone + Ord {
    fn zero_v() -> Self;
    fn one_v() -> Self;
    fn is_zero_v(&self) -> bool;
    fn abs_v(&self) -> Self;
    fn neg_v(&self) -> Option<Self>;
    fn add_v(&self, o: &Self) -> Option<Self>;
    fn sub_v(&self, o: &Self) -> Option<Self>;
    fn mul_v(&self, o: &Self) -> Option<Self>;
    /// `(q, r)` with `self = q * d + r`, `|r| <= d/2`, `d > 0`; `None` on overflow.
    fn div_round_v(&self, d: &Self) -> Option<(Self, Self)>
    where
        Self: Sized;
    fn divides(&self, o: &Self) -> bool;
    fn to_big(&self) -> BigInt;
}

impl SnfInt for i64 {
    fn zero_v() -> Self {
        0
    }
    fn one_v() -> Self {
        1
    }
    fn is_zero_v(&self) -> bool {
        *self == 0
    }
    fn abs_v(&self) -> Self {
        self.wrapping_abs()
    }
    fn neg_v(&self) -> Option<Self> {
        self.checked_neg()
    }
    fn add_v(&self, o: &Self) -> Option<Self> {
        self.checked_add(*o)
    }
    fn sub_v(&self, o: &Self) -> Option<Self> {
        self.checked_sub(*o)
    }
    fn mul_v(&self, o: &Self) -> Option<Self> {
        self.checked_mul(*o)
    }
    fn div_round_v(&self, d: &Self) -> Option<(Self, Self)> {
        if *d <= 0 || *self == i64::MIN {
            return None;
        }
        let mut q = self.div_euclid(*d);
        let mut r = self.rem_euclid(*d);
        if 2 * r > *d {
            q = q.checked_add(1)?;
            r -= *d;
        }
        Some((q, r))
    }
    fn divides(&self, o: &Self) -> bool {
        *self != 0 && o % self == 0
    }
    fn to_big(&self) -> BigInt {
        BigInt::from(*self)
    }
}

impl SnfInt for BigInt {
    fn zero_v() -> Self {
        BigInt::zero()
    }
    fn one_v() -> Self {
        BigInt::one()
    }
    fn is_zero_v(&self) -> bool {
        self.is_zero()
    }
    fn abs_v(&self) -> Self {
        self.abs()
    }
    fn neg_v(&self) -> Option<Self> {
        Some(-self)
    }
    fn add_v(&self, o: &Self) -> Option<Self> {
        Some(self + o)
    }
    fn sub_v(&self, o: &Self) -> Option<Self> {
        Some(self - o)
    }
    fn mul_v(&self, o: &Self) -> Option<Self> {
        Some(self * o)
    }
    fn div_round_v(&self, d: &Self) -> Option<(Self, Self)> {
        if !d.is_positive() {
            return None;
        }
        let (mut q, mut r) = self.div_mod_floor(d);
        if &r * 2 > *d {
            q += 1;
            r -= d;
        }
        Some((q, r))
    }
    fn divides(&self, o: &Self) -> bool {
        !self.is_zero() && (o % self).is_zero()
    }
    fn to_big(&self) -> BigInt {
        self.clone()
    }
}

struct SnfState<T> {
    m: Vec<Vec<T>>,
    u: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: SnfInt> SnfState<T> {
    fn identity(n: usize) -> Vec<Vec<T>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { T::one_v() } else { T::zero_v() })
                    .collect()
            })
            .collect()
    }

    fn new(m: Vec<Vec<T>>) -> Self {
        let rows = m.len();
        let cols = if rows == 0 { 0 } else { m[0].len() };
        SnfState {
            m,
            u: Self::identity(rows),
            v: Self::identity(cols),
        }
    }

    fn rows(&self) -> usize {
        self.m.len()
    }

    fn cols(&self) -> usize {
        if self.m.is_empty() {
            0
        } else {
            self.m[0].len()
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        self.m.swap(a, b);
        self.u.swap(a, b);
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        for row in &mut self.m {
            row.swap(a, b);
        }
        for row in &mut self.v {
            row.swap(a, b);
        }
    }

    fn negate_row(&mut self, r: usize) -> Option<()> {
        for e in &mut self.m[r] {
            *e = e.neg_v()?;
        }
        for e in &mut self.u[r] {
            *e = e.neg_v()?;
        }
        Some(())
    }

    /// row a -= q * row b
    fn row_sub(&mut self, a: usize, b: usize, q: &T) -> Option<()> {
        for j in 0..self.cols() {
            let t = q.mul_v(&self.m[b][j])?;
            self.m[a][j] = self.m[a][j].sub_v(&t)?;
        }
        for j in 0..self.rows() {
            let t = q.mul_v(&self.u[b][j])?;
            self.u[a][j] = self.u[a][j].sub_v(&t)?;
        }
        Some(())
    }

    /// col a -= q * col b
    fn col_sub(&mut self, a: usize, b: usize, q: &T) -> Option<()> {
        for i in 0..self.rows() {
            let t = q.mul_v(&self.m[i][b])?;
            self.m[i][a] = self.m[i][a].sub_v(&t)?;
        }
        for i in 0..self.cols() {
            let t = q.mul_v(&self.v[i][b])?;
            self.v[i][a] = self.v[i][a].sub_v(&t)?;
        }
        Some(())
    }

    /// row a += row b
    fn row_add(&mut self, a: usize, b: usize) -> Option<()> {
        for j in 0..self.cols() {
            self.m[a][j] = self.m[a][j].add_v(&self.m[b][j])?;
        }
        for j in 0..self.rows() {
            self.u[a][j] = self.u[a][j].add_v(&self.u[b][j])?;
        }
        Some(())
    }

    fn pivot(&self, t: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for i in t..self.rows() {
            for j in t..self.cols() {
                if self.m[i][j].is_zero_v() {
                    continue;
                }
                best = match best {
                    None => Some((i, j)),
                    Some((bi, bj)) => {
                        if self.m[i][j].abs_v() < self.m[bi][bj].abs_v() {
                            Some((i, j))
                        } else {
                            Some((bi, bj))
                        }
                    }
                };
            }
        }
        best
    }

    fn run(&mut self) -> Option<()> {
        let steps = self.rows().min(self.cols());
        for t in 0..steps {
            loop {
                let Some((pi, pj)) = self.pivot(t) else {
                    return Some(());
                };
                if pi != t {
                    self.swap_rows(t, pi);
                }
                if pj != t {
                    self.swap_cols(t, pj);
                }
                if self.m[t][t] < T::zero_v() {
                    self.negate_row(t)?;
                }
                // Clear column t below and row t to the right.
                let mut progressed = true;
                while progressed {
                    progressed = false;
                    let p = self.m[t][t].clone();
                    for i in t + 1..self.rows() {
                        if !self.m[i][t].is_zero_v() {
                            let (q, _r) = self.m[i][t].div_round_v(&p)?;
                            if !q.is_zero_v() {
                                self.row_sub(i, t, &q)?;
                            }
                            if !self.m[i][t].is_zero_v() {
                                progressed = true;
                            }
                        }
                    }
                    for j in t + 1..self.cols() {
                        if !self.m[t][j].is_zero_v() {
                            let (q, _r) = self.m[t][j].div_round_v(&p)?;
                            if !q.is_zero_v() {
                                self.col_sub(j, t, &q)?;
                            }
                            if !self.m[t][j].is_zero_v() {
                                progressed = true;
                            }
                        }
                    }
                    if progressed {
                        // Remainders are strictly smaller; re-pick the pivot.
                        break;
                    }
                }
                if progressed_dirty(&self.m, t) {
                    continue;
                }
                // Pivot must divide every remaining entry.
                let p = self.m[t][t].clone();
                let mut offender = None;
                'scan: for i in t + 1..self.rows() {
                    for j in t + 1..self.cols() {
                        if !p.divides(&self.m[i][j]) {
                            offender = Some(i);
                            break 'scan;
                        }
                    }
                }
                match offender {
                    Some(i) => {
                        self.row_add(t, i)?;
                    }
                    None => break,
                }
            }
        }
        Some(())
    }
}

fn progressed_dirty<T: SnfInt>(m: &[Vec<T>], t: usize) -> bool {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    (t + 1..rows).any(|i| !m[i][t].is_zero_v()) || (t + 1..cols).any(|j| !m[t][j].is_zero_v())
}

fn snf_typed<T: SnfInt>(m: Vec<Vec<T>>) -> Option<Smith> {
    let mut st = SnfState::new(m);
    st.run()?;
    let rows = st.rows();
    let cols = st.cols();
    let diag = (0..rows.min(cols)).map(|t| st.m[t][t].to_big()).collect();
    Some(Smith {
        u: st
            .u
            .iter()
            .map(|r| r.iter().map(|e| e.to_big()).collect())
            .collect(),
        v: st
            .v
            .iter()
            .map(|r| r.iter().map(|e| e.to_big()).collect())
            .collect(),
        diag,
        rows,
        cols,
    })
}

/// Smith normal form of an integer matrix. Checked 64-bit arithmetic with a
/// transparent retry in arbitrary precision when entries outgrow it.
pub fn snf(m: &[Vec<i64>]) -> Result<Smith> {
    let rows = m.len();
    if rows > 0 {
        let cols = m[0].len();
        if m.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidPair("ragged matrix passed to snf".into()));
        }
    }
    if let Some(s) = snf_typed(m.to_vec()) {
        return Ok(s);
    }
    let big: Vec<Vec<BigInt>> = m
        .iter()
        .map(|r| r.iter().map(|&e| BigInt::from(e)).collect())
        .collect();
    snf_typed(big).ok_or_else(|| Error::Arithmetic("smith normal form failed".into()))
}

/// Exact determinant by fraction-free elimination.
pub fn det_exact(m: &[Vec<i64>]) -> Result<BigInt> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidPair(
            "determinant needs a square matrix".into(),
        ));
    }
    if n == 0 {
        return Ok(BigInt::one());
    }
    let mut a: Vec<Vec<BigInt>> = m
        .iter()
        .map(|r| r.iter().map(|&e| BigInt::from(e)).collect())
        .collect();
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(k, i);
                    sign = -sign;
                }
                None => return Ok(BigInt::zero()),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let num = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = num / &prev;
            }
        }
        for i in k + 1..n {
            a[i][k] = BigInt::zero();
        }
        prev = a[k][k].clone();
    }
    Ok(sign * a[n - 1][n - 1].clone())
}

/// Pointed K0 data: the cokernel of the regular part of `B` presented by
/// invariant factors and free rank, together with the class of `D` in the
/// normal-form coordinates.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PointedK0 {
    /// Invariant factors, each greater than one, each dividing the next.
    pub factors: Vec<BigInt>,
    pub free_rank: usize,
    /// Class coordinates modulo the corresponding factor.
    pub torsion_class: Vec<BigInt>,
    /// Coordinates along the free part, unreduced.
    pub free_class: Vec<BigInt>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IsoVerdict {
    Iso,
    NotIso,
    Undecided,
}

fn pointed_from(b_reg: &[Vec<i64>], d: &[i64]) -> Result<PointedK0> {
    let n = d.len();
    let s = snf(b_reg)?;
    debug_assert_eq!(s.rows, n);
    let rank = s.rank();
    let coords: Vec<BigInt> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| &s.u[i][j] * BigInt::from(d[j]))
                .sum::<BigInt>()
        })
        .collect();
    let mut factors = Vec::new();
    let mut torsion_class = Vec::new();
    for (i, f) in s.diag.iter().enumerate() {
        if f.is_zero() || f.is_one() {
            continue;
        }
        factors.push(f.clone());
        torsion_class.push(coords[i].mod_floor(f));
    }
    let free_class = coords[rank..].to_vec();
    Ok(PointedK0 {
        factors,
        free_rank: n - rank,
        torsion_class,
        free_class,
    })
}

/// Pointed K0 of the whole pair: `(cok B_regular, class of D)`.
pub fn pointed_k0(p: &DbPair) -> Result<PointedK0> {
    pointed_from(&p.b_regular(), &p.d)
}

/// Pointed K0 of one component: the diagonal block restricted to the
/// component's regular columns, with `D` restricted to its rows.
pub fn pointed_k0_component(p: &DbPair, comps: &Components, c: usize) -> Result<PointedK0> {
    let rows = comps.members(c);
    let reg_cols: Vec<usize> = rows.iter().copied().filter(|&v| p.is_regular(v)).collect();
    let b: Vec<Vec<i64>> = rows
        .iter()
        .map(|&i| {
            reg_cols
                .iter()
                .map(|&j| p.b[i][j].finite())
                .collect::<Result<Vec<i64>>>()
        })
        .collect::<Result<_>>()?;
    let d: Vec<i64> = rows.iter().map(|&i| p.d[i]).collect();
    pointed_from(&b, &d)
}

/// Minimal-rank number of a component: invariant factors above one plus the
/// free rank of the component's regular cokernel.
pub fn mr(p: &DbPair, comps: &Components, c: usize) -> Result<usize> {
    let k = pointed_k0_component(p, comps, c)?;
    Ok(k.factors.len() + k.free_rank)
}

fn torsion_order(factors: &[BigInt]) -> BigInt {
    factors.iter().product()
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n % p == 0 {
            out.push(p);
            while n % p == 0 {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn valuation(mut n: u64, p: u64) -> u32 {
    let mut v = 0;
    while n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

/// Height sequence of a torsion element in the p-part of `⊕ Z/d_i`:
/// heights of `t, p·t, p²·t, ...` until the element vanishes. Elements of a
/// finite abelian p-group lie in the same automorphism orbit exactly when
/// their height sequences agree.
fn height_sequence(factors: &[u64], class: &[u64], p: u64) -> Vec<u32> {
    let lambdas: Vec<u32> = factors.iter().map(|&d| valuation(d, p)).collect();
    let max_l = lambdas.iter().copied().max().unwrap_or(0);
    let mods: Vec<u64> = lambdas.iter().map(|&l| p.pow(l)).collect();
    let mut x: Vec<u64> = class
        .iter()
        .zip(&mods)
        .map(|(&c, &m)| if m == 0 { 0 } else { c % m })
        .collect();
    let mut seq = Vec::new();
    loop {
        if x.iter().all(|&c| c == 0) {
            return seq;
        }
        // height: max r with p^min(r, λ_i) | x_i for all i
        let mut h = 0u32;
        'outer: while h < max_l {
            for (i, &c) in x.iter().enumerate() {
                let need = p.pow((h + 1).min(lambdas[i]));
                if c % need != 0 {
                    break 'outer;
                }
            }
            h += 1;
        }
        seq.push(h);
        x = x
            .iter()
            .zip(&mods)
            .map(|(&c, &m)| if m == 0 { 0 } else { (c * p) % m })
            .collect();
    }
}

fn same_torsion_orbit(factors: &[u64], a: &[u64], b: &[u64]) -> bool {
    let order: u64 = factors.iter().product();
    for p in prime_factors(order.max(1)) {
        if height_sequence(factors, a, p) != height_sequence(factors, b, p) {
            return false;
        }
    }
    true
}

/// Enumerates all elements of `⊕ Z/d_i` (small groups only).
fn torsion_elements(factors: &[u64]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for &d in factors {
        let mut next = Vec::with_capacity(out.len() * d as usize);
        for base in &out {
            for r in 0..d {
                let mut e = base.clone();
                e.push(r);
                next.push(e);
            }
        }
        out = next;
    }
    out
}

/// Decides whether two pointed K0 data are isomorphic as pointed groups.
///
/// Exact whenever the torsion order is at most `torsion_bound`; returns
/// `Undecided` beyond that, never a wrong verdict. The free coordinates of
/// a class enter only through their greatest common divisor: the orbit of
/// the free part under unimodular changes of basis is classified by the
/// gcd, and shifting the torsion part along the free generators reaches
/// exactly the subgroup `gcd * T`.
pub fn pointed_iso(k1: &PointedK0, k2: &PointedK0, torsion_bound: u64) -> IsoVerdict {
    if k1.factors != k2.factors || k1.free_rank != k2.free_rank {
        return IsoVerdict::NotIso;
    }
    let order = torsion_order(&k1.factors);
    if order > BigInt::from(torsion_bound) {
        return IsoVerdict::Undecided;
    }
    let factors: Vec<u64> = k1
        .factors
        .iter()
        .map(|f| u64::try_from(f.clone()).expect("bounded factor"))
        .collect();
    let reduce = |class: &[BigInt]| -> Vec<u64> {
        class
            .iter()
            .zip(&factors)
            .map(|(c, &d)| u64::try_from(c.mod_floor(&BigInt::from(d))).unwrap())
            .collect()
    };
    let t1 = reduce(&k1.torsion_class);
    let t2 = reduce(&k2.torsion_class);
    if k1.free_rank == 0 {
        return if same_torsion_orbit(&factors, &t1, &t2) {
            IsoVerdict::Iso
        } else {
            IsoVerdict::NotIso
        };
    }
    let gcd_of = |class: &[BigInt]| -> BigInt {
        class
            .iter()
            .fold(BigInt::zero(), |acc, c| acc.gcd(&c.abs()))
    };
    let z1 = gcd_of(&k1.free_class);
    let z2 = gcd_of(&k2.free_class);
    if z1 != z2 {
        return IsoVerdict::NotIso;
    }
    let z = u64::try_from(z1).unwrap_or(u64::MAX);
    // (t1, z·e) maps onto (t2, z·e) iff some torsion element s in the
    // orbit of t1 satisfies s ≡ t2 modulo z·T.
    let congruent = |s: &[u64], t: &[u64]| -> bool {
        s.iter().zip(t).zip(&factors).all(|((&a, &b), &d)| {
            let m = gcd_u64(z % d, d);
            let m = if m == 0 { d } else { m };
            (a + d - b) % d % m == 0
        })
    };
    let found = torsion_elements(&factors)
        .iter()
        .any(|s| same_torsion_orbit(&factors, s, &t1) && congruent(s, &t2));
    if found {
        IsoVerdict::Iso
    } else {
        IsoVerdict::NotIso
    }
}

fn gcd_u64(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd_u64(b, a % b)
    }
}

/// Solves `M x = v` over the integers via back-substitution through the
/// Smith decomposition. The witness is re-verified by exact multiplication.
pub fn solve_in_image(m: &[Vec<i64>], v: &[i64]) -> Result<Option<Vec<BigInt>>> {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    if v.len() != rows {
        return Err(Error::InvalidPair(
            "vector length does not match matrix rows".into(),
        ));
    }
    let s = snf(m)?;
    let uv: Vec<BigInt> = (0..rows)
        .map(|i| (0..rows).map(|j| &s.u[i][j] * BigInt::from(v[j])).sum())
        .collect();
    let rank = s.rank();
    let mut y = vec![BigInt::zero(); cols];
    for i in 0..rows {
        if i < rank {
            let (q, r) = uv[i].div_mod_floor(&s.diag[i]);
            if !r.is_zero() {
                return Ok(None);
            }
            y[i] = q;
        } else if !uv[i].is_zero() {
            return Ok(None);
        }
    }
    let x: Vec<BigInt> = (0..cols)
        .map(|i| (0..cols).map(|j| &s.v[i][j] * &y[j]).sum())
        .collect();
    // Verify the witness.
    for i in 0..rows {
        let got: BigInt = (0..cols).map(|j| BigInt::from(m[i][j]) * &x[j]).sum();
        if got != BigInt::from(v[i]) {
            return Err(Error::Arithmetic(
                "image witness failed verification".into(),
            ));
        }
    }
    Ok(Some(x))
}
