//! Exact solution prefixes of `w = Θ(w)` for retro `Θ`.
//!
//! Operators are evaluated by a lazy coefficient engine: every AST node owns
//! a growing coefficient vector, and coefficient `n` of a node is produced from
//! its children's coefficients through online recurrences. A node never reads
//! a child coefficient above the index demanded by the retro-lag analysis, so
//! the solution can be fed back into the w-source one coefficient at a time.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::classify::{check_retro, Retro};
use crate::exact::{qadd, qdiv, qmul, ratio, Dot};
#[cfg(test)]
use crate::series::Coefficient;
use crate::series::{IntSeries, Series, SeriesError};
use crate::specset::SpecSet;
use crate::term::{Generator, StdKind, Term};

type Q = BigRational;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixpointError {
    #[error("operator is not retro, so the recursion has no unique solution")]
    NotRetro,
    #[error("iteration did not stabilize within {0} steps")]
    NonStabilization(usize),
    #[error("iterate {iteration} decreased at index {index}")]
    NonMonotone { iteration: usize, index: usize },
    #[error("fixpoint check failed at index {0}")]
    FixpointMismatch(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// The unique solution of `w = Θ(w)` truncated to order `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPrefix {
    pub series: Series,
    pub order: usize,
    /// Number of `Θ`-applications after which the first `N` coefficients stop
    /// changing. The online solver reports `N`, an upper bound.
    pub stabilized_at: usize,
}

impl SolutionPrefix {
    pub fn coeff(&self, n: usize) -> &Q {
        self.series.coeff(n)
    }

    pub fn is_integral(&self) -> bool {
        self.series.is_integral()
    }

    pub fn int_series(&self) -> Option<IntSeries> {
        self.series.to_int_series()
    }
}

// ---------------------------------------------------------------------------
// number theory helpers

pub(crate) fn totient(mut k: u64) -> u64 {
    let mut result = k;
    let mut p = 2;
    while p * p <= k {
        if k.is_multiple_of(p) {
            while k.is_multiple_of(p) {
                k /= p;
            }
            result -= result / p;
        }
        p += 1;
    }
    if k > 1 {
        result -= result / k;
    }
    result
}

pub(crate) fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut k = 1;
    while k * k <= n {
        if n.is_multiple_of(k) {
            small.push(k);
            if k * k != n {
                large.push(n / k);
            }
        }
        k += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

#[cfg(test)]
fn recip(k: usize) -> Q {
    Q::new(BigInt::one(), BigInt::from(k))
}

#[cfg(test)]
fn int(k: usize) -> Q {
    Q::from_integer(BigInt::from(k))
}

// ---------------------------------------------------------------------------
// engine

const SOURCE: usize = 0;
const INF: usize = usize::MAX;

struct Node {
    coeffs: Vec<Q>,
    val: usize,
    kind: Kind,
}

enum Kind {
    Source,
    Taken,
    Z,
    Const(Generator),
    Scale(Q, usize),
    Add(usize, usize),
    Mul { a: usize, b: usize, va: usize, vb: usize },
    PowSum(PowSum),
    ExpM1(ExpM1),
    MSet(MSet),
    DCycle(DCycle),
    Cycle(Cycle),
}

/// Powers `A^m` of one argument, `m >= 2`, each filled through a common index.
struct PowTable {
    arg: usize,
    va: usize,
    p: Vec<Vec<Q>>,
}

impl PowTable {
    fn new(arg: usize, va: usize) -> Self {
        PowTable { arg, va, p: vec![Vec::new(), Vec::new()] }
    }

    fn get<'a>(&'a self, eng: &'a Engine, m: usize, i: usize) -> &'a Q {
        if m == 1 {
            eng.c(self.arg, i)
        } else {
            &self.p[m][i]
        }
    }

    /// Fills `A^2..=A^m_max` through index `n`; reads `A` only up to `n - va`.
    fn extend(&mut self, eng: &Engine, m_max: usize, n: usize) {
        while self.p.len() <= m_max {
            self.p.push(Vec::new());
        }
        let va = self.va;
        for m in 2..=m_max {
            while self.p[m].len() <= n {
                let i = self.p[m].len();
                let mut s = Dot::new();
                if i >= m.saturating_mul(va) {
                    for j in va..=i - (m - 1) * va {
                        s.add_prod(eng.c(self.arg, j), self.get(eng, m - 1, i - j));
                    }
                }
                self.p[m].push(s.finish());
            }
        }
    }
}

struct PowSum {
    arg: usize,
    va: usize,
    set: SpecSet,
    c: Q,
    cpow: Vec<Q>,
    /// `Some((f, s))` when the set is `{f, f+s, f+2s, ...}`.
    progression: Option<(usize, usize)>,
    table: PowTable,
}

impl PowSum {
    fn cpow(&mut self, m: usize) -> Q {
        while self.cpow.len() <= m {
            let next = self.cpow.last().map_or_else(Q::one, |last| qmul(last, &self.c));
            self.cpow.push(next);
        }
        self.cpow[m].clone()
    }

    fn next(&mut self, eng: &Engine, me: usize, n: usize) -> Q {
        let va = self.va;
        if let Some((f, s)) = self.progression {
            // X = c^f A^f + c^s A^s X
            self.table.extend(eng, f.max(s), n);
            if n < f * va {
                return Q::zero();
            }
            let head = qmul(&self.cpow(f), self.table.get(eng, f, n));
            let mut acc = Dot::new();
            for i in s * va..=n - f * va {
                acc.add_prod(self.table.get(eng, s, i), eng.c(me, n - i));
            }
            qadd(&head, &qmul(&self.cpow(s), &acc.finish()))
        } else {
            let m_max = max_power(&self.set, n, va);
            self.table.extend(eng, m_max, n);
            let mut x = Dot::new();
            for m in self.set.clone().members_upto(m_max as u64) {
                let m = m as usize;
                x.add_prod(&self.cpow(m), self.table.get(eng, m, n));
            }
            x.finish()
        }
    }
}

/// Largest power that can reach index `n`.
fn max_power(set: &SpecSet, n: usize, va: usize) -> usize {
    let cap = set.max().map_or(INF, |m| m as usize);
    cap.min(n / va.max(1))
}

enum MSet {
    /// `H = exp(L) - 1` with `L = Σ A(z^k)/k`; `jl[j]` holds `j·L(j)`, which is
    /// integral whenever `A` is.
    All { arg: usize, jl: Vec<Q> },
    /// `(H₊ ± H₋)/2`, where `H₋` uses `Σ (-1)^k A(z^k)/k`. With `1 ∉ M` the
    /// contribution of `a(n)` is added one step late; it cancels in the output.
    Parity { arg: usize, odd: bool, pending: bool, jlp: Vec<Q>, jlm: Vec<Q>, hp: Vec<Q>, hm: Vec<Q> },
    /// Newton recurrence `m·h_m = Σ_k p_k h_{m-k}`.
    Newton { arg: usize, va: usize, set: SpecSet, h: Vec<Vec<Q>> },
}

impl MSet {
    fn new(arg: usize, va: usize, set: &SpecSet) -> Self {
        match set.as_progression() {
            Some((1, 1)) => MSet::All { arg, jl: vec![Q::zero()] },
            Some((f @ (1 | 2), 2)) => MSet::Parity {
                arg,
                odd: f == 1,
                pending: f == 2,
                jlp: vec![Q::zero()],
                jlm: vec![Q::zero()],
                hp: vec![Q::zero()],
                hm: vec![Q::zero()],
            },
            _ => MSet::Newton { arg, va, set: set.clone(), h: vec![Vec::new(), Vec::new()] },
        }
    }

    fn next(&mut self, eng: &Engine, me: usize, n: usize) -> Q {
        match self {
            MSet::All { arg, jl } => {
                let mut s = Dot::new();
                for k in divisors(n) {
                    let d = n / k;
                    s.add_prod_k(&BigInt::from(d), eng.c(*arg, d), &Q::one());
                }
                jl.push(s.finish());
                exp_step(jl, eng.coeffs(me), n)
            }
            MSet::Parity { arg, odd, pending, jlp, jlm, hp, hm } => {
                if *pending && n >= 2 {
                    let a = eng.c(*arg, n - 1).clone();
                    let ja = qmul(&a, &Q::from_integer(BigInt::from(n - 1)));
                    jlp[n - 1] = qadd(&jlp[n - 1], &ja);
                    jlm[n - 1] = qadd(&jlm[n - 1], &-ja);
                    hp[n - 1] = qadd(&hp[n - 1], &a);
                    hm[n - 1] = qadd(&hm[n - 1], &-a);
                }
                let (mut p, mut m) = (Dot::new(), Dot::new());
                for k in divisors(n) {
                    if *pending && k == 1 {
                        continue;
                    }
                    let d = n / k;
                    let term = qmul(eng.c(*arg, d), &Q::from_integer(BigInt::from(d)));
                    if k % 2 == 1 {
                        m.sub(&term);
                    } else {
                        m.add(&term);
                    }
                    p.add(&term);
                }
                jlp.push(p.finish());
                jlm.push(m.finish());
                let hpn = exp_step(jlp, hp, n);
                let hmn = exp_step(jlm, hm, n);
                hp.push(hpn.clone());
                hm.push(hmn.clone());
                let mut out = Dot::new();
                out.add(&hpn);
                if *odd {
                    out.sub(&hmn);
                } else {
                    out.add(&hmn);
                }
                qdiv(out.finish(), 2)
            }
            MSet::Newton { arg, va, set, h } => {
                let va = *va;
                let m_max = max_power(set, n, va);
                while h.len() <= m_max {
                    h.push(Vec::new());
                }
                for m in 2..=m_max {
                    while h[m].len() <= n {
                        let i = h[m].len();
                        let v = if i < m * va { Q::zero() } else { newton_coeff(eng, *arg, va, h, m, i) };
                        h[m].push(v);
                    }
                }
                let mut x = Dot::new();
                for m in set.members_upto(m_max as u64) {
                    let m = m as usize;
                    x.add(if m == 1 { eng.c(*arg, n) } else { &h[m][n] });
                }
                x.finish()
            }
        }
    }
}

/// Coefficient `n` of `H = exp(L) - 1` from `nH(n) = jl(n) + Σ jl(j)·H(n-j)`,
/// given `jl(1..=n)` and `H(1..n)`.
fn exp_step(jl: &[Q], h: &[Q], n: usize) -> Q {
    let mut s = Dot::new();
    s.add(&jl[n]);
    for j in 1..n {
        s.add_prod(&jl[j], &h[n - j]);
    }
    qdiv(s.finish(), n)
}

fn newton_coeff(eng: &Engine, arg: usize, va: usize, h: &[Vec<Q>], m: usize, i: usize) -> Q {
    let mut s = Dot::new();
    for k in 1..=m {
        let rest = m - k;
        let lo = rest * va;
        if i < lo + k * va {
            continue;
        }
        for j in va..=(i - lo) / k {
            let aj = eng.c(arg, j);
            if aj.is_zero() {
                continue;
            }
            let idx = i - k * j;
            match rest {
                0 => {
                    if idx == 0 {
                        s.add(aj);
                    }
                }
                1 => s.add_prod(aj, eng.c(arg, idx)),
                _ => s.add_prod(aj, &h[rest][idx]),
            }
        }
    }
    qdiv(s.finish(), m)
}

enum DCycle {
    /// `Σ_k φ(k)/k · Lg(z^k)` with `Lg = -log(1 - A)`; `nlg[n]` holds `n·Lg(n)`.
    All {
        arg: usize,
        nlg: Vec<Q>,
    },
    General {
        arg: usize,
        va: usize,
        set: SpecSet,
        table: PowTable,
    },
}

impl DCycle {
    fn new(arg: usize, va: usize, set: &SpecSet) -> Self {
        if set.as_progression() == Some((1, 1)) {
            DCycle::All { arg, nlg: vec![Q::zero()] }
        } else {
            DCycle::General { arg, va, set: set.clone(), table: PowTable::new(arg, va) }
        }
    }

    fn next(&mut self, eng: &Engine, n: usize) -> Q {
        match self {
            DCycle::All { arg, nlg } => {
                // nLg(n) = n·a(n) + Σ_{k<n} kLg(k)·a(n-k)
                let mut s = Dot::new();
                s.add_prod_k(&BigInt::from(n), eng.c(*arg, n), &Q::one());
                for (k, l) in nlg.iter().enumerate().take(n).skip(1) {
                    s.add_prod(l, eng.c(*arg, n - k));
                }
                nlg.push(s.finish());
                let mut d = Dot::new();
                for k in divisors(n) {
                    d.add_prod_k(&BigInt::from(totient(k as u64)), &nlg[n / k], &Q::one());
                }
                qdiv(d.finish(), n)
            }
            DCycle::General { arg: _, va, set, table } => {
                let va = *va;
                table.extend(eng, max_power(set, n, va), n);
                let mut d = Dot::new();
                for k in divisors(n) {
                    let idx = n / k;
                    let phi = BigInt::from(totient(k as u64));
                    for j in 1..=idx / va {
                        if set.member((j * k) as u64) {
                            let w = ratio(phi.clone(), BigInt::from(j * k));
                            d.add_prod(&w, table.get(eng, j, idx));
                        }
                    }
                }
                d.finish()
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CycleShape {
    All,
    Odd,
    Even,
    General,
}

/// `Cycle_M = DCycle_M/2 + S/4` with the reflection part `S`.
struct Cycle {
    arg: usize,
    va: usize,
    dc: usize,
    set: SpecSet,
    shape: CycleShape,
    /// `A²`.
    a2: Vec<Q>,
    /// `p₂/(1 - p₂)` with `p₂ = A(z²)`.
    sg: Vec<Q>,
    /// `p₂^t` for `t >= 1`.
    q: Vec<Vec<Q>>,
}

impl Cycle {
    fn p2(&self, eng: &Engine, i: usize) -> Q {
        if i.is_multiple_of(2) {
            eng.c(self.arg, i / 2).clone()
        } else {
            Q::zero()
        }
    }

    fn q_get(&self, eng: &Engine, t: usize, i: usize) -> Q {
        match t {
            0 => {
                if i == 0 {
                    Q::one()
                } else {
                    Q::zero()
                }
            }
            1 => self.p2(eng, i),
            _ => self.q[t][i].clone(),
        }
    }

    fn next(&mut self, eng: &Engine, n: usize) -> Q {
        let (va, arg) = (self.va, self.arg);
        let a = |i: usize| eng.c(arg, i);
        let mut a2n = Dot::new();
        if n >= 2 * va {
            for j in va..=n - va {
                a2n.add_prod(a(j), a(n - j));
            }
        }
        self.a2.push(a2n.finish());
        let s = match self.shape {
            CycleShape::All | CycleShape::Odd | CycleShape::Even => {
                let mut sgn = Dot::new();
                sgn.add(&self.p2(eng, n));
                if n >= 4 * va {
                    for i in 2 * va..=n - 2 * va {
                        sgn.add_prod(&self.p2(eng, i), &self.sg[n - i]);
                    }
                }
                self.sg.push(sgn.finish());
                let two = BigInt::from(2);
                let one = Q::one();
                // factor·1/(1 - p₂) = factor + factor·sg; `f` adds factor(i)·g
                let with_g = |f: &dyn Fn(&mut Dot, usize, &Q), fval: usize| {
                    let mut acc = Dot::new();
                    f(&mut acc, n, &one);
                    if n >= fval + 2 * va {
                        for i in fval..=n - 2 * va {
                            f(&mut acc, i, &self.sg[n - i]);
                        }
                    }
                    acc
                };
                let acc = match self.shape {
                    CycleShape::All => {
                        let f = |d: &mut Dot, i: usize, g: &Q| {
                            d.add_prod_k(&two, a(i), g);
                            d.add_prod(&self.a2[i], g);
                        };
                        let mut acc = with_g(&f, va);
                        acc.add(&self.sg[n]);
                        acc
                    }
                    CycleShape::Odd => with_g(&|d: &mut Dot, i: usize, g: &Q| d.add_prod_k(&two, a(i), g), va),
                    _ => {
                        let mut acc = with_g(&|d: &mut Dot, i: usize, g: &Q| d.add_prod(&self.a2[i], g), 2 * va);
                        acc.add(&self.sg[n]);
                        acc
                    }
                };
                acc.finish()
            }
            CycleShape::General => {
                let m_max = max_power(&self.set, n, va);
                let t_max = m_max / 2;
                while self.q.len() <= t_max {
                    self.q.push(Vec::new());
                }
                for t in 2..=t_max {
                    while self.q[t].len() <= n {
                        let i = self.q[t].len();
                        let mut v = Dot::new();
                        if i >= 2 * t * va {
                            for j in 2 * va..=i - 2 * (t - 1) * va {
                                v.add_prod(&self.p2(eng, j), &self.q_get(eng, t - 1, i - j));
                            }
                        }
                        self.q[t].push(v.finish());
                    }
                }
                let two = BigInt::from(2);
                let mut s = Dot::new();
                for m in self.set.members_upto(m_max as u64) {
                    let m = m as usize;
                    if m % 2 == 1 {
                        let t = (m - 1) / 2;
                        if n >= va + 2 * t * va {
                            for i in va..=n - 2 * t * va {
                                s.add_prod_k(&two, a(i), &self.q_get(eng, t, n - i));
                            }
                        }
                    } else {
                        let t = (m - 2) / 2;
                        s.add(&self.q_get(eng, t + 1, n));
                        if n >= 2 * va + 2 * t * va {
                            for i in 2 * va..=n - 2 * t * va {
                                s.add_prod(&self.a2[i], &self.q_get(eng, t, n - i));
                            }
                        }
                    }
                }
                s.finish()
            }
        };
        // DCycle/2 + S/4 = (2·DCycle + S)/4
        let mut out = Dot::new();
        out.add_prod_k(&BigInt::from(2), eng.c(self.dc, n), &Q::one());
        out.add(&s);
        qdiv(out.finish(), 4)
    }
}

/// `E = exp(A) - 1` in the factorial-scaled domain `Ê(n) = n!·E(n)`, where
/// `Ê(n) = Â(n) + Σ_k C(n-1, k-1)·Â(k)·Ê(n-k)` stays integral for labelled
/// inputs.
struct ExpM1 {
    arg: usize,
    ahat: Vec<Q>,
    ehat: Vec<Q>,
    fact: Vec<BigInt>,
}

impl ExpM1 {
    fn next(&mut self, eng: &Engine, n: usize) -> Q {
        while self.fact.len() <= n {
            let k = self.fact.len();
            let f = &self.fact[k - 1] * BigInt::from(k);
            self.fact.push(f);
        }
        let fact_n = Q::from_integer(self.fact[n].clone());
        self.ahat.push(qmul(eng.c(self.arg, n), &fact_n));
        let mut s = Dot::new();
        s.add(&self.ahat[n]);
        // binom = C(n-1, k-1)
        let mut binom = BigInt::one();
        for k in 1..n {
            s.add_prod_k(&binom, &self.ahat[k], &self.ehat[n - k]);
            binom = binom * BigInt::from(n - k) / BigInt::from(k);
        }
        let ehat = s.finish();
        let (num, den) = ehat.clone().into_raw();
        self.ehat.push(ehat);
        ratio(num, den * &self.fact[n])
    }
}

pub(crate) struct Engine {
    nodes: Vec<Node>,
    memo: HashMap<(Term, usize), usize>,
}

impl Engine {
    /// `source` holds the known w-coefficients, index 0 included.
    fn new(source: Vec<Q>) -> Self {
        Engine { nodes: vec![Node { coeffs: source, val: 1, kind: Kind::Source }], memo: HashMap::new() }
    }

    fn c(&self, id: usize, i: usize) -> &Q {
        &self.nodes[id].coeffs[i]
    }

    fn coeffs(&self, id: usize) -> &[Q] {
        &self.nodes[id].coeffs
    }

    fn val(&self, id: usize) -> usize {
        self.nodes[id].val
    }

    fn push(&mut self, val: usize, kind: Kind) -> usize {
        self.nodes.push(Node { coeffs: vec![Q::zero()], val, kind });
        self.nodes.len() - 1
    }

    /// Builds `t` with its w-leaves reading node `w`.
    fn build(&mut self, t: &Term, w: usize) -> usize {
        if let Some(&id) = self.memo.get(&(t.clone(), w)) {
            return id;
        }
        let id = match t {
            Term::W => w,
            Term::Z => self.push(1, Kind::Z),
            Term::Const(g) => self.push(g.valuation().unwrap_or(INF), Kind::Const(g.clone())),
            Term::Scale(c, a) => {
                let a = self.build(a, w);
                self.push(self.val(a), Kind::Scale(c.value().clone(), a))
            }
            Term::Add(a, b) => {
                let (a, b) = (self.build(a, w), self.build(b, w));
                self.push(self.val(a).min(self.val(b)), Kind::Add(a, b))
            }
            Term::Mul(a, b) => {
                let (a, b) = (self.build(a, w), self.build(b, w));
                let (va, vb) = (self.val(a), self.val(b));
                self.push(va.saturating_add(vb), Kind::Mul { a, b, va, vb })
            }
            Term::ComposeW { outer, inner } => {
                let inner = self.build(inner, w);
                self.build(outer, inner)
            }
            Term::ExpM1(a) => {
                let a = self.build(a, w);
                let e = ExpM1 { arg: a, ahat: vec![Q::zero()], ehat: vec![Q::zero()], fact: vec![BigInt::one()] };
                self.push(self.val(a), Kind::ExpM1(e))
            }
            Term::Std { set, arg, .. } | Term::PowSum { set, arg, .. } if set.is_identity() => {
                let a = self.build(arg, w);
                match t {
                    Term::PowSum { c, .. } => self.push(self.val(a), Kind::Scale(c.value().clone(), a)),
                    _ => a,
                }
            }
            Term::PowSum { c, set, arg } => self.build_powsum(c.value().clone(), set, arg, w),
            Term::Std { kind, set, arg } => {
                let a = self.build(arg, w);
                let va = self.val(a);
                let val = (set.min() as usize).saturating_mul(va);
                match kind {
                    StdKind::Seq => self.build_powsum(Q::one(), set, arg, w),
                    StdKind::MSet => self.push(val, Kind::MSet(MSet::new(a, va, set))),
                    StdKind::DCycle => self.push(val, Kind::DCycle(DCycle::new(a, va, set))),
                    StdKind::Cycle => {
                        let dc = self.push(val, Kind::DCycle(DCycle::new(a, va, set)));
                        let shape = match set.as_progression() {
                            Some((1, 1)) => CycleShape::All,
                            Some((1, 2)) => CycleShape::Odd,
                            Some((2, 2)) => CycleShape::Even,
                            _ => CycleShape::General,
                        };
                        let cycle = Cycle {
                            arg: a,
                            va,
                            dc,
                            set: set.clone(),
                            shape,
                            a2: vec![Q::zero()],
                            sg: vec![Q::zero()],
                            q: vec![Vec::new(), Vec::new()],
                        };
                        self.push(val, Kind::Cycle(cycle))
                    }
                }
            }
        };
        self.memo.insert((t.clone(), w), id);
        id
    }

    fn build_powsum(&mut self, c: Q, set: &SpecSet, arg: &Term, w: usize) -> usize {
        let a = self.build(arg, w);
        let va = self.val(a);
        let progression = set.as_progression().map(|(f, s)| (f as usize, s as usize));
        let ps = PowSum { arg: a, va, set: set.clone(), c, cpow: Vec::new(), progression, table: PowTable::new(a, va) };
        self.push((set.min() as usize).saturating_mul(va), Kind::PowSum(ps))
    }

    /// Child coefficient ranges needed for coefficient `n` of node `id`.
    fn demands(&self, id: usize, n: usize) -> Vec<(usize, usize)> {
        let strict = |set: &SpecSet| if set.member(1) { n } else { n - 1 };
        match &self.nodes[id].kind {
            Kind::Source | Kind::Taken | Kind::Z | Kind::Const(_) => vec![],
            Kind::Scale(_, a) | Kind::ExpM1(ExpM1 { arg: a, .. }) => vec![(*a, n)],
            Kind::Add(a, b) => vec![(*a, n), (*b, n)],
            Kind::Mul { a, b, va, vb } => vec![(*a, n.saturating_sub(*vb)), (*b, n.saturating_sub(*va))],
            Kind::PowSum(p) => vec![(p.arg, strict(&p.set))],
            Kind::MSet(m) => match m {
                MSet::All { arg, .. } => vec![(*arg, n)],
                MSet::Parity { arg, pending, .. } => vec![(*arg, if *pending { n - 1 } else { n })],
                MSet::Newton { arg, set, .. } => vec![(*arg, strict(set))],
            },
            Kind::DCycle(d) => match d {
                DCycle::All { arg, .. } => vec![(*arg, n)],
                DCycle::General { arg, set, .. } => vec![(*arg, strict(set))],
            },
            Kind::Cycle(c) => vec![(c.dc, n), (c.arg, strict(&c.set))],
        }
    }

    /// Makes coefficients `0..=n` of node `id` available.
    fn ensure(&mut self, id: usize, n: usize) -> Result<(), FixpointError> {
        if id == SOURCE {
            return if self.nodes[SOURCE].coeffs.len() > n { Ok(()) } else { Err(FixpointError::NotRetro) };
        }
        while self.nodes[id].coeffs.len() <= n {
            let i = self.nodes[id].coeffs.len();
            for (child, upto) in self.demands(id, i) {
                if upto >= 1 {
                    self.ensure(child, upto)?;
                }
            }
            let mut kind = std::mem::replace(&mut self.nodes[id].kind, Kind::Taken);
            let v = self.step(&mut kind, id, i);
            self.nodes[id].kind = kind;
            self.nodes[id].coeffs.push(v);
        }
        Ok(())
    }

    fn step(&self, kind: &mut Kind, me: usize, n: usize) -> Q {
        match kind {
            Kind::Source | Kind::Taken => unreachable!("source and detached nodes are never stepped"),
            Kind::Z => {
                if n == 1 {
                    Q::one()
                } else {
                    Q::zero()
                }
            }
            Kind::Const(g) => g.coeff(n),
            Kind::Scale(c, a) => qmul(c, self.c(*a, n)),
            Kind::Add(a, b) => qadd(self.c(*a, n), self.c(*b, n)),
            Kind::Mul { a, b, va, vb } => {
                let mut s = Dot::new();
                if n >= va.saturating_add(*vb) {
                    for j in *va..=n - *vb {
                        s.add_prod(self.c(*a, j), self.c(*b, n - j));
                    }
                }
                s.finish()
            }
            Kind::ExpM1(e) => e.next(self, n),
            Kind::PowSum(p) => p.next(self, me, n),
            Kind::MSet(m) => m.next(self, me, n),
            Kind::DCycle(d) => d.next(self, n),
            Kind::Cycle(c) => c.next(self, n),
        }
    }
}

/// `Θ(input)` truncated to the order of `input`.
pub fn apply_operator(t: &Term, input: &Series) -> Result<Series, FixpointError> {
    let n = input.order();
    let mut eng = Engine::new(input.raw().to_vec());
    let root = eng.build(t, SOURCE);
    eng.ensure(root, n)?;
    Ok(Series::from_raw(eng.nodes[root].coeffs[..=n].to_vec())?)
}

/// Unique solution of `w = t(w)` to order `order`, computed coefficient by coefficient.
pub fn solve(t: &Term, order: usize) -> Result<SolutionPrefix, FixpointError> {
    if order == 0 {
        return Err(SeriesError::ZeroOrder.into());
    }
    if check_retro(t) != Retro::Retro {
        return Err(FixpointError::NotRetro);
    }
    let mut eng = Engine::new(vec![Q::zero()]);
    let root = eng.build(t, SOURCE);
    for n in 1..=order {
        eng.ensure(root, n)?;
        let c = eng.nodes[root].coeffs[n].clone();
        eng.nodes[SOURCE].coeffs.push(c);
    }
    let series = Series::from_raw(std::mem::take(&mut eng.nodes[SOURCE].coeffs))?;
    let check = apply_operator(t, &series)?;
    if let Some(i) = (1..=order).find(|&i| check.coeff(i) != series.coeff(i)) {
        return Err(FixpointError::FixpointMismatch(i));
    }
    Ok(SolutionPrefix { series, order, stabilized_at: order })
}

/// Solution by plain iteration `S ← Θ(S)` from zero, checking that iterates
/// grow coefficientwise. Returns the prefix and the number of iterations.
pub fn solve_by_iteration(t: &Term, order: usize) -> Result<SolutionPrefix, FixpointError> {
    if check_retro(t) != Retro::Retro {
        return Err(FixpointError::NotRetro);
    }
    let mut s = Series::zero(order);
    for iteration in 1..=order + 2 {
        let next = apply_operator(t, &s)?;
        if let Some(index) = (1..=order).find(|&i| next.coeff(i) < s.coeff(i)) {
            return Err(FixpointError::NonMonotone { iteration, index });
        }
        if next == s {
            return Ok(SolutionPrefix { series: s, order, stabilized_at: iteration - 1 });
        }
        s = next;
    }
    Err(FixpointError::NonStabilization(order + 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::mul_raw;
    use crate::specset::Builtin;
    use crate::term::parse;
    use proptest::prelude::*;
    use std::ops::{Add, Mul};

    /// Direct series formulas for every node, independent of the engine.
    mod reference {
        use super::*;

        pub type Raw = Vec<Q>;

        fn zero(n: usize) -> Raw {
            vec![Q::zero(); n + 1]
        }

        fn one(n: usize) -> Raw {
            let mut v = zero(n);
            v[0] = Q::one();
            v
        }

        fn add(a: &Raw, b: &Raw) -> Raw {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        }

        fn scale(c: &Q, a: &Raw) -> Raw {
            a.iter().map(|x| c * x).collect()
        }

        fn mul(a: &Raw, b: &Raw) -> Raw {
            mul_raw(a, b, a.len() - 1)
        }

        fn pow(a: &Raw, m: usize) -> Raw {
            (0..m).fold(one(a.len() - 1), |acc, _| mul(&acc, a))
        }

        fn subst(a: &Raw, k: usize) -> Raw {
            let mut v = zero(a.len() - 1);
            for (i, x) in a.iter().enumerate() {
                if i * k < v.len() {
                    v[i * k] = x.clone();
                }
            }
            v
        }

        fn members(set: &SpecSet, n: usize) -> Vec<usize> {
            set.members_upto(n as u64).map(|m| m as usize).collect()
        }

        fn mset_h(a: &Raw, m_max: usize) -> Vec<Raw> {
            let n = a.len() - 1;
            let mut h = vec![one(n)];
            for m in 1..=m_max {
                let mut acc = zero(n);
                for k in 1..=m {
                    acc = add(&acc, &mul(&subst(a, k), &h[m - k]));
                }
                h.push(scale(&recip(m), &acc));
            }
            h
        }

        fn dcycle(a: &Raw, set: &SpecSet) -> Raw {
            let n = a.len() - 1;
            let mut out = zero(n);
            for k in 1..=n {
                let pk = subst(a, k);
                let phi = Q::new(BigInt::from(totient(k as u64)), BigInt::from(k));
                for j in 1..=n / k {
                    if set.member((j * k) as u64) {
                        out = add(&out, &scale(&(&phi * recip(j)), &pow(&pk, j)));
                    }
                }
            }
            out
        }

        pub fn apply(t: &Term, w: &Raw) -> Raw {
            let n = w.len() - 1;
            match t {
                Term::Z => {
                    let mut v = zero(n);
                    v[1] = Q::one();
                    v
                }
                Term::W => w.clone(),
                Term::Const(g) => (0..=n).map(|i| g.coeff(i)).collect(),
                Term::Scale(c, a) => scale(c.value(), &apply(a, w)),
                Term::Add(a, b) => add(&apply(a, w), &apply(b, w)),
                Term::Mul(a, b) => mul(&apply(a, w), &apply(b, w)),
                Term::ComposeW { outer, inner } => apply(outer, &apply(inner, w)),
                Term::ExpM1(a) => {
                    let a = apply(a, w);
                    let mut out = zero(n);
                    let mut fact = Q::one();
                    for m in 1..=n {
                        fact *= int(m);
                        out = add(&out, &scale(&fact.recip(), &pow(&a, m)));
                    }
                    out
                }
                Term::PowSum { c, set, arg } => {
                    let a = apply(arg, w);
                    members(set, n)
                        .into_iter()
                        .fold(zero(n), |acc, m| add(&acc, &scale(&num_traits::pow(c.value().clone(), m), &pow(&a, m))))
                }
                Term::Std { kind, set, arg } => {
                    let a = apply(arg, w);
                    match kind {
                        StdKind::Seq => members(set, n).into_iter().fold(zero(n), |acc, m| add(&acc, &pow(&a, m))),
                        StdKind::MSet => {
                            let h = mset_h(&a, n);
                            members(set, n).into_iter().fold(zero(n), |acc, m| add(&acc, &h[m]))
                        }
                        StdKind::DCycle => dcycle(&a, set),
                        StdKind::Cycle => {
                            let p2 = subst(&a, 2);
                            let mut s = zero(n);
                            for m in members(set, n) {
                                let f = if m % 2 == 1 {
                                    scale(&int(2), &mul(&a, &pow(&p2, (m - 1) / 2)))
                                } else {
                                    add(&mul(&mul(&a, &a), &pow(&p2, (m - 2) / 2)), &pow(&p2, m / 2))
                                };
                                s = add(&s, &f);
                            }
                            add(&scale(&recip(2), &dcycle(&a, set)), &scale(&recip(4), &s))
                        }
                    }
                }
            }
        }
    }

    fn sets() -> Vec<SpecSet> {
        vec![
            SpecSet::all(),
            SpecSet::builtin(Builtin::Odd),
            SpecSet::builtin(Builtin::Even),
            SpecSet::builtin(Builtin::Primes),
            SpecSet::explicit([2, 3]).unwrap(),
            SpecSet::explicit([1, 4]).unwrap(),
            SpecSet::explicit([3]).unwrap(),
            SpecSet::arith_prog(2, 3).unwrap(),
            SpecSet::arith_prog(3, 1).unwrap(),
            SpecSet::union(vec![SpecSet::explicit([2]).unwrap(), SpecSet::builtin(Builtin::Primes)]).unwrap(),
        ]
    }

    fn kinds() -> [StdKind; 4] {
        [StdKind::MSet, StdKind::Cycle, StdKind::DCycle, StdKind::Seq]
    }

    #[test]
    fn engine_matches_reference_for_every_standard_operator() {
        let inputs = [
            Series::from_integers(&[1, 2, 0, 3, 1, 0, 0, 2, 1, 1, 0, 4]),
            Series::from_integers(&[0, 1, 1, 0, 2, 1, 0, 0, 3, 1, 1, 1]),
        ];
        for input in &inputs {
            for set in sets() {
                for kind in kinds() {
                    for arg in [Term::W, parse("z*w").unwrap(), parse("w + w*w").unwrap()] {
                        let t = Term::std(kind, set.clone(), arg);
                        let got = apply_operator(&t, input).unwrap();
                        let want = reference::apply(&t, &input.raw().to_vec());
                        assert_eq!(got.raw(), &want[..], "{t} on {input:?}");
                    }
                }
                let t = Term::powsum(Coefficient::ratio(3, 2), set.clone(), Term::W);
                assert_eq!(
                    apply_operator(&t, input).unwrap().raw(),
                    &reference::apply(&t, &input.raw().to_vec())[..],
                    "{t}"
                );
            }
        }
    }

    #[test]
    fn solve_matches_reference_iteration_for_every_standard_operator() {
        for set in sets() {
            for kind in kinds() {
                // z + z·Δ(w) and z + Δ(w) (the latter only when retro)
                for t in [
                    Term::add(Term::Z, Term::mul(Term::Z, Term::std(kind, set.clone(), Term::W))),
                    Term::add(Term::Z, Term::std(kind, set.clone(), Term::W)),
                ] {
                    if check_retro(&t) != Retro::Retro {
                        continue;
                    }
                    let n = 14;
                    let sol = solve(&t, n).unwrap();
                    let mut s = reference::Raw::from(vec![Q::zero(); n + 1]);
                    for _ in 0..=n {
                        s = reference::apply(&t, &s);
                    }
                    assert_eq!(sol.series.raw(), &s[..], "{t}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn apply_matches_reference_on_random_inputs(
            coeffs in proptest::collection::vec(0u64..4, 10),
            set_idx in 0usize..10,
            kind_idx in 0usize..4,
        ) {
            prop_assume!(coeffs.iter().any(|&c| c > 0));
            let input = Series::from_integers(&coeffs);
            let t = Term::add(Term::Z, Term::std(kinds()[kind_idx], sets()[set_idx].clone(), parse("z + w*w").unwrap()));
            let got = apply_operator(&t, &input).unwrap();
            prop_assert_eq!(got.raw(), &reference::apply(&t, &input.raw().to_vec())[..]);
        }
    }

    fn solve_str(s: &str, n: usize) -> Vec<i64> {
        let sol = solve(&parse(s).unwrap(), n).unwrap();
        sol.series.coefficients().iter().map(|c| c.to_integer().try_into().unwrap()).collect()
    }

    fn apply_str(s: &str, input: &[u64]) -> Series {
        apply_operator(&parse(s).unwrap(), &Series::from_integers(input)).unwrap()
    }

    #[test]
    fn totient_and_divisors() {
        let phi: Vec<u64> = (1..=12).map(totient).collect();
        assert_eq!(phi, vec![1, 1, 2, 2, 4, 2, 6, 4, 6, 4, 10, 4]);
        assert_eq!(divisors(12), vec![1, 2, 3, 4, 6, 12]);
        assert_eq!(divisors(1), vec![1]);
        assert_eq!(divisors(49), vec![1, 7, 49]);
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply_str("Seq(w)", &[1, 0, 0, 0]), Series::from_integers(&[1, 1, 1, 1]));
        // ((z+z²)² + (z²+z⁴))/2; weight 4 admits only the multiset {z², z²}
        assert_eq!(apply_str("MSet[{2}](w)", &[1, 1, 0, 0]), Series::from_integers(&[0, 1, 1, 1]));
        assert_eq!(apply_str("DCycle[{3}](w)", &[1, 0, 0]), Series::from_integers(&[0, 0, 1]));
    }

    #[test]
    fn solve_examples() {
        assert_eq!(solve_str("z + z*Seq(w)", 8), vec![1, 1, 2, 5, 14, 42, 132, 429]);
        assert_eq!(solve_str("z + z*w^2", 7), vec![1, 0, 1, 0, 2, 0, 5]);
        assert_eq!(solve_str("z + z*MSet(w)", 10), vec![1, 1, 2, 4, 9, 20, 48, 115, 286, 719]);
    }

    #[test]
    fn solve_rejects_weakly_retro() {
        assert_eq!(solve(&parse("z + Seq(w)").unwrap(), 5), Err(FixpointError::NotRetro));
    }

    #[test]
    fn iteration_agrees_with_online() {
        for s in ["z + z*Seq(w)", "z + z*MSet(w)", "z + z*w^2", "z + MSet_2(w)"] {
            let t = parse(s).unwrap();
            let a = solve(&t, 12).unwrap();
            let b = solve_by_iteration(&t, 12).unwrap();
            assert_eq!(a.series, b.series, "{s}");
            assert!(b.stabilized_at <= 13);
        }
    }
}
