//! Exact rational helpers that avoid per-operation gcd reduction.
//!
//! `BigRational` normalizes after every operation, which dominates the cost
//! of long convolutions. These helpers take integer fast paths and let a dot
//! product accumulate unreduced, normalizing once at the end.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

type Q = BigRational;

/// Builds a rational from parts, skipping the gcd when `den == 1`.
pub(crate) fn ratio(num: BigInt, den: BigInt) -> Q {
    if den.is_one() {
        Q::from_integer(num)
    } else {
        Q::new(num, den)
    }
}

pub(crate) fn qmul(a: &Q, b: &Q) -> Q {
    if a.is_integer() && b.is_integer() {
        Q::from_integer(a.numer() * b.numer())
    } else {
        a * b
    }
}

pub(crate) fn qadd(a: &Q, b: &Q) -> Q {
    if a.is_integer() && b.is_integer() {
        Q::from_integer(a.numer() + b.numer())
    } else {
        a + b
    }
}

/// `q / k` for a positive integer `k`.
pub(crate) fn qdiv(q: Q, k: usize) -> Q {
    if k == 1 {
        return q;
    }
    let k = BigInt::from(k);
    let (num, den) = q.into_raw();
    if den.is_one() && (&num % &k).is_zero() {
        Q::from_integer(num / k)
    } else {
        Q::new(num, den * k)
    }
}

/// Unreduced accumulator for sums of rational products. The denominator is
/// kept positive; equal or dividing denominators are merged without a gcd.
#[derive(Debug, Clone)]
pub(crate) struct Dot {
    num: BigInt,
    den: BigInt,
}

impl Dot {
    pub(crate) fn new() -> Self {
        Dot { num: BigInt::zero(), den: BigInt::one() }
    }

    fn add_parts(&mut self, pn: BigInt, pd: &BigInt) {
        if pd == &self.den {
            self.num += pn;
        } else if (&self.den % pd).is_zero() {
            self.num += pn * (&self.den / pd);
        } else if (pd % &self.den).is_zero() {
            let f = pd / &self.den;
            self.num = &self.num * f + pn;
            self.den = pd.clone();
        } else {
            self.num = &self.num * pd + pn * &self.den;
            self.den *= pd;
        }
    }

    pub(crate) fn add(&mut self, x: &Q) {
        if x.is_zero() {
            return;
        }
        if x.is_integer() && self.den.is_one() {
            self.num += x.numer();
        } else {
            self.add_parts(x.numer().clone(), x.denom());
        }
    }

    pub(crate) fn sub(&mut self, x: &Q) {
        if x.is_zero() {
            return;
        }
        if x.is_integer() && self.den.is_one() {
            self.num -= x.numer();
        } else {
            self.add_parts(-x.numer(), x.denom());
        }
    }

    /// Adds `x·y`.
    pub(crate) fn add_prod(&mut self, x: &Q, y: &Q) {
        if x.is_zero() || y.is_zero() {
            return;
        }
        match (x.is_integer(), y.is_integer()) {
            (true, true) if self.den.is_one() => self.num += x.numer() * y.numer(),
            (true, true) => self.add_parts(x.numer() * y.numer(), &BigInt::one()),
            (true, false) => self.add_parts(x.numer() * y.numer(), y.denom()),
            (false, true) => self.add_parts(x.numer() * y.numer(), x.denom()),
            (false, false) => self.add_parts(x.numer() * y.numer(), &(x.denom() * y.denom())),
        }
    }

    /// Adds `k·x·y` for an integer `k`.
    pub(crate) fn add_prod_k(&mut self, k: &BigInt, x: &Q, y: &Q) {
        if x.is_zero() || y.is_zero() || k.is_zero() {
            return;
        }
        if x.is_integer() && y.is_integer() && self.den.is_one() {
            self.num += k * x.numer() * y.numer();
        } else {
            let pd = x.denom() * y.denom();
            self.add_parts(k * x.numer() * y.numer(), &pd);
        }
    }

    pub(crate) fn finish(self) -> Q {
        ratio(self.num, self.den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    #[test]
    fn helpers_match_plain_arithmetic() {
        assert_eq!(qmul(&q(3, 1), &q(4, 1)), q(12, 1));
        assert_eq!(qmul(&q(3, 2), &q(4, 9)), q(2, 3));
        assert_eq!(qadd(&q(1, 2), &q(1, 3)), q(5, 6));
        assert_eq!(qdiv(q(12, 1), 4), q(3, 1));
        assert_eq!(qdiv(q(3, 2), 3), q(1, 2));
        assert_eq!(qdiv(q(5, 1), 2), q(5, 2));
        assert_eq!(ratio(6.into(), 4.into()), q(3, 2));
    }

    proptest! {
        #[test]
        fn dot_matches_reduced_sum(terms in proptest::collection::vec((-50i64..50, 1i64..12, -50i64..50, 1i64..12, 0i64..4), 0..20)) {
            let mut dot = Dot::new();
            let mut want = Q::zero();
            for &(a, b, c, d, k) in &terms {
                let (x, y) = (q(a, b), q(c, d));
                match k {
                    0 => { dot.add(&x); want += &x; }
                    1 => { dot.sub(&x); want -= &x; }
                    2 => { dot.add_prod(&x, &y); want += &x * &y; }
                    _ => { dot.add_prod_k(&BigInt::from(k), &x, &y); want += Q::from_integer(k.into()) * &x * &y; }
                }
            }
            prop_assert_eq!(dot.finish(), want);
        }
    }
}
