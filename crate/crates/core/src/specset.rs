//! Restriction sets `M` for the standard operators, and finite-prefix
//! spectra (sets of indices of nonzero coefficients).

use std::fmt;
use std::sync::OnceLock;

use num_integer::Integer;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecSetError {
    #[error("restriction set is empty")]
    Empty,
    #[error("restriction set elements must be positive, got {0}")]
    NonPositive(u64),
    #[error("arithmetic progression needs a positive step")]
    ZeroStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    All,
    Odd,
    /// Even numbers `>= 2`.
    Even,
    Primes,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SpecForm {
    /// Sorted, deduplicated, nonempty.
    Explicit(Vec<u64>),
    ArithProg {
        first: u64,
        step: u64,
    },
    /// Union of simpler forms.
    Union(Vec<SpecForm>),
    Builtin(Builtin),
}

/// A nonempty subset of the positive integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpecSet {
    form: SpecForm,
    min: u64,
    gcd: u64,
    finite: bool,
    harmonic_divergent: bool,
}

const SIEVE_LIMIT: usize = 1_000_000;

fn sieve() -> &'static [bool] {
    static SIEVE: OnceLock<Vec<bool>> = OnceLock::new();
    SIEVE.get_or_init(|| {
        let mut is_prime = vec![true; SIEVE_LIMIT + 1];
        is_prime[0] = false;
        is_prime[1] = false;
        let mut i = 2;
        while i * i <= SIEVE_LIMIT {
            if is_prime[i] {
                let mut j = i * i;
                while j <= SIEVE_LIMIT {
                    is_prime[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        is_prime
    })
}

pub fn is_prime(m: u64) -> bool {
    if (m as usize) <= SIEVE_LIMIT {
        return sieve()[m as usize];
    }
    let mut d = 2u64;
    while d * d <= m {
        if m.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

fn form_member(form: &SpecForm, m: u64) -> bool {
    match form {
        SpecForm::Explicit(v) => v.binary_search(&m).is_ok(),
        SpecForm::ArithProg { first, step } => m >= *first && (m - first).is_multiple_of(*step),
        SpecForm::Union(parts) => parts.iter().any(|p| form_member(p, m)),
        SpecForm::Builtin(b) => match b {
            Builtin::All => m >= 1,
            Builtin::Odd => m % 2 == 1,
            Builtin::Even => m >= 2 && m.is_multiple_of(2),
            Builtin::Primes => is_prime(m),
        },
    }
}

fn form_attrs(form: &SpecForm) -> (u64, u64, bool) {
    // (min, gcd, finite)
    match form {
        SpecForm::Explicit(v) => (v[0], v.iter().fold(0, |g, &x| g.gcd(&x)), true),
        SpecForm::ArithProg { first, step } => (*first, first.gcd(step), false),
        SpecForm::Union(parts) => parts
            .iter()
            .map(form_attrs)
            .fold((u64::MAX, 0, true), |(m, g, f), (pm, pg, pf)| (m.min(pm), g.gcd(&pg), f && pf)),
        SpecForm::Builtin(b) => match b {
            Builtin::All => (1, 1, false),
            Builtin::Odd => (1, 1, false),
            Builtin::Even => (2, 2, false),
            Builtin::Primes => (2, 1, false),
        },
    }
}

impl SpecSet {
    fn from_form(form: SpecForm) -> Self {
        let (min, gcd, finite) = form_attrs(&form);
        // every infinite form available here is a union containing an
        // arithmetic progression or the primes, so its harmonic sum diverges
        SpecSet { form, min, gcd, finite, harmonic_divergent: !finite }
    }

    pub fn explicit(values: impl IntoIterator<Item = u64>) -> Result<Self, SpecSetError> {
        let mut v: Vec<u64> = values.into_iter().collect();
        if let Some(&bad) = v.iter().find(|&&x| x == 0) {
            return Err(SpecSetError::NonPositive(bad));
        }
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(SpecSetError::Empty);
        }
        Ok(Self::from_form(SpecForm::Explicit(v)))
    }

    pub fn arith_prog(first: u64, step: u64) -> Result<Self, SpecSetError> {
        if first == 0 {
            return Err(SpecSetError::NonPositive(0));
        }
        if step == 0 {
            return Err(SpecSetError::ZeroStep);
        }
        Ok(Self::from_form(SpecForm::ArithProg { first, step }))
    }

    pub fn builtin(b: Builtin) -> Self {
        Self::from_form(SpecForm::Builtin(b))
    }

    pub fn all() -> Self {
        Self::builtin(Builtin::All)
    }

    /// Union of restriction sets (nested unions are flattened).
    pub fn union(parts: Vec<SpecSet>) -> Result<Self, SpecSetError> {
        let mut forms = Vec::new();
        for p in parts {
            match p.form {
                SpecForm::Union(inner) => forms.extend(inner),
                f => forms.push(f),
            }
        }
        if forms.is_empty() {
            return Err(SpecSetError::Empty);
        }
        Ok(Self::from_form(SpecForm::Union(forms)))
    }

    pub fn form(&self) -> &SpecForm {
        &self.form
    }

    pub fn member(&self, m: u64) -> bool {
        form_member(&self.form, m)
    }

    pub fn min(&self) -> u64 {
        self.min
    }

    /// gcd of all elements.
    pub fn gcd(&self) -> u64 {
        self.gcd
    }

    pub fn is_finite(&self) -> bool {
        self.finite
    }

    /// Whether the sum of `1/m` over the set diverges.
    pub fn harmonic_divergent(&self) -> bool {
        self.harmonic_divergent
    }

    /// Largest element of a finite set.
    pub fn max(&self) -> Option<u64> {
        if !self.finite {
            return None;
        }
        fn fmax(f: &SpecForm) -> u64 {
            match f {
                SpecForm::Explicit(v) => *v.last().unwrap(),
                SpecForm::Union(parts) => parts.iter().map(fmax).max().unwrap(),
                _ => unreachable!("finite forms are explicit"),
            }
        }
        Some(fmax(&self.form))
    }

    /// `M = {1}`: the restriction is the identity operator.
    pub fn is_identity(&self) -> bool {
        matches!(&self.form, SpecForm::Explicit(v) if v == &[1])
    }

    /// `(first, step)` when the set is a single arithmetic progression.
    pub fn as_progression(&self) -> Option<(u64, u64)> {
        match &self.form {
            SpecForm::ArithProg { first, step } => Some((*first, *step)),
            SpecForm::Builtin(Builtin::All) => Some((1, 1)),
            SpecForm::Builtin(Builtin::Odd) => Some((1, 2)),
            SpecForm::Builtin(Builtin::Even) => Some((2, 2)),
            _ => None,
        }
    }

    /// Members `<= limit`, ascending.
    pub fn members_upto(&self, limit: u64) -> impl Iterator<Item = u64> + '_ {
        (self.min..=limit).filter(move |&m| self.member(m))
    }
}

impl fmt::Display for SpecSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write_form(f: &mut fmt::Formatter<'_>, form: &SpecForm) -> fmt::Result {
            match form {
                SpecForm::Explicit(v) => {
                    let items: Vec<String> = v.iter().map(u64::to_string).collect();
                    write!(f, "{{{}}}", items.join(","))
                }
                SpecForm::ArithProg { first, step } => write!(f, "ap({first},{step})"),
                SpecForm::Builtin(b) => f.write_str(match b {
                    Builtin::All => "all",
                    Builtin::Odd => "odd",
                    Builtin::Even => "even",
                    Builtin::Primes => "primes",
                }),
                SpecForm::Union(parts) => {
                    f.write_str("union(")?;
                    for (i, p) in parts.iter().enumerate() {
                        if i > 0 {
                            f.write_str(",")?;
                        }
                        write_form(f, p)?;
                    }
                    f.write_str(")")
                }
            }
        }
        write_form(f, &self.form)
    }
}

/// Membership bitset for the indices `0..=horizon` of a spectrum.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpectrumPrefix {
    bits: Vec<bool>,
}

impl fmt::Debug for SpectrumPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.elements()).finish()?;
        write!(f, "@{}", self.horizon())
    }
}

impl SpectrumPrefix {
    pub fn empty(horizon: usize) -> Self {
        SpectrumPrefix { bits: vec![false; horizon + 1] }
    }

    pub fn from_elements(horizon: usize, elems: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(horizon);
        for e in elems {
            if e <= horizon {
                s.bits[e] = true;
            }
        }
        s
    }

    pub fn horizon(&self) -> usize {
        self.bits.len() - 1
    }

    pub fn contains(&self, n: usize) -> bool {
        self.bits.get(n).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, n: usize) {
        if n <= self.horizon() {
            self.bits[n] = true;
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn min(&self) -> Option<usize> {
        self.bits.iter().position(|&b| b)
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn union(&self, other: &SpectrumPrefix) -> SpectrumPrefix {
        assert_eq!(self.horizon(), other.horizon(), "spectra must share a horizon");
        SpectrumPrefix { bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect() }
    }

    /// Sumset `{i + j}` truncated to the horizon.
    pub fn sum_shift(&self, other: &SpectrumPrefix) -> SpectrumPrefix {
        assert_eq!(self.horizon(), other.horizon(), "spectra must share a horizon");
        let h = self.horizon();
        let mut out = Self::empty(h);
        for i in self.elements() {
            for j in other.elements() {
                if i + j > h {
                    break;
                }
                out.bits[i + j] = true;
            }
        }
        out
    }

    /// `m`-fold sumset; `0 ⊙ J = {0}`.
    pub fn odot(&self, m: usize) -> SpectrumPrefix {
        let mut acc = Self::from_elements(self.horizon(), [0]);
        for _ in 0..m {
            acc = acc.sum_shift(self);
        }
        acc
    }

    /// Translate by `delta`, dropping elements that fall outside `0..=horizon`.
    pub fn shift(&self, delta: isize) -> SpectrumPrefix {
        let h = self.horizon() as isize;
        Self::from_elements(
            self.horizon(),
            self.elements().map(|e| e as isize + delta).filter(|&e| (0..=h).contains(&e)).map(|e| e as usize),
        )
    }

    /// gcd of `{j - shift}` over the elements; 0 for an empty prefix.
    pub fn gcd_of(&self, shift: usize) -> u64 {
        self.elements().fold(0u64, |g, j| {
            assert!(j >= shift, "shift exceeds an element of the spectrum");
            g.gcd(&((j - shift) as u64))
        })
    }
}
