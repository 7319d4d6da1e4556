//! Small helpers around [`BigRational`].

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn frac(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

/// Always renders as `num/den`, including integers (`1/1`).
pub fn fmt_exact(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

/// Parses `num/den` or a bare integer.
pub fn parse_exact(s: &str) -> Option<Rational> {
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(Rational::new(n, d))
        }
        None => s.trim().parse::<BigInt>().ok().map(Rational::from_integer),
    }
}

/// `floor(r * n)` as an integer, for non-negative `r`.
pub fn floor_times(r: &Rational, n: u64) -> u64 {
    let scaled = r * Rational::from_integer(BigInt::from(n));
    scaled
        .floor()
        .to_integer()
        .to_u64()
        .expect("non-negative value that fits in u64")
}

/// Serde adapter writing a rational as its `num/den` string.
pub mod exact_str {
    use super::{fmt_exact, Rational};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&fmt_exact(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_format_round_trips() {
        for r in [frac(3, 10), int(1), zero(), frac(-7, 3)] {
            let s = fmt_exact(&r);
            assert_eq!(parse_exact(&s), Some(r));
        }
        assert_eq!(fmt_exact(&int(1)), "1/1");
        assert_eq!(parse_exact("5"), Some(int(5)));
        assert_eq!(parse_exact("1/0"), None);
    }

    #[test]
    fn floor_times_rounds_down() {
        assert_eq!(floor_times(&frac(3, 10), 4), 1);
        assert_eq!(floor_times(&int(1), 4), 4);
        assert_eq!(floor_times(&frac(1, 4), 4), 1);
    }
}
