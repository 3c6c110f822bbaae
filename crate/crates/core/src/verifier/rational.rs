//! Exact rational arithmetic for answer comparison.
//!
//! Answers are compared canonically — `1/2`, `0.5`, and `2/4` are the same
//! value — with no floating tolerance anywhere. Values are kept as reduced
//! `i128` fractions; anything that would overflow parses to `None` and the
//! caller scores it as a mismatch.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// A reduced fraction with positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rational {
    num: i128,
    den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.abs()
}

impl Rational {
    /// Reduced fraction; `None` when the denominator is zero.
    pub fn new(num: i128, den: i128) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den);
        if g == 0 {
            return Some(Self { num: 0, den: 1 });
        }
        Some(Self {
            num: sign * (num / g),
            den: (den / g).abs(),
        })
    }

    pub fn from_integer(value: i64) -> Self {
        Self {
            num: value as i128,
            den: 1,
        }
    }

    pub fn numer(&self) -> i128 {
        self.num
    }

    pub fn denom(&self) -> i128 {
        self.den
    }

    pub fn checked_add(&self, other: &Rational) -> Option<Rational> {
        let num = self
            .num
            .checked_mul(other.den)?
            .checked_add(other.num.checked_mul(self.den)?)?;
        let den = self.den.checked_mul(other.den)?;
        Rational::new(num, den)
    }

    /// Parse an integer (`-3`), a decimal (`0.50`, `.5`), or a fraction
    /// (`2/4`, `-1/2`). Whitespace is trimmed; anything else is `None`.
    pub fn parse(text: &str) -> Option<Self> {
        let s = text.trim();
        if s.is_empty() {
            return None;
        }
        let (sign, rest) = match s.as_bytes()[0] {
            b'+' => (1i128, &s[1..]),
            b'-' => (-1i128, &s[1..]),
            _ => (1i128, s),
        };
        if rest.is_empty() {
            return None;
        }
        if let Some((n, d)) = rest.split_once('/') {
            let num = parse_digits(n)?;
            let den = parse_digits(d)?;
            return Rational::new(sign.checked_mul(num)?, den);
        }
        if let Some((int_part, frac_part)) = rest.split_once('.') {
            if frac_part.is_empty() || frac_part.len() > 30 {
                return None;
            }
            let int_val = if int_part.is_empty() {
                0
            } else {
                parse_digits(int_part)?
            };
            let frac_val = parse_digits(frac_part)?;
            let scale = 10i128.checked_pow(frac_part.len() as u32)?;
            let num = int_val.checked_mul(scale)?.checked_add(frac_val)?;
            return Rational::new(sign.checked_mul(num)?, scale);
        }
        let num = parse_digits(rest)?;
        Rational::new(sign.checked_mul(num)?, 1)
    }
}

fn parse_digits(s: &str) -> Option<i128> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut value: i128 = 0;
    for b in s.bytes() {
        value = value.checked_mul(10)?.checked_add((b - b'0') as i128)?;
    }
    Some(value)
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Rational::parse(&s).ok_or_else(|| D::Error::custom(format!("invalid rational: {s:?}")))
    }
}
