//! Decimal fixed-point token amounts.
//!
//! Every money quantity in the engine (reserve sizes, loans, reward pool,
//! distributions, credits) is an [`Amount`]: a signed integer count of
//! `10^-18` units. Addition and subtraction are exact; multiplication and
//! division go through a 256-bit intermediate and truncate toward zero.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use ethnum::I256;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

/// Number of fractional decimal digits.
pub const DECIMALS: u32 = 18;

/// Raw units per whole token.
pub const SCALE: i128 = 1_000_000_000_000_000_000;

/// Default absolute tolerance for amount comparisons, in whole tokens.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(i128);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseAmountError {
    #[error("empty amount")]
    Empty,
    #[error("invalid character in amount `{0}`")]
    InvalidDigit(String),
    #[error("more than {DECIMALS} fractional digits in `{0}`")]
    TooPrecise(String),
    #[error("amount `{0}` out of range")]
    Overflow(String),
}

impl Amount {
    pub const ZERO: Amount = Amount(0);
    pub const ONE: Amount = Amount(SCALE);
    pub const MAX: Amount = Amount(i128::MAX);

    pub const fn from_raw(raw: i128) -> Self {
        Amount(raw)
    }

    pub const fn raw(self) -> i128 {
        self.0
    }

    pub const fn from_int(whole: i64) -> Self {
        Amount(whole as i128 * SCALE)
    }

    /// Nearest representable amount. Non-finite input saturates (NaN maps to zero).
    pub fn from_f64(value: f64) -> Self {
        if value.is_nan() {
            return Amount::ZERO;
        }
        let scaled = (value * SCALE as f64).round();
        if scaled >= i128::MAX as f64 {
            Amount(i128::MAX)
        } else if scaled <= i128::MIN as f64 {
            Amount(i128::MIN)
        } else {
            Amount(scaled as i128)
        }
    }

    pub fn to_f64(self) -> f64 {
        let whole = self.0 / SCALE;
        let frac = self.0 % SCALE;
        whole as f64 + frac as f64 / SCALE as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn abs(self) -> Self {
        Amount(self.0.abs())
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    /// `self - rhs`, floored at zero.
    pub fn saturating_sub_floor(self, rhs: Amount) -> Amount {
        (self - rhs).max(Amount::ZERO)
    }

    /// `self * rhs` in fixed point, truncated toward zero.
    pub fn mul(self, rhs: Amount) -> Amount {
        self.mul_div(rhs, Amount::ONE)
            .expect("fixed-point product out of range")
    }

    /// `self * factor`, with `factor` first rounded to 18 decimals.
    pub fn mul_f64(self, factor: f64) -> Amount {
        self.mul(Amount::from_f64(factor))
    }

    /// `self / rhs` in fixed point; `None` on division by zero or overflow.
    pub fn checked_div(self, rhs: Amount) -> Option<Amount> {
        self.mul_div(Amount::ONE, rhs)
    }

    /// `self * num / den` with a 256-bit intermediate, truncated toward zero.
    pub fn mul_div(self, num: Amount, den: Amount) -> Option<Amount> {
        if den.0 == 0 {
            return None;
        }
        let wide = I256::from(self.0) * I256::from(num.0) / I256::from(den.0);
        i128::try_from(wide).ok().map(Amount)
    }

    /// `self / rhs` as a float ratio; `None` when `rhs` is zero.
    pub fn ratio(self, rhs: Amount) -> Option<f64> {
        if rhs.0 == 0 {
            None
        } else {
            Some(self.to_f64() / rhs.to_f64())
        }
    }

    pub fn approx_eq(self, other: Amount, tol: f64) -> bool {
        (self - other).abs().to_f64() <= tol
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0.checked_add(rhs.0).expect("amount overflow"))
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0.checked_sub(rhs.0).expect("amount overflow"))
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        *self = *self + rhs;
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        *self = *self - rhs;
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.copied().sum()
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let magnitude = self.0.unsigned_abs();
        let whole = magnitude / SCALE as u128;
        let frac = magnitude % SCALE as u128;
        if frac == 0 {
            write!(f, "{sign}{whole}")
        } else {
            let digits = format!("{frac:018}");
            write!(f, "{sign}{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Amount({self})")
    }
}

impl FromStr for Amount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseAmountError::Empty);
        }
        let (negative, body) = match s.as_bytes()[0] {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(ParseAmountError::InvalidDigit(s.to_owned()));
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit() || b == b'_');
        if !all_digits(int_part) || !all_digits(frac_part) {
            return Err(ParseAmountError::InvalidDigit(s.to_owned()));
        }
        let int_clean: String = int_part.chars().filter(|c| *c != '_').collect();
        let frac_clean: String = frac_part.chars().filter(|c| *c != '_').collect();
        if frac_clean.len() > DECIMALS as usize {
            return Err(ParseAmountError::TooPrecise(s.to_owned()));
        }
        let overflow = || ParseAmountError::Overflow(s.to_owned());
        let whole: i128 = if int_clean.is_empty() {
            0
        } else {
            int_clean.parse().map_err(|_| overflow())?
        };
        let frac: i128 = if frac_clean.is_empty() {
            0
        } else {
            let padded = format!("{frac_clean:0<18}");
            padded.parse().map_err(|_| overflow())?
        };
        let raw = whole
            .checked_mul(SCALE)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(overflow)?;
        Ok(Amount(if negative { -raw } else { raw }))
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl de::Visitor<'_> for Visitor {
            type Value = Amount;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal string or an integer")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Amount, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Amount, E> {
                Ok(Amount::from_int(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Amount, E> {
                i64::try_from(v)
                    .map(Amount::from_int)
                    .map_err(|_| E::custom("amount out of range"))
            }
        }

        deserializer.deserialize_any(Visitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_display() {
        let a: Amount = "1234.5".parse().unwrap();
        assert_eq!(a.raw(), 1234 * SCALE + SCALE / 2);
        assert_eq!(a.to_string(), "1234.5");
        assert_eq!("-0.000000000000000001".parse::<Amount>().unwrap().raw(), -1);
        assert_eq!(Amount::from_int(7).to_string(), "7");
        assert!("1.0000000000000000001".parse::<Amount>().is_err());
        assert!("abc".parse::<Amount>().is_err());
        assert!(".".parse::<Amount>().is_err());
    }

    #[test]
    fn mul_and_div_truncate() {
        let a = Amount::from_int(10);
        let third = Amount::ONE.checked_div(Amount::from_int(3)).unwrap();
        assert_eq!(third.raw(), 333_333_333_333_333_333);
        assert_eq!(a.mul(Amount::from_f64(0.25)), "2.5".parse().unwrap());
        assert_eq!(a.checked_div(Amount::ZERO), None);
    }

    #[test]
    fn large_products_do_not_overflow_intermediate() {
        let big = Amount::from_int(1_000_000_000);
        assert_eq!(
            big.mul(big),
            Amount::from_raw(SCALE * 1_000_000_000_000_000_000)
        );
    }

    proptest! {
        #[test]
        fn string_round_trip(raw in any::<i64>(), scale in 0i128..1_000_000) {
            let a = Amount::from_raw(raw as i128 * scale);
            let back: Amount = a.to_string().parse().unwrap();
            prop_assert_eq!(a, back);
        }

        #[test]
        fn mul_div_inverts(a in 1i64..1_000_000_000, b in 1i64..1_000_000) {
            let x = Amount::from_int(a);
            let y = Amount::from_int(b);
            prop_assert_eq!(x.mul(y).checked_div(y).unwrap(), x);
        }
    }
}
