//! Scalar abstraction shared by the geometry code.
//!
//! Box normalization, IoU and overlay blending are written once against
//! [`Scalar`] and instantiated for `f32`, `f64` and the exact [`Rational`]
//! type. Correlation scores need square roots and use [`FloatScalar`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, Num};

/// Exact rational scalar.
pub type Rational = Ratio<i64>;

const MICROS: i128 = 1_000_000;

/// Numeric type usable for normalized coordinates and ratios.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `num / den`, exactly when the type allows it.
    fn from_ratio(num: i64, den: i64) -> Self;

    fn to_f64(self) -> f64;

    /// Largest integer not greater than `self`.
    fn floor_i64(self) -> i64;

    /// Value scaled by 10^6 and rounded half-to-even, computed from the exact
    /// value held by `self` (not from a decimal rendering of it).
    fn to_micros(self) -> i64;

    /// Parses a plain decimal literal such as `0.350000` or `-1.5`.
    fn parse_decimal(s: &str) -> Option<Self>;

    fn from_int(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }

    fn half() -> Self {
        Self::from_ratio(1, 2)
    }

    /// Nearest integer, ties toward positive infinity.
    fn round_half_up(self) -> i64 {
        (self + Self::half()).floor_i64()
    }

    /// Nearest integer, ties toward negative infinity.
    fn round_half_down(self) -> i64 {
        -(Self::half() - self).floor_i64()
    }
}

/// Floating-point scalar (`f32`/`f64`).
pub trait FloatScalar: Scalar + Float {}

impl<T: Scalar + Float> FloatScalar for T {}

/// Rounds `num / den` half-to-even. `den` must be positive.
fn div_half_even(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

fn saturate(v: i128) -> i64 {
    v.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

/// Exact half-even micro rounding of `sign * mantissa * 2^exp`.
fn float_micros(mantissa: u64, exp: i16, sign: i8) -> i64 {
    let scaled = mantissa as i128 * MICROS;
    let magnitude = if exp >= 0 {
        if exp > 40 {
            i128::MAX
        } else {
            scaled.saturating_mul(1i128 << exp)
        }
    } else {
        let shift = (-exp) as u32;
        if shift >= 100 {
            0
        } else {
            div_half_even(scaled, 1i128 << shift)
        }
    };
    saturate(if sign < 0 { -magnitude } else { magnitude })
}

macro_rules! impl_float_scalar {
    ($($t:ty),*) => {
        $(
            impl Scalar for $t {
                #[inline]
                fn from_ratio(num: i64, den: i64) -> Self {
                    (num as f64 / den as f64) as $t
                }
                #[inline]
                fn to_f64(self) -> f64 {
                    self as f64
                }
                #[inline]
                fn floor_i64(self) -> i64 {
                    Float::floor(self) as i64
                }
                fn to_micros(self) -> i64 {
                    if !Float::is_finite(self) {
                        return if Float::is_nan(self) { 0 } else if self > 0.0 { i64::MAX } else { i64::MIN };
                    }
                    let (m, e, s) = Float::integer_decode(self);
                    float_micros(m, e, s)
                }
                fn parse_decimal(s: &str) -> Option<Self> {
                    s.trim().parse::<$t>().ok().filter(|v| Float::is_finite(*v))
                }
            }
        )*
    };
}

impl_float_scalar!(f32, f64);

impl Scalar for Rational {
    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn floor_i64(self) -> i64 {
        self.floor().to_integer()
    }

    fn to_micros(self) -> i64 {
        let num = *self.numer() as i128 * MICROS;
        let den = *self.denom() as i128;
        saturate(div_half_even(num, den))
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        if frac_part.len() > 15 {
            return None;
        }
        let den = 10i64.checked_pow(frac_part.len() as u32)?;
        let int_val: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
        let frac_val: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
        let num = int_val.checked_mul(den)?.checked_add(frac_val)?;
        let value = Ratio::new(num, den);
        Some(if negative { -value } else { value })
    }
}

/// Renders a micro-unit integer as a fixed six-decimal string.
pub fn format_micros(micros: i64) -> String {
    let sign = if micros < 0 { "-" } else { "" };
    let abs = micros.unsigned_abs();
    format!("{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
}

/// Six-decimal rendering with half-to-even rounding of the exact value.
pub fn format_fixed6<T: Scalar>(value: T) -> String {
    format_micros(value.to_micros())
}

/// Absolute value helper usable for every [`Scalar`].
pub fn abs<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        T::zero() - v
    } else {
        v
    }
}
