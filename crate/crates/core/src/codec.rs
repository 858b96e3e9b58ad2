//! Balanced-ternary codec.
//!
//! Converts 32-bit fixed-point samples into balanced-ternary digit vectors
//! (most significant digit first) and maps digits onto the switch states of
//! a differential, single-supply ladder: positive digits drive the upper
//! half, negative digits the lower half.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest supported digit count; `(3^39 - 1) / 2` still fits an `i64`.
pub const MAX_DIGITS: usize = 39;

/// Default stage count of the prototype converter.
pub const DEFAULT_DIGITS: usize = 20;

/// Positive full-scale code of the 32-bit sample format.
pub const SAMPLE_FULL_SCALE: i64 = i32::MAX as i64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("digit count {0} outside 1..={MAX_DIGITS}")]
    DigitCount(usize),
    #[error("ternary value {value} outside ±{bound} for {digits} digits")]
    OutOfRange { value: i64, bound: i64, digits: usize },
    #[error("invalid digit character {ch:?} at column {column}")]
    BadDigit { ch: char, column: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One balanced-ternary digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Trit {
    Neg = -1,
    Zero = 0,
    Pos = 1,
}

impl Trit {
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn from_i8(v: i8) -> Option<Trit> {
        match v {
            -1 => Some(Trit::Neg),
            0 => Some(Trit::Zero),
            1 => Some(Trit::Pos),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Trit::Neg => '-',
            Trit::Zero => '0',
            Trit::Pos => '+',
        }
    }

    pub fn from_char(ch: char) -> Option<Trit> {
        match ch {
            '-' => Some(Trit::Neg),
            '0' => Some(Trit::Zero),
            '+' => Some(Trit::Pos),
            _ => None,
        }
    }
}

impl std::ops::Neg for Trit {
    type Output = Trit;

    fn neg(self) -> Trit {
        match self {
            Trit::Neg => Trit::Pos,
            Trit::Zero => Trit::Zero,
            Trit::Pos => Trit::Neg,
        }
    }
}

/// `(3^n - 1) / 2`, the largest magnitude representable with `n` digits.
pub fn max_magnitude(n_digits: usize) -> Result<i64, CodecError> {
    if n_digits == 0 || n_digits > MAX_DIGITS {
        return Err(CodecError::DigitCount(n_digits));
    }
    Ok((3i64.pow(n_digits as u32) - 1) / 2)
}

/// A signed integer code bounded by `±(3^n - 1)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TernaryValue {
    value: i64,
    digits: usize,
}

impl TernaryValue {
    pub fn new(value: i64, digits: usize) -> Result<Self, CodecError> {
        let bound = max_magnitude(digits)?;
        if value.abs() > bound {
            return Err(CodecError::OutOfRange {
                value,
                bound,
                digits,
            });
        }
        Ok(TernaryValue { value, digits })
    }

    pub fn value(self) -> i64 {
        self.value
    }

    pub fn digits(self) -> usize {
        self.digits
    }
}

/// Result of scaling one fixed-point sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scaled {
    pub value: TernaryValue,
    pub clamped: bool,
}

/// Scale a 32-bit sample onto the ternary code range.
///
/// `i32::MAX` maps to `+(3^n - 1)/2`; rounding is to nearest with ties away
/// from zero, which keeps the mapping odd-symmetric. `i32::MIN` lies one code
/// below negative full scale and is clamped.
pub fn scale_sample(sample: i32, n_digits: usize) -> Result<Scaled, CodecError> {
    let bound = max_magnitude(n_digits)?;
    let num = sample as i128 * bound as i128;
    let den = SAMPLE_FULL_SCALE as i128;
    let q = num.abs() / den;
    let r = num.abs() % den;
    let mag = if 2 * r >= den { q + 1 } else { q };
    let mut t = if num < 0 { -mag } else { mag };
    let clamped = t.abs() > bound as i128;
    if clamped {
        t = t.signum() * bound as i128;
    }
    Ok(Scaled {
        value: TernaryValue {
            value: t as i64,
            digits: n_digits,
        },
        clamped,
    })
}

/// Inverse of [`scale_sample`] as a fraction of full scale.
pub fn code_to_fraction(t: TernaryValue) -> f64 {
    let bound = (3i64.pow(t.digits as u32) - 1) / 2;
    t.value as f64 / bound as f64
}

/// Balanced-ternary digits, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DigitVector(Vec<Trit>);

impl DigitVector {
    pub fn zeros(n: usize) -> Self {
        DigitVector(vec![Trit::Zero; n])
    }

    pub fn from_trits(trits: Vec<Trit>) -> Self {
        DigitVector(trits)
    }

    pub fn from_i8s(values: &[i8]) -> Option<Self> {
        values
            .iter()
            .map(|&v| Trit::from_i8(v))
            .collect::<Option<Vec<_>>>()
            .map(DigitVector)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn trits(&self) -> &[Trit] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Trit> + '_ {
        self.0.iter().copied()
    }

    /// Digit-wise negation.
    pub fn negated(&self) -> Self {
        DigitVector(self.0.iter().map(|&t| -t).collect())
    }
}

impl std::ops::Index<usize> for DigitVector {
    type Output = Trit;

    fn index(&self, i: usize) -> &Trit {
        &self.0[i]
    }
}

impl fmt::Display for DigitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for DigitVector {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, CodecError> {
        s.chars()
            .enumerate()
            .map(|(i, ch)| Trit::from_char(ch).ok_or(CodecError::BadDigit { ch, column: i + 1 }))
            .collect::<Result<Vec<_>, _>>()
            .map(DigitVector)
    }
}

/// Sequential conversion by repeated division by three; remainders 0/1/2
/// become digits 0/+1/-1, the last carrying one into the next position.
pub fn to_balanced_ternary(t: i64, n_digits: usize) -> Result<DigitVector, CodecError> {
    let bound = max_magnitude(n_digits)?;
    if t.abs() > bound {
        return Err(CodecError::OutOfRange {
            value: t,
            bound,
            digits: n_digits,
        });
    }
    let mut digits = vec![Trit::Zero; n_digits];
    let mut rest = t;
    for slot in digits.iter_mut().rev() {
        match rest.rem_euclid(3) {
            0 => {}
            1 => {
                *slot = Trit::Pos;
                rest -= 1;
            }
            _ => {
                *slot = Trit::Neg;
                rest += 1;
            }
        }
        rest /= 3;
    }
    debug_assert_eq!(rest, 0);
    Ok(DigitVector(digits))
}

/// Exact digit-weighted sum.
pub fn from_balanced_ternary(d: &DigitVector) -> Result<TernaryValue, CodecError> {
    let n = d.len();
    max_magnitude(n)?;
    let value = d.iter().fold(0i64, |acc, t| acc * 3 + t.value() as i64);
    Ok(TernaryValue { value, digits: n })
}

/// Scale then encode one sample.
pub fn encode_sample(sample: i32, n_digits: usize) -> Result<(DigitVector, bool), CodecError> {
    let scaled = scale_sample(sample, n_digits)?;
    Ok((to_balanced_ternary(scaled.value.value, n_digits)?, scaled.clamped))
}

/// Number of consecutive zero digits from the most significant end. These
/// stages stay grounded and act as a fixed attenuator chain.
pub fn leading_zero_count(d: &DigitVector) -> usize {
    d.iter().take_while(|&t| t == Trit::Zero).count()
}

/// Two-position switch of one half-ladder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Switch {
    High,
    Gnd,
}

/// Switch positions of both halves of a differential ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchStates {
    pub upper: Vec<Switch>,
    pub lower: Vec<Switch>,
}

impl SwitchStates {
    /// True when no stage has both halves driven high.
    pub fn is_consistent(&self) -> bool {
        self.upper.len() == self.lower.len()
            && self
                .upper
                .iter()
                .zip(&self.lower)
                .all(|(u, l)| !(*u == Switch::High && *l == Switch::High))
    }
}

pub fn split_differential(d: &DigitVector) -> SwitchStates {
    let (upper, lower) = d
        .iter()
        .map(|t| match t {
            Trit::Pos => (Switch::High, Switch::Gnd),
            Trit::Neg => (Switch::Gnd, Switch::High),
            Trit::Zero => (Switch::Gnd, Switch::Gnd),
        })
        .unzip();
    SwitchStates { upper, lower }
}

/// Offset-binary code of a sample for an `bits`-wide R-2R converter.
pub fn offset_binary(sample: i32, bits: u32) -> u64 {
    let unsigned = (sample as i64 - i32::MIN as i64) as u64;
    unsigned >> (32 - bits.min(32))
}

/// Number of switches that change between two binary codes.
pub fn binary_toggles(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Number of stages whose digit changes between two ternary words.
pub fn ternary_toggles(a: &DigitVector, b: &DigitVector) -> usize {
    a.iter().zip(b.iter()).filter(|(x, y)| x != y).count()
}

/// Write one dump line per digit vector.
pub fn write_digit_dump<W: std::io::Write>(
    mut out: W,
    words: impl IntoIterator<Item = DigitVector>,
) -> std::io::Result<()> {
    for w in words {
        writeln!(out, "{w}")?;
    }
    Ok(())
}

/// Parse a digit dump; blank lines and `#` comments are skipped, and every
/// word must carry `n_digits` characters.
pub fn parse_digit_dump(text: &str, n_digits: usize) -> Result<Vec<DigitVector>, CodecError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let word = line.parse::<DigitVector>().map_err(|e| CodecError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if word.len() != n_digits {
            return Err(CodecError::Parse {
                line: i + 1,
                message: format!("expected {n_digits} digits, found {}", word.len()),
            });
        }
        out.push(word);
    }
    Ok(out)
}
