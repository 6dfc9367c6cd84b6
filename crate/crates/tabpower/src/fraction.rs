//! Exact parsing of numbers written as fractions or decimals.

use std::str::FromStr;

// integers up to 2^53 convert to f64 exactly, so one division rounds once
const EXACT_INT_LIMIT: u64 = 1 << 53;

/// A number given on the command line, keeping its original spelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Fraction {
    text: String,
    value: f64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn zero() -> Self {
        Self {
            text: "0".into(),
            value: 0.0,
        }
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

fn parse_int(s: &str) -> Result<u64, String> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("{s:?} is not a nonnegative integer"));
    }
    let v: u64 = s.parse().map_err(|_| format!("{s:?} is too large"))?;
    if v > EXACT_INT_LIMIT {
        return Err(format!("{s:?} exceeds 2^53"));
    }
    Ok(v)
}

impl FromStr for Fraction {
    type Err = String;

    /// Accepts `a/b` with integer `a`, `b` (optionally signed) or a
    /// decimal literal. Both forms are rounded to `f64` exactly once.
    fn from_str(raw: &str) -> Result<Self, String> {
        let s = raw.trim();
        let value = match s.split_once('/') {
            Some((num, den)) => {
                let (neg, num) = match num.trim().strip_prefix('-') {
                    Some(rest) => (true, rest),
                    None => (false, num.trim().strip_prefix('+').unwrap_or(num.trim())),
                };
                let a = parse_int(num)?;
                let b = parse_int(den.trim())?;
                if b == 0 {
                    return Err(format!("{s:?} has a zero denominator"));
                }
                let v = a as f64 / b as f64;
                if neg {
                    -v
                } else {
                    v
                }
            }
            None => {
                let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
                if !v.is_finite() {
                    return Err(format!("{s:?} is not finite"));
                }
                v
            }
        };
        Ok(Self {
            text: s.to_string(),
            value,
        })
    }
}
