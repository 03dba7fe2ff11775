//! SI-suffixed number parsing and significant-digit formatting.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse quantity {0:?}")]
pub struct ParseQuantityError(pub String);

/// Parse `4T`, `16e12`, `800G`, `1.5M` or a bare number.
pub fn parse_si(text: &str) -> Result<f64, ParseQuantityError> {
    let t = text.trim();
    let err = || ParseQuantityError(text.to_string());
    let (num, mult) = match t.chars().last() {
        Some(c) if c.is_ascii_alphabetic() && !t.ends_with("inf") => {
            let mult = match c {
                'k' | 'K' => 1e3,
                'M' => 1e6,
                'G' => 1e9,
                'T' => 1e12,
                'P' => 1e15,
                _ => return Err(err()),
            };
            (&t[..t.len() - 1], mult)
        }
        _ => (t, 1.0),
    };
    let v: f64 = num.trim().parse().map_err(|_| err())?;
    Ok(v * mult)
}

/// `value` rounded to `digits` significant digits, trailing zeros trimmed.
pub fn sig_digits(value: f64, digits: usize) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let mut s = format!("{value:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Flop rate with a G or T suffix: values at or above 10^12 print in T.
pub fn format_flops(flops_per_s: f64) -> String {
    let (scaled, unit) = flops_scaled(flops_per_s);
    format!("{} {unit}", sig_digits(scaled, 4))
}

pub(crate) fn flops_scaled(flops_per_s: f64) -> (f64, &'static str) {
    if flops_per_s >= 1e12 {
        (flops_per_s / 1e12, "Tflops")
    } else {
        (flops_per_s / 1e9, "Gflops")
    }
}
