use crate::scalar::Scalar;

/// Highest supported number of decimal places.
pub const MAX_PRECISION: usize = 10;

/// Fixed-point rendering joined by `", "`. Rounds half away from zero on the exact
/// binary value and never prints a negative zero. Precision is clamped to
/// [`MAX_PRECISION`].
pub fn format_numbers<T: Scalar>(values: &[T], precision: usize) -> String {
    values
        .iter()
        .map(|v| format_number(v.as_f64(), precision))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_number(v: f64, precision: usize) -> String {
    let p = precision.min(MAX_PRECISION);
    if !v.is_finite() {
        return format!("{v}");
    }
    // std rounds exact ties to even
    let mut s = if is_exact_tie(v, p) {
        round_tie_away(v, p)
    } else {
        format!("{:.*}", p, v)
    };
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s.remove(0);
    }
    s
}

/// True when the exact decimal expansion of `v` is `d...d5` at digit `p + 1`
/// followed only by zeros.
fn is_exact_tie(v: f64, p: usize) -> bool {
    let probe = format!("{:.*}", p + 1, v.abs());
    if !probe.ends_with('5') {
        return false;
    }
    // f64 expansions terminate within 1075 fractional digits
    let exact = format!("{:.1075}", v.abs());
    let frac = exact.split('.').nth(1).unwrap_or("");
    frac.len() > p && frac.as_bytes()[p] == b'5' && frac[p + 1..].bytes().all(|b| b == b'0')
}

/// Decimal string arithmetic on the exact expansion: truncate to `p` digits and
/// increment the magnitude by one unit in the last place.
fn round_tie_away(v: f64, p: usize) -> String {
    let exact = format!("{:.*}", p + 1, v.abs());
    let truncated = &exact[..exact.len() - 1];
    let truncated = truncated.strip_suffix('.').unwrap_or(truncated);
    let mut digits: Vec<u8> = truncated.bytes().collect();
    let mut i = digits.len();
    loop {
        if i == 0 {
            digits.insert(0, b'1');
            break;
        }
        i -= 1;
        match digits[i] {
            b'.' => continue,
            b'9' => digits[i] = b'0',
            d => {
                digits[i] = d + 1;
                break;
            }
        }
    }
    let mut s = String::from_utf8(digits).expect("ascii digits");
    if v.is_sign_negative() {
        s.insert(0, '-');
    }
    s
}

/// Parses a comma-separated list of numbers. Returns the offending token on failure.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|tok| {
            let t = tok.trim().trim_matches(|c| c == '`' || c == '*');
            let t = t.replace('\u{2212}', "-");
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| tok.trim().to_string())
        })
        .collect()
}
