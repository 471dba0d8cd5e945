//! Hexadecimal floating-point literals (`0x1.8p+1`), used wherever text files
//! must round-trip `f64` values bit-exactly.

/// Formats `value` as a C99-style hexadecimal float literal.
pub fn format(value: f64) -> String {
    if value.is_nan() {
        return "nan".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let bits = value.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut digits = format!("{mantissa:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses a hexadecimal float literal; plain decimal literals are accepted too.
pub fn parse(text: &str) -> Option<f64> {
    let text = text.trim();
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let Some(hex) = body
        .strip_prefix("0x")
        .or_else(|| body.strip_prefix("0X"))
    else {
        return text.parse::<f64>().ok();
    };
    let (mant, exp) = hex.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    // Accumulate up to 64 significant bits; literals we write never exceed 53.
    let mut acc: u64 = 0;
    let mut shift: i64 = 0;
    for c in int_part.chars() {
        let d = c.to_digit(16)? as u64;
        if acc >> 60 != 0 {
            return None;
        }
        acc = (acc << 4) | d;
    }
    for c in frac_part.chars() {
        let d = c.to_digit(16)? as u64;
        if acc >> 60 != 0 {
            return None;
        }
        acc = (acc << 4) | d;
        shift -= 4;
    }
    let magnitude = scale_pow2(acc as f64, exp + shift);
    Some(if negative { -magnitude } else { magnitude })
}

// acc fits in 53 bits for everything `format` emits, so the only rounding is in
// the final scaling, which is exact unless the result is subnormal.
fn scale_pow2(mut value: f64, mut exp: i64) -> f64 {
    while exp > 1000 {
        value *= 2f64.powi(1000);
        exp -= 1000;
    }
    while exp < -1000 {
        value *= 2f64.powi(-1000);
        exp += 1000;
    }
    value * 2f64.powi(exp as i32)
}
