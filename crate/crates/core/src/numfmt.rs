//! Fixed-precision number formatting for text reports.

/// Six significant digits with trailing zeros kept (C's `%#.6g`):
/// `0.3971` prints as `0.397100`, `1e-5` as `1.00000e-05`.
pub fn format_sig6(value: f64) -> String {
    if !value.is_finite() {
        return if value.is_nan() { "nan".into() } else if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if value == 0.0 {
        return if value.is_sign_negative() { "-0.00000".into() } else { "0.00000".into() };
    }
    // exponent after rounding to six significant digits
    let sci = format!("{value:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        format!("{value:.decimals$}")
    }
}
