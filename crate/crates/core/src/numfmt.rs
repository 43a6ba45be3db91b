//! Canonical decimal formatting shared by the trial files and CSV exports.

/// Significant digits kept by every on-disk number.
pub const SIG_DIGITS: usize = 9;

/// Rounds `v` to [`SIG_DIGITS`] significant digits. Zero (including `-0.0`)
/// maps to `+0.0`; non-finite values pass through.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    if !v.is_finite() {
        return v;
    }
    format!("{:.*e}", SIG_DIGITS - 1, v)
        .parse()
        .expect("scientific notation always parses")
}

/// Formats `v` as a plain decimal with at most [`SIG_DIGITS`] significant
/// digits, e.g. `0.15`, `-3`, `0.000123456789`.
///
/// Formatting is idempotent under parsing: `fmt_num(parse(fmt_num(v))) ==
/// fmt_num(v)`.
pub fn fmt_num(v: f64) -> String {
    let r = round_sig(v);
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}
