//! Text encoding for numbers in CSV files and reports: rounded to 10
//! significant digits, then printed in the shortest form that reads back to
//! the rounded value. JSON artifacts keep full precision.

pub const SIGNIFICANT_DIGITS: usize = 10;

/// `x` rounded to 10 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    // decimal rounding through the formatter avoids the error of scaling by 10^k
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

pub fn fmt_num(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        // no "-0"
        return "0".to_string();
    }
    let plain = r.to_string();
    let sci = format!("{r:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}

/// Like [`fmt_num`] with an explicit `+` on positive values, for deltas.
pub fn fmt_signed(x: f64) -> String {
    let s = fmt_num(x);
    if round_sig(x) > 0.0 {
        format!("+{s}")
    } else {
        s
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}
