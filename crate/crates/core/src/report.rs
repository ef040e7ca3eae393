//! Number formatting shared by every CSV report.

/// Six significant digits, dot decimal separator. Falls back to exponent
/// notation outside `1e-5 ..= 999999`.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

pub fn join_reals(values: &[f64]) -> String {
    values.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_real(0.5982), "0.598200");
        assert_eq!(fmt_real(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_real(1.0), "1.00000");
        assert_eq!(fmt_real(9.999996), "10.0000");
        assert_eq!(fmt_real(-123456.7), "-123457");
        assert_eq!(fmt_real(1234567.0), "1.23457e6");
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(f64::NAN), "nan");
    }
}
