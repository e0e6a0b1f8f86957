/// Rounds to 6 significant digits for printing.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x:?}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded:?}")
}

pub fn opt_sig6(x: Option<f64>) -> String {
    x.map_or_else(|| "absent".to_string(), sig6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0.0");
        assert_eq!(sig6(1.0), "1.0");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(-1234567.0), "-1234570.0");
        assert_eq!(sig6(2.5e-9), "2.5e-9");
        assert_eq!(opt_sig6(None), "absent");
    }
}
