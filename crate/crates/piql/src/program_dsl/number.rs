//! Canonical numeric format for program text: shortest decimal with at most
//! three fractional digits, rounded half-to-even. Quantization is idempotent
//! and `parse(format(v))` recovers exactly `quantize(v)`.

/// Rounds to the canonical 3-fractional-digit grid (half-to-even).
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    let k = (v * 1000.0).round_ties_even();
    k / 1000.0
}

/// Shortest decimal rendering of the quantized value; no trailing zeros,
/// no negative zero.
pub fn format_canonical(v: f64) -> String {
    let k = (v * 1000.0).round_ties_even() as i64;
    if k == 0 {
        return "0".to_string();
    }
    let sign = if k < 0 { "-" } else { "" };
    let a = k.unsigned_abs();
    let int = a / 1000;
    let frac = a % 1000;
    if frac == 0 {
        format!("{sign}{int}")
    } else {
        let digits = format!("{frac:03}");
        format!("{sign}{int}.{}", digits.trim_end_matches('0'))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_idempotent() {
        for v in [
            0.0, 1.0, -1.9, 0.2165, 1234.56789, -0.0004, 0.0005, 0.0015, 3.0004999, -6.41,
        ] {
            let q = quantize(v);
            assert_eq!(quantize(q), q, "v = {v}");
        }
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_canonical(-1.9), "-1.9");
        assert_eq!(format_canonical(1.0), "1");
        assert_eq!(format_canonical(0.216), "0.216");
        assert_eq!(format_canonical(2.000), "2");
        assert_eq!(format_canonical(0.0), "0");
        assert_eq!(format_canonical(-0.0001), "0");
        assert_eq!(format_canonical(6.41), "6.41");
        assert_eq!(format_canonical(5.0), "5");
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(format_canonical(0.0025), "0.002");
        assert_eq!(format_canonical(0.0035), "0.004");
    }

    #[test]
    fn parse_of_format_recovers_quantized_value() {
        let mut v = -7.77;
        for _ in 0..2000 {
            v += 0.00773;
            let s = format_canonical(v);
            let parsed: f64 = s.parse().unwrap();
            assert_eq!(parsed, quantize(v), "v = {v}, s = {s}");
        }
    }

    proptest::proptest! {
        #[test]
        fn quantization_round_trips_through_text(v in -1.0e6f64..1.0e6) {
            let s = format_canonical(v);
            let parsed: f64 = s.parse().unwrap();
            proptest::prop_assert_eq!(parsed, quantize(v));
            proptest::prop_assert_eq!(quantize(parsed), parsed);
        }
    }
}
