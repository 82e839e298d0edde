//! Fixed-decimal rendering of count ratios.
//!
//! Ratios are rounded half-up from the exact integer fraction, never from
//! the `f64`, so `1/40` renders as `2.5` and `2/3` as `66.67`.

/// `num / den * scale` rounded half-up to `decimals` places.
pub fn ratio(num: u64, den: u64, scale: u64, decimals: u32) -> Option<String> {
    if den == 0 {
        return None;
    }
    let unit = 10u128.pow(decimals);
    let scaled = num as u128 * scale as u128 * unit;
    let den = den as u128;
    let rounded = (2 * scaled + den) / (2 * den);
    let whole = rounded / unit;
    if decimals == 0 {
        return Some(whole.to_string());
    }
    let frac = rounded % unit;
    Some(format!("{whole}.{frac:0width$}", width = decimals as usize))
}

/// `num / den` as a percentage with `decimals` places.
pub fn percent(num: u64, den: u64, decimals: u32) -> Option<String> {
    ratio(num, den, 100, decimals)
}
