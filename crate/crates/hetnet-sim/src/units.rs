//! Decibel / linear unit conversions used throughout the crate.

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Converts a ratio in dB to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear ratio to dB. Zero maps to `-inf`.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
