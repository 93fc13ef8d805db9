//! Text formatting shared by every CSV writer.

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}
