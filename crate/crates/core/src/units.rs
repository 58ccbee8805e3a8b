//! Energy units. Everything internal is Hartree; reports are in eV.

/// CODATA 2018 value.
pub const HARTREE_TO_EV: f64 = 27.211386245988;

#[inline]
pub fn hartree_to_ev(e: f64) -> f64 {
    e * HARTREE_TO_EV
}

#[inline]
pub fn ev_to_hartree(e: f64) -> f64 {
    e / HARTREE_TO_EV
}
