//! Simulation time is kept in integer picoseconds so that datasheet values
//! such as 14.25 ns convert exactly.

/// A point in time or a duration, in picoseconds.
pub type Ps = u64;

pub const PS_PER_NS: Ps = 1_000;
pub const PS_PER_US: Ps = 1_000_000;
pub const PS_PER_MS: Ps = 1_000_000_000;

/// Whole nanoseconds to picoseconds.
pub const fn ns(v: u64) -> Ps {
    v * PS_PER_NS
}

pub const fn us(v: u64) -> Ps {
    v * PS_PER_US
}

pub const fn ms(v: u64) -> Ps {
    v * PS_PER_MS
}

/// Picoseconds to (fractional) nanoseconds, for reporting only.
pub fn to_ns(v: Ps) -> f64 {
    v as f64 / PS_PER_NS as f64
}

/// Ceiling division of a duration into clock cycles.
pub const fn cycles_ceil(d: Ps, tck: Ps) -> u64 {
    d.div_ceil(tck)
}
