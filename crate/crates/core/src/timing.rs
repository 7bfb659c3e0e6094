use crate::time::{ms, ns, us, Ps};

/// DRAM timing constants, all in picoseconds.
///
/// `t_rc` is stored explicitly and must equal `t_ras + t_rp`. The DDR4
/// defaults use tRP = 14.25 ns (tRC = 46.25 ns); some DDR4 speed bins quote
/// 14.5 ns instead, which moves tRC to 46.5 ns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingParams {
    pub t_rcd: Ps,
    pub t_ras: Ps,
    pub t_rp: Ps,
    pub t_rc: Ps,
    pub t_rfc: Ps,
    pub t_refi: Ps,
    pub t_refw: Ps,
    pub t_faw: Ps,
    /// Column command to data, used by the controller for completion times.
    pub t_cl: Ps,
    /// Data-bus occupancy of one column burst.
    pub t_burst: Ps,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimingError {
    #[error("timing parameter {0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("tRC ({t_rc} ps) must equal tRAS + tRP ({sum} ps)")]
    RowCycleMismatch { t_rc: Ps, sum: Ps },
    #[error("tREFI ({t_refi} ps) must be shorter than tREFW ({t_refw} ps)")]
    RefiNotBelowRefw { t_refi: Ps, t_refw: Ps },
    #[error("tRFC ({t_rfc} ps) must be shorter than tREFI ({t_refi} ps)")]
    RfcNotBelowRefi { t_rfc: Ps, t_refi: Ps },
}

impl Default for TimingParams {
    fn default() -> Self {
        Self::ddr4()
    }
}

impl TimingParams {
    pub const fn ddr4() -> Self {
        let t_ras = ns(32);
        let t_rp = ns(14) + 250;
        Self {
            t_rcd: ns(14) + 250,
            t_ras,
            t_rp,
            t_rc: t_ras + t_rp,
            t_rfc: ns(350),
            t_refi: us(7) + ns(800),
            t_refw: ms(64),
            t_faw: ns(30),
            t_cl: ns(14) + 250,
            t_burst: ns(3) + 333,
        }
    }

    /// Replaces tRP and keeps tRC consistent.
    pub fn with_t_rp(mut self, t_rp: Ps) -> Self {
        self.t_rp = t_rp;
        self.t_rc = self.t_ras + t_rp;
        self
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        let named = [
            ("tRCD", self.t_rcd),
            ("tRAS", self.t_ras),
            ("tRP", self.t_rp),
            ("tRC", self.t_rc),
            ("tRFC", self.t_rfc),
            ("tREFI", self.t_refi),
            ("tREFW", self.t_refw),
            ("tFAW", self.t_faw),
            ("tCL", self.t_cl),
            ("tBURST", self.t_burst),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(TimingError::NonPositive(name));
        }
        if self.t_rc != self.t_ras + self.t_rp {
            return Err(TimingError::RowCycleMismatch {
                t_rc: self.t_rc,
                sum: self.t_ras + self.t_rp,
            });
        }
        if self.t_refi >= self.t_refw {
            return Err(TimingError::RefiNotBelowRefw {
                t_refi: self.t_refi,
                t_refw: self.t_refw,
            });
        }
        if self.t_rfc >= self.t_refi {
            return Err(TimingError::RfcNotBelowRefi {
                t_rfc: self.t_rfc,
                t_refi: self.t_refi,
            });
        }
        Ok(())
    }

    /// Number of REF commands that make up one refresh window.
    pub fn refs_per_window(&self) -> u64 {
        self.t_refw / self.t_refi
    }

    /// Rows each REF restores in every bank, if the geometry divides evenly.
    pub fn rows_per_ref(&self, rows_per_bank: u64) -> Option<u64> {
        let refs = self.refs_per_window();
        if refs == 0
            || !self.t_refw.is_multiple_of(self.t_refi)
            || !rows_per_bank.is_multiple_of(refs)
        {
            return None;
        }
        Some(rows_per_bank / refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ddr4_defaults_are_consistent() {
        let t = TimingParams::ddr4();
        t.validate().unwrap();
        assert_eq!(t.t_rc, 46_250);
        assert_eq!(t.t_rp, 14_250);
        assert_eq!(t.t_ras, 32_000);
    }

    #[test]
    fn eight_rows_per_ref_for_64k_row_banks() {
        let t = TimingParams::ddr4();
        assert_eq!(t.refs_per_window(), 8205);
        // 64 ms / 7.8 us is not integral; the exact 8192-REF window uses 7.8125 us.
        let exact = TimingParams {
            t_refi: 7_812_500,
            ..t
        };
        assert_eq!(exact.rows_per_ref(65536), Some(8));
    }

    #[test]
    fn rejects_inconsistent_row_cycle() {
        let t = TimingParams {
            t_rc: ns(40),
            ..TimingParams::ddr4()
        };
        assert!(matches!(
            t.validate(),
            Err(TimingError::RowCycleMismatch { .. })
        ));
        let alt = TimingParams::ddr4().with_t_rp(ns(14) + 500);
        assert_eq!(alt.t_rc, 46_500);
        alt.validate().unwrap();
    }

    #[test]
    fn rejects_zero_and_ordering() {
        let t = TimingParams {
            t_faw: 0,
            ..TimingParams::ddr4()
        };
        assert_eq!(t.validate(), Err(TimingError::NonPositive("tFAW")));
        let t = TimingParams {
            t_rfc: us(8),
            ..TimingParams::ddr4()
        };
        assert!(matches!(
            t.validate(),
            Err(TimingError::RfcNotBelowRefi { .. })
        ));
    }
}
