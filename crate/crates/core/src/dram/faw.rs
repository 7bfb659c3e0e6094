use crate::time::Ps;

/// The last four ACT timestamps of a rank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FawWindow {
    acts: [Ps; 4],
    len: usize,
    next: usize,
}

impl FawWindow {
    /// Earliest time a new ACT may issue under a tFAW of `t_faw`.
    pub fn earliest(&self, t_faw: Ps) -> Ps {
        if self.len < 4 {
            0
        } else {
            self.acts[self.next] + t_faw
        }
    }

    /// Whether ACTs at each of `times` (ascending) would all satisfy tFAW.
    pub fn fits(&self, times: &[Ps], t_faw: Ps) -> bool {
        let mut w = self.clone();
        for &t in times {
            if w.check(t, t_faw).is_err() {
                return false;
            }
            w.record(t);
        }
        true
    }

    pub fn check(&self, now: Ps, t_faw: Ps) -> Result<(), Ps> {
        let e = self.earliest(t_faw);
        if now < e {
            Err(e)
        } else {
            Ok(())
        }
    }

    pub fn record(&mut self, now: Ps) {
        self.acts[self.next] = now;
        self.next = (self.next + 1) % 4;
        self.len = (self.len + 1).min(4);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::ns;

    #[test]
    fn fifth_act_waits_for_first_plus_faw() {
        let mut w = FawWindow::default();
        for t in 0..4 {
            assert!(w.check(ns(t), ns(30)).is_ok());
            w.record(ns(t));
        }
        assert_eq!(w.check(ns(4), ns(30)), Err(ns(30)));
        assert!(w.check(ns(30), ns(30)).is_ok());
        assert!(!w.fits(&[ns(30), ns(30)], ns(30)));
        assert!(w.fits(&[ns(30), ns(31)], ns(30)));
    }

    #[test]
    fn pair_room_with_partial_history() {
        let mut w = FawWindow::default();
        for t in [0, 10, 20] {
            w.record(ns(t));
        }
        // First new ACT is free, second is bound by the ACT at 0.
        assert!(w.fits(&[ns(21)], ns(30)));
        assert!(!w.fits(&[ns(21), ns(29)], ns(30)));
        assert!(w.fits(&[ns(21), ns(30)], ns(30)));
    }
}
