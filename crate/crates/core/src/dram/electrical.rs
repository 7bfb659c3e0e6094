use crate::dram::truth::ElectricalWindows;
use crate::time::Ps;

/// What the chip does with an ACT-PRE-ACT sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HiraOutcome {
    /// Both rows latched in their own local row buffers.
    DualOpen,
    /// The subarrays share sense amplifiers; both rows lose their data.
    Corrupted,
    /// The PRE came before the sense amplifiers were enabled. The chip drops
    /// the second ACT and the first row is left undriven.
    SecondActIgnored,
    /// The first wordline was already disabled when the second ACT arrived:
    /// the first row closes with an incomplete restore and the second opens
    /// normally.
    FirstRowClosed,
}

/// Classifies an ACT-PRE-ACT sequence. When several conditions fail, the
/// earliest physical event wins: sensing (t1), then wordline disable (t2),
/// then the sense-amplifier sharing of the two subarrays.
pub fn classify(w: &ElectricalWindows, isolated: bool, t1: Ps, t2: Ps) -> HiraOutcome {
    if t1 < w.sense_enable_min {
        HiraOutcome::SecondActIgnored
    } else if t2 > w.wordline_disable_max {
        HiraOutcome::FirstRowClosed
    } else if !isolated {
        HiraOutcome::Corrupted
    } else {
        HiraOutcome::DualOpen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::ns;

    #[test]
    fn default_windows() {
        let w = ElectricalWindows::default();
        assert_eq!(classify(&w, true, ns(3), ns(3)), HiraOutcome::DualOpen);
        assert_eq!(classify(&w, false, ns(3), ns(3)), HiraOutcome::Corrupted);
        assert_eq!(
            classify(&w, true, 1_500, ns(3)),
            HiraOutcome::SecondActIgnored
        );
        assert_eq!(
            classify(&w, true, ns(3), ns(6)),
            HiraOutcome::FirstRowClosed
        );
        assert_eq!(classify(&w, true, 4_500, 4_500), HiraOutcome::DualOpen);
        assert_eq!(
            classify(&w, true, 4_500, 4_501),
            HiraOutcome::FirstRowClosed
        );
    }
}
