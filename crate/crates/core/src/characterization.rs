//! Replays of the real-chip characterization experiments against the
//! simulated chip: which row pairs can be opened together, and how a
//! mid-attack refresh of the victim moves its RowHammer threshold.

use alloc::vec;
use alloc::vec::Vec;

use crate::dram::{Chip, Command, CommandError, IssueMode, RowFlags};
use crate::hira::HiraConfig;
use crate::time::Ps;

/// Data patterns written to the first row; the second row gets the inverse.
pub const DEFAULT_PATTERNS: [u8; 4] = [0xFF, 0x00, 0xAA, 0x55];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CharError {
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("victim row {0} needs a neighbour on both sides inside its subarray")]
    EdgeVictim(u32),
    #[error("dummy row {dummy} and victim {victim} corrupted each other; they are not isolated")]
    DummyCorrupted { dummy: u32, victim: u32 },
    #[error("no bit flip in victim {victim} up to a hammer count of {bound}")]
    NoFlip { victim: u32, bound: u64 },
    #[error("row set is empty")]
    NoRows,
}

/// Five-number summary; quartiles are the medians of the lower and upper
/// halves (the median itself is excluded from both for odd counts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let (lower, upper) = if n == 1 {
            (&v[..], &v[..])
        } else {
            (&v[..n / 2], &v[n.div_ceil(2)..])
        };
        Some(Self {
            min: v[0],
            q1: median_sorted(lower),
            median: median_sorted(&v),
            q3: median_sorted(upper),
            max: v[n - 1],
        })
    }
}

/// First, middle and last `k` rows of a bank, deduplicated and ascending.
pub fn sampled_rows(rows_per_bank: u32, k: u32) -> Vec<u32> {
    let k = k.min(rows_per_bank);
    let mid = (rows_per_bank - k) / 2;
    let mut v: Vec<u32> = (0..k)
        .chain(mid..mid + k)
        .chain(rows_per_bank - k..rows_per_bank)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Every `step`-th row starting at `offset`.
pub fn strided_rows(rows_per_bank: u32, step: u32, offset: u32) -> Vec<u32> {
    (offset..rows_per_bank)
        .step_by(step.max(1) as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub bank: u32,
    pub t1: Ps,
    pub t2: Ps,
    pub patterns: Vec<u8>,
    pub tested: Vec<u32>,
    /// Per tested first row: the second rows that passed every pattern.
    pub partners: Vec<Vec<u32>>,
}

impl CoverageReport {
    /// `(row_a, coverage)` for each tested row.
    pub fn coverage(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        let n = self.tested.len() as f64;
        self.tested
            .iter()
            .zip(&self.partners)
            .map(move |(&a, p)| (a, p.len() as f64 / n))
    }

    pub fn summary(&self) -> Option<BoxSummary> {
        let v: Vec<f64> = self.coverage().map(|(_, c)| c).collect();
        BoxSummary::of(&v)
    }
}

/// Start time for a fresh experiment on `chip`, clear of every timing
/// constraint left by earlier commands.
fn quiet_time(chip: &Chip) -> Ps {
    let t = chip.timing();
    chip.now() + t.t_rc + t.t_rfc
}

fn act_pre(chip: &mut Chip, bank: u32, row: u32, now: &mut Ps) -> Result<Vec<u32>, CommandError> {
    let t = *chip.timing();
    let r = chip.issue(bank, Command::Act { row }, IssueMode::Nominal, *now)?;
    chip.issue(bank, Command::Pre, IssueMode::Nominal, *now + t.t_ras)?;
    *now += t.t_rc;
    Ok(r.flips)
}

/// ACT(a), PRE after t1, ACT(b) after t2, PRE after tRAS, then tRP idle.
fn hira_pair(
    chip: &mut Chip,
    bank: u32,
    a: u32,
    b: u32,
    cfg: &HiraConfig,
    now: &mut Ps,
) -> Result<(), CommandError> {
    let t = *chip.timing();
    let s = *now;
    chip.issue(bank, Command::Act { row: a }, IssueMode::Nominal, s)?;
    chip.issue(bank, Command::Pre, IssueMode::Hira, s + cfg.t1)?;
    chip.issue(
        bank,
        Command::Act { row: b },
        IssueMode::Hira,
        s + cfg.t1 + cfg.t2,
    )?;
    chip.issue(
        bank,
        Command::Pre,
        IssueMode::Hira,
        s + cfg.t1 + cfg.t2 + t.t_ras,
    )?;
    *now = s + cfg.t1 + cfg.t2 + t.t_ras + t.t_rp;
    Ok(())
}

/// Tests every ordered pair of `tested` rows in `bank`: both rows are
/// written with inverse patterns, opened with one ACT-PRE-ACT sequence,
/// closed, and read back. A second row counts towards the first row's
/// coverage only if every pattern survives.
pub fn run_coverage(
    chip: &mut Chip,
    bank: u32,
    cfg: &HiraConfig,
    tested: &[u32],
    patterns: &[u8],
) -> Result<CoverageReport, CharError> {
    if tested.is_empty() {
        return Err(CharError::NoRows);
    }
    let mut now = quiet_time(chip);
    let mut partners = Vec::with_capacity(tested.len());
    for &a in tested {
        let mut ok = Vec::new();
        for &b in tested {
            let mut pass = true;
            for &pat in patterns {
                let inv = !pat;
                chip.truth_mut().initialize_row(bank, a, pat, now);
                chip.truth_mut().initialize_row(bank, b, inv, now);
                hira_pair(chip, bank, a, b, cfg, &mut now)?;
                let ra = chip.truth().read(bank, a);
                let rb = chip.truth().read(bank, b);
                // With a == b the row holds the inverse pattern; it can
                // never satisfy both comparisons.
                if ra != pat || rb != inv {
                    pass = false;
                    break;
                }
            }
            if pass {
                ok.push(b);
            }
        }
        partners.push(ok);
    }
    Ok(CoverageReport {
        bank,
        t1: cfg.t1,
        t2: cfg.t2,
        patterns: patterns.to_vec(),
        tested: tested.to_vec(),
        partners,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VictimThreshold {
    pub victim: u32,
    /// Minimum total aggressor activations that flip the victim.
    pub without_hira: u64,
    pub with_hira: u64,
}

impl VictimThreshold {
    pub fn ratio(&self) -> f64 {
        self.with_hira as f64 / self.without_hira as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub bank: u32,
    pub victims: Vec<VictimThreshold>,
}

impl ThresholdReport {
    pub fn mean_ratio(&self) -> f64 {
        let n = self.victims.len().max(1) as f64;
        self.victims.iter().map(VictimThreshold::ratio).sum::<f64>() / n
    }
}

/// One round of the threshold experiment with `half` aggressor activations
/// before and after the midpoint. Returns whether the victim flipped.
fn threshold_trial(
    chip: &mut Chip,
    bank: u32,
    victim: u32,
    dummy: Option<(u32, &HiraConfig)>,
    half: u64,
    pattern: u8,
) -> Result<bool, CharError> {
    let t = *chip.timing();
    let mut now = quiet_time(chip);
    let (lo, hi) = (victim - 1, victim + 1);
    let inv = !pattern;
    chip.truth_mut().initialize_row(bank, victim, pattern, now);
    chip.truth_mut().initialize_row(bank, lo, inv, now);
    chip.truth_mut().initialize_row(bank, hi, inv, now);
    if let Some((d, _)) = dummy {
        chip.truth_mut().initialize_row(bank, d, inv, now);
    }
    for i in 0..half {
        act_pre(chip, bank, if i % 2 == 0 { hi } else { lo }, &mut now)?;
    }
    match dummy {
        Some((d, cfg)) => {
            hira_pair(chip, bank, d, victim, cfg, &mut now)?;
            let corrupted = |r| {
                chip.truth()
                    .row(bank, r)
                    .flags
                    .contains(RowFlags::CORRUPTED)
            };
            if corrupted(d) || corrupted(victim) {
                return Err(CharError::DummyCorrupted { dummy: d, victim });
            }
        }
        None => {
            // Same duration as the refresh it replaces.
            now += t.t_ras + t.t_rp + t.t_rc;
        }
    }
    for i in 0..half {
        act_pre(chip, bank, if i % 2 == 0 { hi } else { lo }, &mut now)?;
    }
    Ok(chip.truth().read(bank, victim) != pattern)
}

/// Minimum even hammer count (both aggressors together) that flips
/// `victim`, found by binary search over `[2, 4 * n_rh_true]`. With `dummy`
/// set, the victim is refreshed at the midpoint by an ACT-PRE-ACT sequence
/// whose first row is the dummy.
pub fn run_threshold(
    chip: &mut Chip,
    bank: u32,
    victim: u32,
    dummy: Option<(u32, &HiraConfig)>,
    pattern: u8,
) -> Result<u64, CharError> {
    let rps = chip.geometry().rows_per_subarray;
    if victim.is_multiple_of(rps) || victim % rps == rps - 1 {
        return Err(CharError::EdgeVictim(victim));
    }
    let bound = 2 * chip.truth().n_rh() as u64;
    if !threshold_trial(chip, bank, victim, dummy, bound, pattern)? {
        return Err(CharError::NoFlip {
            victim,
            bound: 2 * bound,
        });
    }
    let (mut lo, mut hi) = (0u64, bound);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if threshold_trial(chip, bank, victim, dummy, mid, pattern)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(2 * hi)
}

/// Threshold with and without a midpoint refresh for each victim. Dummies
/// are paired with victims by index.
pub fn run_threshold_pairs(
    chip: &mut Chip,
    bank: u32,
    victims: &[(u32, u32)],
    cfg: &HiraConfig,
    pattern: u8,
) -> Result<ThresholdReport, CharError> {
    let mut out = Vec::with_capacity(victims.len());
    for &(victim, dummy) in victims {
        let without_hira = run_threshold(chip, bank, victim, None, pattern)?;
        let with_hira = run_threshold(chip, bank, victim, Some((dummy, cfg)), pattern)?;
        out.push(VictimThreshold {
            victim,
            without_hira,
            with_hira,
        });
    }
    Ok(ThresholdReport { bank, victims: out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankVariation {
    pub coverage: Vec<CoverageReport>,
    pub thresholds: Vec<ThresholdReport>,
    /// Banks whose partner sets differ from the first bank's.
    pub mismatched: Vec<u32>,
}

impl BankVariation {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Repeats both experiments on each bank and compares the coverage sets.
pub fn run_bank_variation(
    chip: &mut Chip,
    banks: &[u32],
    cfg: &HiraConfig,
    tested: &[u32],
    patterns: &[u8],
    victims: &[(u32, u32)],
) -> Result<BankVariation, CharError> {
    let mut coverage = Vec::with_capacity(banks.len());
    let mut thresholds = Vec::with_capacity(banks.len());
    for &b in banks {
        coverage.push(run_coverage(chip, b, cfg, tested, patterns)?);
        if !victims.is_empty() {
            thresholds.push(run_threshold_pairs(chip, b, victims, cfg, patterns[0])?);
        }
    }
    let mismatched = match coverage.first() {
        Some(first) => coverage
            .iter()
            .filter(|c| c.partners != first.partners)
            .map(|c| c.bank)
            .collect(),
        None => vec![],
    };
    Ok(BankVariation {
        coverage,
        thresholds,
        mismatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{ChipConfig, ElectricalWindows};
    use crate::geometry::Geometry;
    use crate::hira::Purpose;
    use crate::isolation::IsolationMap;
    use crate::time::ns;
    use crate::timing::TimingParams;

    fn chip(map: IsolationMap) -> Chip {
        Chip::new(ChipConfig {
            geometry: Geometry {
                channels: 1,
                ranks_per_channel: 1,
                banks_per_rank: 4,
                subarrays_per_bank: 8,
                rows_per_subarray: 64,
                columns_per_row: 128,
            },
            timing: TimingParams::ddr4(),
            windows: ElectricalWindows::default(),
            n_rh_true: 1000,
            isolation: map,
        })
        .unwrap()
    }

    fn cfg(t1: Ps, t2: Ps) -> HiraConfig {
        HiraConfig::new(t1, t2, Purpose::RefreshRefresh)
    }

    #[test]
    fn interior_row_covers_five_of_eight() {
        let mut c = chip(IsolationMap::adjacent_share(8).unwrap());
        // One row per subarray; row 4*64+3 sits in subarray 4.
        let tested = strided_rows(512, 64, 3);
        let r = run_coverage(&mut c, 0, &cfg(ns(3), ns(3)), &tested, &DEFAULT_PATTERNS).unwrap();
        let cov: Vec<f64> = r.coverage().map(|(_, v)| v).collect();
        assert_eq!(cov[4], 5.0 / 8.0);
        assert_eq!(cov[0], 6.0 / 8.0);
    }

    #[test]
    fn too_short_t1_covers_nothing() {
        let mut c = chip(IsolationMap::adjacent_share(8).unwrap());
        let tested = strided_rows(512, 32, 1);
        let r = run_coverage(&mut c, 1, &cfg(1_500, ns(3)), &tested, &DEFAULT_PATTERNS).unwrap();
        assert!(r.coverage().all(|(_, v)| v == 0.0));
        let none = IsolationMap::none(8, crate::isolation::MapOrigin::Explicit).unwrap();
        let mut c = chip(none);
        let r = run_coverage(&mut c, 0, &cfg(ns(3), ns(3)), &tested, &DEFAULT_PATTERNS).unwrap();
        assert!(r.coverage().all(|(_, v)| v == 0.0));
    }

    #[test]
    fn threshold_doubles_with_midpoint_refresh() {
        let mut c = chip(IsolationMap::adjacent_share(8).unwrap());
        let h = cfg(ns(3), ns(3));
        let without = run_threshold(&mut c, 0, 100, None, 0xAA).unwrap();
        let with = run_threshold(&mut c, 0, 100, Some((300, &h)), 0xAA).unwrap();
        assert_eq!(without, 1000);
        assert_eq!(with, 2000);
        assert!(matches!(
            run_threshold(&mut c, 0, 100, Some((120, &h)), 0xAA),
            Err(CharError::DummyCorrupted { .. })
        ));
        assert!(matches!(
            run_threshold(&mut c, 0, 64, None, 0xAA),
            Err(CharError::EdgeVictim(64))
        ));
    }

    #[test]
    fn injected_bank_map_is_detected() {
        let mut c = chip(IsolationMap::adjacent_share(8).unwrap());
        let tested = strided_rows(512, 64, 5);
        let h = cfg(ns(3), ns(3));
        let v = run_bank_variation(
            &mut c,
            &[0, 1, 2, 3],
            &h,
            &tested,
            &DEFAULT_PATTERNS[..1],
            &[],
        )
        .unwrap();
        assert!(v.identical());
        c.inject_bank_isolation(2, IsolationMap::from_pairs(8, [(0, 7)]).unwrap())
            .unwrap();
        let v = run_bank_variation(
            &mut c,
            &[0, 1, 2, 3],
            &h,
            &tested,
            &DEFAULT_PATTERNS[..1],
            &[],
        )
        .unwrap();
        assert_eq!(v.mismatched, [2]);
    }

    #[test]
    fn box_summary_hinges() {
        let s = BoxSummary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max),
            (1.0, 1.5, 3.0, 4.5, 5.0)
        );
        let s = BoxSummary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.5, 2.5, 3.5));
        assert!(BoxSummary::of(&[]).is_none());
    }

    #[test]
    fn row_samplers() {
        assert_eq!(sampled_rows(16, 2), [0, 1, 7, 8, 14, 15]);
        assert_eq!(sampled_rows(4, 8), [0, 1, 2, 3]);
        assert_eq!(strided_rows(10, 4, 1), [1, 5, 9]);
    }
}
