//! Table producers for the analysis subcommands.

use std::io::Write;

use hira_core::characterization::{
    run_coverage, run_threshold_pairs, CharError, CoverageReport, ThresholdReport,
};
use hira_core::hira::{HiraConfig, Purpose};
use hira_core::para::{
    k_factor, legacy_p_rh, legacy_solve_p_th, p_rh, solve_p_th, ParaError, ParaParams,
};
use hira_core::{Chip, Ps};

use crate::io::{self, FormatError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaRow {
    pub n_rh: u64,
    pub slack_multiple: u64,
    pub p_th: f64,
    pub p_rh: f64,
    pub k: f64,
    pub legacy_p_th: f64,
    /// The legacy model's success probability at `p_th`.
    pub legacy_p_rh: f64,
}

/// Solved probabilities for every `(n_rh, slack)` pair under DDR4 timing.
pub fn para_table(n_rhs: &[u64], slacks: &[u64], target: f64) -> Result<Vec<ParaRow>, ParaError> {
    let mut out = Vec::new();
    for &n in n_rhs {
        let legacy_p_th = legacy_solve_p_th(n, target)?;
        for &s in slacks {
            let params = ParaParams {
                target,
                ..ParaParams::ddr4(n, s)
            };
            let sol = solve_p_th(&params)?;
            out.push(ParaRow {
                n_rh: n,
                slack_multiple: s,
                p_th: sol.p_th,
                p_rh: p_rh(sol.p_th, &params)?,
                k: k_factor(sol.p_th, &params)?,
                legacy_p_th,
                legacy_p_rh: legacy_p_rh(sol.p_th, n)?,
            });
        }
    }
    Ok(out)
}

pub const PARA_COLUMNS: [&str; 7] = [
    "N_RH",
    "slack_multiple",
    "p_th",
    "p_rh",
    "k",
    "legacy_p_th",
    "legacy_p_rh",
];

pub fn write_para<W: Write>(w: W, rows: &[ParaRow]) -> Result<(), FormatError> {
    io::write_table(
        w,
        io::PARA_HEADER,
        &PARA_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.n_rh.to_string(),
                r.slack_multiple.to_string(),
                format!("{:.6}", r.p_th),
                format!("{:.6e}", r.p_rh),
                format!("{:.6}", r.k),
                format!("{:.6}", r.legacy_p_th),
                format!("{:.6e}", r.legacy_p_rh),
            ]
        }),
    )
}

/// Coverage of `tested` rows for each `(t1, t2)` in the grid.
pub fn coverage_grid(
    chip: &mut Chip,
    bank: u32,
    grid: &[(Ps, Ps)],
    tested: &[u32],
    patterns: &[u8],
) -> Result<Vec<CoverageReport>, CharError> {
    grid.iter()
        .map(|&(t1, t2)| {
            let cfg = HiraConfig::new(t1, t2, Purpose::RefreshRefresh);
            run_coverage(chip, bank, &cfg, tested, patterns)
        })
        .collect()
}

pub fn write_coverage<W: Write>(w: W, reports: &[CoverageReport]) -> Result<(), FormatError> {
    io::write_table(
        w,
        io::COVERAGE_HEADER,
        &["bank", "t1_ns", "t2_ns", "row", "coverage"],
        reports.iter().flat_map(|r| {
            r.coverage().map(move |(row, c)| {
                vec![
                    r.bank.to_string(),
                    format!("{}", r.t1 as f64 / 1000.0),
                    format!("{}", r.t2 as f64 / 1000.0),
                    row.to_string(),
                    format!("{c:.6}"),
                ]
            })
        }),
    )
}

/// Up to `n` interior victims spread over the bank, each paired with the
/// same row offset in the nearest subarray isolated from the victim's.
pub fn threshold_victims(chip: &Chip, n: usize) -> Vec<(u32, u32)> {
    let g = *chip.geometry();
    let rps = g.rows_per_subarray;
    if rps < 3 || n == 0 {
        return Vec::new();
    }
    let interior: Vec<u32> = (0..g.rows_per_bank())
        .filter(|r| r % rps != 0 && r % rps != rps - 1)
        .collect();
    let step = (interior.len() / n).max(1);
    interior
        .iter()
        .step_by(step)
        .filter_map(|&v| {
            let sa = v / rps;
            let iso = chip.isolation();
            let partner = (0..g.subarrays_per_bank)
                .filter(|&s| s != sa && iso.isolated(sa, s))
                .min_by_key(|&s| s.abs_diff(sa))?;
            Some((v, g.bank_row(partner, v % rps)))
        })
        .take(n)
        .collect()
}

pub fn threshold_table(
    chip: &mut Chip,
    bank: u32,
    victims: &[(u32, u32)],
    t1: Ps,
    t2: Ps,
    pattern: u8,
) -> Result<ThresholdReport, CharError> {
    let cfg = HiraConfig::new(t1, t2, Purpose::RefreshRefresh);
    run_threshold_pairs(chip, bank, victims, &cfg, pattern)
}

pub fn write_threshold<W: Write>(
    w: W,
    victims: &[(u32, u32)],
    r: &ThresholdReport,
) -> Result<(), FormatError> {
    io::write_table(
        w,
        io::THRESHOLD_HEADER,
        &[
            "bank",
            "victim",
            "dummy",
            "without_hira",
            "with_hira",
            "ratio",
        ],
        r.victims.iter().zip(victims).map(|(v, &(_, d))| {
            vec![
                r.bank.to_string(),
                v.victim.to_string(),
                d.to_string(),
                v.without_hira.to_string(),
                v.with_hira.to_string(),
                format!("{:.6}", v.ratio()),
            ]
        }),
    )
}
