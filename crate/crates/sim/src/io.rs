//! Text formats: traces, isolation maps and the CSV outputs.
//!
//! Every file starts with a `# hira-<kind> v1` line.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use hira_core::isolation::{IsolationError, IsolationMap};
use hira_core::mc::{Event, EventKind, RowRole};
use hira_core::workload::TraceRequest;
use hira_core::Chip;

pub const TRACE_HEADER: &str = "# hira-trace v1";
pub const ISOLATION_HEADER: &str = "# hira-isolation v1";
pub const EVENTS_HEADER: &str = "# hira-events v1";
pub const SNAPSHOT_HEADER: &str = "# hira-snapshot v1";
pub const METRICS_HEADER: &str = "# hira-metrics v1";
pub const PARA_HEADER: &str = "# hira-para v1";
pub const COVERAGE_HEADER: &str = "# hira-coverage v1";
pub const THRESHOLD_HEADER: &str = "# hira-threshold v1";
pub const SWEEP_HEADER: &str = "# hira-sweep v1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Isolation(#[from] IsolationError),
}

fn syntax(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Reads "gap op hex-address" lines; `op` is `R` or `W`. `source` is
/// assigned to every request.
pub fn read_trace<R: BufRead>(r: R, source: u32) -> Result<Vec<TraceRequest>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        if f.len() != 3 {
            return Err(syntax(
                n,
                format!("expected `gap op address`, got `{body}`"),
            ));
        }
        let gap = f[0]
            .parse::<u64>()
            .map_err(|e| syntax(n, format!("gap: {e}")))?;
        let write = match f[1] {
            "R" | "r" => false,
            "W" | "w" => true,
            op => return Err(syntax(n, format!("unknown op `{op}`"))),
        };
        let hex = f[2].trim_start_matches("0x").trim_start_matches("0X");
        let address =
            u64::from_str_radix(hex, 16).map_err(|e| syntax(n, format!("address: {e}")))?;
        out.push(TraceRequest {
            gap,
            source,
            write,
            address,
        });
    }
    Ok(out)
}

pub fn write_trace<W: Write>(mut w: W, trace: &[TraceRequest]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    writeln!(w, "# gap op address")?;
    for r in trace {
        writeln!(
            w,
            "{} {} {:#x}",
            r.gap,
            if r.write { 'W' } else { 'R' },
            r.address
        )?;
    }
    Ok(())
}

/// "subarrays N" followed by one isolated pair "i j" per line.
pub fn read_isolation<R: BufRead>(r: R) -> Result<IsolationMap, FormatError> {
    let mut n: Option<u32> = None;
    let mut pairs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        match (n, f.as_slice()) {
            (None, ["subarrays", v]) => {
                n = Some(
                    v.parse()
                        .map_err(|e| syntax(ln, format!("subarrays: {e}")))?,
                )
            }
            (None, _) => return Err(syntax(ln, "expected `subarrays N` first")),
            (Some(_), [a, b]) => {
                let a = a.parse::<u32>().map_err(|e| syntax(ln, e.to_string()))?;
                let b = b.parse::<u32>().map_err(|e| syntax(ln, e.to_string()))?;
                pairs.push((a, b));
            }
            (Some(_), _) => return Err(syntax(ln, format!("expected `i j`, got `{body}`"))),
        }
    }
    let n = n.ok_or_else(|| syntax(0, "missing `subarrays N`"))?;
    Ok(IsolationMap::from_pairs(n, pairs)?)
}

pub fn write_isolation<W: Write>(mut w: W, map: &IsolationMap) -> std::io::Result<()> {
    writeln!(w, "{ISOLATION_HEADER}")?;
    writeln!(w, "subarrays {}", map.subarrays())?;
    for (i, j) in map.pairs() {
        writeln!(w, "{i} {j}")?;
    }
    Ok(())
}

fn csv_writer<W: Write>(mut w: W, header: &str) -> std::io::Result<csv::Writer<W>> {
    writeln!(w, "{header}")?;
    Ok(csv::Writer::from_writer(w))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `kind` holds the row roles of refresh events, e.g. `periodic+demand`.
pub fn write_events<W: Write>(w: W, events: &[Event]) -> Result<(), FormatError> {
    let mut c = csv_writer(w, EVENTS_HEADER)?;
    c.write_record(["time_ps", "event", "bank", "rowA", "rowB", "kind"])?;
    for e in events {
        let kind = match (e.role_a, e.role_b) {
            (Some(a), Some(b)) => format!("{}+{}", a.as_str(), b.as_str()),
            (Some(a), None) => a.as_str().to_string(),
            _ => String::new(),
        };
        c.write_record([
            e.time.to_string(),
            e.kind.as_str().to_string(),
            e.bank.to_string(),
            opt(e.row_a),
            opt(e.row_b),
            kind,
        ])?;
    }
    c.flush()?;
    Ok(())
}

fn parse_kind(s: &str) -> Option<EventKind> {
    Some(match s {
        "ACT" => EventKind::Act,
        "PRE" => EventKind::Pre,
        "RD" => EventKind::Rd,
        "WR" => EventKind::Wr,
        "REF" => EventKind::Ref,
        "HIRA_RA" => EventKind::HiraRa,
        "HIRA_RR" => EventKind::HiraRr,
        "REFRESH_STANDALONE" => EventKind::RefreshStandalone,
        _ => return None,
    })
}

fn parse_role(s: &str) -> Option<RowRole> {
    Some(match s {
        "demand" => RowRole::Demand,
        "periodic" => RowRole::Periodic,
        "preventive" => RowRole::Preventive,
        _ => return None,
    })
}

pub fn read_events<R: std::io::Read>(r: R) -> Result<Vec<Event>, FormatError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let ln = i + 3;
        let get = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<Option<u64>, FormatError> {
            let s = get(k);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e| syntax(ln, format!("column {k}: {e}")))
            }
        };
        let kind =
            parse_kind(get(1)).ok_or_else(|| syntax(ln, format!("unknown event `{}`", get(1))))?;
        let mut roles = get(5).split('+').filter(|s| !s.is_empty()).map(parse_role);
        out.push(Event {
            time: num(0)?.ok_or_else(|| syntax(ln, "missing time"))?,
            kind,
            bank: num(2)?.ok_or_else(|| syntax(ln, "missing bank"))? as u32,
            row_a: num(3)?.map(|v| v as u32),
            row_b: num(4)?.map(|v| v as u32),
            role_a: roles.next().flatten(),
            role_b: roles.next().flatten(),
        });
    }
    Ok(out)
}

/// Per-row ground truth of every channel's chip.
pub fn write_snapshot<W: Write>(w: W, chips: &[Chip]) -> Result<(), FormatError> {
    let mut c = csv_writer(w, SNAPSHOT_HEADER)?;
    c.write_record([
        "channel",
        "bank",
        "subarray",
        "row",
        "hammer_count",
        "last_restore_ps",
        "flags",
    ])?;
    for (ch, chip) in chips.iter().enumerate() {
        for (bank, sa, row, s) in chip.truth().snapshot() {
            let mut flags = String::new();
            for (name, _) in s.flags.iter_names() {
                if !flags.is_empty() {
                    flags.push('|');
                }
                let _ = write!(flags, "{name}");
            }
            c.write_record([
                ch.to_string(),
                bank.to_string(),
                sa.to_string(),
                row.to_string(),
                s.hammer_count.to_string(),
                s.last_restore.to_string(),
                flags,
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

/// Generic two-or-more column table with a versioned header.
pub fn write_table<W: Write, S: AsRef<str>>(
    w: W,
    header: &str,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> Result<(), FormatError> {
    let mut c = csv_writer(w, header)?;
    c.write_record(columns)?;
    for r in rows {
        c.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    c.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`] as strings.
pub fn read_table<R: std::io::Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>), FormatError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let t = vec![
            TraceRequest {
                gap: 0,
                source: 2,
                write: false,
                address: 0x40,
            },
            TraceRequest {
                gap: 17,
                source: 2,
                write: true,
                address: 0xdead_bee8,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(TRACE_HEADER));
        assert_eq!(read_trace(&buf[..], 2).unwrap(), t);
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        let text = "# c\n1 R 0x10\n\n2 X 0x20\n";
        match read_trace(text.as_bytes(), 0) {
            Err(FormatError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn isolation_round_trip() {
        let m = IsolationMap::target_coverage(8, 16, 0.5, 3).unwrap();
        let mut buf = Vec::new();
        write_isolation(&mut buf, &m).unwrap();
        let back = read_isolation(&buf[..]).unwrap();
        assert_eq!(
            back.pairs().collect::<Vec<_>>(),
            m.pairs().collect::<Vec<_>>()
        );
        assert!(read_isolation("subarrays 4\n1 1\n".as_bytes()).is_err());
    }

    #[test]
    fn events_round_trip() {
        let ev = vec![
            Event {
                time: 750,
                kind: EventKind::HiraRa,
                bank: 3,
                row_a: Some(10),
                row_b: Some(200),
                role_a: Some(RowRole::Periodic),
                role_b: Some(RowRole::Demand),
            },
            Event {
                time: 1500,
                kind: EventKind::Pre,
                bank: 3,
                row_a: None,
                row_b: None,
                role_a: None,
                role_b: None,
            },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &ev).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("time_ps,event,bank,rowA,rowB,kind"));
        assert!(text.contains("750,HIRA_RA,3,10,200,periodic+demand"));
        assert_eq!(read_events(&buf[..]).unwrap(), ev);
    }
}
