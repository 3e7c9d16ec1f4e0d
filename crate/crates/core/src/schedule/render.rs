//! ASCII and CSV rendering of tables, and the CSV parser.

use super::{Cell, Lane, Phase, ScheduleTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Ascii,
    Csv,
}

/// Renders one row per worker.
///
/// ASCII omits the branch letter for unidirectional schedules and prints the
/// optimizer step as a bare `O`; CSV always uses the full cell syntax.
pub fn render_table(table: &ScheduleTable, format: TableFormat) -> String {
    match format {
        TableFormat::Ascii => render_ascii(table),
        TableFormat::Csv => render_csv(table),
    }
}

fn ascii_token(cell: Option<Cell>, with_branch: bool) -> String {
    match cell {
        None => ".".into(),
        Some(c) if c.phase == Phase::Opt => "O".into(),
        Some(c) if with_branch => format!("{}{}{}", c.lane, c.phase.letter(), c.microbatch),
        Some(c) => format!("{}{}", c.phase.letter(), c.microbatch),
    }
}

fn render_ascii(table: &ScheduleTable) -> String {
    let bidir = table.kind.is_bidirectional();
    let tokens: Vec<Vec<String>> =
        table.grid.iter().map(|row| row.iter().map(|c| ascii_token(*c, bidir)).collect()).collect();
    let widths: Vec<usize> = (0..table.slots())
        .map(|t| tokens.iter().map(|r| r[t].chars().count()).max().unwrap_or(1))
        .collect();
    let mut out = String::new();
    for row in &tokens {
        let line: Vec<String> = row.iter().zip(&widths).map(|(tok, w)| format!("{tok:<w$}")).collect();
        out.push_str(line.join(" ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_token(cell: Option<Cell>) -> String {
    cell.map(|c| format!("{}{}{}", c.lane, c.phase.letter(), c.microbatch)).unwrap_or_default()
}

fn render_csv(table: &ScheduleTable) -> String {
    let mut out = String::from("worker");
    for t in 0..table.slots() {
        out.push_str(&format!(",slot{t}"));
    }
    out.push('\n');
    for (w, row) in table.grid.iter().enumerate() {
        out.push_str(&w.to_string());
        for c in row {
            out.push(',');
            out.push_str(&csv_token(*c));
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV grid produced by [`render_table`].
///
/// The grid carries no schedule metadata; attach it to a table with
/// [`ScheduleTable::with_grid`].
pub fn parse_table_csv(text: &str) -> Result<Vec<Vec<Option<Cell>>>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty input".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"worker") {
        return Err(Error::Parse { line: 1, msg: "header must start with `worker`".into() });
    }
    for (t, c) in cols.iter().enumerate().skip(1) {
        if *c != format!("slot{}", t - 1) {
            return Err(Error::Parse { line: 1, msg: format!("unexpected column `{c}`") });
        }
    }
    let slots = cols.len() - 1;
    let mut grid = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != slots + 1 {
            return Err(Error::Parse { line: ln, msg: format!("expected {} fields, got {}", slots + 1, fields.len()) });
        }
        let w: usize = fields[0].parse().map_err(|_| Error::Parse { line: ln, msg: "bad worker index".into() })?;
        if w != grid.len() {
            return Err(Error::Parse { line: ln, msg: format!("worker {w} out of sequence") });
        }
        let row = fields[1..]
            .iter()
            .map(|f| parse_cell(f).map_err(|msg| Error::Parse { line: ln, msg }))
            .collect::<Result<Vec<_>>>()?;
        grid.push(row);
    }
    Ok(grid)
}

fn parse_cell(token: &str) -> std::result::Result<Option<Cell>, String> {
    if token.is_empty() {
        return Ok(None);
    }
    let split = token.find(|c: char| Phase::from_letter(c).is_some() && c != 'D' && c != 'U');
    let Some(at) = split.filter(|&i| i > 0) else {
        return Err(format!("bad cell `{token}`"));
    };
    let lane: Lane = token[..at].parse().map_err(|_| format!("bad branch in `{token}`"))?;
    let mut rest = token[at..].chars();
    let phase = rest.next().and_then(Phase::from_letter).ok_or_else(|| format!("bad phase in `{token}`"))?;
    let microbatch = rest.as_str().parse().map_err(|_| format!("bad microbatch in `{token}`"))?;
    Ok(Some(Cell { microbatch, lane, phase }))
}

impl ScheduleTable {
    /// Same schedule metadata with a different grid.
    pub fn with_grid(&self, grid: Vec<Vec<Option<Cell>>>) -> ScheduleTable {
        ScheduleTable { grid, ..self.clone() }
    }
}
