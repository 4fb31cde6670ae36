//! MATPOWER `.m` case reader and writer.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and `mpc.gencost`
//! are interpreted. Every other assignment is skipped.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use super::{from_per_unit, to_per_unit, Branch, Bus, BusKind, CaseError, Generator, GridCase};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

enum State {
    Idle,
    InMatrix { name: String, start: usize, rows: Vec<(usize, Vec<f64>)>, row: Vec<f64>, row_line: usize },
    InCell { start: usize },
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64, CaseError> {
    let v = match tok {
        "Inf" | "inf" | "+Inf" => f64::INFINITY,
        "-Inf" | "-inf" => f64::NEG_INFINITY,
        _ => tok.parse::<f64>().map_err(|_| CaseError::Syntax {
            line,
            message: format!("expected a number, found `{tok}`"),
        })?,
    };
    Ok(v)
}

/// Consumes matrix text. Returns `Some(rest)` once the closing bracket is seen.
fn feed_matrix<'a>(
    text: &'a str,
    line: usize,
    rows: &mut Vec<(usize, Vec<f64>)>,
    row: &mut Vec<f64>,
    row_line: &mut usize,
) -> Result<Option<&'a str>, CaseError> {
    let mut rest = text;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        let Some(c) = rest.chars().next() else {
            // end of physical line terminates a non-empty row
            if !row.is_empty() {
                rows.push((*row_line, std::mem::take(row)));
            }
            return Ok(None);
        };
        match c {
            ';' => {
                if !row.is_empty() {
                    rows.push((*row_line, std::mem::take(row)));
                }
                rest = &rest[1..];
            }
            ']' => {
                if !row.is_empty() {
                    rows.push((*row_line, std::mem::take(row)));
                }
                return Ok(Some(&rest[1..]));
            }
            _ => {
                let end = rest
                    .find(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == ']')
                    .unwrap_or(rest.len());
                if row.is_empty() {
                    *row_line = line;
                }
                row.push(parse_number(&rest[..end], line)?);
                rest = &rest[end..];
            }
        }
    }
}

fn scan(text: &str) -> Result<(HashMap<String, Matrix>, Option<(usize, f64)>), CaseError> {
    let mut matrices = HashMap::new();
    let mut base = None;
    let mut state = State::Idle;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = strip_comment(raw);
        let mut pending: &str = line;
        loop {
            match &mut state {
                State::InCell { .. } => {
                    if let Some(pos) = pending.find('}') {
                        pending = &pending[pos + 1..];
                        state = State::Idle;
                        continue;
                    }
                    break;
                }
                State::InMatrix { name, rows, row, row_line, .. } => {
                    match feed_matrix(pending, line_no, rows, row, row_line)? {
                        Some(rest) => {
                            let name = std::mem::take(name);
                            let rows = std::mem::take(rows);
                            matrices.insert(name, Matrix { rows });
                            state = State::Idle;
                            let rest = rest.trim();
                            let rest = rest.strip_prefix(';').unwrap_or(rest).trim();
                            if !rest.is_empty() {
                                return Err(CaseError::Syntax {
                                    line: line_no,
                                    message: format!("unexpected `{rest}` after matrix"),
                                });
                            }
                        }
                        None => {}
                    }
                    break;
                }
                State::Idle => {
                    let stmt = pending.trim().trim_start_matches(';').trim();
                    if stmt.is_empty()
                        || stmt.starts_with("function")
                        || stmt == "end"
                        || stmt == "return"
                        || stmt == "end;"
                    {
                        break;
                    }
                    let Some((lhs, rhs)) = stmt.split_once('=') else {
                        return Err(CaseError::Syntax {
                            line: line_no,
                            message: format!("unrecognized statement `{stmt}`"),
                        });
                    };
                    let lhs = lhs.trim();
                    let Some(name) = lhs.strip_prefix("mpc.") else {
                        return Err(CaseError::Syntax {
                            line: line_no,
                            message: format!("assignment to `{lhs}` is not an mpc field"),
                        });
                    };
                    let rhs = rhs.trim();
                    if let Some(body) = rhs.strip_prefix('[') {
                        state = State::InMatrix {
                            name: name.to_string(),
                            start: line_no,
                            rows: Vec::new(),
                            row: Vec::new(),
                            row_line: line_no,
                        };
                        pending = body;
                        continue;
                    }
                    if let Some(body) = rhs.strip_prefix('{') {
                        state = State::InCell { start: line_no };
                        pending = body;
                        continue;
                    }
                    if name == "baseMVA" {
                        let value = rhs.trim_end_matches(';').trim();
                        base = Some((line_no, parse_number(value, line_no)?));
                    }
                    break;
                }
            }
        }
    }
    match state {
        State::Idle => Ok((matrices, base)),
        State::InMatrix { name, start, .. } => Err(CaseError::Syntax {
            line: last_line.max(start),
            message: format!("matrix mpc.{name} opened on line {start} is never closed"),
        }),
        State::InCell { start } => Err(CaseError::Syntax {
            line: last_line.max(start),
            message: format!("cell array opened on line {start} is never closed"),
        }),
    }
}

fn require<'m>(m: &'m HashMap<String, Matrix>, name: &str, line: usize) -> Result<&'m Matrix, CaseError> {
    m.get(name).ok_or_else(|| CaseError::Syntax { line, message: format!("missing mpc.{name} matrix") })
}

fn check_width(row: &[f64], width: usize, what: &str, line: usize) -> Result<(), CaseError> {
    if row.len() < width {
        return Err(CaseError::Syntax {
            line,
            message: format!("{what} row has {} columns, expected at least {width}", row.len()),
        });
    }
    Ok(())
}

fn as_id(v: f64, line: usize) -> Result<usize, CaseError> {
    if v < 1.0 || v.fract() != 0.0 {
        return Err(CaseError::Syntax { line, message: format!("`{v}` is not a valid bus number") });
    }
    Ok(v as usize)
}

/// Parses MATPOWER text into a per-unit [`GridCase`].
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    if text.trim().is_empty() {
        return Err(CaseError::Syntax { line: 1, message: "empty case file".into() });
    }
    let (m, base) = scan(text)?;
    let eof = text.lines().count().max(1);
    let (_, base_mva) = base.ok_or_else(|| CaseError::Syntax { line: eof, message: "missing mpc.baseMVA".into() })?;
    if !(base_mva > 0.0) {
        return Err(CaseError::Syntax { line: base.unwrap().0, message: "baseMVA must be positive".into() });
    }

    let mut buses = Vec::new();
    for (line, row) in &require(&m, "bus", eof)?.rows {
        check_width(row, BUS_COLS, "bus", *line)?;
        let kind = BusKind::from_code(row[1] as u32).filter(|_| row[1].fract() == 0.0).ok_or_else(|| {
            CaseError::Syntax { line: *line, message: format!("unknown bus type {}", row[1]) }
        })?;
        buses.push(Bus {
            id: as_id(row[0], *line)?,
            kind,
            p_load: to_per_unit(row[2], base_mva),
            q_load: to_per_unit(row[3], base_mva),
            gs: to_per_unit(row[4], base_mva),
            bs: to_per_unit(row[5], base_mva),
            area: row[6] as u32,
            vm: row[7],
            va: row[8].to_radians(),
            base_kv: row[9],
            zone: row[10] as u32,
            v_max: row[11],
            v_min: row[12],
        });
    }
    let known: HashSet<usize> = buses.iter().map(|b| b.id).collect();
    let check_bus = |v: f64, line: usize| -> Result<usize, CaseError> {
        let id = as_id(v, line)?;
        if known.contains(&id) {
            Ok(id)
        } else {
            Err(CaseError::UnknownBus { line, bus: id })
        }
    };

    let mut generators = Vec::new();
    for (line, row) in &require(&m, "gen", eof)?.rows {
        check_width(row, GEN_COLS, "gen", *line)?;
        generators.push(Generator {
            bus: check_bus(row[0], *line)?,
            pg: to_per_unit(row[1], base_mva),
            qg: to_per_unit(row[2], base_mva),
            q_max: to_per_unit(row[3], base_mva),
            q_min: to_per_unit(row[4], base_mva),
            vg: row[5],
            in_service: row[7] > 0.0,
            p_max: to_per_unit(row[8], base_mva),
            p_min: to_per_unit(row[9], base_mva),
            cost_a: 0.0,
            cost_b: 0.0,
            cost_c: 0.0,
        });
    }

    let mut branches = Vec::new();
    for (line, row) in &require(&m, "branch", eof)?.rows {
        check_width(row, BRANCH_COLS, "branch", *line)?;
        branches.push(Branch {
            from_bus: check_bus(row[0], *line)?,
            to_bus: check_bus(row[1], *line)?,
            r: row[2],
            x: row[3],
            b: row[4],
            rate_a: row[5],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            shift: row[9].to_radians(),
            in_service: row[10] > 0.0,
        });
    }

    match m.get("gencost") {
        Some(costs) => {
            if costs.rows.len() < generators.len() {
                let line = costs.rows.last().map_or(eof, |r| r.0);
                return Err(CaseError::Syntax {
                    line,
                    message: format!("{} gencost rows for {} generators", costs.rows.len(), generators.len()),
                });
            }
            for (gen, (line, row)) in generators.iter_mut().zip(&costs.rows) {
                check_width(row, 4, "gencost", *line)?;
                if row[0] != 2.0 {
                    return Err(CaseError::UnsupportedCost {
                        line: *line,
                        message: format!("model {} (only polynomial model 2 is supported)", row[0]),
                    });
                }
                let n = row[3];
                if n.fract() != 0.0 || !(0.0..=3.0).contains(&n) {
                    return Err(CaseError::UnsupportedCost {
                        line: *line,
                        message: format!("polynomial with {n} coefficients (at most quadratic)"),
                    });
                }
                let n = n as usize;
                check_width(row, 4 + n, "gencost", *line)?;
                // coefficients are listed highest order first
                let mut c = [0.0; 3];
                for (k, slot) in (0..n).rev().zip(row[4..4 + n].iter()) {
                    c[k] = *slot;
                }
                gen.cost_a = c[2] * base_mva * base_mva;
                gen.cost_b = c[1] * base_mva;
                gen.cost_c = c[0];
            }
        }
        None => log::warn!("case has no mpc.gencost; generator costs default to zero"),
    }

    let case = GridCase::new(base_mva, buses, generators, branches)?;
    if !case.is_connected() {
        log::warn!("case network is not connected");
    }
    Ok(case)
}

/// Renders a case back to MATPOWER text, undoing the per-unit conversion.
pub fn to_matpower(case: &GridCase) -> String {
    let base = case.base_mva;
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = exported_case");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {base};");
    let _ = writeln!(out, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            b.id,
            b.kind.code(),
            from_per_unit(b.p_load, base),
            from_per_unit(b.q_load, base),
            from_per_unit(b.gs, base),
            from_per_unit(b.bs, base),
            b.area,
            b.vm,
            b.va.to_degrees(),
            b.base_kv,
            b.zone,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            g.bus,
            from_per_unit(g.pg, base),
            from_per_unit(g.qg, base),
            from_per_unit(g.q_max, base),
            from_per_unit(g.q_min, base),
            g.vg,
            base,
            u8::from(g.in_service),
            from_per_unit(g.p_max, base),
            from_per_unit(g.p_min, base)
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t0\t0\t{}\t{}\t{}\t-360\t360;",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b,
            br.rate_a,
            if br.tap == 1.0 { 0.0 } else { br.tap },
            br.shift.to_degrees(),
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0");
    let _ = writeln!(out, "mpc.gencost = [");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t2\t0\t0\t3\t{}\t{}\t{};",
            g.cost_a / (base * base),
            g.cost_b / base,
            g.cost_c
        );
    }
    let _ = writeln!(out, "];");
    out
}
