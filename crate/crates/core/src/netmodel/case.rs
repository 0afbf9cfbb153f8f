//! MATPOWER-syntax case files.
//!
//! Only the `baseMVA`, `bus`, `branch` and `gen` assignments are read; any
//! other assignment (`version`, `gencost`, `areas`, cell arrays, ...) is
//! skipped. Columns follow the MATPOWER version 2 layout; trailing columns
//! may be omitted and take MATPOWER's usual defaults.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::NetError;

/// MATPOWER bus type code for the reference bus.
pub const BUS_TYPE_REF: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub bus_type: u8,
    /// Active demand, MW.
    pub pd: f64,
    /// Reactive demand, MVAr.
    pub qd: f64,
    /// Shunt conductance, MW at 1 p.u.
    pub gs: f64,
    /// Shunt susceptance, MVAr at 1 p.u.
    pub bs: f64,
    pub vm: f64,
    pub va: f64,
    pub base_kv: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (ignored by the network model).
    pub b: f64,
    /// Off-nominal tap ratio (ignored by the network model).
    pub ratio: f64,
    pub angle: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub bus: usize,
    /// MW.
    pub pg: f64,
    /// MVAr.
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub vg: f64,
    pub in_service: bool,
}

/// Raw tables of a parsed case, in the units of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub gens: Vec<GenRecord>,
}

impl CaseData {
    pub fn bus_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.buses.iter().map(|b| b.id)
    }

    /// Checks that every branch and generator names an existing bus.
    pub fn validate(&self) -> Result<(), NetError> {
        let ids: HashSet<usize> = self.bus_ids().collect();
        for (row, br) in self.branches.iter().enumerate() {
            for bus in [br.from, br.to] {
                if !ids.contains(&bus) {
                    return Err(NetError::DanglingReference { table: "branch", row: row + 1, bus });
                }
            }
        }
        for (row, g) in self.gens.iter().enumerate() {
            if !ids.contains(&g.bus) {
                return Err(NetError::DanglingReference { table: "gen", row: row + 1, bus: g.bus });
            }
        }
        Ok(())
    }

    /// Canonical MATPOWER text. Parsing it yields an identical `CaseData`.
    pub fn to_matpower(&self) -> String {
        let mut s = String::new();
        s.push_str("function mpc = case\n");
        s.push_str("mpc.version = '2';\n");
        let _ = writeln!(s, "mpc.baseMVA = {};", num(self.base_mva));
        s.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n");
        s.push_str("mpc.bus = [\n");
        for b in &self.buses {
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t{}\t{};",
                b.id,
                b.bus_type,
                num(b.pd),
                num(b.qd),
                num(b.gs),
                num(b.bs),
                num(b.vm),
                num(b.va),
                num(b.base_kv),
                num(b.vmax),
                num(b.vmin)
            );
        }
        s.push_str("];\n");
        s.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\n");
        s.push_str("mpc.gen = [\n");
        for g in &self.gens {
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t100\t{};",
                g.bus,
                num(g.pg),
                num(g.qg),
                num(g.qmax),
                num(g.qmin),
                num(g.vg),
                u8::from(g.in_service)
            );
        }
        s.push_str("];\n");
        s.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\n");
        s.push_str("mpc.branch = [\n");
        for br in &self.branches {
            let _ = writeln!(
                s,
                "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};",
                br.from,
                br.to,
                num(br.r),
                num(br.x),
                num(br.b),
                num(br.ratio),
                num(br.angle),
                u8::from(br.in_service)
            );
        }
        s.push_str("];\n");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case data is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let case: CaseData =
            serde_json::from_str(text).map_err(|e| NetError::Json(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }
}

// Shortest decimal that round-trips exactly.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Parses MATPOWER case text into raw tables.
pub fn parse_matpower_case(text: &str) -> Result<CaseData, NetError> {
    let mut base_mva = None;
    let mut bus_rows = None;
    let mut branch_rows = None;
    let mut gen_rows = None;

    let mut lx = Lexer::new(text);
    while let Some(tok) = lx.next_token()? {
        if let Tok::Close(c, line) = tok {
            return Err(NetError::Syntax { line, msg: format!("unbalanced brackets: unexpected '{c}'") });
        }
        let Tok::Word(word, line) = tok else { continue };
        let Some(field) = word.strip_prefix("mpc.") else { continue };
        match lx.next_token()? {
            Some(Tok::Eq) => {}
            _ => continue,
        }
        match field {
            "baseMVA" => base_mva = Some(lx.scalar(line)?),
            "bus" => bus_rows = Some(lx.matrix(line)?),
            "branch" => branch_rows = Some(lx.matrix(line)?),
            "gen" => gen_rows = Some(lx.matrix(line)?),
            _ => lx.skip_statement()?,
        }
    }

    let bus_rows = bus_rows.ok_or(NetError::MissingTable("bus"))?;
    let branch_rows = branch_rows.ok_or(NetError::MissingTable("branch"))?;
    let gen_rows = gen_rows.ok_or(NetError::MissingTable("gen"))?;

    let buses = bus_rows
        .iter()
        .map(|(line, r)| {
            need(r, 2, "bus", *line)?;
            Ok(BusRecord {
                id: int_field(r[0], "bus", *line)?,
                bus_type: int_field(r[1], "bus", *line)? as u8,
                pd: col(r, 2, 0.0),
                qd: col(r, 3, 0.0),
                gs: col(r, 4, 0.0),
                bs: col(r, 5, 0.0),
                vm: col(r, 7, 1.0),
                va: col(r, 8, 0.0),
                base_kv: col(r, 9, 0.0),
                vmax: col(r, 11, 1.1),
                vmin: col(r, 12, 0.9),
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let branches = branch_rows
        .iter()
        .map(|(line, r)| {
            need(r, 4, "branch", *line)?;
            Ok(BranchRecord {
                from: int_field(r[0], "branch", *line)?,
                to: int_field(r[1], "branch", *line)?,
                r: r[2],
                x: r[3],
                b: col(r, 4, 0.0),
                ratio: col(r, 8, 0.0),
                angle: col(r, 9, 0.0),
                in_service: col(r, 10, 1.0) != 0.0,
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let gens = gen_rows
        .iter()
        .map(|(line, r)| {
            need(r, 2, "gen", *line)?;
            Ok(GenRecord {
                bus: int_field(r[0], "gen", *line)?,
                pg: r[1],
                qg: col(r, 2, 0.0),
                qmax: col(r, 3, 0.0),
                qmin: col(r, 4, 0.0),
                vg: col(r, 5, 1.0),
                in_service: col(r, 7, 1.0) != 0.0,
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;

    let case = CaseData { base_mva: base_mva.unwrap_or(100.0), buses, branches, gens };
    case.validate()?;
    Ok(case)
}

fn col(r: &[f64], i: usize, default: f64) -> f64 {
    r.get(i).copied().unwrap_or(default)
}

fn need(r: &[f64], n: usize, table: &'static str, line: usize) -> Result<(), NetError> {
    if r.len() < n {
        return Err(NetError::Syntax {
            line,
            msg: format!("{table} row has {} columns, need at least {n}", r.len()),
        });
    }
    Ok(())
}

fn int_field(v: f64, table: &'static str, line: usize) -> Result<usize, NetError> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(NetError::Syntax { line, msg: format!("{table} id {v} is not a non-negative integer") });
    }
    Ok(v as usize)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Word(&'a str, usize),
    Num(f64, usize),
    Eq,
    Semi(usize),
    Comma,
    Newline(usize),
    Open(char, usize),
    Close(char, usize),
    Quoted,
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0, line: 1 }
    }

    fn peek_char(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn next_token(&mut self) -> Result<Option<Tok<'a>>, NetError> {
        loop {
            let Some(c) = self.peek_char() else { return Ok(None) };
            match c {
                ' ' | '\t' | '\r' => self.pos += 1,
                '%' => {
                    while let Some(c) = self.peek_char() {
                        if c == '\n' {
                            break;
                        }
                        self.pos += c.len_utf8();
                    }
                }
                '.' if self.text[self.pos..].starts_with("...") => {
                    // line continuation: swallow to end of line
                    while let Some(c) = self.peek_char() {
                        self.pos += c.len_utf8();
                        if c == '\n' {
                            self.line += 1;
                            break;
                        }
                    }
                }
                '\n' => {
                    self.pos += 1;
                    self.line += 1;
                    return Ok(Some(Tok::Newline(self.line - 1)));
                }
                '=' => {
                    self.pos += 1;
                    return Ok(Some(Tok::Eq));
                }
                ';' => {
                    self.pos += 1;
                    return Ok(Some(Tok::Semi(self.line)));
                }
                ',' => {
                    self.pos += 1;
                    return Ok(Some(Tok::Comma));
                }
                '[' | '{' | '(' => {
                    self.pos += 1;
                    return Ok(Some(Tok::Open(c, self.line)));
                }
                ']' | '}' | ')' => {
                    self.pos += 1;
                    return Ok(Some(Tok::Close(c, self.line)));
                }
                '\'' | '"' => {
                    self.pos += 1;
                    while let Some(q) = self.peek_char() {
                        self.pos += q.len_utf8();
                        if q == c {
                            return Ok(Some(Tok::Quoted));
                        }
                        if q == '\n' {
                            break;
                        }
                    }
                    return Err(NetError::Syntax { line: self.line, msg: "unterminated string".into() });
                }
                c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                    let start = self.pos;
                    let bytes = self.text.as_bytes();
                    let mut end = start + 1;
                    while end < bytes.len() {
                        let b = bytes[end];
                        let prev = bytes[end - 1];
                        let ok = b.is_ascii_digit()
                            || b == b'.'
                            || b == b'e'
                            || b == b'E'
                            || ((b == b'-' || b == b'+') && (prev == b'e' || prev == b'E'));
                        if !ok {
                            break;
                        }
                        end += 1;
                    }
                    let s = &self.text[start..end];
                    self.pos = end;
                    return match s.parse::<f64>() {
                        Ok(v) => Ok(Some(Tok::Num(v, self.line))),
                        Err(_) => Err(NetError::Syntax { line: self.line, msg: format!("invalid number '{s}'") }),
                    };
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while let Some(c) = self.peek_char() {
                        if c.is_alphanumeric() || c == '_' || c == '.' {
                            self.pos += c.len_utf8();
                        } else {
                            break;
                        }
                    }
                    return Ok(Some(Tok::Word(&self.text[start..self.pos], self.line)));
                }
                other => {
                    return Err(NetError::Syntax { line: self.line, msg: format!("unexpected character '{other}'") });
                }
            }
        }
    }

    fn scalar(&mut self, line: usize) -> Result<f64, NetError> {
        let v = match self.next_token()? {
            Some(Tok::Num(v, _)) => v,
            _ => return Err(NetError::Syntax { line, msg: "expected a number".into() }),
        };
        match self.next_token()? {
            Some(Tok::Semi(_)) | Some(Tok::Newline(_)) | None => Ok(v),
            _ => Err(NetError::Syntax { line, msg: "expected ';' after scalar".into() }),
        }
    }

    /// Reads `[ row; row; ... ]` with the opening bracket still pending.
    fn matrix(&mut self, line: usize) -> Result<Vec<(usize, Vec<f64>)>, NetError> {
        loop {
            match self.next_token()? {
                Some(Tok::Open('[', _)) => break,
                Some(Tok::Newline(_)) => continue,
                _ => return Err(NetError::Syntax { line, msg: "expected '[' to open matrix".into() }),
            }
        }
        let mut rows = Vec::new();
        let mut row: Vec<f64> = Vec::new();
        let mut row_line = self.line;
        loop {
            match self.next_token()? {
                None => {
                    return Err(NetError::Syntax { line, msg: "unbalanced brackets: matrix never closed".into() })
                }
                Some(Tok::Num(v, l)) => {
                    if row.is_empty() {
                        row_line = l;
                    }
                    row.push(v);
                }
                Some(Tok::Comma) => {}
                Some(Tok::Semi(_)) | Some(Tok::Newline(_)) => {
                    if !row.is_empty() {
                        rows.push((row_line, std::mem::take(&mut row)));
                    }
                }
                Some(Tok::Close(']', _)) => {
                    if !row.is_empty() {
                        rows.push((row_line, std::mem::take(&mut row)));
                    }
                    break;
                }
                Some(Tok::Word(w, l)) => {
                    let msg = match w {
                        "Inf" | "inf" => {
                            row.push(f64::INFINITY);
                            continue;
                        }
                        "NaN" | "nan" => format!("non-finite field '{w}'"),
                        _ => format!("non-numeric field '{w}'"),
                    };
                    return Err(NetError::Syntax { line: l, msg });
                }
                Some(Tok::Open(c, l)) | Some(Tok::Close(c, l)) => {
                    return Err(NetError::Syntax { line: l, msg: format!("unbalanced brackets: unexpected '{c}'") })
                }
                Some(_) => return Err(NetError::Syntax { line: self.line, msg: "non-numeric field".into() }),
            }
        }
        // optional terminating semicolon
        let save = (self.pos, self.line);
        match self.next_token()? {
            Some(Tok::Semi(_)) => {}
            _ => (self.pos, self.line) = save,
        }
        Ok(rows)
    }

    /// Skips an assignment we do not interpret, honoring nested brackets.
    fn skip_statement(&mut self) -> Result<(), NetError> {
        let mut depth = 0usize;
        let start_line = self.line;
        loop {
            match self.next_token()? {
                None => {
                    if depth > 0 {
                        return Err(NetError::Syntax { line: start_line, msg: "unbalanced brackets".into() });
                    }
                    return Ok(());
                }
                Some(Tok::Open(..)) => depth += 1,
                Some(Tok::Close(c, l)) => {
                    if depth == 0 {
                        return Err(NetError::Syntax { line: l, msg: format!("unbalanced brackets: unexpected '{c}'") });
                    }
                    depth -= 1;
                }
                Some(Tok::Semi(_)) | Some(Tok::Newline(_)) if depth == 0 => return Ok(()),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 135 1 1.05 0.95;
  2 1 50 10 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [ 1 0 0 100 -100 1 100 1 ];
mpc.branch = [
  1 2 0.0 0.1 0 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn two_bus_transcription() {
        let c = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(c.buses.len(), 2);
        assert_eq!(c.branches.len(), 1);
        assert_eq!(c.branches[0].x, 0.1);
        assert_eq!(c.branches[0].r, 0.0);
        assert_eq!(c.buses[1].pd, 50.0);
        assert_eq!(c.gens.len(), 1);
        assert_eq!(c.base_mva, 100.0);
    }

    #[test]
    fn comments_commas_and_scientific() {
        let text = "mpc.baseMVA = 1e2; % base\n\
                    mpc.bus = [1, 3, 0, 0; % slack\n 2, 1, 2.5E1, -1e-1];\n\
                    mpc.gencost = [2 0 0 3 0.1 1 0];\n\
                    mpc.bus_name = { 'a'; 'b' };\n\
                    mpc.gen = [1 0];\nmpc.branch = [1 2 1e-2 ...\n 0.1];\n";
        let c = parse_matpower_case(text).unwrap();
        assert_eq!(c.base_mva, 100.0);
        assert_eq!(c.buses[1].pd, 25.0);
        assert_eq!(c.buses[1].qd, -0.1);
        assert_eq!(c.branches[0].r, 0.01);
        assert!(c.branches[0].in_service);
    }

    #[test]
    fn dangling_branch_reference() {
        let text = TWO_BUS.replace("1 2 0.0 0.1", "1 99 0.0 0.1");
        assert!(matches!(
            parse_matpower_case(&text),
            Err(NetError::DanglingReference { table: "branch", bus: 99, .. })
        ));
    }

    #[test]
    fn missing_tables() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [1 3];\nmpc.gen = [1 0];\n";
        assert!(matches!(parse_matpower_case(text), Err(NetError::MissingTable("branch"))));
    }

    #[test]
    fn syntax_errors_carry_line() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0;\n2 1 abc 0;\n];";
        match parse_matpower_case(text) {
            Err(NetError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0;\n";
        assert!(matches!(parse_matpower_case(text), Err(NetError::Syntax { .. })));
        let text = "mpc.bus = [1 3 ]];\n";
        assert!(matches!(parse_matpower_case(text), Err(NetError::Syntax { .. })));
    }

    #[test]
    fn canonical_text_round_trip() {
        let c = parse_matpower_case(TWO_BUS).unwrap();
        let again = parse_matpower_case(&c.to_matpower()).unwrap();
        assert_eq!(c, again);
        let j = CaseData::from_json(&c.to_json()).unwrap();
        assert_eq!(c, j);
    }
}
