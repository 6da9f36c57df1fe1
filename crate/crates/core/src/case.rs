//! Reader and writer for the matrix-assignment subset of the MATPOWER case
//! format (version 2), plus the stochastic test-case modification recipe.
//!
//! Only `mpc.<field> = <value>;` statements are understood. A leading
//! `function mpc = name` declaration is tolerated; any other function call
//! or expression is a syntax error. Unknown numeric tables (e.g. `areas`)
//! and cell arrays (e.g. `bus_name`) are skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// bus columns
pub const BUS_I: usize = 0;
pub const BUS_TYPE: usize = 1;
pub const PD: usize = 2;
pub const QD: usize = 3;
pub const GS: usize = 4;
pub const BS: usize = 5;
pub const BUS_AREA: usize = 6;
pub const VM: usize = 7;
pub const VA: usize = 8;
pub const BASE_KV: usize = 9;
pub const ZONE: usize = 10;
pub const VMAX: usize = 11;
pub const VMIN: usize = 12;

// gen columns
pub const GEN_BUS: usize = 0;
pub const PG: usize = 1;
pub const QG: usize = 2;
pub const QMAX: usize = 3;
pub const QMIN: usize = 4;
pub const VG: usize = 5;
pub const MBASE: usize = 6;
pub const GEN_STATUS: usize = 7;
pub const PMAX: usize = 8;
pub const PMIN: usize = 9;

// branch columns
pub const F_BUS: usize = 0;
pub const T_BUS: usize = 1;
pub const BR_R: usize = 2;
pub const BR_X: usize = 3;
pub const BR_B: usize = 4;
pub const RATE_A: usize = 5;
pub const RATE_B: usize = 6;
pub const RATE_C: usize = 7;
pub const TAP: usize = 8;
pub const SHIFT: usize = 9;
pub const BR_STATUS: usize = 10;

// gencost columns
pub const MODEL: usize = 0;
pub const STARTUP: usize = 1;
pub const SHUTDOWN: usize = 2;
pub const NCOST: usize = 3;
pub const COST: usize = 4;

pub const BUS_COLS: usize = 13;
pub const GEN_COLS: usize = 10;
pub const BRANCH_COLS: usize = 11;
pub const GENCOST_MIN_COLS: usize = 4;

pub const POLYNOMIAL: f64 = 2.0;

/// Numeric tables of a case, one `Vec<f64>` per row, columns as in MATPOWER.
///
/// Out-of-service generators and branches (status 0) are kept; use
/// [`RawCaseTables::gen_in_service`] and [`RawCaseTables::branch_in_service`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCaseTables {
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
    pub gencost: Vec<Vec<f64>>,
}

impl RawCaseTables {
    pub fn gen_in_service(&self, g: usize) -> bool {
        self.gen[g][GEN_STATUS] > 0.0
    }

    pub fn branch_in_service(&self, l: usize) -> bool {
        self.branch[l][BR_STATUS] > 0.0
    }

    /// Quadratic cost coefficients `(c2, c1, c0)` of generator `g`, $/h with p in MW.
    pub fn cost_coefficients(&self, g: usize) -> (f64, f64, f64) {
        let row = &self.gencost[g];
        let n = row[NCOST] as usize;
        let coeffs = &row[COST..COST + n];
        // coefficients are stored highest order first
        let mut c = [0.0; 3];
        for (k, &value) in coeffs.iter().rev().enumerate() {
            c[k] = value;
        }
        (c[2], c[1], c[0])
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        let ids: HashSet<i64> = self.bus.iter().map(|r| r[BUS_I] as i64).collect();
        if ids.len() != self.bus.len() {
            return Err(Error::InvalidCase("duplicate bus ids".into()));
        }
        for (l, row) in self.branch.iter().enumerate() {
            for col in [F_BUS, T_BUS] {
                if !ids.contains(&(row[col] as i64)) {
                    return Err(Error::InvalidCase(format!(
                        "branch {} references unknown bus {}",
                        l + 1,
                        row[col]
                    )));
                }
            }
        }
        for (g, row) in self.gen.iter().enumerate() {
            if !ids.contains(&(row[GEN_BUS] as i64)) {
                return Err(Error::InvalidCase(format!(
                    "generator {} references unknown bus {}",
                    g + 1,
                    row[GEN_BUS]
                )));
            }
        }
        if self.gencost.len() != self.gen.len() {
            return Err(Error::InvalidCase(format!(
                "gencost has {} rows but gen has {}",
                self.gencost.len(),
                self.gen.len()
            )));
        }
        for (g, row) in self.gencost.iter().enumerate() {
            if row[MODEL] != POLYNOMIAL {
                return Err(Error::InvalidCase(format!(
                    "gencost row {} is not polynomial (model {})",
                    g + 1,
                    row[MODEL]
                )));
            }
            let n = row[NCOST];
            if !(1.0..=3.0).contains(&n) || n.fract() != 0.0 {
                return Err(Error::InvalidCase(format!(
                    "gencost row {} has unsupported polynomial size {n}",
                    g + 1
                )));
            }
            if row.len() < COST + n as usize {
                return Err(Error::InvalidCase(format!(
                    "gencost row {} lists fewer than {n} coefficients",
                    g + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Value {
    Scalar(f64),
    Text,
    Matrix(Vec<(usize, Vec<f64>)>),
    Cell,
}

struct Scanner<'a> {
    lines: Vec<&'a str>,
    line: usize,
    col: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text.lines().map(strip_comment).collect();
        Self {
            lines,
            line: 0,
            col: 0,
        }
    }

    fn line_no(&self) -> usize {
        self.line + 1
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line_no().min(self.lines.len().max(1)),
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        self.lines.get(self.line).map_or("", |l| &l[self.col..])
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.col += rest.len() - trimmed.len();
            if trimmed.is_empty() && self.line < self.lines.len() {
                self.line += 1;
                self.col = 0;
            } else {
                break;
            }
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.line >= self.lines.len()
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.col += s.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 || rest.as_bytes()[0].is_ascii_digit() {
            return None;
        }
        self.col += len;
        Some(&rest[..len])
    }

    fn number(&mut self) -> Option<f64> {
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-')))
            .map_or(rest.len(), |(i, _)| i);
        let token = &rest[..len];
        let value = match token {
            "Inf" | "inf" | "+Inf" => f64::INFINITY,
            "-Inf" | "-inf" => f64::NEG_INFINITY,
            _ => token.parse::<f64>().ok()?,
        };
        self.col += len;
        Some(value)
    }

    /// Parses the right-hand side of an assignment and the trailing `;`.
    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        let value = if self.eat("[") {
            self.matrix()?
        } else if self.eat("{") {
            self.skip_until('}')?;
            Value::Cell
        } else if self.eat("'") {
            let rest = self.rest();
            let end = rest.find('\'').ok_or_else(|| self.err("unterminated string"))?;
            self.col += end + 1;
            Value::Text
        } else {
            let v = self
                .number()
                .ok_or_else(|| self.err(format!("unsupported expression `{}`", self.rest().trim())))?;
            Value::Scalar(v)
        };
        let rest = self.rest();
        self.col += rest.len() - rest.trim_start().len();
        self.eat(";");
        if !self.rest().trim().is_empty() {
            return Err(self.err(format!("unexpected `{}`", self.rest().trim())));
        }
        Ok(value)
    }

    fn skip_until(&mut self, close: char) -> Result<()> {
        while self.line < self.lines.len() {
            if let Some(pos) = self.rest().find(close) {
                self.col += pos + 1;
                return Ok(());
            }
            self.line += 1;
            self.col = 0;
        }
        Err(self.err(format!("missing `{close}`")))
    }

    fn matrix(&mut self) -> Result<Value> {
        let mut rows = Vec::new();
        let mut row: Vec<f64> = Vec::new();
        let mut row_line = self.line_no();
        loop {
            if self.line >= self.lines.len() {
                return Err(self.err("unterminated matrix"));
            }
            let rest = self.rest();
            let trimmed = rest.trim_start_matches([' ', '\t', ',']);
            self.col += rest.len() - trimmed.len();
            if trimmed.is_empty() {
                if !row.is_empty() {
                    rows.push((row_line, std::mem::take(&mut row)));
                }
                self.line += 1;
                self.col = 0;
                row_line = self.line_no();
                continue;
            }
            if self.eat("]") {
                if !row.is_empty() {
                    rows.push((row_line, std::mem::take(&mut row)));
                }
                return Ok(Value::Matrix(rows));
            }
            if self.eat(";") {
                if !row.is_empty() {
                    rows.push((row_line, std::mem::take(&mut row)));
                }
                row_line = self.line_no();
                continue;
            }
            if row.is_empty() {
                row_line = self.line_no();
            }
            match self.number() {
                Some(v) => row.push(v),
                None => {
                    return Err(self.err(format!(
                        "invalid matrix element `{}`",
                        trimmed.split_whitespace().next().unwrap_or("")
                    )))
                }
            }
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_string = !in_string,
            '%' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses a MATPOWER-style case definition.
pub fn parse_case(text: &str) -> Result<RawCaseTables> {
    let mut sc = Scanner::new(text);
    let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
    let mut tables: BTreeMap<String, Vec<(usize, Vec<f64>)>> = BTreeMap::new();

    let mut first = true;
    while !sc.at_end() {
        let stmt_line = sc.line_no();
        if first && sc.rest().starts_with("function") {
            // `function mpc = name` header
            let header = sc.rest().trim();
            let ok = header
                .strip_prefix("function")
                .and_then(|h| h.split_once('='))
                .is_some_and(|(lhs, rhs)| {
                    lhs.trim() == "mpc" && !rhs.trim().is_empty() && !rhs.contains('(')
                });
            if !ok {
                return Err(Error::Syntax {
                    line: stmt_line,
                    message: format!("unsupported function declaration `{header}`"),
                });
            }
            sc.line += 1;
            sc.col = 0;
            first = false;
            continue;
        }
        first = false;
        let target = sc.ident();
        if target != Some("mpc") || !sc.eat(".") {
            return Err(sc.err(format!("expected `mpc.<field> = ...`, found `{}`", sc.rest().trim())));
        }
        let field = sc
            .ident()
            .ok_or_else(|| sc.err("expected field name after `mpc.`"))?
            .to_string();
        sc.skip_ws();
        if !sc.eat("=") {
            return Err(sc.err(format!("expected `=` after `mpc.{field}`")));
        }
        match sc.value()? {
            Value::Scalar(v) => {
                scalars.insert(field, v);
            }
            Value::Matrix(rows) => {
                tables.insert(field, rows);
            }
            Value::Text | Value::Cell => {}
        }
    }

    let base_mva = *scalars.get("baseMVA").ok_or(Error::MissingTable("baseMVA"))?;
    let mut take = |name: &'static str, width: usize| -> Result<Vec<Vec<f64>>> {
        let rows = tables.remove(name).ok_or(Error::MissingTable(name))?;
        rows.into_iter()
            .map(|(line, row)| {
                if row.len() < width {
                    Err(Error::MalformedRow {
                        table: name,
                        line,
                        expected: width,
                        found: row.len(),
                    })
                } else {
                    Ok(row)
                }
            })
            .collect()
    };
    let raw = RawCaseTables {
        base_mva,
        bus: take("bus", BUS_COLS)?,
        gen: take("gen", GEN_COLS)?,
        branch: take("branch", BRANCH_COLS)?,
        gencost: take("gencost", GENCOST_MIN_COLS)?,
    };
    raw.validate()?;
    Ok(raw)
}

/// Serializes tables back into the case format read by [`parse_case`].
pub fn write_case(raw: &RawCaseTables, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", raw.base_mva);
    for (label, rows) in [
        ("bus", &raw.bus),
        ("gen", &raw.gen),
        ("branch", &raw.branch),
        ("gencost", &raw.gencost),
    ] {
        let _ = writeln!(out, "\nmpc.{label} = [");
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            let _ = writeln!(out, "\t{};", cells.join("\t"));
        }
        let _ = writeln!(out, "];");
    }
    out
}

fn format_number(v: f64) -> String {
    if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Changes applied to a stock case to obtain the stochastic test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModificationRecipe {
    #[serde(default = "one")]
    pub gen_pmax_scale: f64,
    #[serde(default)]
    pub zero_pmin: bool,
    /// Symmetric widening of every generator's reactive range, MVAr.
    #[serde(default)]
    pub qlim_widen: f64,
    /// Active-load band `[lo, hi]` in MW selecting uncertain buses.
    #[serde(default)]
    pub uncertain_load_band: Option<(f64, f64)>,
}

fn one() -> f64 {
    1.0
}

impl Default for ModificationRecipe {
    fn default() -> Self {
        Self {
            gen_pmax_scale: 1.0,
            zero_pmin: false,
            qlim_widen: 0.0,
            uncertain_load_band: None,
        }
    }
}

impl ModificationRecipe {
    pub fn from_json(text: &str) -> Result<Self> {
        let recipe: Self = serde_json::from_str(text)?;
        if !(recipe.gen_pmax_scale >= 1.0) {
            return Err(Error::Domain(format!(
                "gen_pmax_scale must be >= 1, got {}",
                recipe.gen_pmax_scale
            )));
        }
        if !(recipe.qlim_widen >= 0.0) {
            return Err(Error::Domain("qlim_widen must be >= 0".into()));
        }
        Ok(recipe)
    }
}

/// Returns a modified copy of `raw`; the input is left untouched.
pub fn derive_stochastic_case(raw: &RawCaseTables, recipe: &ModificationRecipe) -> RawCaseTables {
    let mut out = raw.clone();
    for row in &mut out.gen {
        row[PMAX] *= recipe.gen_pmax_scale;
        if recipe.zero_pmin {
            row[PMIN] = 0.0;
        }
        row[QMAX] += recipe.qlim_widen;
        row[QMIN] -= recipe.qlim_widen;
    }
    out
}

/// Bus ids whose forecast active load lies in `[lo, hi]` MW (strictly positive loads only).
pub fn buses_in_load_band(raw: &RawCaseTables, lo: f64, hi: f64) -> Vec<i64> {
    raw.bus
        .iter()
        .filter(|row| row[PD] > 0.0 && row[PD] >= lo && row[PD] <= hi)
        .map(|row| row[BUS_I] as i64)
        .collect()
}
