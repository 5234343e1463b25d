//! Plain LP text format: deterministic writer and a reader for the subset
//! the writer emits (plus solver solution files).
//!
//! The emitted document has the classic sections — `Minimize`, `Subject To`,
//! `Bounds`, `Binaries`, `End` — one constraint per line, integer
//! coefficients, which common solvers accept as-is. The reader exists so
//! exports round-trip losslessly and so external solutions can be pulled
//! back in; it handles exactly this shape (sections in any order,
//! `\`-comments, one constraint per line).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::model::{Cmp, Constraint, IlpModel, LinearProgram, VarDef, VarKind};
use super::IlpError;

/// Writes the model's program; see [`write_lp`].
pub fn export_lp(model: &IlpModel) -> String {
    write_lp(&model.lp)
}

/// Renders a program in LP text form. Deterministic: constraint order is the
/// program's, variable sections are name-ordered.
pub fn write_lp(lp: &LinearProgram) -> String {
    let mut out = String::new();
    out.push_str("\\ pass-ordering model\n");
    out.push_str("Minimize\n");
    out.push_str(" obj:");
    write_terms(&mut out, &lp.objective);
    out.push('\n');
    out.push_str("Subject To\n");
    for c in &lp.constraints {
        let _ = write!(out, " {}:", c.name);
        write_terms(&mut out, &c.terms);
        let op = match c.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = write!(out, " {} {}\n", op, c.rhs);
    }
    out.push_str("Bounds\n");
    for (name, def) in &lp.vars {
        if def.kind == VarKind::Binary {
            continue;
        }
        match def.upper {
            Some(upper) => {
                let _ = write!(out, " {} <= {} <= {}\n", def.lower, name, upper);
            }
            None => {
                let _ = write!(out, " {} >= {}\n", name, def.lower);
            }
        }
    }
    out.push_str("Binaries\n");
    for (name, def) in &lp.vars {
        if def.kind == VarKind::Binary {
            let _ = write!(out, " {}\n", name);
        }
    }
    out.push_str("End\n");
    out
}

fn write_terms(out: &mut String, terms: &[(i64, String)]) {
    for (idx, (coeff, var)) in terms.iter().enumerate() {
        if idx == 0 {
            if *coeff < 0 {
                let _ = write!(out, " - {} {}", coeff.unsigned_abs(), var);
            } else {
                let _ = write!(out, " {} {}", coeff, var);
            }
        } else if *coeff < 0 {
            let _ = write!(out, " - {} {}", coeff.unsigned_abs(), var);
        } else {
            let _ = write!(out, " + {} {}", coeff, var);
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Done,
}

/// Parses LP text back into a [`LinearProgram`].
///
/// Accepts the writer's output shape: case-insensitive section headers
/// (`minimize`, `subject to`/`st`, `bounds`, `binaries`/`binary`/`bin`,
/// `end`), `\` comments, one labeled constraint per line.
pub fn parse_lp(text: &str) -> Result<LinearProgram, IlpError> {
    let mut lp = LinearProgram::default();
    let mut section = Section::Preamble;
    let mut declared: BTreeMap<String, VarDef> = BTreeMap::new();
    let mut binaries: Vec<String> = Vec::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let content = match raw.split('\\').next() {
            Some(c) => c.trim(),
            None => "",
        };
        if content.is_empty() {
            continue;
        }
        let lowered = content.to_ascii_lowercase();
        match lowered.as_str() {
            "minimize" | "min" => {
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." | "such that" => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binaries" | "binary" | "bin" => {
                section = Section::Binaries;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Preamble | Section::Done => {
                return Err(IlpError::Parse {
                    line,
                    reason: format!("unexpected content outside sections: {content}"),
                });
            }
            Section::Objective => {
                let body = strip_label(content);
                lp.objective = parse_terms(body, line)?;
            }
            Section::Constraints => {
                let (label, body) = split_label(content, line)?;
                let (terms, cmp, rhs) = parse_constraint_body(body, line)?;
                lp.constraints.push(Constraint { name: label.to_string(), terms, cmp, rhs });
            }
            Section::Bounds => {
                parse_bound_line(content, line, &mut declared)?;
            }
            Section::Binaries => {
                for name in content.split_whitespace() {
                    binaries.push(name.to_string());
                }
            }
        }
    }

    for (name, def) in declared {
        lp.vars.insert(name, def);
    }
    for name in binaries {
        lp.vars
            .insert(name, VarDef { kind: VarKind::Binary, lower: 0, upper: Some(1) });
    }
    // Anything referenced but never declared gets default free-positive
    // bounds, so hand-written files still load.
    let referenced: Vec<String> = lp
        .objective
        .iter()
        .map(|(_, v)| v.clone())
        .chain(lp.constraints.iter().flat_map(|c| c.terms.iter().map(|(_, v)| v.clone())))
        .collect();
    for name in referenced {
        lp.vars
            .entry(name)
            .or_insert(VarDef { kind: VarKind::Continuous, lower: 0, upper: None });
    }
    Ok(lp)
}

fn strip_label(content: &str) -> &str {
    match content.split_once(':') {
        Some((_, rest)) => rest,
        None => content,
    }
}

fn split_label(content: &str, line: usize) -> Result<(&str, &str), IlpError> {
    content
        .split_once(':')
        .map(|(label, rest)| (label.trim(), rest))
        .ok_or(IlpError::Parse { line, reason: "constraint line has no 'name:' label".to_string() })
}

fn parse_constraint_body(body: &str, line: usize) -> Result<(Vec<(i64, String)>, Cmp, i64), IlpError> {
    let (lhs, cmp, rhs_text) = if let Some((l, r)) = body.split_once("<=") {
        (l, Cmp::Le, r)
    } else if let Some((l, r)) = body.split_once(">=") {
        (l, Cmp::Ge, r)
    } else if let Some((l, r)) = body.split_once('=') {
        (l, Cmp::Eq, r)
    } else {
        return Err(IlpError::Parse { line, reason: "constraint has no comparator".to_string() });
    };
    let rhs = rhs_text
        .trim()
        .parse::<i64>()
        .map_err(|_| IlpError::Parse { line, reason: format!("bad right-hand side: {rhs_text}") })?;
    Ok((parse_terms(lhs, line)?, cmp, rhs))
}

fn parse_terms(text: &str, line: usize) -> Result<Vec<(i64, String)>, IlpError> {
    let mut terms = Vec::new();
    let mut sign = 1i64;
    let mut coeff: Option<i64> = None;
    for token in text.split_whitespace() {
        match token {
            "+" => {
                if coeff.is_some() {
                    return Err(IlpError::Parse { line, reason: "dangling coefficient".to_string() });
                }
                sign = 1;
            }
            "-" => {
                if coeff.is_some() {
                    return Err(IlpError::Parse { line, reason: "dangling coefficient".to_string() });
                }
                sign = -1;
            }
            t => {
                if let Ok(n) = t.parse::<i64>() {
                    if coeff.is_some() {
                        return Err(IlpError::Parse {
                            line,
                            reason: format!("two coefficients in a row near '{t}'"),
                        });
                    }
                    coeff = Some(n);
                } else {
                    terms.push((sign * coeff.take().unwrap_or(1), t.to_string()));
                    sign = 1;
                }
            }
        }
    }
    if coeff.is_some() {
        return Err(IlpError::Parse { line, reason: "coefficient without a variable".to_string() });
    }
    Ok(terms)
}

fn parse_bound_line(
    content: &str,
    line: usize,
    declared: &mut BTreeMap<String, VarDef>,
) -> Result<(), IlpError> {
    let err = |reason: String| IlpError::Parse { line, reason };
    let parts: Vec<&str> = content.split_whitespace().collect();
    // Forms: "lb <= x <= ub" | "x >= lb" | "x <= ub" | "x = v".
    match parts.as_slice() {
        [lb, "<=", name, "<=", ub] => {
            let lower = lb.parse().map_err(|_| err(format!("bad lower bound {lb}")))?;
            let upper = ub.parse().map_err(|_| err(format!("bad upper bound {ub}")))?;
            declared.insert(
                name.to_string(),
                VarDef { kind: VarKind::Continuous, lower, upper: Some(upper) },
            );
        }
        [name, ">=", lb] => {
            let lower = lb.parse().map_err(|_| err(format!("bad lower bound {lb}")))?;
            declared.insert(name.to_string(), VarDef { kind: VarKind::Continuous, lower, upper: None });
        }
        [name, "<=", ub] => {
            let upper = ub.parse().map_err(|_| err(format!("bad upper bound {ub}")))?;
            declared.insert(
                name.to_string(),
                VarDef { kind: VarKind::Continuous, lower: 0, upper: Some(upper) },
            );
        }
        [name, "=", v] => {
            let fixed = v.parse().map_err(|_| err(format!("bad fixed value {v}")))?;
            declared.insert(
                name.to_string(),
                VarDef { kind: VarKind::Continuous, lower: fixed, upper: Some(fixed) },
            );
        }
        _ => return Err(err(format!("unrecognized bound line: {content}"))),
    }
    Ok(())
}

/// Reads a solver solution file of `name value` / `name = value` lines into
/// an assignment; `#` and `\` start comments, blank lines are skipped.
pub fn parse_solution_file(text: &str) -> Result<BTreeMap<String, f64>, IlpError> {
    let mut values = BTreeMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let content = raw
            .split(|c| c == '#' || c == '\\')
            .next()
            .unwrap_or("")
            .trim();
        if content.is_empty() {
            continue;
        }
        let cleaned = content.replace('=', " ");
        let mut parts = cleaned.split_whitespace();
        let name = parts
            .next()
            .ok_or(IlpError::Parse { line, reason: "empty assignment line".to_string() })?;
        let value_text = parts
            .next()
            .ok_or(IlpError::Parse { line, reason: format!("no value for {name}") })?;
        if parts.next().is_some() {
            return Err(IlpError::Parse {
                line,
                reason: format!("trailing tokens after {name}'s value"),
            });
        }
        let value = value_text
            .parse::<f64>()
            .map_err(|_| IlpError::Parse { line, reason: format!("bad value: {value_text}") })?;
        values.insert(name.to_string(), value);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::super::model::build_model;
    use super::*;
    use crate::core::{MemoryModel, Profile, TimeUs};

    fn golden_inputs() -> (Profile, MemoryModel) {
        (Profile::new(TimeUs(2), TimeUs(3), TimeUs(1), TimeUs(1)), MemoryModel::new(2, 1, Some(6)))
    }

    #[test]
    fn export_parses_back_identically() {
        let (profile, mem) = golden_inputs();
        for (p, m) in [(1, 1), (2, 2), (3, 2), (2, 4)] {
            let model = build_model(p, m, &profile, &mem).unwrap();
            let text = export_lp(&model);
            let parsed = parse_lp(&text).unwrap();
            assert_eq!(parsed, model.lp, "round trip changed the p={p}, m={m} program");
        }
    }

    #[test]
    fn unlimited_memory_round_trips_open_bounds() {
        let profile = Profile::unit();
        let mem = MemoryModel::new(1, 1, None);
        let model = build_model(2, 2, &profile, &mem).unwrap();
        assert!(
            !model.lp.constraints.iter().any(|c| c.name.starts_with("mem_")),
            "no memory constraints without a limit"
        );
        let parsed = parse_lp(&export_lp(&model)).unwrap();
        assert_eq!(parsed, model.lp);
    }

    #[test]
    fn single_pass_export_declares_three_binaries() {
        let (profile, mem) = golden_inputs();
        let model = build_model(1, 1, &profile, &mem).unwrap();
        let text = export_lp(&model);
        let binary_lines = text
            .split("Binaries\n")
            .nth(1)
            .unwrap()
            .lines()
            .take_while(|l| *l != "End")
            .count();
        assert_eq!(binary_lines, 3);
    }

    #[test]
    fn two_by_two_export_matches_the_frozen_document() {
        let (profile, mem) = golden_inputs();
        let model = build_model(2, 2, &profile, &mem).unwrap();
        let expected = include_str!("../../tests/data/p2m2.lp");
        assert_eq!(export_lp(&model), expected, "LP text drifted from the frozen copy");
    }

    #[test]
    fn solution_files_accept_both_separators() {
        let text = "# solver output\nC 13\nE_1_1_F = 2.5\n\n\\ trailing comment\n";
        let values = parse_solution_file(text).unwrap();
        assert_eq!(values["C"], 13.0);
        assert_eq!(values["E_1_1_F"], 2.5);
        assert_eq!(values.len(), 2);
    }

    #[test]
    fn malformed_lines_report_their_position() {
        let err = parse_lp("Minimize\n obj: C\nSubject To\n nocolon >= 4\n").unwrap_err();
        match err {
            IlpError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected a parse error, got {other}"),
        }
    }
}
