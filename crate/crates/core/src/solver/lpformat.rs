use std::fmt::Write as _;

use super::lp::{Cmp, LpProblem};

fn term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef == 0.0 {
        return;
    }
    if coef < 0.0 {
        let _ = write!(out, " - {} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {} {}", coef, name);
    } else {
        let _ = write!(out, " + {} {}", coef, name);
    }
}

/// Renders `problem` in CPLEX LP text format for cross-checking with an
/// external solver. Columns listed in `binaries` go to a `Binaries` section.
pub fn write_lp_format(problem: &LpProblem, binaries: &[usize]) -> String {
    let mut out = String::from("\\ generated by quantsched\nMinimize\n obj:");
    let mut first = true;
    for (j, &c) in problem.objective.iter().enumerate() {
        if c != 0.0 {
            term(&mut out, c, &problem.name(j), first);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, row) in problem.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        let mut first = true;
        for &(j, a) in &row.coeffs {
            if a != 0.0 {
                term(&mut out, a, &problem.name(j), first);
                first = false;
            }
        }
        if first {
            out.push_str(" 0 x0");
        }
        let op = match row.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", row.rhs);
    }
    out.push_str("Bounds\n");
    for j in 0..problem.num_vars() {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        let name = problem.name(j);
        match (l.is_finite(), u.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
            (true, false) => {
                if l != 0.0 {
                    let _ = writeln!(out, " {name} >= {l}");
                }
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {u}");
            }
            (true, true) => {
                let _ = writeln!(out, " {l} <= {name} <= {u}");
            }
        }
    }
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for &j in binaries {
            let _ = writeln!(out, " {}", problem.name(j));
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_contains_sections() {
        let mut p = LpProblem::new();
        let t = p.add_named_var("t", 1.0, f64::NEG_INFINITY, f64::INFINITY);
        let v = p.add_named_var("v", 0.0, 0.0, 1.0);
        p.add_constraint(vec![(t, 1.0), (v, 5.0)], Cmp::Ge, 5.0);
        let text = write_lp_format(&p, &[v]);
        assert!(text.contains("Minimize\n obj: 1 t"));
        assert!(text.contains(" c0: 1 t + 5 v >= 5"));
        assert!(text.contains(" t free"));
        assert!(text.contains("Binaries\n v\n"));
        assert!(text.ends_with("End\n"));
    }
}
