//! File formats shared with the CLI: trajectory CSV, run-log CSV,
//! prediction-error CSV, and the plain-text system matrix format.
//!
//! All floating-point output is printed with 12 significant digits so files
//! re-parse well within test tolerances, and identical runs produce
//! byte-identical files.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::closedloop::{ClosedLoopLog, RunOutcome};
use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::qp::QpStatus;
use crate::scalar::Scalar;
use crate::traj::{Sequence, Trajectory};

/// Formats with 12 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.11e}")
    }
}

fn fmt<T: Scalar>(v: T) -> String {
    format_float(v.to_f64().unwrap_or(f64::NAN))
}

fn parse_float<T: Scalar>(tok: &str, line_no: usize) -> Result<T> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line_no}: bad number {tok:?}")))?;
    T::from_f64(v).ok_or_else(|| Error::Parse(format!("line {line_no}: unrepresentable {tok:?}")))
}

/// Writes `t,u_1,...,u_m,y_1,...,y_p` rows.
pub fn write_trajectory_csv<T: Scalar, W: Write>(w: &mut W, traj: &Trajectory<T>) -> Result<()> {
    let m = traj.u.dim();
    let p = traj.y.dim();
    let mut header = String::from("t");
    for i in 1..=m {
        header.push_str(&format!(",u_{i}"));
    }
    for i in 1..=p {
        header.push_str(&format!(",y_{i}"));
    }
    writeln!(w, "{header}")?;
    for t in 0..traj.len() {
        let mut row = t.to_string();
        let u = traj.u.at(t);
        let y = traj.y.at(t);
        for i in 0..m {
            row.push(',');
            row.push_str(&fmt(u[i]));
        }
        for i in 0..p {
            row.push(',');
            row.push_str(&fmt(y[i]));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Reads the trajectory CSV format; channel counts are inferred from the
/// header.
pub fn read_trajectory_csv<T: Scalar, R: BufRead>(r: R) -> Result<Trajectory<T>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Parse("trajectory header must start with 't'".into()));
    }
    let m = cols.iter().filter(|c| c.starts_with("u_")).count();
    let p = cols.iter().filter(|c| c.starts_with("y_")).count();
    if m == 0 || p == 0 || cols.len() != 1 + m + p {
        return Err(Error::Parse("trajectory header must be t,u_1..u_m,y_1..y_p".into()));
    }
    let mut u_cols: Vec<DVector<T>> = Vec::new();
    let mut y_cols: Vec<DVector<T>> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 2;
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != cols.len() {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, got {}",
                cols.len(),
                toks.len()
            )));
        }
        let mut u = DVector::zeros(m);
        let mut y = DVector::zeros(p);
        for i in 0..m {
            u[i] = parse_float(toks[1 + i], line_no)?;
        }
        for i in 0..p {
            y[i] = parse_float(toks[1 + m + i], line_no)?;
        }
        u_cols.push(u);
        y_cols.push(y);
    }
    Trajectory::new(Sequence::from_columns(&u_cols)?, Sequence::from_columns(&y_cols)?)
}

pub fn save_trajectory<T: Scalar>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory_csv(&mut f, traj)
}

pub fn load_trajectory<T: Scalar>(path: &Path) -> Result<Trajectory<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_trajectory_csv(f)
}

/// Plain-text system matrices: `[A]`, `[B]`, `[C]`, `[D]` sections with one
/// whitespace-separated row per line.
pub fn parse_system<T: Scalar>(text: &str) -> Result<LtiSystem<T>> {
    let mut sections: std::collections::HashMap<String, Vec<Vec<T>>> = Default::default();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = Some(name.trim().to_uppercase());
            sections.entry(current.clone().unwrap()).or_default();
            continue;
        }
        let section = current
            .clone()
            .ok_or_else(|| Error::Parse(format!("line {line_no}: row outside any section")))?;
        let row: Result<Vec<T>> = line
            .split_whitespace()
            .map(|tok| parse_float(tok, line_no))
            .collect();
        sections.get_mut(&section).unwrap().push(row?);
    }
    let take = |name: &str| -> Result<DMatrix<T>> {
        let rows = sections
            .get(name)
            .ok_or_else(|| Error::Parse(format!("missing section [{name}]")))?;
        if rows.is_empty() {
            return Err(Error::Parse(format!("section [{name}] is empty")));
        }
        let ncols = rows[0].len();
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Parse(format!("ragged rows in section [{name}]")));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    };
    LtiSystem::new(take("A")?, take("B")?, take("C")?, take("D")?)
}

pub fn load_system<T: Scalar>(path: &Path) -> Result<LtiSystem<T>> {
    parse_system(&std::fs::read_to_string(path)?)
}

pub fn write_system<T: Scalar, W: Write>(w: &mut W, sys: &LtiSystem<T>) -> Result<()> {
    let dump = |w: &mut W, name: &str, m: &DMatrix<T>| -> Result<()> {
        writeln!(w, "[{name}]")?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    };
    dump(w, "A", sys.a())?;
    dump(w, "B", sys.b())?;
    dump(w, "C", sys.c())?;
    dump(w, "D", sys.d())
}

/// Writes the closed-loop log:
/// `t,u_1..u_m,y_1..y_p,ytilde_1..ytilde_p,cost,alpha_l2,alpha_l1,sigma_l2,sigma_linf,constraint12e,status`,
/// one row per executed plant step with the solve-level fields repeated over
/// each block. A run that stopped on an infeasible solve gets one trailing
/// row with `nan` plant fields carrying that solve's status.
pub fn write_run_log_csv<T: Scalar, W: Write>(w: &mut W, log: &ClosedLoopLog<T>) -> Result<()> {
    let m = log.warmup_u.first().map_or(0, |v| v.len());
    let p = log.warmup_y.first().map_or(0, |v| v.len());
    let mut header = String::from("t");
    for i in 1..=m {
        header.push_str(&format!(",u_{i}"));
    }
    for i in 1..=p {
        header.push_str(&format!(",y_{i}"));
    }
    for i in 1..=p {
        header.push_str(&format!(",ytilde_{i}"));
    }
    header.push_str(",cost,alpha_l2,alpha_l1,sigma_l2,sigma_linf,constraint12e,status");
    writeln!(w, "{header}")?;

    let solve_fields = |rec: &crate::closedloop::SolveRecord<T>, status: &str| -> String {
        let sol = &rec.solution;
        let alpha_l1: f64 = sol
            .alpha
            .iter()
            .map(|a| a.abs().to_f64().unwrap_or(f64::NAN))
            .sum();
        format!(
            "{},{},{},{},{},{},{}",
            fmt(sol.cost),
            fmt(sol.alpha.norm()),
            format_float(alpha_l1),
            fmt(sol.sigma.norm()),
            fmt(sol.sigma.amax()),
            u8::from(sol.slack_bound_ok),
            status
        )
    };

    for t in 0..log.len() {
        let rec = &log.solves[log.solve_index[t]];
        let status = match log.outcome {
            RunOutcome::Diverged { at_step } if at_step == t => "diverged".to_string(),
            _ => match rec.solution.status {
                QpStatus::Solved => "solved".to_string(),
                QpStatus::MaxIterations => "max_iterations".to_string(),
                QpStatus::Infeasible => "infeasible".to_string(),
            },
        };
        let mut row = t.to_string();
        for i in 0..m {
            row.push(',');
            row.push_str(&fmt(log.u[t][i]));
        }
        for i in 0..p {
            row.push(',');
            row.push_str(&fmt(log.y[t][i]));
        }
        for i in 0..p {
            row.push(',');
            row.push_str(&fmt(log.y_meas[t][i]));
        }
        row.push(',');
        row.push_str(&solve_fields(rec, &status));
        writeln!(w, "{row}")?;
    }
    if let RunOutcome::Infeasible { at_step } = log.outcome {
        let rec = log.solves.last().expect("infeasible run recorded its solve");
        let mut row = at_step.to_string();
        for _ in 0..(m + 2 * p) {
            row.push_str(",nan");
        }
        row.push(',');
        row.push_str(&solve_fields(rec, "infeasible"));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// One row of the prediction-error CSV.
#[derive(Debug, Clone, Copy)]
pub struct PredictionErrorRow<T> {
    pub k: usize,
    pub bound_l2: T,
    pub bound_linf: T,
    pub actual_l2: T,
    pub actual_linf: T,
}

/// Writes `k,bound_l2,bound_linf,actual_l2,actual_linf`; rows from
/// successive solves are concatenated (`k` restarts at 0 for each solve).
pub fn write_prediction_error_csv<T: Scalar, W: Write>(
    w: &mut W,
    rows: &[PredictionErrorRow<T>],
) -> Result<()> {
    writeln!(w, "k,bound_l2,bound_linf,actual_l2,actual_linf")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k,
            fmt(r.bound_l2),
            fmt(r.bound_linf),
            fmt(r.actual_l2),
            fmt(r.actual_linf)
        )?;
    }
    Ok(())
}
