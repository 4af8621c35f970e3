//! The seven-gate reference set and the quadruple sequence list.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::Result;
use crate::ptm::{pauli, product, rotation_unitary, unital_eigenvalues, GateRecord, Unitary};

pub const NUM_GATES: usize = 7;

const QUADRUPLE_DATA: &str = include_str!("../data/quadruples_v1.csv");

/// Ideal unitaries of the reference set, ids 1..=7.
pub fn reference_unitaries() -> [Unitary; NUM_GATES] {
    let a = [1.0, 1.0, -1.0];
    let b = [1.0, 1.0, 1.0];
    let c = [1.0, -1.0, 1.0];
    [
        // e^{+iπ/6 Z}
        rotation_unitary([0.0, 0.0, 1.0], -PI / 6.0),
        rotation_unitary(a, PI / 3.0),
        rotation_unitary(a, 2.0 * PI / 3.0),
        rotation_unitary(b, PI / 3.0),
        rotation_unitary(b, 2.0 * PI / 3.0),
        rotation_unitary(c, PI / 3.0),
        rotation_unitary(c, 2.0 * PI / 3.0),
    ]
}

/// Noiseless records for the reference set.
pub fn reference_gates() -> Vec<GateRecord> {
    reference_unitaries()
        .iter()
        .enumerate()
        .map(|(i, u)| GateRecord::ideal(i + 1, *u).expect("reference gates are unitary with finite period"))
        .collect()
}

/// Identity, Pauli Z and phase gate S, used for the trace-variance study.
pub fn variance_study_gates() -> Vec<(&'static str, GateRecord)> {
    let s = rotation_unitary([0.0, 0.0, 1.0], PI / 4.0);
    vec![
        ("I", GateRecord::ideal(1, pauli(0)).unwrap()),
        ("Z", GateRecord::ideal(2, pauli(3)).unwrap()),
        ("S", GateRecord::ideal(3, s).unwrap()),
    ]
}

pub fn parse_quadruples(text: &str) -> Result<Vec<[usize; 4]>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<usize> = line
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| crate::Error::Parse { line: lineno + 1, msg: e.to_string() })?;
        if ids.len() != 4 || ids.iter().any(|&g| g == 0 || g > NUM_GATES) {
            return Err(crate::Error::Parse {
                line: lineno + 1,
                msg: format!("expected four gate ids in 1..={NUM_GATES}, got {line:?}"),
            });
        }
        out.push([ids[0], ids[1], ids[2], ids[3]]);
    }
    Ok(out)
}

/// The shipped list of 100 quadruples (1-based gate ids).
pub fn quadruples() -> &'static [[usize; 4]] {
    static LIST: OnceLock<Vec<[usize; 4]>> = OnceLock::new();
    LIST.get_or_init(|| {
        let list = parse_quadruples(QUADRUPLE_DATA).expect("shipped quadruple list parses");
        assert_eq!(list.len(), 100, "shipped quadruple list must have 100 entries");
        list
    })
}

/// Quadruples whose ideal product has two eigenvalues closer than `tol`.
pub fn degenerate_quadruples(tol: f64) -> Vec<[usize; 4]> {
    let gates = reference_gates();
    quadruples()
        .iter()
        .filter(|q| {
            let m = product(q.iter().map(|&g| &gates[g - 1].ideal_ptm));
            let ev = unital_eigenvalues(&m.unital()).0;
            let gap = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(i, j)| (ev[i] - ev[j]).norm())
                .fold(f64::INFINITY, f64::min);
            gap < tol
        })
        .copied()
        .collect()
}

/// All 21 pairs `(i, j)` with `i < j`, 1-based.
pub fn double_pairs() -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(21);
    for i in 1..=NUM_GATES {
        for j in (i + 1)..=NUM_GATES {
            v.push((i, j));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_periods() {
        let periods: Vec<u64> = reference_gates().iter().map(|g| g.period).collect();
        assert_eq!(periods, vec![6, 3, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn quadruple_list_shape() {
        let q = quadruples();
        assert_eq!(q.len(), 100);
        assert_eq!(q[0], [5, 2, 3, 6]);
        assert_eq!(q[99], [4, 1, 4, 4]);
        assert_eq!(double_pairs().len(), 21);
    }

    #[test]
    fn degenerate_quadruples_are_surfaced() {
        // As transcribed, one entry is a π rotation with eigenvalues {1, -1, -1}.
        assert_eq!(degenerate_quadruples(1e-6), vec![[1, 4, 7, 7]]);
        let gates = reference_gates();
        let m = product([1, 4, 7, 7].iter().map(|&g| &gates[g - 1].ideal_ptm));
        assert!((m.trace() - 0.0).abs() < 1e-12);
        assert!(unital_eigenvalues(&m.unital()).0.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(parse_quadruples("1,2,3\n").is_err());
        assert!(parse_quadruples("1,2,3,8\n").is_err());
        assert!(parse_quadruples("# c\n1,2,3,4\n").unwrap().len() == 1);
    }
}
