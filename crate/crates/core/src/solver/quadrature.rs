//! Discrete volume and jump laws used inside the generator.

use crate::sim::{JumpLaw, VolumeLaw};

/// Jumps with smaller mass than this, beyond the last heavier one, are dropped.
pub const JUMP_TAIL: f64 = 1e-6;

/// `(volume, weight)` nodes with weights summing to one.
///
/// Lognormal laws use Simpson's rule with step `dv` on `(0, exp(mu + cutoff * sigma)]`,
/// with one extra subinterval when the count is odd. The `v = 0` node carries
/// no density and is skipped.
pub fn volume_nodes(law: &VolumeLaw, dv: f64, cutoff: f64) -> Vec<(f64, f64)> {
    let mut nodes = match law {
        VolumeLaw::Lognormal { mu, sigma } => {
            let upper = (mu + cutoff * sigma).exp();
            let mut n = ((upper / dv).ceil() as usize).max(2);
            if n % 2 == 1 {
                n += 1;
            }
            let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            (1..=n)
                .map(|k| {
                    let v = k as f64 * dv;
                    let z = (v.ln() - mu) / sigma;
                    let pdf = norm * (-0.5 * z * z).exp() / v;
                    let c = if k == n {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    (v, c * dv / 3.0 * pdf)
                })
                .collect()
        }
        VolumeLaw::Empirical { values } => {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let w = 1.0 / sorted.len() as f64;
            let mut out: Vec<(f64, f64)> = Vec::new();
            for v in sorted {
                match out.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => out.push((v, w)),
                }
            }
            out
        }
        VolumeLaw::Degenerate { value } => vec![(*value, 1.0)],
        VolumeLaw::None => vec![(0.0, 1.0)],
    };
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    if total > 0.0 {
        for n in &mut nodes {
            n.1 /= total;
        }
    }
    nodes
}

/// Jump atoms with the negligible tail removed and the rest renormalized.
pub fn jump_atoms(law: &JumpLaw) -> Vec<(u32, f64)> {
    let atoms = law.atoms();
    let Some(last) = atoms.iter().rposition(|a| a.1 >= JUMP_TAIL) else {
        return atoms;
    };
    let kept = &atoms[..=last];
    let total: f64 = kept.iter().map(|a| a.1).sum();
    kept.iter().map(|&(k, p)| (k, p / total)).collect()
}

/// Grid offset of a fill of `rho * v` shares, rounding half away from zero.
pub fn fill_offset(rho: f64, v: f64, dq: f64) -> usize {
    (rho * v / dq).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn lognormal_nodes_cover_truncated_range() {
        let law = VolumeLaw::Lognormal { mu: 6.5, sigma: 1.35 };
        let nodes = volume_nodes(&law, 100.0, 2.0);
        // exp(9.2) is about 9897, so 99 intervals padded to 100
        assert_eq!(nodes.len(), 100);
        assert_eq!(nodes.last().unwrap().0, 10_000.0);
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
        // truncation at mu + 2 sigma on a coarse grid lowers the mean
        let mean: f64 = nodes.iter().map(|n| n.0 * n.1).sum();
        assert!(mean < law.mean() && mean > 0.7 * law.mean(), "{mean}");
    }

    #[test]
    fn simpson_matches_fine_integral() {
        // a wide window leaves only Simpson error
        let (mu, sigma) = (3.0, 0.5);
        let law = VolumeLaw::Lognormal { mu, sigma };
        let nodes = volume_nodes(&law, 0.05, 7.0);
        let mean: f64 = nodes.iter().map(|n| n.0 * n.1).sum();
        assert!((mean - law.mean()).abs() / law.mean() < 1e-6, "{mean}");
    }

    #[test]
    fn atomic_laws() {
        assert_eq!(volume_nodes(&VolumeLaw::Degenerate { value: 100.0 }, 100.0, 2.0), vec![(100.0, 1.0)]);
        assert_eq!(volume_nodes(&VolumeLaw::None, 100.0, 2.0), vec![(0.0, 1.0)]);
        let e = volume_nodes(&VolumeLaw::Empirical { values: vec![3.0, 1.0, 3.0, 2.0] }, 1.0, 2.0);
        assert_eq!(e, vec![(1.0, 0.25), (2.0, 0.25), (3.0, 0.5)]);
    }

    #[test]
    fn jump_tail_truncated() {
        let law = JumpLaw::Categorical { pmf: BTreeMap::from([(1, 0.6), (2, 0.4 - 1e-7), (5, 1e-7)]) };
        let a = jump_atoms(&law);
        assert_eq!(a.len(), 2);
        assert!((a[0].1 + a[1].1 - 1.0).abs() < 1e-15);
        assert_eq!(jump_atoms(&JumpLaw::Degenerate { ticks: 1 }), vec![(1, 1.0)]);
    }

    #[test]
    fn offsets_round_half_away() {
        assert_eq!(fill_offset(0.1, 100.0, 10.0), 1);
        assert_eq!(fill_offset(0.1, 150.0, 10.0), 2);
        assert_eq!(fill_offset(0.1, 149.0, 10.0), 1);
    }
}
