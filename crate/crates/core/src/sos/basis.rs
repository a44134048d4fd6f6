use std::collections::BTreeSet;

use crate::poly::{Monomial, VarId};

/// Controls Gram basis enumeration.
#[derive(Debug, Clone)]
pub struct BasisOptions {
    /// Variables the basis may use; `None` means the variables of the support.
    pub vars: Option<Vec<VarId>>,
    /// Variable groups whose combined degree is bounded like a single variable.
    pub groups: Vec<Vec<VarId>>,
    /// Half-support bounding box on total, per-variable and per-group degree.
    pub bounding_box: bool,
    /// Drop monomials whose square can only come from a zero diagonal entry.
    pub diagonal_pruning: bool,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self { vars: None, groups: Vec::new(), bounding_box: true, diagonal_pruning: true }
    }
}

impl BasisOptions {
    pub fn unpruned() -> Self {
        Self { bounding_box: false, diagonal_pruning: false, ..Self::default() }
    }
}

/// Every monomial in `vars` with total degree in `lo..=hi`, ascending.
pub fn monomials_up_to(vars: &[VarId], lo: u32, hi: u32) -> Vec<Monomial> {
    let bounds: Vec<(VarId, u32, u32)> = vars.iter().map(|&v| (v, 0, hi)).collect();
    let mut out = Vec::new();
    enumerate(&bounds, lo, hi, &[], &mut Vec::new(), &mut out);
    out.sort();
    out
}

fn enumerate(
    bounds: &[(VarId, u32, u32)],
    lo: u32,
    hi: u32,
    groups: &[(Vec<VarId>, u32, u32)],
    current: &mut Vec<(VarId, u32)>,
    out: &mut Vec<Monomial>,
) {
    let deg: u32 = current.iter().map(|(_, e)| e).sum();
    let group_deg = |g: &[VarId], cur: &[(VarId, u32)]| -> u32 {
        cur.iter().filter(|(v, _)| g.contains(v)).map(|(_, e)| e).sum()
    };
    if groups.iter().any(|(g, _, ghi)| group_deg(g, current) > *ghi) {
        return;
    }
    let Some(((v, vlo, vhi), rest)) = bounds.split_first() else {
        if deg >= lo && groups.iter().all(|(g, glo, _)| group_deg(g, current) >= *glo) {
            out.push(Monomial::from_pairs(current.iter().copied()));
        }
        return;
    };
    let max_e = (*vhi).min(hi.saturating_sub(deg));
    for e in *vlo..=max_e {
        current.push((*v, e));
        enumerate(rest, lo, hi, groups, current, out);
        current.pop();
    }
}

/// Gram basis for an expression with the given (structural) support.
pub fn gram_basis_for<'a>(support: impl IntoIterator<Item = &'a Monomial>, opts: &BasisOptions) -> Vec<Monomial> {
    let support: BTreeSet<Monomial> = support.into_iter().cloned().collect();
    if support.is_empty() {
        return Vec::new();
    }
    let vars: Vec<VarId> = match &opts.vars {
        Some(v) => {
            let mut v = v.clone();
            v.sort();
            v.dedup();
            v
        }
        None => {
            let set: BTreeSet<VarId> = support.iter().flat_map(|m| m.vars().collect::<Vec<_>>()).collect();
            set.into_iter().collect()
        }
    };
    let max_deg = support.iter().map(Monomial::degree).max().unwrap_or(0);
    let min_deg = support.iter().map(Monomial::degree).min().unwrap_or(0);

    let mut basis = if opts.bounding_box {
        let half_range = |f: &dyn Fn(&Monomial) -> u32| -> (u32, u32) {
            let lo = support.iter().map(f).min().unwrap_or(0);
            let hi = support.iter().map(f).max().unwrap_or(0);
            (lo.div_ceil(2), hi / 2)
        };
        let bounds: Vec<(VarId, u32, u32)> = vars
            .iter()
            .map(|&v| {
                let (lo, hi) = half_range(&|m: &Monomial| m.exponent(v));
                (v, lo, hi)
            })
            .collect();
        let groups: Vec<(Vec<VarId>, u32, u32)> = opts
            .groups
            .iter()
            .map(|g| {
                let (lo, hi) = half_range(&|m: &Monomial| m.degree_in(|v| g.contains(&v)));
                (g.clone(), lo, hi)
            })
            .collect();
        if bounds.iter().any(|(_, lo, hi)| lo > hi) || groups.iter().any(|(_, lo, hi)| lo > hi) {
            return Vec::new();
        }
        let mut out = Vec::new();
        enumerate(&bounds, min_deg.div_ceil(2), max_deg / 2, &groups, &mut Vec::new(), &mut out);
        out.sort();
        out
    } else {
        monomials_up_to(&vars, 0, max_deg.div_ceil(2))
    };

    if opts.diagonal_pruning {
        loop {
            let set: BTreeSet<&Monomial> = basis.iter().collect();
            let keep: Vec<bool> = basis
                .iter()
                .map(|m| {
                    let sq = m.mul(m);
                    support.contains(&sq)
                        || basis.iter().any(|a| {
                            a != m && a.divides(&sq) && sq.checked_div(a).is_some_and(|b| b != *a && set.contains(&b))
                        })
                })
                .collect();
            if keep.iter().all(|k| *k) {
                break;
            }
            basis = basis.into_iter().zip(keep).filter(|(_, k)| *k).map(|(m, _)| m).collect();
        }
    }
    basis
}
