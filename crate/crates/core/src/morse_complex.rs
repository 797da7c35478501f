//! Action-filtered Morse complexes: chain groups generated by critical points
//! graded by index, boundary given by signed counts of isolated flow lines,
//! and integer homology through Smith normal form.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat_flow::FlowLine;
use crate::torus_loops::WindingClass;

/// Bit budget for Smith normal form intermediates.
pub const SNF_BIT_BUDGET: u64 = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0)
    }

    pub fn mul(&self, other: &IntMatrix) -> IntMatrix {
        assert_eq!(self.cols, other.rows, "matrix shapes do not compose");
        let mut out = IntMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    fn select_rows(&self, keep: &[usize]) -> IntMatrix {
        let mut out = IntMatrix::zeros(keep.len(), self.cols);
        for (i, &r) in keep.iter().enumerate() {
            for c in 0..self.cols {
                out.set(i, c, self.get(r, c));
            }
        }
        out
    }
}

/// Rows of space-separated integers.
impl fmt::Display for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Invariant factors (nonzero diagonal of the Smith normal form), in
/// divisibility order.
pub fn invariant_factors(m: &IntMatrix) -> Result<Vec<BigInt>> {
    let mut a: Vec<Vec<BigInt>> =
        (0..m.rows).map(|r| (0..m.cols).map(|c| BigInt::from(m.get(r, c))).collect()).collect();
    let (rows, cols) = (m.rows, m.cols);
    let check = |v: &BigInt| -> Result<()> {
        if v.bits() > SNF_BIT_BUDGET {
            Err(Error::Overflow { bits: SNF_BIT_BUDGET })
        } else {
            Ok(())
        }
    };
    let mut factors = Vec::new();
    let mut t = 0;
    while t < rows.min(cols) {
        // Smallest nonzero entry of the trailing block as pivot.
        let mut pivot: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                if !a[i][j].is_zero() && pivot.map_or(true, |(pi, pj)| a[i][j].abs() < a[pi][pj].abs()) {
                    pivot = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pivot else { break };
        a.swap(t, pi);
        for row in a.iter_mut() {
            row.swap(t, pj);
        }
        loop {
            let mut dirty = false;
            for i in t + 1..rows {
                if a[i][t].is_zero() {
                    continue;
                }
                let q = a[i][t].div_floor(&a[t][t]);
                for j in t..cols {
                    let v = &a[i][j] - &q * &a[t][j];
                    check(&v)?;
                    a[i][j] = v;
                }
                if !a[i][t].is_zero() {
                    dirty = true;
                }
            }
            for j in t + 1..cols {
                if a[t][j].is_zero() {
                    continue;
                }
                let q = a[t][j].div_floor(&a[t][t]);
                for i in t..rows {
                    let v = &a[i][j] - &q * &a[i][t];
                    check(&v)?;
                    a[i][j] = v;
                }
                if !a[t][j].is_zero() {
                    dirty = true;
                }
            }
            if !dirty {
                // Pivot must divide the whole trailing block.
                let bad = (t + 1..rows).flat_map(|i| (t + 1..cols).map(move |j| (i, j))).find(|&(i, j)| !a[i][j].is_multiple_of(&a[t][t]));
                match bad {
                    None => break,
                    Some((i, _)) => {
                        for j in t..cols {
                            let v = &a[t][j] + &a[i][j];
                            a[t][j] = v;
                        }
                        continue;
                    }
                }
            }
            // Move the smallest remaining entry in row/column t into the pivot.
            let mut best = (t, t);
            for i in t..rows {
                if !a[i][t].is_zero() && a[i][t].abs() < a[best.0][best.1].abs() {
                    best = (i, t);
                }
            }
            for j in t..cols {
                if !a[t][j].is_zero() && a[t][j].abs() < a[best.0][best.1].abs() {
                    best = (t, j);
                }
            }
            if best.0 != t {
                a.swap(t, best.0);
            }
            if best.1 != t {
                for row in a.iter_mut() {
                    row.swap(t, best.1);
                }
            }
        }
        factors.push(a[t][t].abs());
        t += 1;
    }
    Ok(factors)
}

pub fn rank(m: &IntMatrix) -> Result<usize> {
    Ok(invariant_factors(m)?.len())
}

fn rank_mod2(m: &IntMatrix) -> usize {
    let mut a: Vec<Vec<bool>> = (0..m.rows).map(|r| (0..m.cols).map(|c| m.get(r, c).rem_euclid(2) == 1).collect()).collect();
    let mut rank = 0;
    for c in 0..m.cols {
        let Some(p) = (rank..m.rows).find(|&r| a[r][c]) else { continue };
        a.swap(rank, p);
        for r in 0..m.rows {
            if r != rank && a[r][c] {
                for j in 0..m.cols {
                    let v = a[rank][j];
                    a[r][j] ^= v;
                }
            }
        }
        rank += 1;
    }
    rank
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Position of the critical point in the catalogue the complex was built from.
    pub id: usize,
    pub index: usize,
    pub action: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainComplex {
    pub class: WindingClass,
    /// `None` means no cutoff.
    pub cutoff: Option<f64>,
    /// Generators grouped by degree, sorted by action.
    pub generators: Vec<Vec<Generator>>,
    /// `boundary[k]: C_k → C_{k−1}`; `boundary[0]` has zero rows.
    pub boundary: Vec<IntMatrix>,
}

impl ChainComplex {
    pub fn top_degree(&self) -> usize {
        self.generators.len().saturating_sub(1)
    }

    pub fn rank_of(&self, k: usize) -> usize {
        self.generators.get(k).map_or(0, |g| g.len())
    }

    pub fn is_empty(&self) -> bool {
        self.generators.iter().all(|g| g.is_empty())
    }

    /// Reverse the orientation chosen at one generator (catalogue id).
    pub fn flip_orientation(&mut self, id: usize) {
        for (k, gens) in self.generators.iter().enumerate() {
            if let Some(pos) = gens.iter().position(|g| g.id == id) {
                let m = &mut self.boundary[k];
                for r in 0..m.rows {
                    let v = m.get(r, pos);
                    m.set(r, pos, -v);
                }
                if let Some(up) = self.boundary.get_mut(k + 1) {
                    for c in 0..up.cols {
                        let v = up.get(pos, c);
                        up.set(pos, c, -v);
                    }
                }
            }
        }
    }

    pub fn check_square_zero(&self) -> Result<()> {
        for k in 2..self.boundary.len() {
            if !self.boundary[k - 1].mul(&self.boundary[k]).is_zero() {
                return Err(Error::BoundaryNotSquareZero { degree: k });
            }
        }
        Ok(())
    }
}

/// Assemble the complex from `(index, action)` per catalogue entry and traced
/// lines. Only index-drop-one lines between generators below the cutoff count.
pub fn build_complex_from(class: &WindingClass, points: &[(usize, f64)], lines: &[FlowLine], cutoff: Option<f64>) -> Result<ChainComplex> {
    let below = |a: f64| cutoff.map_or(true, |c| a <= c);
    let top = points.iter().map(|p| p.0).max().map_or(0, |m| m + 1);
    let mut generators: Vec<Vec<Generator>> = vec![Vec::new(); top];
    for (id, &(index, action)) in points.iter().enumerate() {
        if below(action) {
            generators[index].push(Generator { id, index, action });
        }
    }
    for g in generators.iter_mut() {
        g.sort_by(|a, b| a.action.total_cmp(&b.action).then(a.id.cmp(&b.id)));
    }
    while generators.last().is_some_and(|g| g.is_empty()) {
        generators.pop();
    }
    let position = |id: usize| -> Option<(usize, usize)> {
        generators.iter().enumerate().find_map(|(k, gens)| gens.iter().position(|g| g.id == id).map(|p| (k, p)))
    };
    let mut boundary: Vec<IntMatrix> = (0..generators.len())
        .map(|k| IntMatrix::zeros(if k == 0 { 0 } else { generators[k - 1].len() }, generators[k].len()))
        .collect();
    for line in lines {
        if line.index_drop != 1 || line.sign == 0 {
            continue;
        }
        let (Some((ks, cs)), Some((kt, rt))) = (position(line.source_id), position(line.target_id)) else {
            continue;
        };
        if ks != kt + 1 {
            return Err(Error::InvalidArgument(format!(
                "line {} -> {} joins degrees {ks} and {kt}",
                line.source_id, line.target_id
            )));
        }
        let m = &mut boundary[ks];
        let v = m.get(rt, cs) + line.sign as i64;
        m.set(rt, cs, v);
    }
    let complex = ChainComplex { class: class.clone(), cutoff, generators, boundary };
    complex.check_square_zero()?;
    Ok(complex)
}

pub fn build_complex(points: &[crate::critical_points::CriticalPoint], lines: &[FlowLine], cutoff: Option<f64>) -> Result<ChainComplex> {
    let class = points.first().map(|p| p.orbit.alpha().clone()).unwrap_or_else(|| WindingClass(vec![]));
    let summary: Vec<(usize, f64)> = points.iter().map(|p| (p.index, p.action)).collect();
    build_complex_from(&class, &summary, lines, cutoff)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Coefficients {
    #[default]
    Integers,
    Mod2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeHomology {
    pub rank: usize,
    pub torsion: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomologyResult {
    pub coefficients: Coefficients,
    pub degrees: Vec<DegreeHomology>,
}

impl HomologyResult {
    pub fn ranks(&self) -> Vec<usize> {
        self.degrees.iter().map(|d| d.rank).collect()
    }

    pub fn is_torsion_free(&self) -> bool {
        self.degrees.iter().all(|d| d.torsion.is_empty())
    }

    /// `H_0 = Z, H_1 = Z/2` style table.
    pub fn table(&self) -> String {
        let ring = match self.coefficients {
            Coefficients::Integers => "Z",
            Coefficients::Mod2 => "Z2",
        };
        self.degrees
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let mut parts: Vec<String> = Vec::new();
                match d.rank {
                    0 => {}
                    1 => parts.push(ring.to_string()),
                    r => parts.push(format!("{ring}^{r}")),
                }
                parts.extend(d.torsion.iter().map(|t| format!("Z/{t}")));
                let body = if parts.is_empty() { "0".to_string() } else { parts.join(" + ") };
                format!("H{k} = {body}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn homology(complex: &ChainComplex) -> Result<HomologyResult> {
    homology_with(complex, Coefficients::Integers)
}

pub fn homology_with(complex: &ChainComplex, coefficients: Coefficients) -> Result<HomologyResult> {
    complex.check_square_zero()?;
    let top = complex.generators.len();
    let mut ranks = Vec::with_capacity(top + 1);
    let mut torsion = Vec::with_capacity(top + 1);
    for m in &complex.boundary {
        match coefficients {
            Coefficients::Integers => {
                let f = invariant_factors(m)?;
                ranks.push(f.len());
                let t: Vec<u64> = f
                    .iter()
                    .filter(|v| !v.is_one())
                    .map(|v| u64::try_from(v).map_err(|_| Error::Overflow { bits: 64 }))
                    .collect::<Result<_>>()?;
                torsion.push(t);
            }
            Coefficients::Mod2 => {
                ranks.push(rank_mod2(m));
                torsion.push(Vec::new());
            }
        }
    }
    let degrees = (0..top)
        .map(|k| {
            let out_rank = ranks[k];
            let in_rank = ranks.get(k + 1).copied().unwrap_or(0);
            DegreeHomology {
                rank: complex.generators[k].len() - out_rank - in_rank,
                torsion: torsion.get(k + 1).cloned().unwrap_or_default(),
            }
        })
        .collect();
    Ok(HomologyResult { coefficients, degrees })
}

/// Inclusion of the complex below one cutoff into the complex below a larger one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilteredMap {
    /// `chain[k]`: `C_k(high) × C_k(low)` 0/1 inclusion matrix.
    pub chain: Vec<IntMatrix>,
    /// Rank of the induced map on rational homology per degree.
    pub induced_ranks: Vec<usize>,
}

pub fn filtered_map(low: &ChainComplex, high: &ChainComplex) -> Result<FilteredMap> {
    if low.class != high.class {
        return Err(Error::InvalidArgument("filtered map between different classes".into()));
    }
    if let (Some(a), b) = (low.cutoff, high.cutoff) {
        if b.is_some_and(|b| b < a) {
            return Err(Error::InvalidArgument("filtered map needs low cutoff <= high cutoff".into()));
        }
    }
    let top = high.generators.len();
    let mut chain = Vec::with_capacity(top);
    let mut induced_ranks = Vec::with_capacity(top);
    for k in 0..top {
        let hi = &high.generators[k];
        let lo = low.generators.get(k).map_or(&[][..], |g| g.as_slice());
        let mut m = IntMatrix::zeros(hi.len(), lo.len());
        for (c, g) in lo.iter().enumerate() {
            let r = hi.iter().position(|h| h.id == g.id).ok_or_else(|| {
                Error::InvalidArgument(format!("generator {} below the low cutoff is missing above", g.id))
            })?;
            m.set(r, c, 1);
        }
        // rank = dim Z_k(low) − dim(B_k(high) ∩ span C_k(low))
        let cycles = lo.len() - low.boundary.get(k).map_or(Ok(0), rank)?;
        let up = high.boundary.get(k + 1);
        let b_high = up.map_or(Ok(0), rank)?;
        let outside: Vec<usize> = (0..hi.len()).filter(|r| (0..lo.len()).all(|c| m.get(*r, c) == 0)).collect();
        let b_outside = up.map_or(Ok(0), |u| rank(&u.select_rows(&outside)))?;
        induced_ranks.push(cycles - (b_high - b_outside));
        chain.push(m);
    }
    // Chain-map check: ∂_high ∘ i = i ∘ ∂_low.
    for k in 1..top {
        let left = high.boundary[k].mul(&chain[k]);
        let right = chain[k - 1].mul(&low.boundary.get(k).cloned().unwrap_or_else(|| IntMatrix::zeros(chain[k - 1].cols(), chain[k].cols())));
        if left != right {
            return Err(Error::InvalidArgument(format!("inclusion does not commute with the boundary in degree {k}")));
        }
    }
    Ok(FilteredMap { chain, induced_ranks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complex(gens: Vec<Vec<(usize, f64)>>, boundary: Vec<IntMatrix>, cutoff: Option<f64>) -> ChainComplex {
        ChainComplex {
            class: WindingClass(vec![1]),
            cutoff,
            generators: gens
                .into_iter()
                .enumerate()
                .map(|(k, g)| g.into_iter().map(|(id, action)| Generator { id, index: k, action }).collect())
                .collect(),
            boundary,
        }
    }

    #[test]
    fn multiplication_by_two() {
        let c = complex(
            vec![vec![(0, 0.0)], vec![(1, 1.0)]],
            vec![IntMatrix::zeros(0, 1), IntMatrix::from_rows(&[vec![2]])],
            None,
        );
        let h = homology(&c).unwrap();
        assert_eq!(h.degrees[0], DegreeHomology { rank: 0, torsion: vec![2] });
        assert_eq!(h.degrees[1], DegreeHomology { rank: 0, torsion: vec![] });
        assert_eq!(h.table(), "H0 = Z/2\nH1 = 0");
        let h2 = homology_with(&c, Coefficients::Mod2).unwrap();
        assert_eq!(h2.ranks(), vec![1, 1]);
    }

    #[test]
    fn smith_form_divisibility() {
        let m = IntMatrix::from_rows(&[vec![2, 4, 4], vec![-6, 6, 12], vec![10, -4, -16]]);
        let f: Vec<i64> = invariant_factors(&m).unwrap().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(f, vec![2, 6, 12]);
        let m = IntMatrix::from_rows(&[vec![2, 0], vec![0, 3]]);
        let f: Vec<i64> = invariant_factors(&m).unwrap().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(f, vec![1, 6]);
    }

    #[test]
    fn flagged_non_square_zero() {
        let c = complex(
            vec![vec![(0, 0.0)], vec![(1, 1.0)], vec![(2, 2.0)]],
            vec![IntMatrix::zeros(0, 1), IntMatrix::from_rows(&[vec![1]]), IntMatrix::from_rows(&[vec![1]])],
            None,
        );
        assert_eq!(c.check_square_zero(), Err(Error::BoundaryNotSquareZero { degree: 2 }));
    }

    #[test]
    fn cutoff_below_everything_is_empty() {
        let pts = [(0usize, 1.0), (1usize, 3.0)];
        let c = build_complex_from(&WindingClass(vec![1]), &pts, &[], Some(0.5)).unwrap();
        assert!(c.is_empty());
        assert!(homology(&c).unwrap().degrees.is_empty());
    }

    #[test]
    fn filtered_maps() {
        let pts = [(0usize, 1.0), (1usize, 3.0)];
        let class = WindingClass(vec![1]);
        let empty = build_complex_from(&class, &pts, &[], Some(0.0)).unwrap();
        let mid = build_complex_from(&class, &pts, &[], Some(2.0)).unwrap();
        let full = build_complex_from(&class, &pts, &[], None).unwrap();
        let z = filtered_map(&empty, &full).unwrap();
        assert!(z.chain.iter().all(|m| m.is_zero()));
        assert_eq!(z.induced_ranks, vec![0, 0]);
        let id = filtered_map(&full, &full).unwrap();
        assert_eq!(id.chain[0], IntMatrix::from_rows(&[vec![1]]));
        assert_eq!(id.induced_ranks, vec![1, 1]);
        let m = filtered_map(&mid, &full).unwrap();
        assert_eq!(m.induced_ranks[0], 1);
        assert_eq!(homology(&mid).unwrap().ranks(), vec![1]);
        // Functoriality.
        let ab = filtered_map(&empty, &mid).unwrap();
        let bc = filtered_map(&mid, &full).unwrap();
        let ac = filtered_map(&empty, &full).unwrap();
        for k in 0..ac.chain.len() {
            let composed = bc.chain[k].mul(ab.chain.get(k).unwrap_or(&IntMatrix::zeros(bc.chain[k].cols(), 0)));
            assert_eq!(composed, ac.chain[k]);
        }
    }

    #[test]
    fn killed_class_has_zero_induced_rank() {
        // C0 = <a (action 0), b (action 1)>, C1 = <c (action 2)>, ∂c = a − b.
        let class = WindingClass(vec![0]);
        let low = ChainComplex {
            class: class.clone(),
            cutoff: Some(0.5),
            generators: vec![vec![Generator { id: 0, index: 0, action: 0.0 }]],
            boundary: vec![IntMatrix::zeros(0, 1)],
        };
        let high = ChainComplex {
            class,
            cutoff: None,
            generators: vec![
                vec![Generator { id: 0, index: 0, action: 0.0 }, Generator { id: 1, index: 0, action: 1.0 }],
                vec![Generator { id: 2, index: 1, action: 2.0 }],
            ],
            boundary: vec![IntMatrix::zeros(0, 2), IntMatrix::from_rows(&[vec![1], vec![-1]])],
        };
        let m = filtered_map(&low, &high).unwrap();
        assert_eq!(m.induced_ranks[0], 1);
        assert_eq!(homology(&high).unwrap().ranks(), vec![1, 0]);
    }

    #[test]
    fn text_format() {
        let m = IntMatrix::from_rows(&[vec![1, -2], vec![0, 3]]);
        assert_eq!(m.to_string(), "1 -2\n0 3\n");
    }
}
