//! Tree-structured prefix-sum weight tables.
//!
//! Each input unit `j` owns a complete binary tree of depth `k`. Every node
//! holds a weight vector in `R^q` and corresponds to one prefix of the unit's
//! `k` selected gate bits; the root is the empty prefix and acts as the
//! unit's default weights. The effective weight vector for bit sequence `b`
//! is the sum of the `k+1` node vectors on the root-to-leaf path spelled by
//! `b`, so short prefixes are shared by many bit patterns and deep nodes only
//! make small corrections.
//!
//! Nodes are stored in the implicit complete-tree layout, per unit:
//!
//! ```text
//! level 0:              0                 <- root, empty prefix
//! level 1:          1       2            <- prefixes (0), (1)
//! level 2:        3   4   5   6          <- prefixes (00), (01), (10), (11)
//! flat index of (level l, prefix value v) = 2^l - 1 + v
//! ```
//!
//! The first selected bit is the most significant bit of the prefix value.
//! The full table is one contiguous array ordered (unit-major, node index,
//! component); that ordering is also the serialization order.

use crate::cost::CostMeter;
use crate::error::{Error, Result};
use rand::Rng;
use serde::Serialize;

/// Hard cap on tree depth; a deeper table would not fit in memory.
pub const MAX_DEPTH: usize = 24;

/// Depth limit for the enumeration oracle (2^k leaf sums get materialized).
pub const ORACLE_MAX_DEPTH: usize = 12;

/// Entry cap for the eager-decay oracle and other full-table test equipment.
pub const ORACLE_MAX_ENTRIES: u64 = 100_000;

/// A node address: level `l` in `0..=k` plus the prefix value `v` in
/// `0..2^l`, with the first bit as the most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    pub level: usize,
    pub prefix_value: usize,
}

impl NodeId {
    /// Flat index `2^l - 1 + v`; a bijection onto `0..2^(k+1)-1`.
    pub fn flat_index(&self) -> usize {
        (1 << self.level) - 1 + self.prefix_value
    }
}

/// Flat index of the node for `prefix` (the level is the prefix length).
pub fn node_index(k: usize, prefix: &[bool]) -> Result<usize> {
    let level = prefix.len();
    if level > k {
        return Err(Error::Dimension(format!(
            "prefix of length {} exceeds tree depth {}",
            level, k
        )));
    }
    let mut value = 0usize;
    for &bit in prefix {
        value = (value << 1) | usize::from(bit);
    }
    Ok((1 << level) - 1 + value)
}

/// Per-unit binary trees of weight vectors, indexed by bit prefixes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixTreeTable {
    p: usize,
    q: usize,
    k: usize,
    entries: Vec<f64>,
}

impl PrefixTreeTable {
    fn check_dims(p: usize, q: usize, k: usize) -> Result<()> {
        if p == 0 || q == 0 {
            return Err(Error::Dimension(format!(
                "table needs p >= 1 and q >= 1, got p = {p}, q = {q}"
            )));
        }
        if k > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "tree depth k = {k} exceeds the capacity guard {MAX_DEPTH}"
            )));
        }
        Ok(())
    }

    pub fn zeros(p: usize, q: usize, k: usize) -> Result<Self> {
        Self::check_dims(p, q, k)?;
        let nodes = (1usize << (k + 1)) - 1;
        Ok(PrefixTreeTable {
            p,
            q,
            k,
            entries: vec![0.0; p * nodes * q],
        })
    }

    /// Standard initialization: root vectors uniform in `(-1/sqrt(p), 1/sqrt(p))`,
    /// all deeper nodes zero so they start as pure corrections.
    pub fn init_root_uniform(p: usize, q: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut table = Self::zeros(p, q, k)?;
        let scale = 1.0 / (p as f64).sqrt();
        for j in 0..p {
            for c in 0..q {
                let v = rng.random_range(-scale..scale);
                table.node_vec_mut(j, 0)[c] = v;
            }
        }
        Ok(table)
    }

    /// Every node drawn uniform in `(-1/sqrt(p), 1/sqrt(p))`; used for hidden
    /// ground-truth layers whose deep nodes must actually matter.
    pub fn init_all_uniform(p: usize, q: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut table = Self::zeros(p, q, k)?;
        let scale = 1.0 / (p as f64).sqrt();
        for e in table.entries.iter_mut() {
            *e = rng.random_range(-scale..scale);
        }
        Ok(table)
    }

    /// Rebuild from a flat payload in canonical order.
    pub fn from_entries(p: usize, q: usize, k: usize, entries: Vec<f64>) -> Result<Self> {
        Self::check_dims(p, q, k)?;
        let nodes = (1usize << (k + 1)) - 1;
        let expected = p * nodes * q;
        if entries.len() != expected {
            return Err(Error::ModelFormat(format!(
                "table payload holds {} entries, expected p*q*(2^(k+1)-1) = {}",
                entries.len(),
                expected
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::ModelFormat(format!(
                "table payload contains a non-finite entry: {bad}"
            )));
        }
        Ok(PrefixTreeTable { p, q, k, entries })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes_per_unit(&self) -> usize {
        (1 << (self.k + 1)) - 1
    }

    /// Flat entries in canonical (unit-major, node, component) order.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn node_vec(&self, j: usize, node: usize) -> &[f64] {
        let base = (j * self.nodes_per_unit() + node) * self.q;
        &self.entries[base..base + self.q]
    }

    pub fn node_vec_mut(&mut self, j: usize, node: usize) -> &mut [f64] {
        let base = (j * self.nodes_per_unit() + node) * self.q;
        &mut self.entries[base..base + self.q]
    }

    /// Flat node indices along the root-to-leaf path spelled by `bits`.
    pub fn path_node_indices(&self, bits: &[bool]) -> Vec<usize> {
        debug_assert_eq!(bits.len(), self.k);
        let mut path = Vec::with_capacity(self.k + 1);
        let mut value = 0usize;
        path.push(0);
        for (l, &bit) in bits.iter().enumerate() {
            value = (value << 1) | usize::from(bit);
            path.push((1 << (l + 1)) - 1 + value);
        }
        path
    }

    /// `F_j(b)`: component-wise sum of the `k+1` node vectors along the path
    /// of `b`. Books `k` vector additions (`k*q` scalar adds) and `k+1`
    /// lookups on the meter.
    pub fn effective_weight(&self, j: usize, bits: &[bool], meter: &mut CostMeter) -> Vec<f64> {
        assert!(j < self.p, "unit index {} out of range (p = {})", j, self.p);
        assert_eq!(bits.len(), self.k, "bit sequence must have length k");
        let mut acc = self.node_vec(j, 0).to_vec();
        meter.lookups += 1;
        let mut value = 0usize;
        for (l, &bit) in bits.iter().enumerate() {
            value = (value << 1) | usize::from(bit);
            let node = (1 << (l + 1)) - 1 + value;
            let vec = self.node_vec(j, node);
            for (a, &v) in acc.iter_mut().zip(vec) {
                *a += v;
            }
            meter.lookups += 1;
            meter.additions += self.q as u64;
        }
        acc
    }
}

/// Per-level modulation coefficients `c_l = (prod_{i<=l} (1 - tanh(x_{pi_i})))^(1/l)`.
///
/// `pi` maps each selected bit to the input coordinate it was derived from;
/// the inputs are assumed rectifier outputs, so negative values are a domain
/// error. Returns `c_1..c_k`.
pub fn modulation_coefficients(x: &[f64], pi: &[usize]) -> Result<Vec<f64>> {
    let mut coeffs = Vec::with_capacity(pi.len());
    let mut log_prod = 0.0f64;
    for (l, &t) in pi.iter().enumerate() {
        let xv = x[t];
        if xv < 0.0 {
            return Err(Error::Domain(format!(
                "modulated weights need non-negative gated inputs; x[{t}] = {xv}"
            )));
        }
        let factor = 1.0 - xv.tanh();
        // factor is in (0, 1]; accumulate in log space for the 1/l power.
        log_prod += factor.ln();
        coeffs.push((log_prod / (l + 1) as f64).exp());
    }
    Ok(coeffs)
}

impl PrefixTreeTable {
    /// Modulated variant: the root keeps coefficient 1 and each deeper node's
    /// contribution is scaled by `c_l`, which shrinks toward 0 as the gating
    /// inputs grow. Returns the weight vector and the coefficients `c_1..c_k`.
    ///
    /// Books `k+1` lookups and `k*q` multiply-adds (the scaled accumulations)
    /// on the meter.
    pub fn modulated_effective_weight(
        &self,
        j: usize,
        bits: &[bool],
        x: &[f64],
        pi: &[usize],
        meter: &mut CostMeter,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        assert!(j < self.p, "unit index {} out of range (p = {})", j, self.p);
        assert_eq!(bits.len(), self.k, "bit sequence must have length k");
        assert_eq!(pi.len(), self.k, "index map must have length k");
        let coeffs = modulation_coefficients(x, pi)?;
        let mut acc = self.node_vec(j, 0).to_vec();
        meter.lookups += 1;
        let mut value = 0usize;
        for (l, &bit) in bits.iter().enumerate() {
            value = (value << 1) | usize::from(bit);
            let node = (1 << (l + 1)) - 1 + value;
            let c = coeffs[l];
            let vec = self.node_vec(j, node);
            for (a, &v) in acc.iter_mut().zip(vec) {
                *a += c * v;
            }
            meter.lookups += 1;
            meter.multiply_adds += self.q as u64;
        }
        Ok((acc, coeffs))
    }
}

/// Reference implementation of `F_j` by brute force: materialize all `2^k`
/// leaf sums by recursive descent (children of flat node `n` are `2n+1` and
/// `2n+2`), then index by `b`. Deliberately shares no traversal logic with
/// [`PrefixTreeTable::effective_weight`].
pub fn naive_leaf_oracle(table: &PrefixTreeTable, j: usize, bits: &[bool]) -> Result<Vec<f64>> {
    let k = table.k();
    if k > ORACLE_MAX_DEPTH {
        return Err(Error::OracleGuard(format!(
            "leaf enumeration refuses k = {k} > {ORACLE_MAX_DEPTH}"
        )));
    }
    assert_eq!(bits.len(), k);
    assert!(j < table.p());
    // sums[v] = running sum for the node with prefix value v at this level;
    // flat[v] = its flat index.
    let mut sums = vec![table.node_vec(j, 0).to_vec()];
    let mut flat = vec![0usize];
    for _ in 0..k {
        let mut next_sums = Vec::with_capacity(sums.len() * 2);
        let mut next_flat = Vec::with_capacity(flat.len() * 2);
        for (sum, &n) in sums.iter().zip(&flat) {
            for child in [2 * n + 1, 2 * n + 2] {
                let mut s = sum.clone();
                for (a, &v) in s.iter_mut().zip(table.node_vec(j, child)) {
                    *a += v;
                }
                next_sums.push(s);
                next_flat.push(child);
            }
        }
        sums = next_sums;
        flat = next_flat;
    }
    let mut leaf = 0usize;
    for &bit in bits {
        leaf = (leaf << 1) | usize::from(bit);
    }
    Ok(sums.swap_remove(leaf))
}

/// Parameter accounting for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamReport {
    pub p: u64,
    pub q: u64,
    pub k: u64,
    /// Exact node count per unit: `2^(k+1) - 1` (all prefixes of length 0..=k).
    pub nodes_per_unit: u64,
    /// Leaf count per unit, `2^k`: the number of distinct weight vectors a
    /// unit can take.
    pub leaves_per_unit: u64,
    /// The commonly quoted per-unit figure `2^(k+1)`; one more than the exact
    /// geometric sum `1 + 2 + ... + 2^k`.
    pub paper_nominal_nodes_per_unit: u64,
    /// `p * q * nodes_per_unit`.
    pub total_table_entries: u64,
    /// Entry count of a plain dense layer of the same shape: `p * q`.
    pub dense_equivalent_entries: u64,
    /// `p * q * 2^(k+1)`, the nominal total.
    pub paper_nominal_entries: u64,
    /// Parameters-to-computation gain over dense: `2^k / k` (reported as 1
    /// for `k = 0`, where the layer degenerates to a dense matrix).
    pub capacity_ratio_gain: f64,
}

/// Exact and nominal parameter counts for a `p -> q` layer of depth `k`.
pub fn count_parameters(p: usize, q: usize, k: usize) -> Result<ParamReport> {
    if p == 0 || q == 0 {
        return Err(Error::Dimension(format!(
            "parameter counting needs p >= 1 and q >= 1, got p = {p}, q = {q}"
        )));
    }
    if k > MAX_DEPTH {
        return Err(Error::InvalidConfig(format!(
            "tree depth k = {k} exceeds the capacity guard {MAX_DEPTH}"
        )));
    }
    let nodes_per_unit = (1u64 << (k + 1)) - 1;
    let leaves_per_unit = 1u64 << k;
    let nominal_nodes = 1u64 << (k + 1);
    let pq = p as u64 * q as u64;
    let gain = if k == 0 {
        1.0
    } else {
        (leaves_per_unit as f64) / (k as f64)
    };
    Ok(ParamReport {
        p: p as u64,
        q: q as u64,
        k: k as u64,
        nodes_per_unit,
        leaves_per_unit,
        paper_nominal_nodes_per_unit: nominal_nodes,
        total_table_entries: pq * nodes_per_unit,
        dense_equivalent_entries: pq,
        paper_nominal_entries: pq * nominal_nodes,
        capacity_ratio_gain: gain,
    })
}
