//! Level-wise frequent itemset mining (Apriori) and an exhaustive oracle.
//!
//! Candidates of size `k + 1` are formed by joining frequent `k`-itemsets that
//! share their first `k - 1` items, pruned when any `k`-subset is infrequent,
//! and counted exactly. Counting uses per-itemset transaction bitsets so each
//! candidate costs one AND + popcount over `N / 64` words.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::transactions::TransactionDb;

#[derive(Debug, Error, PartialEq)]
pub enum MiningError {
    #[error("item {item} outside universe of size {universe}")]
    ItemOutOfRange { item: u32, universe: usize },
    #[error("minimum support {0} not in (0, 1]")]
    InvalidBeta(f64),
    #[error("maximum pattern length must be at least 1")]
    InvalidMaxLen,
    #[error("brute-force enumeration limited to 20 items, universe has {0}")]
    UniverseTooLarge(usize),
    #[error("support of an itemset is undefined on an empty database")]
    EmptyDatabase,
}

/// How a pattern's support is compared against the minimum support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Comparison {
    #[default]
    AtLeast,
    Greater,
}

impl Comparison {
    pub fn accepts(self, count: usize, n: usize, beta: f64) -> bool {
        let support = count as f64 / n as f64;
        match self {
            Comparison::AtLeast => support >= beta,
            Comparison::Greater => support > beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub items: Vec<u32>,
    pub count: usize,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub beta: f64,
    pub max_len: usize,
    /// Patterns ordered by cardinality, then lexicographically.
    pub patterns: Vec<Pattern>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Every item that occurs in at least one pattern, ascending.
    pub fn items(&self) -> Vec<u32> {
        let mut items: Vec<u32> = self
            .patterns
            .iter()
            .flat_map(|p| p.items.iter().copied())
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    pub fn get(&self, items: &[u32]) -> Option<&Pattern> {
        self.patterns
            .binary_search_by(|p| canonical_cmp(&p.items, items))
            .ok()
            .map(|i| &self.patterns[i])
    }

    /// Line-oriented dump: `support<TAB>i1 i2 ...`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.patterns {
            let items: Vec<String> = p.items.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(
                s,
                "{}\t{}",
                format_significant(p.support, 9),
                items.join(" ")
            );
        }
        s
    }

    fn sort(&mut self) {
        self.patterns
            .sort_by(|a, b| canonical_cmp(&a.items, &b.items));
    }
}

fn canonical_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// `%.{digits}g`-style formatting.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -5 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, v);
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = trim_zeros(mantissa);
        let e: i32 = e.parse().unwrap();
        return format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Fraction of transactions containing every item of `itemset`.
pub fn support(db: &TransactionDb, itemset: &[u32]) -> Result<f64, MiningError> {
    if let Some(&item) = itemset.iter().find(|&&i| i as usize >= db.universe_size()) {
        return Err(MiningError::ItemOutOfRange {
            item,
            universe: db.universe_size(),
        });
    }
    if db.is_empty() {
        return Err(MiningError::EmptyDatabase);
    }
    let hits = db
        .transactions
        .iter()
        .filter(|t| itemset.iter().all(|i| t.binary_search(i).is_ok()))
        .count();
    Ok(hits as f64 / db.len() as f64)
}

fn check_params(beta: f64, max_len: usize) -> Result<(), MiningError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(MiningError::InvalidBeta(beta));
    }
    if max_len == 0 {
        return Err(MiningError::InvalidMaxLen);
    }
    Ok(())
}

pub fn apriori(db: &TransactionDb, beta: f64, max_len: usize) -> Result<PatternSet, MiningError> {
    apriori_with(db, beta, max_len, Comparison::AtLeast)
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn zeros(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

pub fn apriori_with(
    db: &TransactionDb,
    beta: f64,
    max_len: usize,
    cmp: Comparison,
) -> Result<PatternSet, MiningError> {
    check_params(beta, max_len)?;
    let n = db.len();
    let mut out = PatternSet {
        beta,
        max_len,
        patterns: Vec::new(),
    };
    if n == 0 {
        return Ok(out);
    }

    // level 1: a single pass builds every item's transaction bitset
    let mut tidsets = vec![Bits::zeros(n); db.universe_size()];
    for (tid, t) in db.transactions.iter().enumerate() {
        for &i in t {
            tidsets[i as usize].set(tid);
        }
    }
    let mut level: Vec<(Vec<u32>, Bits)> = Vec::new();
    for (item, bits) in tidsets.iter().enumerate() {
        let count = bits.count();
        if count > 0 && cmp.accepts(count, n, beta) {
            out.patterns.push(Pattern {
                items: vec![item as u32],
                count,
                support: count as f64 / n as f64,
            });
            level.push((vec![item as u32], bits.clone()));
        }
    }

    let mut k = 1;
    while k < max_len && level.len() > 1 {
        let known: HashSet<&[u32]> = level.iter().map(|(s, _)| s.as_slice()).collect();
        let mut next: Vec<(Vec<u32>, Bits)> = Vec::new();
        let mut start = 0;
        while start < level.len() {
            // block of itemsets sharing the same (k-1)-prefix
            let prefix = &level[start].0[..k - 1];
            let mut end = start + 1;
            while end < level.len() && &level[end].0[..k - 1] == prefix {
                end += 1;
            }
            for a in start..end {
                for b in a + 1..end {
                    let mut cand = level[a].0.clone();
                    cand.push(*level[b].0.last().unwrap());
                    if !all_subsets_frequent(&cand, &known) {
                        continue;
                    }
                    let last = *cand.last().unwrap() as usize;
                    let bits = level[a].1.and(&tidsets[last]);
                    let count = bits.count();
                    if cmp.accepts(count, n, beta) {
                        out.patterns.push(Pattern {
                            items: cand.clone(),
                            count,
                            support: count as f64 / n as f64,
                        });
                        next.push((cand, bits));
                    }
                }
            }
            start = end;
        }
        level = next;
        k += 1;
    }
    out.sort();
    Ok(out)
}

fn all_subsets_frequent(cand: &[u32], known: &HashSet<&[u32]>) -> bool {
    // the two subsets dropping one of the last two items are the join parents
    let k = cand.len();
    let mut sub = Vec::with_capacity(k - 1);
    (0..k.saturating_sub(2)).all(|skip| {
        sub.clear();
        sub.extend(
            cand.iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v),
        );
        known.contains(sub.as_slice())
    })
}

/// Enumerates every itemset up to `max_len` over a universe of at most 20
/// items and counts it by scanning the transactions.
pub fn brute_force_mine(
    db: &TransactionDb,
    beta: f64,
    max_len: usize,
) -> Result<PatternSet, MiningError> {
    brute_force_mine_with(db, beta, max_len, Comparison::AtLeast)
}

pub fn brute_force_mine_with(
    db: &TransactionDb,
    beta: f64,
    max_len: usize,
    cmp: Comparison,
) -> Result<PatternSet, MiningError> {
    check_params(beta, max_len)?;
    let m = db.universe_size();
    if m > 20 {
        return Err(MiningError::UniverseTooLarge(m));
    }
    let n = db.len();
    let mut out = PatternSet {
        beta,
        max_len,
        patterns: Vec::new(),
    };
    if n == 0 {
        return Ok(out);
    }
    let masks: Vec<u32> = db
        .transactions
        .iter()
        .map(|t| t.iter().fold(0u32, |acc, &i| acc | 1 << i))
        .collect();
    for set in 1u32..(1u32 << m) {
        if set.count_ones() as usize > max_len {
            continue;
        }
        let count = masks.iter().filter(|&&t| t & set == set).count();
        if count > 0 && cmp.accepts(count, n, beta) {
            out.patterns.push(Pattern {
                items: (0..m as u32).filter(|i| set >> i & 1 == 1).collect(),
                count,
                support: count as f64 / n as f64,
            });
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn db(universe: usize, ts: &[&[u32]]) -> TransactionDb {
        TransactionDb::new((1, universe), ts.iter().map(|t| t.to_vec()).collect())
    }

    #[test]
    fn support_values() {
        let d = db(4, &[&[1, 2], &[1, 2], &[2, 3], &[2]]);
        assert_eq!(support(&d, &[2]).unwrap(), 1.0);
        assert_eq!(support(&d, &[1, 2]).unwrap(), 0.5);
        assert_eq!(support(&d, &[0]).unwrap(), 0.0);
        assert_eq!(
            support(&d, &[4]),
            Err(MiningError::ItemOutOfRange {
                item: 4,
                universe: 4
            })
        );
    }

    #[test]
    fn apriori_small_example() {
        let d = db(4, &[&[1, 2], &[1, 2], &[2, 3]]);
        let p = apriori(&d, 0.6, 2).unwrap();
        let got: Vec<(Vec<u32>, usize)> = p
            .patterns
            .iter()
            .map(|p| (p.items.clone(), p.count))
            .collect();
        assert_eq!(got, vec![(vec![1], 2), (vec![2], 3), (vec![1, 2], 2)]);
        assert_eq!(p.get(&[1, 2]).unwrap().support, 2.0 / 3.0);
        assert!(p.get(&[3]).is_none());
    }

    #[test]
    fn unanimity() {
        let d = db(5, &[&[0, 1, 4], &[0, 1, 2], &[0, 1, 3]]);
        let p = apriori(&d, 1.0, 3).unwrap();
        let sets: Vec<&[u32]> = p.patterns.iter().map(|p| p.items.as_slice()).collect();
        assert_eq!(sets, vec![&[0][..], &[1], &[0, 1]]);
    }

    #[test]
    fn invalid_beta() {
        let d = db(2, &[&[0]]);
        assert_eq!(apriori(&d, 0.0, 2), Err(MiningError::InvalidBeta(0.0)));
        assert_eq!(apriori(&d, 1.5, 2), Err(MiningError::InvalidBeta(1.5)));
        assert_eq!(apriori(&d, 0.5, 0), Err(MiningError::InvalidMaxLen));
    }

    #[test]
    fn brute_force_basics() {
        let empty = db(3, &[&[], &[]]);
        assert!(brute_force_mine(&empty, 0.5, 3).unwrap().is_empty());

        let single = db(2, &[&[0, 1]]);
        let p = brute_force_mine(&single, 1.0, 2).unwrap();
        let sets: Vec<&[u32]> = p.patterns.iter().map(|p| p.items.as_slice()).collect();
        assert_eq!(sets, vec![&[0][..], &[1], &[0, 1]]);

        let big = TransactionDb::new((3, 7), vec![vec![0]]);
        assert_eq!(
            brute_force_mine(&big, 0.5, 2),
            Err(MiningError::UniverseTooLarge(21))
        );
    }

    #[test]
    fn strict_comparison() {
        let d = db(3, &[&[0, 1], &[0], &[1], &[2]]);
        let ge = apriori_with(&d, 0.5, 2, Comparison::AtLeast).unwrap();
        let gt = apriori_with(&d, 0.5, 2, Comparison::Greater).unwrap();
        assert_eq!(ge.items(), vec![0, 1]);
        assert!(gt.is_empty());
        assert_eq!(
            brute_force_mine_with(&d, 0.5, 2, Comparison::Greater).unwrap(),
            gt
        );
    }

    #[test]
    fn text_dump() {
        let d = db(4, &[&[1, 2], &[1, 2], &[2, 3]]);
        let p = apriori(&d, 0.6, 2).unwrap();
        assert_eq!(p.to_text(), "0.666666667\t1\n1\t2\n0.666666667\t1 2\n");
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.5, 9), "0.5");
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(0.07, 9), "0.07");
        assert_eq!(format_significant(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(format_significant(1e-7, 9), "1e-07");
        assert_eq!(format_significant(123.456, 4), "123.5");
    }

    fn arb_db() -> impl Strategy<Value = TransactionDb> {
        (1usize..=12, 1usize..=25).prop_flat_map(|(m, n)| {
            proptest::collection::vec(proptest::collection::vec(0..m as u32, 0..=m), n)
                .prop_map(move |ts| TransactionDb::new((1, m), ts))
        })
    }

    proptest! {
        #[test]
        fn apriori_matches_oracle(d in arb_db(), beta in 0.05f64..=1.0, max_len in 1usize..=4) {
            prop_assert_eq!(apriori(&d, beta, max_len).unwrap(), brute_force_mine(&d, beta, max_len).unwrap());
        }

        #[test]
        fn raising_beta_shrinks(d in arb_db(), beta in 0.05f64..0.9, bump in 0.0f64..0.1) {
            let lo = apriori(&d, beta, 3).unwrap();
            let hi = apriori(&d, beta + bump, 3).unwrap();
            for p in &hi.patterns {
                prop_assert!(lo.get(&p.items).is_some());
            }
        }

        #[test]
        fn items_are_frequent_singletons(d in arb_db(), beta in 0.05f64..=1.0) {
            let p = apriori(&d, beta, 3).unwrap();
            let singles: Vec<u32> = (0..d.universe_size() as u32)
                .filter(|&i| {
                    let s = support(&d, &[i]).unwrap();
                    s > 0.0 && s >= beta
                })
                .collect();
            prop_assert_eq!(p.items(), singles);
        }
    }
}
