//! Token-level suffix array built by prefix doubling.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;

/// Sorts all suffix start positions of `text` lexicographically.
///
/// Prefix doubling with a parallel sort per round: `O(n log^2 n)` in the
/// worst case and independent of how repetitive the corpus is.
pub fn build_suffix_array(text: &[u32]) -> Vec<u32> {
    let n = text.len();
    assert!(n < u32::MAX as usize, "text too long for u32 suffix array");
    if n == 0 {
        return Vec::new();
    }
    let mut sa: Vec<u32> = (0..n as u32).collect();
    sa.par_sort_unstable_by_key(|&i| text[i as usize]);

    let mut rank = vec![0u32; n];
    for j in 1..n {
        let (a, b) = (sa[j - 1] as usize, sa[j] as usize);
        rank[b] = rank[a] + u32::from(text[a] != text[b]);
    }

    let mut k = 1usize;
    let mut next = vec![0u32; n];
    while (rank[sa[n - 1] as usize] as usize) < n - 1 {
        let key = |i: u32| -> u64 {
            let i = i as usize;
            let second = if i + k < n { rank[i + k] as u64 + 1 } else { 0 };
            ((rank[i] as u64) << 32) | second
        };
        sa.par_sort_unstable_by_key(|&i| key(i));
        next[sa[0] as usize] = 0;
        for j in 1..n {
            let bump = u32::from(key(sa[j - 1]) != key(sa[j]));
            next[sa[j] as usize] = next[sa[j - 1] as usize] + bump;
        }
        std::mem::swap(&mut rank, &mut next);
        k *= 2;
    }
    sa
}

/// Compares the first `query.len()` symbols of the suffix at `pos` with `query`.
#[inline]
fn cmp_prefix(text: &[u32], pos: u32, query: &[u32]) -> Ordering {
    let pos = pos as usize;
    let end = (pos + query.len()).min(text.len());
    text[pos..end].cmp(query)
}

/// Range of suffix-array slots whose suffixes start with `query`.
pub fn matching_range(text: &[u32], sa: &[u32], query: &[u32]) -> Range<usize> {
    if query.is_empty() {
        return 0..sa.len();
    }
    let lo = sa.partition_point(|&p| cmp_prefix(text, p, query) == Ordering::Less);
    let hi = lo + sa[lo..].partition_point(|&p| cmp_prefix(text, p, query) != Ordering::Greater);
    lo..hi
}
