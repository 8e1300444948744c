use std::collections::HashMap;

use super::{HashCode, RetrievalIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapOptions {
    /// Drop each query's own entry from its ranking when the query set is
    /// contained in the index.
    pub exclude_self: bool,
    /// Score only the top `k` of each ranking.
    pub cutoff: Option<usize>,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            exclude_self: true,
            cutoff: None,
        }
    }
}

/// For each query, the index position holding the same item, when every
/// query (id, code, label) is present in the index. `None` otherwise.
fn self_positions(index: &RetrievalIndex, queries: &RetrievalIndex) -> Option<Vec<usize>> {
    let by_id: HashMap<u64, usize> = index
        .ids()
        .iter()
        .enumerate()
        .map(|(p, &id)| (id, p))
        .collect();
    (0..queries.len())
        .map(|q| {
            let p = *by_id.get(&queries.ids()[q])?;
            (index.words(p) == queries.words(q) && index.labels()[p] == queries.labels()[q])
                .then_some(p)
        })
        .collect()
}

fn check(index: &RetrievalIndex, queries: &RetrievalIndex) -> Result<()> {
    if index.is_empty() {
        return Err(Error::Empty("retrieval index"));
    }
    if queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    if index.bits() != queries.bits() {
        return Err(Error::shape(
            "query bits",
            &[index.bits()],
            &[queries.bits()],
        ));
    }
    Ok(())
}

fn rankings<'a>(
    index: &'a RetrievalIndex,
    queries: &'a RetrievalIndex,
    exclude_self: bool,
) -> impl Iterator<Item = Result<(i32, Vec<(u32, usize)>)>> + 'a {
    let skips = if exclude_self {
        self_positions(index, queries)
    } else {
        None
    };
    (0..queries.len()).map(move |q| {
        let code: HashCode = queries.code(q);
        let skip = skips.as_ref().map(|s| s[q]);
        Ok((queries.labels()[q], index.rank_positions(&code, skip)?))
    })
}

/// Mean over queries of average precision. An item is relevant when its
/// label equals the query's. Queries with no relevant item score 0.
pub fn mean_average_precision(
    index: &RetrievalIndex,
    queries: &RetrievalIndex,
    opts: &MapOptions,
) -> Result<f64> {
    check(index, queries)?;
    if opts.cutoff == Some(0) {
        return Err(Error::Config("map cutoff must be >= 1".into()));
    }
    let mut total = 0.0;
    for r in rankings(index, queries, opts.exclude_self) {
        let (label, ranked) = r?;
        let depth = opts.cutoff.map_or(ranked.len(), |k| k.min(ranked.len()));
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (rank, &(_, pos)) in ranked[..depth].iter().enumerate() {
            if index.labels()[pos] == label {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        if hits > 0 {
            total += sum / hits as f64;
        }
    }
    Ok(total / queries.len() as f64)
}

/// Mean over queries of `(relevant in top k) / k`.
pub fn precision_at_k(
    index: &RetrievalIndex,
    queries: &RetrievalIndex,
    k: usize,
    exclude_self: bool,
) -> Result<f64> {
    check(index, queries)?;
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut total = 0.0;
    for r in rankings(index, queries, exclude_self) {
        let (label, ranked) = r?;
        let rel = ranked
            .iter()
            .take(k)
            .filter(|&&(_, p)| index.labels()[p] == label)
            .count();
        total += rel as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(bits: &[u8]) -> HashCode {
        HashCode::from_bits(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    #[test]
    fn perfect_clustering_scores_one() {
        let codes = vec![
            c(&[0, 0, 0, 0]),
            c(&[0, 0, 0, 1]),
            c(&[1, 1, 1, 1]),
            c(&[1, 1, 1, 0]),
        ];
        let idx = RetrievalIndex::from_codes(&codes, &[0, 0, 1, 1]).unwrap();
        let map = mean_average_precision(&idx, &idx, &MapOptions::default()).unwrap();
        assert_eq!(map, 1.0);
        assert_eq!(precision_at_k(&idx, &idx, 1, true).unwrap(), 1.0);
    }

    #[test]
    fn relevant_at_ranks_one_and_three() {
        // ranking for the query: id0 (d0, rel), id1 (d1, not), id2 (d2, rel), id3 (d3, not)
        let codes = vec![c(&[0, 0, 0]), c(&[1, 0, 0]), c(&[1, 1, 0]), c(&[1, 1, 1])];
        let idx = RetrievalIndex::from_codes(&codes, &[5, 6, 5, 6]).unwrap();
        let mut q = RetrievalIndex::new(3);
        q.push(99, &c(&[0, 0, 0]), 5).unwrap();
        let map = mean_average_precision(&idx, &q, &MapOptions::default()).unwrap();
        assert!((map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let p2 = precision_at_k(&idx, &q, 2, true).unwrap();
        assert_eq!(p2, 0.5);
        let cut = MapOptions {
            cutoff: Some(2),
            ..MapOptions::default()
        };
        assert_eq!(mean_average_precision(&idx, &q, &cut).unwrap(), 1.0);
    }

    #[test]
    fn no_relevant_items_scores_zero() {
        let codes = vec![c(&[0, 1]), c(&[1, 1])];
        let idx = RetrievalIndex::from_codes(&codes, &[0, 0]).unwrap();
        let mut q = RetrievalIndex::new(2);
        q.push(7, &c(&[0, 1]), 3).unwrap();
        assert_eq!(
            mean_average_precision(&idx, &q, &MapOptions::default()).unwrap(),
            0.0
        );
        assert_eq!(precision_at_k(&idx, &q, 2, true).unwrap(), 0.0);
    }

    #[test]
    fn self_match_excluded_only_for_subsets() {
        let codes = vec![c(&[0, 0]), c(&[1, 1])];
        let idx = RetrievalIndex::from_codes(&codes, &[0, 1]).unwrap();
        // each query is alone in its class: excluded -> no relevant items
        assert_eq!(
            mean_average_precision(&idx, &idx, &MapOptions::default()).unwrap(),
            0.0
        );
        let keep = MapOptions {
            exclude_self: false,
            cutoff: None,
        };
        assert_eq!(mean_average_precision(&idx, &idx, &keep).unwrap(), 1.0);
        // same ids but different codes: not a subset, nothing excluded
        let other = RetrievalIndex::from_codes(&[c(&[0, 1]), c(&[1, 0])], &[0, 1]).unwrap();
        assert!(mean_average_precision(&idx, &other, &MapOptions::default()).unwrap() > 0.0);
    }

    #[test]
    fn empty_index_is_an_error() {
        let idx = RetrievalIndex::new(2);
        let q = RetrievalIndex::from_codes(&[c(&[0, 1])], &[0]).unwrap();
        assert!(matches!(
            mean_average_precision(&idx, &q, &MapOptions::default()),
            Err(Error::Empty(_))
        ));
    }
}
