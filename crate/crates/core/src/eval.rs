//! Euclidean ranking and CMC / mAP scoring (single query, all-shot).
//!
//! For every query the gallery is ranked by ascending distance; gallery entries
//! sharing both identity and camera with the query are dropped before scoring.
//! Queries left without any correct match are excluded from the averages and
//! reported separately.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub identity: u32,
    pub camera: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub exclude_same_camera_same_id: bool,
    pub ranks_reported: Vec<usize>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: vec![1, 5, 10],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.ranks_reported.iter().any(|&r| r == 0) || self.ranks_reported.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "reported ranks must be ascending and >= 1, got {:?}",
                self.ranks_reported
            )));
        }
        Ok(())
    }
}

/// Dense row-major `queries x gallery` distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DistanceMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Gallery columns reordered by `perm` (new column `j` is old column `perm[j]`).
    pub fn permute_cols(&self, perm: &[usize]) -> DistanceMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(perm.iter().map(|&j| row[j]));
        }
        DistanceMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

pub fn distance_matrix<Q: AsRef<[f32]> + Sync, G: AsRef<[f32]> + Sync>(
    queries: &[Q],
    gallery: &[G],
) -> Result<DistanceMatrix> {
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|q| gallery.iter().map(|g| euclidean(q.as_ref(), g.as_ref())).collect())
        .collect::<Result<_>>()?;
    DistanceMatrix::from_vec(queries.len(), gallery.len(), rows.into_iter().flatten().collect())
}

/// Indices sorted by ascending distance; ties keep ascending index order.
pub fn tie_break(row: &[f64]) -> Result<Vec<usize>> {
    if let Some(j) = row.iter().position(|d| d.is_nan()) {
        return Err(Error::Numeric(format!("NaN distance at gallery index {j}")));
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    pub identity: u32,
    pub ap: f64,
    /// 1-based rank of the first correct match after junk removal.
    pub first_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub rank: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    /// `cmc[r - 1]` is the fraction of scored queries matched within rank `r`.
    pub cmc: Vec<f64>,
    pub ranks: Vec<RankScore>,
    pub map: f64,
    pub scored_queries: usize,
    /// Queries without any valid gallery match; excluded from CMC and mAP.
    pub unmatched_queries: Vec<usize>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn rank(&self, r: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(r.max(1) - 1).min(self.cmc.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }
}

pub const PROTOCOL_LABEL: &str = "single-query, all-shot";

fn score_query(
    row: &[f64],
    query: SampleMeta,
    gallery: &[SampleMeta],
    exclude_junk: bool,
) -> Result<Option<(f64, usize)>> {
    let order = tie_break(row)?;
    let mut rank = 0usize;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_hit = None;
    for j in order {
        let g = gallery[j];
        if exclude_junk && g.identity == query.identity && g.camera == query.camera {
            continue;
        }
        rank += 1;
        if g.identity == query.identity {
            hits += 1;
            precision_sum += hits as f64 / rank as f64;
            first_hit.get_or_insert(rank);
        }
    }
    Ok(first_hit.map(|first| (precision_sum / hits as f64, first)))
}

pub fn evaluate(
    dist: &DistanceMatrix,
    query_meta: &[SampleMeta],
    gallery_meta: &[SampleMeta],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    if query_meta.len() != dist.rows() || gallery_meta.len() != dist.cols() {
        return Err(Error::Shape(format!(
            "{}x{} distance matrix with {} query and {} gallery labels",
            dist.rows(),
            dist.cols(),
            query_meta.len(),
            gallery_meta.len()
        )));
    }
    let scored: Vec<Option<(f64, usize)>> = (0..dist.rows())
        .into_par_iter()
        .map(|i| score_query(dist.row(i), query_meta[i], gallery_meta, protocol.exclude_same_camera_same_id))
        .collect::<Result<_>>()?;

    let mut hit_at = vec![0usize; dist.cols().max(1)];
    let mut per_query = Vec::new();
    let mut unmatched = Vec::new();
    for (i, s) in scored.into_iter().enumerate() {
        match s {
            Some((ap, first_hit)) => {
                hit_at[first_hit - 1] += 1;
                per_query.push(QueryResult {
                    query: i,
                    identity: query_meta[i].identity,
                    ap,
                    first_hit,
                });
            }
            None => unmatched.push(i),
        }
    }
    let n = per_query.len();
    let cmc: Vec<f64> = if n == 0 {
        vec![0.0; hit_at.len()]
    } else {
        hit_at
            .iter()
            .scan(0usize, |acc, &h| {
                *acc += h;
                Some(*acc as f64 / n as f64)
            })
            .collect()
    };
    let map = if n == 0 {
        0.0
    } else {
        per_query.iter().map(|q| q.ap).sum::<f64>() / n as f64
    };
    let mut report = EvalReport {
        protocol: PROTOCOL_LABEL.to_string(),
        cmc,
        ranks: Vec::new(),
        map,
        scored_queries: n,
        unmatched_queries: unmatched,
        per_query,
    };
    report.ranks = protocol
        .ranks_reported
        .iter()
        .map(|&r| RankScore {
            rank: r,
            rate: report.rank(r),
        })
        .collect();
    Ok(report)
}

/// Plot-ready `rank,cmc` rows.
pub fn cmc_csv(report: &EvalReport) -> String {
    let mut out = String::from("rank,cmc\n");
    for (r, v) in report.cmc.iter().enumerate() {
        out.push_str(&format!("{},{}\n", r + 1, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(identity: u32, camera: u32) -> SampleMeta {
        SampleMeta { identity, camera }
    }

    #[test]
    fn ties_keep_index_order() {
        assert_eq!(tie_break(&[1.0, 1.0, 1.0]).unwrap(), vec![0, 1, 2]);
        assert_eq!(tie_break(&[0.5, 0.2, 0.5, 0.1]).unwrap(), vec![3, 1, 0, 2]);
        assert_eq!(tie_break(&[4.0, 3.0, 2.0, 1.0]).unwrap(), vec![3, 2, 1, 0]);
        assert!(matches!(tie_break(&[0.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn hand_computed_average_precision() {
        // correct matches at ranks 1 and 3 of 5: AP = (1/1 + 2/3) / 2
        let dist = DistanceMatrix::from_vec(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let gallery = [meta(1, 2), meta(2, 2), meta(1, 3), meta(3, 2), meta(4, 2)];
        let report = evaluate(&dist, &[meta(1, 1)], &gallery, &EvalProtocol::default()).unwrap();
        assert!((report.map - 0.833_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(report.rank1(), 1.0);
        assert_eq!(report.per_query[0].first_hit, 1);
    }

    #[test]
    fn junk_entries_are_removed() {
        // same identity + camera at rank 1 is junk, so the true hit moves to rank 1
        let dist = DistanceMatrix::from_vec(1, 3, vec![0.0, 0.5, 0.9]).unwrap();
        let gallery = [meta(1, 1), meta(1, 2), meta(2, 2)];
        let report = evaluate(&dist, &[meta(1, 1)], &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(report.map, 1.0);
        let keep = EvalProtocol {
            exclude_same_camera_same_id: false,
            ..EvalProtocol::default()
        };
        let raw = evaluate(&dist, &[meta(1, 1)], &gallery, &keep).unwrap();
        assert_eq!(raw.map, 1.0);
        assert_eq!(raw.cmc.len(), 3);
    }

    #[test]
    fn unmatched_queries_are_reported_not_scored() {
        let dist = DistanceMatrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let gallery = [meta(1, 2), meta(1, 1)];
        let queries = [meta(1, 1), meta(9, 1)];
        let report = evaluate(&dist, &queries, &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(report.unmatched_queries, vec![1]);
        assert_eq!(report.scored_queries, 1);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn perfect_ranking() {
        let q = vec![vec![0.0f32, 0.0], vec![5.0, 5.0]];
        let g = vec![vec![5.0f32, 5.1], vec![0.1, 0.0]];
        let dist = distance_matrix(&q, &g).unwrap();
        let report = evaluate(&dist, &[meta(1, 1), meta(2, 1)], &[meta(2, 2), meta(1, 2)], &EvalProtocol::default()).unwrap();
        assert_eq!(report.rank1(), 1.0);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn self_distance_and_symmetry() {
        let x = vec![vec![0.0f32, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]];
        let d = distance_matrix(&x, &x).unwrap();
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        let bad = vec![vec![0.0f32; 3]];
        assert!(matches!(distance_matrix(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn meta_length_mismatch() {
        let dist = DistanceMatrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            evaluate(&dist, &[meta(1, 1)], &[meta(1, 2)], &EvalProtocol::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn bad_rank_list() {
        let p = EvalProtocol {
            ranks_reported: vec![5, 1],
            ..EvalProtocol::default()
        };
        assert!(p.validate().is_err());
    }
}
