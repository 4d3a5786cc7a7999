//! Retrieval metrics against shared-label ground truth, and the ablation harness.

use std::io::Write;

use rayon::prelude::*;

use crate::alm::Variant;
use crate::dataio::{sorted_intersect, Dataset, SparseBinaryMatrix};
use crate::error::{Error, Result};
use crate::hashmodel::PackedCodes;
use crate::pipeline::{self, PipelineConfig};
use crate::retrieval::HammingIndex;

/// Number of interpolated recall levels in a PR curve (0, 0.01, ..., 1).
pub const PR_POINTS: usize = 101;

/// Relevance ⇔ the query and database item share at least one label.
#[derive(Debug, Clone, Copy)]
pub struct RelevanceJudge<'a> {
    pub query_labels: &'a SparseBinaryMatrix,
    pub db_labels: &'a SparseBinaryMatrix,
}

impl<'a> RelevanceJudge<'a> {
    pub fn new(query_labels: &'a SparseBinaryMatrix, db_labels: &'a SparseBinaryMatrix) -> Self {
        Self {
            query_labels,
            db_labels,
        }
    }

    pub fn relevant(&self, q: usize, i: usize) -> bool {
        sorted_intersect(self.query_labels.column(q), self.db_labels.column(i))
    }
}

/// Full-ranking average precision. `None` when nothing is relevant.
pub fn average_precision(ranked: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub per_query: Vec<f64>,
    /// Queries with no relevant database item; they count as AP = 0.
    pub no_relevant: usize,
}

fn check_inputs(index: &HammingIndex, queries: &PackedCodes, judge: &RelevanceJudge) -> Result<()> {
    if judge.db_labels.cols() != index.len() {
        return Err(Error::LengthMismatch {
            expected: index.len(),
            got: judge.db_labels.cols(),
        });
    }
    if judge.query_labels.cols() != queries.len() {
        return Err(Error::LengthMismatch {
            expected: queries.len(),
            got: judge.query_labels.cols(),
        });
    }
    if queries.bits() != index.bits() {
        return Err(Error::LengthMismatch {
            expected: index.bits(),
            got: queries.bits(),
        });
    }
    Ok(())
}

fn ranked_relevance(index: &HammingIndex, queries: &PackedCodes, judge: &RelevanceJudge, q: usize) -> Result<Vec<bool>> {
    Ok(index
        .rank(queries.code(q))?
        .into_iter()
        .map(|(pos, _)| judge.relevant(q, pos))
        .collect())
}

/// Mean of per-query AP over the Hamming ranking of the database. With a
/// cutoff, AP is taken over the top `k` positions only.
pub fn mean_average_precision(
    index: &HammingIndex,
    queries: &PackedCodes,
    judge: &RelevanceJudge,
    cutoff: Option<usize>,
) -> Result<MapReport> {
    check_inputs(index, queries, judge)?;
    if queries.is_empty() {
        return Err(Error::InvalidConfig("no queries to evaluate".into()));
    }
    let per_query: Vec<Option<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let mut rel = ranked_relevance(index, queries, judge, q)?;
            if let Some(k) = cutoff {
                rel.truncate(k);
            }
            Ok(average_precision(&rel))
        })
        .collect::<Result<_>>()?;
    let no_relevant = per_query.iter().filter(|ap| ap.is_none()).count();
    if no_relevant > 0 {
        log::warn!("{no_relevant} queries have no relevant database item (AP = 0)");
    }
    let per_query: Vec<f64> = per_query.into_iter().map(|ap| ap.unwrap_or(0.0)).collect();
    let map = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(MapReport {
        map,
        per_query,
        no_relevant,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` at the standard recall levels.
    pub points: Vec<(f64, f64)>,
    /// Queries left out of the average because nothing was relevant.
    pub excluded: usize,
}

/// Interpolated precision at the standard recall levels for one ranking:
/// precision at level `t` is the best raw precision at any recall ≥ `t`.
pub fn interpolated_precision(ranked: &[bool]) -> Option<Vec<f64>> {
    let total = ranked.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    // Raw (recall, precision) at each relevant position; only these can be
    // maxima of the envelope.
    let mut raw = Vec::with_capacity(total);
    let mut hits = 0usize;
    for (p, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            raw.push((hits as f64 / total as f64, hits as f64 / (p + 1) as f64));
        }
    }
    let mut envelope = vec![0.0; raw.len()];
    let mut best: f64 = 0.0;
    for (k, &(_, prec)) in raw.iter().enumerate().rev() {
        best = best.max(prec);
        envelope[k] = best;
    }
    let mut out = Vec::with_capacity(PR_POINTS);
    let mut k = 0;
    for level in 0..PR_POINTS {
        let t = level as f64 / (PR_POINTS - 1) as f64;
        while k < raw.len() && raw[k].0 < t - 1e-12 {
            k += 1;
        }
        out.push(if k < raw.len() { envelope[k] } else { 0.0 });
    }
    Some(out)
}

/// Query-averaged interpolated precision-recall curve.
pub fn pr_curve(index: &HammingIndex, queries: &PackedCodes, judge: &RelevanceJudge) -> Result<PrCurve> {
    check_inputs(index, queries, judge)?;
    let per_query: Vec<Option<Vec<f64>>> = (0..queries.len())
        .into_par_iter()
        .map(|q| Ok(interpolated_precision(&ranked_relevance(index, queries, judge, q)?)))
        .collect::<Result<_>>()?;
    let excluded = per_query.iter().filter(|c| c.is_none()).count();
    let used: Vec<&Vec<f64>> = per_query.iter().flatten().collect();
    let points = (0..PR_POINTS)
        .map(|level| {
            let recall = level as f64 / (PR_POINTS - 1) as f64;
            let precision = if used.is_empty() {
                0.0
            } else {
                used.iter().map(|c| c[level]).sum::<f64>() / used.len() as f64
            };
            (recall, precision)
        })
        .collect();
    Ok(PrCurve { points, excluded })
}

pub fn write_pr_csv<W: Write>(w: &mut W, curve: &PrCurve) -> Result<()> {
    writeln!(w, "recall,precision")?;
    for (r, p) in &curve.points {
        writeln!(w, "{r:.2},{p:.6}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub bits: usize,
    pub seed: u64,
    pub map: f64,
}

/// Trains and evaluates every `(variant, code length, seed)` combination on
/// the same split of `dataset`.
pub fn run_ablation_suite(
    dataset: &Dataset,
    base: &PipelineConfig,
    variants: &[Variant],
    bits: &[usize],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if dataset.labels.is_none() {
        return Err(Error::InvalidConfig("ablation needs ground-truth labels".into()));
    }
    let mut rows = Vec::with_capacity(variants.len() * bits.len() * seeds.len());
    for &r in bits {
        for &variant in variants {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.params.variant = variant;
                cfg.params.bits = r;
                cfg.seed = seed;
                let outcome = pipeline::run_experiment(dataset, &cfg)?;
                log::info!("{variant} r={r} seed={seed}: MAP {:.4}", outcome.map.map);
                rows.push(AblationRow {
                    variant,
                    bits: r,
                    seed,
                    map: outcome.map.map,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(w: &mut W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "variant,r,seed,map")?;
    for row in rows {
        writeln!(w, "{},{},{},{:.6}", row.variant, row.bits, row.seed, row.map)?;
    }
    Ok(())
}
