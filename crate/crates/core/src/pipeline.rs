//! End-to-end wiring: split, graph construction, training, encoding, scoring.

use std::time::Instant;

use crate::alm::{self, TrainParams, TrainResult};
use crate::anchorgraph::{build_anchor_graph_with, AnchorGraph, AnchorParams, DEFAULT_NEAREST};
use crate::dataio::{split_dataset, DenseMatrix, SparseBinaryMatrix, Split};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, pr_curve, MapReport, PrCurve, RelevanceJudge};
use crate::hashmodel::{HashModel, PackedCodes};
use crate::hypergraph::{build_hypergraph_with, Hypergraph, HypergraphParams};
use crate::kmeans;
use crate::retrieval::HammingIndex;

/// Independent random streams derived from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Dataset = 1,
    Split = 2,
    Anchors = 3,
    Concepts = 4,
    CodeInit = 5,
}

/// SplitMix64 finalizer over `(global, stage)`.
pub fn sub_seed(global: u64, stage: Stage) -> u64 {
    let mut z = global
        .wrapping_add((stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: TrainParams,
    /// Anchor count m.
    pub anchors: usize,
    /// Nearest anchors per sample s (clamped to m).
    pub nearest: usize,
    /// Concept (hyperedge) count a.
    pub concepts: usize,
    pub sigma_sq: Option<f64>,
    pub tag_scale: f64,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    pub train_n: usize,
    pub query_n: usize,
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            params: TrainParams::default(),
            anchors: 100,
            nearest: DEFAULT_NEAREST,
            concepts: 100,
            sigma_sq: None,
            tag_scale: 1.0,
            kmeans_iters: kmeans::DEFAULT_MAX_ITERS,
            kmeans_tol: kmeans::DEFAULT_TOL,
            train_n: 2000,
            query_n: 200,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.anchors == 0 || self.nearest == 0 || self.concepts == 0 {
            return Err(Error::InvalidConfig("m, s and a must be positive".into()));
        }
        if !(self.tag_scale.is_finite() && self.tag_scale >= 0.0) {
            return Err(Error::InvalidConfig("tag_scale must be finite and non-negative".into()));
        }
        if self.kmeans_iters == 0 {
            return Err(Error::InvalidConfig("kmeans_iters must be positive".into()));
        }
        Ok(())
    }

    fn anchor_params(&self) -> AnchorParams {
        AnchorParams {
            m: self.anchors,
            s: self.nearest.min(self.anchors),
            kmeans_iters: self.kmeans_iters,
            kmeans_tol: self.kmeans_tol,
        }
    }

    fn hyper_params(&self) -> HypergraphParams {
        HypergraphParams {
            a: self.concepts,
            sigma_sq: self.sigma_sq,
            tag_scale: self.tag_scale,
            kmeans_iters: self.kmeans_iters,
            kmeans_tol: self.kmeans_tol,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub anchor_graph_secs: f64,
    pub hypergraph_secs: f64,
    pub optimize_secs: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.anchor_graph_secs + self.hypergraph_secs + self.optimize_secs
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: HashModel,
    pub result: TrainResult,
    pub timings: Timings,
    pub graph: AnchorGraph,
    pub hypergraph: Option<Hypergraph>,
}

/// Builds both graphs on the training features (and tags, per variant) and
/// runs the optimizer. Takes no labels.
pub fn train_model(features: &DenseMatrix, tags: Option<&SparseBinaryMatrix>, cfg: &PipelineConfig) -> Result<Trained> {
    cfg.validate()?;
    let variant = cfg.params.variant;
    let mut timings = Timings::default();

    let t0 = Instant::now();
    let graph = build_anchor_graph_with(features, &cfg.anchor_params(), sub_seed(cfg.seed, Stage::Anchors))?;
    timings.anchor_graph_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let hypergraph = if variant.uses_indirect() && cfg.params.beta > 0.0 {
        let hyper_tags = if variant.hypergraph_uses_tags() {
            Some(tags.ok_or_else(|| {
                Error::InvalidConfig(format!("variant {variant} builds the hypergraph over tags, but none were given"))
            })?)
        } else {
            None
        };
        Some(build_hypergraph_with(
            features,
            hyper_tags,
            &cfg.hyper_params(),
            sub_seed(cfg.seed, Stage::Concepts),
        )?)
    } else {
        None
    };
    timings.hypergraph_secs = t0.elapsed().as_secs_f64();

    let params = TrainParams {
        seed: sub_seed(cfg.seed, Stage::CodeInit),
        ..cfg.params
    };
    let t0 = Instant::now();
    let direct_tags = if variant.uses_direct() { tags } else { None };
    let result = alm::train(features, direct_tags, &graph, hypergraph.as_ref(), params)?;
    timings.optimize_secs = t0.elapsed().as_secs_f64();

    Ok(Trained {
        model: HashModel::new(result.feature_model.clone()),
        result,
        timings,
        graph,
        hypergraph,
    })
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub split: Split,
    pub trained: Trained,
    pub retrieval_codes: PackedCodes,
    pub query_codes: PackedCodes,
    pub map: MapReport,
}

impl Outcome {
    pub fn pr_curve(&self) -> Result<PrCurve> {
        let (ql, dl) = labels_of(&self.split)?;
        let index = HammingIndex::with_positions(self.retrieval_codes.clone());
        pr_curve(&index, &self.query_codes, &RelevanceJudge::new(ql, dl))
    }
}

fn labels_of(split: &Split) -> Result<(&SparseBinaryMatrix, &SparseBinaryMatrix)> {
    match (&split.query.labels, &split.retrieval.labels) {
        (Some(q), Some(d)) => Ok((q, d)),
        _ => Err(Error::InvalidConfig("evaluation needs ground-truth labels".into())),
    }
}

/// Split, train on the training subset, encode retrieval and query sets, and
/// score full-ranking MAP.
pub fn run_experiment(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Outcome> {
    let split = split_dataset(dataset, cfg.train_n, cfg.query_n, sub_seed(cfg.seed, Stage::Split))?;
    let (ql, dl) = labels_of(&split)?;
    let trained = train_model(&split.train.features, Some(&split.train.tags), cfg)?;
    let retrieval_codes = trained.model.encode(&split.retrieval.features)?;
    let query_codes = trained.model.encode(&split.query.features)?;
    let index = HammingIndex::with_positions(retrieval_codes.clone());
    let map = mean_average_precision(&index, &query_codes, &RelevanceJudge::new(ql, dl), None)?;
    Ok(Outcome {
        split,
        trained,
        retrieval_codes,
        query_codes,
        map,
    })
}
