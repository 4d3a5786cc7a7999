//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. `include = PATH` splices in
//! another file (relative to the including file) at that point, and
//! `include = @name` splices in a built-in preset. Later assignments override
//! earlier ones, so a file usually includes a preset and then adjusts a few
//! keys. Unknown keys are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::alm::{TrainParams, Variant};
use crate::dataio::{
    generate_synthetic, load_dense_matrix, load_sparse_binary, Dataset, DenseFormat, SparseBinaryMatrix,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::hashmodel::Activation;
use crate::pipeline::PipelineConfig;

const MAX_INCLUDE_DEPTH: usize = 16;

/// Built-in presets addressable as `@name`.
pub const PRESETS: [(&str, &str); 3] = [
    ("mir", include_str!("../presets/mir.conf")),
    ("nus-wide", include_str!("../presets/nus-wide.conf")),
    ("synth-small", include_str!("../presets/synth-small.conf")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
    pub features: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub ablation_variants: Vec<Variant>,
    pub ablation_seeds: Vec<u64>,
    pub ablation_bits: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            synth: SynthConfig::synth_small(0),
            features: None,
            tags: None,
            labels: None,
            out: PathBuf::from("out"),
            ablation_variants: Variant::ALL.to_vec(),
            ablation_seeds: (0..5).collect(),
            ablation_bits: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn params(&self) -> &TrainParams {
        &self.pipeline.params
    }

    pub fn params_mut(&mut self) -> &mut TrainParams {
        &mut self.pipeline.params
    }

    /// Loads a file, resolving includes.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path, 0)?;
        Ok(cfg)
    }

    /// Applies configuration text on top of `self`. Relative includes and
    /// paths resolve against `base`.
    pub fn apply_str(&mut self, text: &str, base: &Path) -> Result<()> {
        self.apply_text(text, base, "<text>", 0)
    }

    fn apply_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.apply_text(&text, base, &path.display().to_string(), depth)
    }

    fn apply_text(&mut self, text: &str, base: &Path, origin: &str, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::InvalidConfig(format!("includes nested deeper than {MAX_INCLUDE_DEPTH} at {origin}")));
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("{origin}:{}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let located = |e: Error| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(format!("{origin}:{}: {m}", lineno + 1)),
                other => other,
            };
            if key == "include" {
                match value.strip_prefix('@') {
                    Some(name) => {
                        let text = preset(name).ok_or_else(|| {
                            Error::InvalidConfig(format!("{origin}:{}: unknown preset @{name}", lineno + 1))
                        })?;
                        self.apply_text(text, base, &format!("@{name}"), depth + 1)?;
                    }
                    None => self.apply_file(&base.join(value), depth + 1)?,
                }
            } else {
                self.set(key, value, base).map_err(located)?;
            }
        }
        Ok(())
    }

    /// Sets one key. Path values are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || -> Option<PathBuf> { (!value.is_empty()).then(|| base.join(value)) };
        let p = &mut self.pipeline;
        match key {
            "alpha" => p.params.alpha = parse(key, value)?,
            "beta" => p.params.beta = parse(key, value)?,
            "nu" => p.params.nu = parse(key, value)?,
            "rho" => p.params.rho = parse(key, value)?,
            "mu0" => p.params.mu0 = parse(key, value)?,
            "mu_max" => p.params.mu_max = parse(key, value)?,
            "r" => p.params.bits = parse(key, value)?,
            "max_outer_iters" => p.params.max_outer_iters = parse(key, value)?,
            "rel_tol" => p.params.rel_tol = parse(key, value)?,
            "ridge_eps" => p.params.ridge_eps = parse(key, value)?,
            "variant" => p.params.variant = parse(key, value)?,
            "activation" => p.params.fit.activation = parse::<Activation>(key, value)?,
            "center" => p.params.fit.center = parse_bool(key, value)?,
            "m" => p.anchors = parse(key, value)?,
            "s" => p.nearest = parse(key, value)?,
            "a" => p.concepts = parse(key, value)?,
            "sigma_sq" => {
                p.sigma_sq = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "tag_scale" => p.tag_scale = parse(key, value)?,
            "kmeans_iters" => p.kmeans_iters = parse(key, value)?,
            "kmeans_tol" => p.kmeans_tol = parse(key, value)?,
            "train_n" => p.train_n = parse(key, value)?,
            "query_n" => p.query_n = parse(key, value)?,
            "seed" => p.seed = parse(key, value)?,
            "n" => self.synth.n = parse(key, value)?,
            "d" => self.synth.d = parse(key, value)?,
            "n_clusters" => self.synth.n_clusters = parse(key, value)?,
            "c" => self.synth.c = parse(key, value)?,
            "tag_noise_rate" => self.synth.tag_noise_rate = parse(key, value)?,
            "cluster_spread" => self.synth.cluster_spread = parse(key, value)?,
            "features" => self.features = path(),
            "tags" => self.tags = path(),
            "labels" => self.labels = path(),
            "out" => {
                self.out = path().ok_or_else(|| Error::InvalidConfig("out must not be empty".into()))?
            }
            "ablation_variants" => self.ablation_variants = parse_list(key, value)?,
            "ablation_seeds" => self.ablation_seeds = parse_list(key, value)?,
            "ablation_bits" => self.ablation_bits = parse_list(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.synth.validate()?;
        if self.ablation_variants.is_empty() || self.ablation_seeds.is_empty() {
            return Err(Error::InvalidConfig("ablation needs at least one variant and one seed".into()));
        }
        if self.ablation_bits.contains(&0) {
            return Err(Error::InvalidConfig("ablation code lengths must be positive".into()));
        }
        Ok(())
    }

    /// The synthetic-data settings with the dataset stream of the global seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: crate::pipeline::sub_seed(self.pipeline.seed, crate::pipeline::Stage::Dataset),
            ..self.synth.clone()
        }
    }

    /// Whether training reads tags under the configured variant.
    pub fn needs_tags(&self) -> bool {
        let t = self.params();
        t.variant.uses_direct() || (t.variant.uses_indirect() && t.variant.hypergraph_uses_tags() && t.beta > 0.0)
    }

    /// Loads the dataset named by `features` / `tags` / `labels`, or
    /// synthesizes one when no feature file is configured.
    pub fn dataset(&self) -> Result<Dataset> {
        let Some(features) = &self.features else {
            return generate_synthetic(&self.synth_config());
        };
        let x = load_dense_matrix(features, DenseFormat::from_path(features))?;
        let tags = match &self.tags {
            Some(path) => load_sparse_binary(path)?,
            None if self.needs_tags() => {
                return Err(Error::MissingInput(format!(
                    "variant {} needs a tag file (set `tags`)",
                    self.params().variant
                )))
            }
            None => SparseBinaryMatrix::empty(0, x.ncols()),
        };
        let labels = self.labels.as_deref().map(load_sparse_binary).transpose()?;
        Dataset::new(x, tags, labels)
    }

    /// Every key with its resolved value, in a stable order; feeding the
    /// pairs back through [`RunConfig::set`] reproduces the configuration.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let p = &self.pipeline;
        let t = &p.params;
        let path = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("nu", t.nu.to_string()),
            ("rho", t.rho.to_string()),
            ("mu0", t.mu0.to_string()),
            ("mu_max", t.mu_max.to_string()),
            ("r", t.bits.to_string()),
            ("max_outer_iters", t.max_outer_iters.to_string()),
            ("rel_tol", t.rel_tol.to_string()),
            ("ridge_eps", t.ridge_eps.to_string()),
            ("variant", t.variant.to_string()),
            ("activation", t.fit.activation.to_string()),
            ("center", t.fit.center.to_string()),
            ("m", p.anchors.to_string()),
            ("s", p.nearest.to_string()),
            ("a", p.concepts.to_string()),
            ("sigma_sq", p.sigma_sq.map_or_else(|| "auto".into(), |v| v.to_string())),
            ("tag_scale", p.tag_scale.to_string()),
            ("kmeans_iters", p.kmeans_iters.to_string()),
            ("kmeans_tol", p.kmeans_tol.to_string()),
            ("train_n", p.train_n.to_string()),
            ("query_n", p.query_n.to_string()),
            ("seed", p.seed.to_string()),
            ("n", self.synth.n.to_string()),
            ("d", self.synth.d.to_string()),
            ("n_clusters", self.synth.n_clusters.to_string()),
            ("c", self.synth.c.to_string()),
            ("tag_noise_rate", self.synth.tag_noise_rate.to_string()),
            ("cluster_spread", self.synth.cluster_spread.to_string()),
            ("features", path(&self.features)),
            ("tags", path(&self.tags)),
            ("labels", path(&self.labels)),
            ("out", self.out.display().to_string()),
            ("ablation_variants", join(&self.ablation_variants)),
            ("ablation_seeds", join(&self.ablation_seeds)),
            ("ablation_bits", join(&self.ablation_bits)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text, Path::new("/base"))?;
        Ok(cfg)
    }

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = from_text(&format!("include = @{name}")).unwrap();
            cfg.validate().unwrap();
        }
        let nus = from_text("include = @nus-wide").unwrap();
        assert_eq!(nus.params().alpha, 10.0);
        assert_eq!(nus.pipeline.anchors, 700);
        assert_eq!(nus.pipeline.concepts, 700);
        let mir = from_text("include = @mir").unwrap();
        assert_eq!(mir.pipeline.concepts, 500);
        assert_eq!(mir.params().mu0, 0.01);
    }

    #[test]
    fn later_keys_override_and_comments_are_ignored() {
        let cfg = from_text("include = @mir\nr = 64  # longer codes\n\n# note\nvariant = relaxed\n").unwrap();
        assert_eq!(cfg.params().bits, 64);
        assert_eq!(cfg.params().variant, Variant::Relaxed);
        assert_eq!(cfg.params().alpha, 0.01);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in ["alhpa = 1", "r = -3", "variant = fancy", "center = maybe", "no equals sign", "include = @nope"] {
            let err = from_text(text).unwrap_err();
            assert!(matches!(err, Error::InvalidConfig(_)), "{text}: {err}");
        }
        let err = from_text("\n\nalhpa = 1").unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn validation_catches_out_of_range_values() {
        assert!(from_text("tag_noise_rate = 1.5").unwrap().validate().is_err());
        assert!(from_text("rho = 1").unwrap().validate().is_err());
        assert!(from_text("ablation_seeds =").unwrap().validate().is_err());
    }

    #[test]
    fn paths_resolve_against_base_and_lists_parse() {
        let cfg = from_text("features = data/x.dmat\nablation_variants = full, relaxed\nablation_seeds = 3,4").unwrap();
        assert_eq!(cfg.features, Some(PathBuf::from("/base/data/x.dmat")));
        assert_eq!(cfg.ablation_variants, vec![Variant::Full, Variant::Relaxed]);
        assert_eq!(cfg.ablation_seeds, vec![3, 4]);
    }

    #[test]
    fn file_includes_are_relative_to_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/base.conf"), "include = @synth-small\nm = 42\n").unwrap();
        std::fs::write(dir.path().join("run.conf"), "include = sub/base.conf\na = 7\n").unwrap();
        let cfg = RunConfig::load(&dir.path().join("run.conf")).unwrap();
        assert_eq!((cfg.pipeline.anchors, cfg.pipeline.concepts), (42, 7));

        std::fs::write(dir.path().join("loop.conf"), "include = loop.conf\n").unwrap();
        assert!(RunConfig::load(&dir.path().join("loop.conf")).is_err());
    }

    #[test]
    fn dataset_needs_tags_unless_the_variant_ignores_them() {
        let dir = tempfile::tempdir().unwrap();
        let x = crate::dataio::DenseMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let fpath = dir.path().join("x.csv");
        crate::dataio::write_dense_matrix(&fpath, &x, DenseFormat::Csv).unwrap();

        let mut cfg = RunConfig::default();
        cfg.features = Some(fpath);
        assert!(matches!(cfg.dataset(), Err(Error::MissingInput(_))));
        cfg.tags = Some(dir.path().join("absent.txt"));
        assert!(matches!(cfg.dataset(), Err(Error::Io(_))));
        cfg.tags = None;
        cfg.params_mut().variant = Variant::NoTags;
        let ds = cfg.dataset().unwrap();
        assert_eq!((ds.len(), ds.tags.rows()), (4, 0));
    }

    #[test]
    fn resolved_pairs_round_trip() {
        let cfg = from_text("include = @nus-wide\nsigma_sq = 2.5\nlabels = l.txt\nout = o\nablation_bits = 16,32").unwrap();
        let mut again = RunConfig::default();
        for (k, v) in cfg.resolved() {
            again.set(k, &v, Path::new("/")).unwrap();
        }
        assert_eq!(again, cfg);
    }
}
