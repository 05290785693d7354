//! Flat `key=value` run configuration covering the pipeline, the synthetic
//! scene and its noise model.

use std::fmt::Write as _;
use std::path::Path;

use sfm_core::graph::TreeMode;
use sfm_core::pipeline::{GraphMode, PipelineConfig};
use sfm_core::synth::{NoiseConfig, SceneConfig, SceneKind};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
}

/// Every recognized key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: [&str; 30] = [
    "seed",
    "n_a",
    "k",
    "delta",
    "nu1",
    "nu2",
    "lr1",
    "lr2",
    "lambda1",
    "lambda2",
    "shared_focal",
    "freeze_depth",
    "tree_mode",
    "graph_mode",
    "random_init",
    "codebook_size",
    "rho_eps",
    "scene",
    "n_views",
    "width",
    "height",
    "focal",
    "pure_rotation",
    "arc_degrees",
    "shuffle",
    "depth_noise",
    "outlier_rate",
    "confidence_fidelity",
    "feature_noise",
    "knn_exclude_keyframes",
];

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    num::<f64>(v).and_then(|x| if x.is_finite() { Ok(x) } else { Err(format!("{v:?} is not finite")) })
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    parse_bool(v).ok_or_else(|| format!("{v:?} is not a boolean"))
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let p = &mut self.pipeline;
        let o = &mut p.optim;
        match key {
            "seed" => {
                p.seed = num(value)?;
                self.scene.seed = p.seed;
            }
            "n_a" => p.graph.keyframes = num(value)?,
            "k" => p.graph.neighbors = num(value)?,
            "knn_exclude_keyframes" => p.graph.knn_exclude_keyframes = flag(value)?,
            "delta" => p.anchor_spacing = num(value)?,
            "nu1" => o.coarse_iters = num(value)?,
            "nu2" => o.refine_iters = num(value)?,
            "lr1" => o.coarse_lr = float(value)?,
            "lr2" => o.refine_lr = float(value)?,
            "lambda1" => o.coarse_exponent = float(value)?,
            "lambda2" => o.refine_exponent = float(value)?,
            "rho_eps" => o.rho_eps = float(value)?,
            "shared_focal" => o.shared_focal = flag(value)?,
            "freeze_depth" => o.freeze_depth = flag(value)?,
            "tree_mode" => p.tree_mode = TreeMode::parse(value).ok_or_else(|| format!("unknown tree mode {value:?}"))?,
            "graph_mode" => p.graph_mode = GraphMode::parse(value).ok_or_else(|| format!("unknown graph mode {value:?}"))?,
            "random_init" => p.random_init = flag(value)?,
            "codebook_size" => p.retrieval.codebook_size = num(value)?,
            "scene" => self.scene.kind = SceneKind::parse(value).ok_or_else(|| format!("unknown scene {value:?}"))?,
            "n_views" => self.scene.n_views = num(value)?,
            "width" => self.scene.width = num(value)?,
            "height" => self.scene.height = num(value)?,
            "focal" => self.scene.focal = float(value)?,
            "pure_rotation" => self.scene.pure_rotation = flag(value)?,
            "arc_degrees" => self.scene.arc_degrees = float(value)?,
            "shuffle" => self.scene.shuffle = flag(value)?,
            "depth_noise" => self.noise.depth_noise = float(value)?,
            "outlier_rate" => self.noise.match_outlier_rate = float(value)?,
            "confidence_fidelity" => self.noise.confidence_fidelity = float(value)?,
            "feature_noise" => self.noise.feature_noise = float(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.pipeline;
        let o = &p.optim;
        let s = &self.scene;
        let n = &self.noise;
        Some(match key {
            "seed" => p.seed.to_string(),
            "n_a" => p.graph.keyframes.to_string(),
            "k" => p.graph.neighbors.to_string(),
            "knn_exclude_keyframes" => p.graph.knn_exclude_keyframes.to_string(),
            "delta" => p.anchor_spacing.to_string(),
            "nu1" => o.coarse_iters.to_string(),
            "nu2" => o.refine_iters.to_string(),
            "lr1" => o.coarse_lr.to_string(),
            "lr2" => o.refine_lr.to_string(),
            "lambda1" => o.coarse_exponent.to_string(),
            "lambda2" => o.refine_exponent.to_string(),
            "rho_eps" => o.rho_eps.to_string(),
            "shared_focal" => o.shared_focal.to_string(),
            "freeze_depth" => o.freeze_depth.to_string(),
            "tree_mode" => p.tree_mode.name().to_string(),
            "graph_mode" => p.graph_mode.name().to_string(),
            "random_init" => p.random_init.to_string(),
            "codebook_size" => p.retrieval.codebook_size.to_string(),
            "scene" => s.kind.name().to_string(),
            "n_views" => s.n_views.to_string(),
            "width" => s.width.to_string(),
            "height" => s.height.to_string(),
            "focal" => s.focal.to_string(),
            "pure_rotation" => s.pure_rotation.to_string(),
            "arc_degrees" => s.arc_degrees.to_string(),
            "shuffle" => s.shuffle.to_string(),
            "depth_noise" => n.depth_noise.to_string(),
            "outlier_rate" => n.match_outlier_rate.to_string(),
            "confidence_fidelity" => n.confidence_fidelity.to_string(),
            "feature_noise" => n.feature_noise.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.pipeline.validate().map_err(|e| e.to_string())?;
        self.noise.validate().map_err(|e| e.to_string())?;
        let s = &self.scene;
        if s.n_views == 0 || s.width < 2 || s.height < 2 || !(s.focal > 0.0) || !(0.0..=360.0).contains(&s.arc_degrees) {
            return Err("scene needs at least one view, a 2x2 image, a positive focal and an arc within [0, 360]".into());
        }
        if self.pipeline.retrieval.codebook_size == 0 {
            return Err("codebook size must be positive".into());
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of `self`; `#` starts a comment.
    /// Errors carry the offending line number.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        let bad = |line: usize, msg: String| CliError::Config { path: source.to_string(), line, msg };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(n + 1, "expected key=value".into()))?;
            self.set(k.trim(), v.trim()).map_err(|m| bad(n + 1, m))?;
            self.validate().map_err(|m| bad(n + 1, m))?;
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, source)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("every listed key has a value"));
        }
        s
    }
}
