use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{logspace, VirtualNoise};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    L2,
    Latent,
    Laplace,
    Guide,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::L2, Method::Latent, Method::Laplace, Method::Guide];

    pub fn name(self) -> &'static str {
        match self {
            Method::L2 => "l2",
            Method::Latent => "latent",
            Method::Laplace => "laplace",
            Method::Guide => "guide",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}' (expected l2, latent, laplace or guide)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Dataset {
    /// Bundled 8×8 suite; truths `g(z) + τε`.
    Synthetic {
        #[serde(default = "default_off_manifold")]
        off_manifold: f64,
    },
    /// IDX image/label files.
    Idx { images: PathBuf, labels: PathBuf },
}

fn default_off_manifold() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub min_exp: f64,
    pub max_exp: f64,
    pub points: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            min_exp: -8.0,
            max_exp: 2.0,
            points: 61,
        }
    }
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        logspace(self.min_exp, self.max_exp, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuideConfig {
    pub virtual_noise: VirtualNoise,
    pub cross_validated: bool,
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self {
            virtual_noise: VirtualNoise::Fresh,
            cross_validated: false,
        }
    }
}

/// One sweep over images × η × σ = 10⁻ˢ × repeats × methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub image_count: usize,
    pub eta_list: Vec<f64>,
    pub sigma_exponents: Vec<i32>,
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Weights file; the bundled suite generator when absent.
    pub generator: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub blur_radius: usize,
    pub lambda_grid: LambdaGrid,
    pub guide: GuideConfig,
    /// Extra seeded starts for the encoder-free latent search.
    pub search_restarts: usize,
    /// Off by default so that reruns give byte-identical CSVs.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::Synthetic {
                off_manifold: default_off_manifold(),
            },
            image_count: 100,
            eta_list: vec![2.0, 3.0, 4.0, 5.0],
            sigma_exponents: vec![1, 2, 3, 4],
            repeats: 1,
            methods: Method::ALL.to_vec(),
            seed: 0,
            generator: None,
            output_dir: PathBuf::from("results"),
            blur_radius: crate::forward_model::DEFAULT_BLUR_RADIUS,
            lambda_grid: LambdaGrid::default(),
            guide: GuideConfig::default(),
            search_restarts: 0,
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Validation(msg.to_string()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1");
        }
        if self.eta_list.is_empty() || self.eta_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eta_list must be nonempty and positive");
        }
        if self.sigma_exponents.is_empty() {
            return bad("sigma_exponents must not be empty");
        }
        if self.lambda_grid.points == 0 {
            return bad("lambda_grid.points must be >= 1");
        }
        if let Dataset::Synthetic { off_manifold } = self.dataset {
            if !(off_manifold >= 0.0 && off_manifold.is_finite()) {
                return bad("dataset.off_manifold must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }
}
