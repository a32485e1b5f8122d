use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use advlab_tensor::DType;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, KernelFamily};
use crate::error::{invalid, io_err, CoreError, Result};
use crate::nets::{block_registry, ArchVariant};
use crate::rational::Rational;
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    /// Standard training.
    None,
    /// Half-FGSM adversarial training.
    Adv,
}

impl Defense {
    pub fn as_str(self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Adv => "adv",
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Defense {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "adv" => Ok(Self::Adv),
            _ => Err(CoreError::UnknownStrategy {
                kind: "defense",
                name: s.to_string(),
                known: "adv, none".into(),
            }),
        }
    }
}

/// Architecture shared by all variants; `kind` comes from the variant list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchTemplate {
    pub width: usize,
    pub levels: usize,
    pub enc_blocks: Vec<usize>,
    pub dec_blocks: Vec<usize>,
    pub attention_heads: Vec<usize>,
}

impl Default for ArchTemplate {
    fn default() -> Self {
        let d = ArchVariant::desk("");
        Self {
            width: d.width,
            levels: d.levels,
            enc_blocks: d.enc_blocks,
            dec_blocks: d.dec_blocks,
            attention_heads: d.attention_heads,
        }
    }
}

impl ArchTemplate {
    pub fn variant(&self, kind: &str) -> ArchVariant {
        ArchVariant {
            kind: kind.to_string(),
            width: self.width,
            levels: self.levels,
            enc_blocks: self.enc_blocks.clone(),
            dec_blocks: self.dec_blocks.clone(),
            attention_heads: self.attention_heads.clone(),
        }
    }
}

/// One attack kind swept over radii and iteration counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackGrid {
    pub kind: String,
    pub epsilons: Vec<Rational>,
    /// Step size; FGSM always uses ε and may omit it.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub iterations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    /// Test images per panel; 0 disables panels.
    pub samples: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self { samples: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    /// Seeds model initialization; data and training carry their own.
    pub seed: u64,
    #[serde(default = "default_precision", with = "dtype_serde")]
    pub precision: DType,
    pub variants: Vec<String>,
    pub defenses: Vec<Defense>,
    #[serde(default)]
    pub arch: ArchTemplate,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub attacks: Vec<AttackGrid>,
    #[serde(default)]
    pub panels: PanelConfig,
    /// Images per attack/evaluation batch.
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Evaluate existing `<variant>__<defense>.ckpt` files instead of training.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Overrides the default output location.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_precision() -> DType {
    DType::F64
}

fn default_eval_batch() -> usize {
    10
}

mod dtype_serde {
    use advlab_tensor::DType;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &DType, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(d.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DType, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// File name of the checkpoint for one trained model.
pub fn checkpoint_name(variant: &str, defense: Defense) -> String {
    format!("{variant}__{defense}.ckpt")
}

impl ExperimentConfig {
    /// Five variants, standard and adversarial, CosPGD at ε = 8/255 over
    /// 5, 10 and 20 iterations on 200/50 synthetic Gaussian-blur pairs.
    pub fn desk_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "desk".into(),
            seed: 0,
            precision: DType::F64,
            variants: ["restormer", "baseline", "nafnet", "intermediate", "intermediate_relu"]
                .map(String::from)
                .to_vec(),
            defenses: vec![Defense::None, Defense::Adv],
            arch: ArchTemplate::default(),
            dataset: DatasetSpec {
                n_train: 200,
                n_val: 20,
                n_test: 50,
                height: 32,
                width: 32,
                family: KernelFamily::Gaussian,
                seed: 1,
            },
            train: TrainConfig::default(),
            attacks: vec![AttackGrid {
                kind: "cospgd".into(),
                epsilons: vec![Rational { num: 8, den: 255 }],
                alpha: Some(0.01),
                iterations: vec![5, 10, 20],
            }],
            panels: PanelConfig::default(),
            eval_batch: default_eval_batch(),
            checkpoint_dir: None,
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid("experiment config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CoreError::Invalid { msg, .. } => CoreError::Format {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(invalid("experiment config", msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.variants.is_empty() || self.defenses.is_empty() {
            return bad("the grid needs at least one variant and one defense".into());
        }
        let blocks = block_registry::<f64>();
        for v in &self.variants {
            blocks.get(v)?;
            self.arch.variant(v).validate()?;
        }
        self.dataset.validate()?;
        if self.dataset.n_test == 0 {
            return bad("the test split is empty".into());
        }
        let m = self.arch.variant(&self.variants[0]).size_multiple();
        if !self.dataset.height.is_multiple_of(m) || !self.dataset.width.is_multiple_of(m) {
            return bad(format!("image size must be a multiple of {m}"));
        }
        let mut train = self.train.clone();
        train.adversarial = self.defenses.contains(&Defense::Adv);
        train.validate()?;
        if self.eval_batch == 0 {
            return bad("eval_batch must be at least 1".into());
        }
        for g in &self.attacks {
            crate::attacks::attack_registry::<f64>().get(&g.kind)?;
            if g.epsilons.is_empty() || g.iterations.is_empty() {
                return bad(format!("attack `{}` has an empty ε or iteration list", g.kind));
            }
            if g.iterations.contains(&0) {
                return bad(format!("attack `{}`: iterations must be positive", g.kind));
            }
            if g.kind == "fgsm" && g.iterations != [1] {
                return bad("fgsm takes exactly one iteration".into());
            }
            if g.kind != "fgsm" && g.alpha.is_none() {
                return bad(format!("attack `{}` needs alpha", g.kind));
            }
        }
        if let Some(dir) = &self.checkpoint_dir {
            for v in &self.variants {
                for &d in &self.defenses {
                    let p = dir.join(checkpoint_name(v, d));
                    if !p.is_file() {
                        return bad(format!("missing checkpoint {}", p.display()));
                    }
                }
            }
        }
        Ok(())
    }
}
