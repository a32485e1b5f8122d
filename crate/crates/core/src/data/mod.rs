//! Synthetic deblurring data: procedural scenes, blur kernels, PNG I/O and
//! on-disk datasets.

mod kernel;
mod png;
mod scene;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use advlab_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kernel::{apply_blur, BlurKernel, KernelKind};
pub use png::{from_rgb8, load_png, save_png, to_rgb8};
pub use scene::generate_synthetic_scene;

use crate::error::{invalid, io_err, CoreError, Result};

/// Sharp image `x` and its degraded observation `y_clean = A(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub seed: u64,
    pub x: Tensor<f64>,
    pub y_clean: Tensor<f64>,
    /// `None` for pairs loaded from foreign data with unknown blur.
    pub blur: Option<BlurKernel>,
}

impl ImagePair {
    /// Re-applies the recorded kernel to `x`.
    pub fn recompute(&self) -> Result<Tensor<f64>> {
        let k = self
            .blur
            .as_ref()
            .ok_or_else(|| invalid("image pair", format!("`{}` has no blur descriptor", self.id)))?;
        apply_blur(&self.x, k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Box,
    LinearMotion,
}

impl KernelFamily {
    /// Draws kernel parameters for one pair.
    pub fn sample(self, rng: &mut impl Rng) -> Result<BlurKernel> {
        match self {
            KernelFamily::Gaussian => BlurKernel::gaussian(7, rng.gen_range(1.0..1.8)),
            KernelFamily::Box => BlurKernel::box_kernel(if rng.gen_bool(0.5) { 3 } else { 5 }),
            KernelFamily::LinearMotion => {
                BlurKernel::linear_motion(7, rng.gen_range(0.0..180.0), rng.gen_range(3.0..7.0))
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Box => "box",
            KernelFamily::LinearMotion => "linear_motion",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "box" => Ok(Self::Box),
            "linear_motion" => Ok(Self::LinearMotion),
            _ => Err(CoreError::UnknownStrategy {
                kind: "kernel family",
                name: s.to_string(),
                known: "box, gaussian, linear_motion".into(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

const MAX_PAIRS: usize = 1 << 30;

/// Scene seed of pair `index`. Each split owns a disjoint quarter of the low
/// 32 bits, so splits never share a scene.
pub fn pair_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0,
        Split::Val => 1u64 << 30,
        Split::Test => 2u64 << 30,
    };
    (seed << 32) | tag | (index as u64 & (MAX_PAIRS as u64 - 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_train: usize,
    /// Held out from training for model selection.
    #[serde(default)]
    pub n_val: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub family: KernelFamily,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(invalid("dataset", format!("image size {}×{} below 16×16", self.height, self.width)));
        }
        if [self.n_train, self.n_val, self.n_test].iter().any(|&n| n > MAX_PAIRS) {
            return Err(invalid("dataset", "too many pairs"));
        }
        Ok(())
    }
}

fn make_pair(seed: u64, split: Split, index: usize, height: usize, width: usize, family: KernelFamily) -> Result<ImagePair> {
    let s = pair_seed(seed, split, index);
    let x = generate_synthetic_scene(s, height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    rng.set_stream(1);
    let blur = family.sample(&mut rng)?;
    let y_clean = apply_blur(&x, &blur)?;
    Ok(ImagePair {
        id: format!("{}-{index:05}", split.as_str()),
        seed: s,
        x,
        y_clean,
        blur: Some(blur),
    })
}

/// `n_pairs` training-split pairs.
pub fn make_dataset(n_pairs: usize, height: usize, width: usize, family: KernelFamily, seed: u64) -> Result<Vec<ImagePair>> {
    make_split(
        &DatasetSpec {
            n_train: n_pairs,
            n_val: 0,
            n_test: 0,
            height,
            width,
            family,
            seed,
        },
        Split::Train,
    )
}

pub fn make_split(spec: &DatasetSpec, split: Split) -> Result<Vec<ImagePair>> {
    spec.validate()?;
    let n = match split {
        Split::Train => spec.n_train,
        Split::Val => spec.n_val,
        Split::Test => spec.n_test,
    };
    (0..n)
        .map(|i| make_pair(spec.seed, split, i, spec.height, spec.width, spec.family))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<ImagePair>,
    pub val: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        Ok(Self {
            train: make_split(spec, Split::Train)?,
            val: make_split(spec, Split::Val)?,
            test: make_split(spec, Split::Test)?,
        })
    }

    pub fn split(&self, split: Split) -> &[ImagePair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<ImagePair> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub kernel: Option<BlurKernel>,
    /// Relative to the dataset directory.
    pub sharp: PathBuf,
    pub blurred: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: Option<DatasetSpec>,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Writes `<split>/{sharp,blurred}/<id>.png` and `manifest.json` under `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset, spec: Option<&DatasetSpec>) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for split in SPLITS {
        for p in data.split(split) {
            let sharp = PathBuf::from(split.as_str()).join("sharp").join(format!("{}.png", p.id));
            let blurred = PathBuf::from(split.as_str()).join("blurred").join(format!("{}.png", p.id));
            save_png(&p.x, &dir.join(&sharp))?;
            save_png(&p.y_clean, &dir.join(&blurred))?;
            entries.push(ManifestEntry {
                id: p.id.clone(),
                split,
                seed: p.seed,
                kernel: p.blur.clone(),
                sharp,
                blurred,
            });
        }
    }
    let manifest = DatasetManifest {
        spec: spec.cloned(),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Loads a dataset written by [`save_dataset`], or any directory laid out
/// as `<split>/sharp/*.png` with same-named files in `<split>/blurred/`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut data = Dataset::default();
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CoreError::Format {
            path: manifest_path.clone(),
            msg: e.to_string(),
        })?;
        for e in manifest.entries {
            let pair = ImagePair {
                x: load_png(&dir.join(&e.sharp))?,
                y_clean: load_png(&dir.join(&e.blurred))?,
                id: e.id,
                seed: e.seed,
                blur: e.kernel,
            };
            data.split_mut(e.split).push(pair);
        }
        return Ok(data);
    }
    for split in SPLITS {
        let sharp_dir = dir.join(split.as_str()).join("sharp");
        if !sharp_dir.is_dir() {
            continue;
        }
        let mut names: Vec<_> = fs::read_dir(&sharp_dir)
            .map_err(io_err(&sharp_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        names.sort();
        for sharp in names {
            let name = sharp.file_name().expect("file").to_owned();
            let blurred = dir.join(split.as_str()).join("blurred").join(&name);
            let pair = ImagePair {
                id: sharp.file_stem().expect("stem").to_string_lossy().into_owned(),
                seed: 0,
                x: load_png(&sharp)?,
                y_clean: load_png(&blurred)?,
                blur: None,
            };
            if pair.x.shape() != pair.y_clean.shape() {
                return Err(invalid("dataset", format!("`{}`: sharp and blurred sizes differ", pair.id)));
            }
            data.split_mut(split).push(pair);
        }
    }
    if SPLITS.iter().all(|&s| data.split(s).is_empty()) {
        return Err(invalid("dataset", format!("no image pairs under {}", dir.display())));
    }
    Ok(data)
}

/// Stacks pairs into N×3×H×W `(degraded, sharp)` batches at precision `T`.
pub fn stack_pairs<T: Real>(pairs: &[&ImagePair]) -> Result<(Tensor<T>, Tensor<T>)> {
    let ys: Vec<Tensor<T>> = pairs.iter().map(|p| p.y_clean.cast()).collect();
    let xs: Vec<Tensor<T>> = pairs.iter().map(|p| p.x.cast()).collect();
    Ok((
        Tensor::stack(&ys.iter().collect::<Vec<_>>())?,
        Tensor::stack(&xs.iter().collect::<Vec<_>>())?,
    ))
}
