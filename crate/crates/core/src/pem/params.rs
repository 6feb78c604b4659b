//! Model configuration and the flat parameter store.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{parse_value, Configurable};
use crate::error::{Error, Result};

/// Which parts of the pose model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Coordinate embedding, positional embedding, attention encoder, head.
    Full,
    /// As `Full` without positional embeddings.
    NoPositional,
    /// Coordinate embedding straight into the head MLP.
    MlpOnly,
}

impl Arch {
    pub fn has_encoder(self) -> bool {
        !matches!(self, Arch::MlpOnly)
    }

    pub fn has_positional(self) -> bool {
        matches!(self, Arch::Full)
    }

    pub fn code(self) -> u32 {
        match self {
            Arch::Full => 0,
            Arch::NoPositional => 1,
            Arch::MlpOnly => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Arch::Full),
            1 => Ok(Arch::NoPositional),
            2 => Ok(Arch::MlpOnly),
            _ => Err(Error::Format(format!("unknown architecture code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Full => "full",
            Arch::NoPositional => "no-positional",
            Arch::MlpOnly => "mlp-only",
        }
    }
}

/// Rotation output of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationHead {
    /// Two matrix columns, decoded by Gram-Schmidt.
    SixD,
    /// Quaternion regressed directly and normalized.
    Quaternion,
}

impl RotationHead {
    pub fn dim(self) -> usize {
        match self {
            RotationHead::SixD => 6,
            RotationHead::Quaternion => 4,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            RotationHead::SixD => 0,
            RotationHead::Quaternion => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(RotationHead::SixD),
            1 => Ok(RotationHead::Quaternion),
            _ => Err(Error::Format(format!("unknown rotation head code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RotationHead::SixD => "6d",
            RotationHead::Quaternion => "quaternion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PemConfig {
    pub num_keypoints: usize,
    pub d_model: usize,
    pub coord_hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    /// Translation scale in meters.
    pub d_max: f64,
    pub arch: Arch,
    pub rotation: RotationHead,
}

impl Default for PemConfig {
    fn default() -> Self {
        PemConfig {
            num_keypoints: 11,
            d_model: 64,
            coord_hidden: 256,
            layers: 6,
            heads: 4,
            ff_dim: 256,
            head_hidden: 256,
            head_layers: 3,
            d_max: 10.0,
            arch: Arch::Full,
            rotation: RotationHead::SixD,
        }
    }
}

impl PemConfig {
    /// Small configuration for finite-difference gradient checks.
    pub fn reduced() -> Self {
        PemConfig {
            d_model: 8,
            coord_hidden: 16,
            layers: 2,
            heads: 2,
            ff_dim: 16,
            head_hidden: 16,
            ..PemConfig::default()
        }
    }

    pub fn output_dim(&self) -> usize {
        3 + self.rotation.dim()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

impl Configurable for PemConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "num_keypoints" => self.num_keypoints = parse_value(key, v)?,
            "d_model" => self.d_model = parse_value(key, v)?,
            "coord_hidden" => self.coord_hidden = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "heads" => self.heads = parse_value(key, v)?,
            "ff_dim" => self.ff_dim = parse_value(key, v)?,
            "head_hidden" => self.head_hidden = parse_value(key, v)?,
            "head_layers" => self.head_layers = parse_value(key, v)?,
            "d_max" => self.d_max = parse_value(key, v)?,
            "arch" => {
                self.arch = match v {
                    "full" => Arch::Full,
                    "no-positional" => Arch::NoPositional,
                    "mlp-only" => Arch::MlpOnly,
                    _ => return Err(Error::Config(format!("unknown arch {v:?}"))),
                }
            }
            "rotation" => {
                self.rotation = match v {
                    "6d" => RotationHead::SixD,
                    "quaternion" => RotationHead::Quaternion,
                    _ => return Err(Error::Config(format!("unknown rotation head {v:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown pem key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let widths = [self.num_keypoints, self.d_model, self.coord_hidden, self.heads, self.ff_dim, self.head_hidden];
        if widths.contains(&0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::Config("d_max must be positive".into()));
        }
        Ok(())
    }
}

/// Role of a tensor, which decides its initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of a dense layer `y = x W + b`, with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerIdx {
    pub ln1: NormIdx,
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
    pub ln2: NormIdx,
    pub ff1: LinearIdx,
    pub ff2: LinearIdx,
}

/// Tensor table in declaration order plus typed offsets for the model code.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub embed1: LinearIdx,
    pub embed2: LinearIdx,
    pub pos: Option<usize>,
    pub layers: Vec<LayerIdx>,
    pub final_norm: Option<NormIdx>,
    /// Hidden layers followed by the output layer.
    pub head: Vec<LinearIdx>,
    pub total: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, kind: TensorKind) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec { name, rows, cols, kind, offset });
        self.total += rows * cols;
        offset
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let w = self.push(format!("{name}.weight"), fan_in, fan_out, TensorKind::Weight);
        let b = self.push(format!("{name}.bias"), 1, fan_out, TensorKind::Bias);
        LinearIdx { w, b, fan_in, fan_out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormIdx {
        let gamma = self.push(format!("{name}.gain"), 1, dim, TensorKind::NormGain);
        let beta = self.push(format!("{name}.bias"), 1, dim, TensorKind::NormBias);
        NormIdx { gamma, beta, dim }
    }
}

impl Layout {
    pub fn new(cfg: &PemConfig) -> Self {
        let (k, d) = (cfg.num_keypoints, cfg.d_model);
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let embed1 = b.linear("embed.0", 2, cfg.coord_hidden);
        let embed2 = b.linear("embed.1", cfg.coord_hidden, d);
        let pos = cfg.arch.has_positional().then(|| b.push("pos".into(), k, d, TensorKind::Embedding));
        let mut layers = Vec::new();
        if cfg.arch.has_encoder() {
            for l in 0..cfg.layers {
                layers.push(LayerIdx {
                    ln1: b.norm(&format!("enc.{l}.ln1"), d),
                    q: b.linear(&format!("enc.{l}.query"), d, d),
                    k: b.linear(&format!("enc.{l}.key"), d, d),
                    v: b.linear(&format!("enc.{l}.value"), d, d),
                    o: b.linear(&format!("enc.{l}.out"), d, d),
                    ln2: b.norm(&format!("enc.{l}.ln2"), d),
                    ff1: b.linear(&format!("enc.{l}.ff.0"), d, cfg.ff_dim),
                    ff2: b.linear(&format!("enc.{l}.ff.1"), cfg.ff_dim, d),
                });
            }
        }
        let final_norm = cfg.arch.has_encoder().then(|| b.norm("enc.final_ln", d));
        let mut head = Vec::new();
        let mut width = k * d;
        for i in 0..cfg.head_layers {
            head.push(b.linear(&format!("head.{i}"), width, cfg.head_hidden));
            width = cfg.head_hidden;
        }
        head.push(b.linear("head.out", width, cfg.output_dim()));
        Layout { tensors: b.tensors, embed1, embed2, pos, layers, final_norm, head, total: b.total }
    }
}

/// All trainable parameters in one contiguous buffer, ordered as
/// [`Layout::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct PemWeights {
    pub config: PemConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
    /// Bumped on every in-place update so stale forward caches are caught.
    pub(crate) version: u64,
}

impl PemWeights {
    /// Fan-in-scaled uniform linear maps, zero biases, unit norm gains and
    /// `N(0, 0.02²)` positional embeddings.
    pub fn init<R: Rng + ?Sized>(config: PemConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total];
        let pos_dist = Normal::new(0.0, 0.02).expect("valid std");
        for t in &layout.tensors {
            let slot = &mut data[t.range()];
            match t.kind {
                TensorKind::Weight => {
                    let bound = 1.0 / (t.rows as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                }
                TensorKind::Embedding => slot.iter_mut().for_each(|v| *v = pos_dist.sample(rng)),
                TensorKind::NormGain => slot.fill(1.0),
                TensorKind::Bias | TensorKind::NormBias => {}
            }
        }
        Ok(PemWeights { config, layout, data, version: 0 })
    }

    pub fn from_parts(config: PemConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(Error::Shape { expected: layout.total, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        Ok(PemWeights { config, layout, data, version: 0 })
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensors.iter().find(|t| t.name == name).map(|t| &self.data[t.range()])
    }

    /// Marks the weights as modified; call after editing `data` directly.
    pub fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }
}
