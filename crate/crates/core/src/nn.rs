//! Recurrent enhancement networks: GRU layers followed by dense layers.
//!
//! GRU step (Cho et al. formulation, reset applied to the state before the candidate transform):
//!
//! ```text
//! z  = σ(Wz·[x; h] + bz)
//! r  = σ(Wr·[x; h] + br)
//! h~ = tanh(Wc·[x; r⊙h] + bc)
//! h' = z⊙h + (1 − z)⊙h~
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gru,
    FeedForward,
    LinearOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
    /// Used inside GRU layers only.
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn gru(input_dim: usize, output_dim: usize) -> Self {
        Self { kind: LayerKind::Gru, input_dim, output_dim, activation: Activation::Tanh }
    }

    pub fn feed_forward(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::FeedForward, input_dim, output_dim, activation }
    }

    pub fn linear_out(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::LinearOut, input_dim, output_dim, activation }
    }

    /// Rows × columns of the weight matrix (GRU: all three gates stacked).
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Gru => (3 * self.output_dim, self.input_dim + self.output_dim),
            _ => (self.output_dim, self.input_dim),
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Gru => 3 * self.output_dim,
            _ => self.output_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        let (r, c) = self.weight_shape();
        r * c + self.bias_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

pub const PRESETS: [&str; 4] = ["param_small", "param_large", "irm_small", "irm_large"];

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { name: name.into(), layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self> {
        use Activation::*;
        use LayerSpec as L;
        let layers = match name {
            "param_small" => vec![
                L::gru(29, 64),
                L::feed_forward(64, 128, Relu),
                L::feed_forward(128, 128, Relu),
                L::linear_out(128, 29, Linear),
            ],
            "param_large" => vec![
                L::gru(29, 512),
                L::gru(512, 512),
                L::feed_forward(512, 1024, Relu),
                L::feed_forward(1024, 1024, Relu),
                L::linear_out(1024, 29, Linear),
            ],
            "irm_small" => vec![
                L::gru(129, 64),
                L::feed_forward(64, 64, Relu),
                L::feed_forward(64, 64, Relu),
                L::linear_out(64, 129, Sigmoid),
            ],
            "irm_large" => vec![
                L::gru(129, 512),
                L::gru(512, 512),
                L::feed_forward(512, 1024, Relu),
                L::feed_forward(1024, 1024, Relu),
                L::linear_out(1024, 129, Sigmoid),
            ],
            _ => return Err(Error::Model(format!("unknown preset {name:?} (expected one of {PRESETS:?})"))),
        };
        Self::new(name, layers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_dim == 0 || l.output_dim == 0 {
                return bad(format!("layer {i} has a zero dimension"));
            }
            if i > 0 && self.layers[i - 1].output_dim != l.input_dim {
                return bad(format!("layer {i} input {} does not match previous output", l.input_dim));
            }
            if (l.kind == LayerKind::LinearOut) != (i + 1 == self.layers.len()) {
                return bad("exactly the last layer must be the output layer".into());
            }
            if (l.kind == LayerKind::Gru) != (l.activation == Activation::Tanh) {
                return bad(format!("layer {i}: tanh is reserved for GRU layers"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }
}

pub fn count_params(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major weight matrix, see [`LayerSpec::weight_shape`].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub input_norm: NormStats,
    pub output_norm: NormStats,
}

/// `out[i] += Σ_j w[i, col0 + j]·x[j]` for a row-major matrix with `stride` columns.
pub(crate) fn affine_acc(w: &[f64], stride: usize, col0: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * stride + col0..i * stride + col0 + x.len()];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl NetworkWeights {
    pub fn zeros(spec: ModelSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight_shape();
                Layer { w: vec![0.0; r * c], b: vec![0.0; l.bias_len()] }
            })
            .collect();
        let (i, o) = (spec.input_dim(), spec.output_dim());
        Self { spec, layers, input_norm: NormStats::identity(i), output_norm: NormStats::identity(o) }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Rounds every parameter to its 32-bit storage value.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn stream(&self) -> Stream<'_> {
        Stream {
            net: self,
            state: self
                .spec
                .layers
                .iter()
                .map(|l| if l.kind == LayerKind::Gru { vec![0.0; l.output_dim] } else { Vec::new() })
                .collect(),
        }
    }

    /// Runs the network over a normalized input sequence, starting from zero state.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut s = self.stream();
        inputs.iter().map(|x| s.step(x)).collect()
    }

    /// Normalizes raw inputs, runs the network and maps outputs back to raw units.
    pub fn enhance(&self, raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut s = self.stream();
        raw.iter().map(|x| Ok(self.output_norm.invert(&s.step(&self.input_norm.apply(x))?))).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Container layout (little-endian): magic "MPWT", u16 version, u16 name length, name,
    /// u32 layer count, per layer (u8 kind, u8 activation, u32 in, u32 out), input and output
    /// NormStats (u32 dim, f64 means, f64 stds), then all parameters as f32, layer by layer,
    /// weights before biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.param_count());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(self.spec.name.as_bytes());
        out.extend_from_slice(&(self.spec.layers.len() as u32).to_le_bytes());
        for l in &self.spec.layers {
            out.push(kind_code(l.kind));
            out.push(activation_code(l.activation));
            out.extend_from_slice(&(l.input_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.output_dim as u32).to_le_bytes());
        }
        for norm in [&self.input_norm, &self.output_norm] {
            out.extend_from_slice(&(norm.dim() as u32).to_le_bytes());
            for v in norm.mean.iter().chain(&norm.std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for l in &self.layers {
            for v in l.w.iter().chain(&l.b) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Model("bad magic".into()));
        }
        let version = r.u16()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Model(format!("unsupported weights version {version}")));
        }
        let name_len = usize::from(r.u16()?);
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Model("name is not UTF-8".into()))?;
        let n_layers = r.u32()? as usize;
        if n_layers > 1024 {
            return Err(Error::Model(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let kind = kind_from(r.u8()?)?;
            let activation = activation_from(r.u8()?)?;
            let input_dim = r.u32()? as usize;
            let output_dim = r.u32()? as usize;
            layers.push(LayerSpec { kind, input_dim, output_dim, activation });
        }
        let spec = ModelSpec::new(name, layers)?;
        if PRESETS.contains(&spec.name.as_str()) && spec != ModelSpec::preset(&spec.name)? {
            return Err(Error::Model(format!("layers do not match preset {}", spec.name)));
        }
        let mut norms = Vec::new();
        for expected in [spec.input_dim(), spec.output_dim()] {
            let dim = r.u32()? as usize;
            if dim != expected {
                return Err(Error::Model(format!("normalization dimension {dim}, expected {expected}")));
            }
            let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let std = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            norms.push(NormStats { mean, std });
        }
        let expected = count_params(&spec) * 4;
        if r.remaining() != expected {
            return Err(Error::Model(format!(
                "parameter block is {} bytes, model needs {expected} ({} parameters)",
                r.remaining(),
                count_params(&spec)
            )));
        }
        let mut net = Self::zeros(spec);
        for l in &mut net.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = f64::from(r.f32()?);
            }
        }
        net.output_norm = norms.pop().unwrap();
        net.input_norm = norms.pop().unwrap();
        Ok(net)
    }
}

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MPWT";
pub const WEIGHTS_VERSION: u16 = 1;

fn kind_code(k: LayerKind) -> u8 {
    match k {
        LayerKind::Gru => 0,
        LayerKind::FeedForward => 1,
        LayerKind::LinearOut => 2,
    }
}

fn kind_from(c: u8) -> Result<LayerKind> {
    Ok(match c {
        0 => LayerKind::Gru,
        1 => LayerKind::FeedForward,
        2 => LayerKind::LinearOut,
        _ => return Err(Error::Model(format!("unknown layer kind {c}"))),
    })
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
        Activation::Sigmoid => 2,
        Activation::Tanh => 3,
    }
}

fn activation_from(c: u8) -> Result<Activation> {
    Ok(match c {
        0 => Activation::Relu,
        1 => Activation::Linear,
        2 => Activation::Sigmoid,
        3 => Activation::Tanh,
        _ => return Err(Error::Model(format!("unknown activation {c}"))),
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Model(format!("truncated weights file ({} bytes, needed {} more)", self.bytes.len(), n))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone)]
pub(crate) struct GruStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn gru_step(spec: &LayerSpec, p: &Layer, x: &[f64], h: &[f64]) -> GruStep {
    let n = spec.output_dim;
    let stride = spec.input_dim + n;
    let (wz, rest) = p.w.split_at(n * stride);
    let (wr, wc) = rest.split_at(n * stride);
    let mut z = p.b[..n].to_vec();
    affine_acc(wz, stride, 0, x, &mut z);
    affine_acc(wz, stride, spec.input_dim, h, &mut z);
    let mut r = p.b[n..2 * n].to_vec();
    affine_acc(wr, stride, 0, x, &mut r);
    affine_acc(wr, stride, spec.input_dim, h, &mut r);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut cand = p.b[2 * n..].to_vec();
    affine_acc(wc, stride, 0, x, &mut cand);
    affine_acc(wc, stride, spec.input_dim, &rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());
    let h_new = (0..n).map(|i| z[i] * h[i] + (1.0 - z[i]) * cand[i]).collect();
    GruStep { z, r, cand, h: h_new }
}

pub(crate) fn dense_step(spec: &LayerSpec, p: &Layer, x: &[f64]) -> Vec<f64> {
    let mut y = p.b.clone();
    affine_acc(&p.w, spec.input_dim, 0, x, &mut y);
    y.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
    y
}

/// Frame-by-frame inference with carried recurrent state.
pub struct Stream<'a> {
    net: &'a NetworkWeights,
    state: Vec<Vec<f64>>,
}

impl Stream<'_> {
    pub fn step(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let spec = &self.net.spec;
        if x.len() != spec.input_dim() {
            return Err(Error::Dimension { expected: spec.input_dim(), actual: x.len() });
        }
        let mut cur = x.to_vec();
        for (i, (l, p)) in spec.layers.iter().zip(&self.net.layers).enumerate() {
            cur = match l.kind {
                LayerKind::Gru => {
                    let s = gru_step(l, p, &cur, &self.state[i]);
                    self.state[i].clone_from(&s.h);
                    s.h
                }
                _ => dense_step(l, p, &cur),
            };
        }
        Ok(cur)
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| s.fill(0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelSpec {
        ModelSpec::new(
            "tiny",
            vec![
                LayerSpec::gru(3, 4),
                LayerSpec::feed_forward(4, 5, Activation::Relu),
                LayerSpec::linear_out(5, 3, Activation::Linear),
            ],
        )
        .unwrap()
    }

    fn random_net(spec: ModelSpec, seed: u64) -> NetworkWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetworkWeights::zeros(spec);
        for l in &mut net.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        net
    }

    fn random_seq(len: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn preset_parameter_counts() {
        let count = |n| count_params(&ModelSpec::preset(n).unwrap());
        assert_eq!(count("param_small"), 46_621);
        assert_eq!(count("param_large"), 4_011_549);
        assert_eq!(count("irm_small"), 53_953);
        assert_eq!(count("irm_large"), 4_267_649);
        for n in PRESETS {
            let spec = ModelSpec::preset(n).unwrap();
            assert_eq!(NetworkWeights::zeros(spec.clone()).param_count(), count_params(&spec));
        }
    }

    #[test]
    fn footprints_at_four_bytes_per_parameter() {
        let bytes = |n| 4.0 * count_params(&ModelSpec::preset(n).unwrap()) as f64;
        assert_eq!(format!("{:.2}", bytes("param_small") / 1024.0), "182.11");
        assert_eq!(format!("{:.2}", bytes("param_large") / 1048576.0), "15.30");
        assert_eq!(format!("{:.2}", bytes("irm_small") / 1048576.0), "0.21");
        assert_eq!(format!("{:.2}", bytes("irm_large") / 1048576.0), "16.28");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ModelSpec::preset("huge").is_err());
        assert!(ModelSpec::new("x", vec![LayerSpec::gru(3, 4), LayerSpec::linear_out(5, 3, Activation::Linear)]).is_err());
        assert!(ModelSpec::new("x", vec![LayerSpec::gru(3, 4)]).is_err());
        assert!(ModelSpec::new("x", vec![]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = NetworkWeights::zeros(ModelSpec::preset("param_small").unwrap());
        for y in net.forward_sequence(&random_seq(6, 29, 1)).unwrap() {
            assert!(y.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_unit_gru_matches_hand_calculation() {
        let spec = ModelSpec::new(
            "unit",
            vec![LayerSpec::gru(1, 1), LayerSpec::linear_out(1, 1, Activation::Linear)],
        )
        .unwrap();
        let mut net = NetworkWeights::zeros(spec);
        // rows: update [wx, wh], reset [wx, wh], candidate [wx, wh]
        net.layers[0].w = vec![0.5, -0.3, 0.2, 0.4, 1.5, 0.7];
        net.layers[0].b = vec![0.1, -0.2, 0.05];
        net.layers[1].w = vec![1.0];
        let xs = [1.0, -2.0];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = 0.0;
        let mut expected = Vec::new();
        for x in xs {
            let z = s(0.5 * x - 0.3 * h + 0.1);
            let r = s(0.2 * x + 0.4 * h - 0.2);
            let c = (1.5 * x + 0.7 * r * h + 0.05).tanh();
            h = z * h + (1.0 - z) * c;
            expected.push(h);
        }
        let out = net.forward_sequence(&xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap();
        for (o, e) in out.iter().zip(&expected) {
            assert!((o[0] - e).abs() < 1e-15);
        }
        assert!((expected[1] - expected[0]).abs() > 1e-3);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = NetworkWeights::zeros(tiny());
        assert!(matches!(net.forward_sequence(&[vec![0.0; 4]]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sigmoid_output_layer_is_bounded() {
        let net = random_net(ModelSpec::preset("irm_small").unwrap(), 3);
        for y in net.forward_sequence(&random_seq(5, 129, 2)).unwrap() {
            assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn weights_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = random_net(ModelSpec::preset("param_small").unwrap(), 9);
        net.input_norm = NormStats { mean: (0..29).map(|i| i as f64 * 0.1).collect(), std: vec![1.5; 29] };
        let path = dir.path().join("w.mpwt");
        net.save(&path).unwrap();
        let loaded = NetworkWeights::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
        assert_eq!(loaded.input_norm, net.input_norm);
        net.round_to_f32();
        assert_eq!(loaded, net);
    }

    #[test]
    fn corrupt_weights_rejected() {
        let bytes = random_net(tiny(), 1).to_bytes();
        assert!(NetworkWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(NetworkWeights::from_bytes(&bytes[..10]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(NetworkWeights::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(NetworkWeights::from_bytes(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(NetworkWeights::from_bytes(&version).is_err());
    }

    #[test]
    fn preset_name_must_match_layers() {
        let mut net = random_net(tiny(), 1);
        net.spec.name = "param_small".into();
        assert!(NetworkWeights::from_bytes(&net.to_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn forward_is_causal(seed in any::<u64>(), len in 2usize..12, cut in 1usize..12) {
            let cut = cut.min(len);
            let net = random_net(tiny(), seed);
            let xs = random_seq(len, 3, seed ^ 1);
            let full = net.forward_sequence(&xs).unwrap();
            let part = net.forward_sequence(&xs[..cut]).unwrap();
            prop_assert_eq!(&full[..cut], &part[..]);
            prop_assert_eq!(net.forward_sequence(&xs).unwrap(), full);
        }

        #[test]
        fn gru_state_stays_in_unit_interval(seed in any::<u64>()) {
            let net = random_net(tiny(), seed);
            let spec = &net.spec.layers[0];
            let mut h = vec![0.0; 4];
            for x in random_seq(50, 3, seed) {
                let x: Vec<f64> = x.iter().map(|v| v * 20.0).collect();
                h = gru_step(spec, &net.layers[0], &x, &h).h;
                prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
