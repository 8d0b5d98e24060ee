//! Dense autoencoder and its on-disk checkpoint format.
//!
//! # Checkpoint layout
//!
//! A checkpoint is a UTF-8 manifest followed by a binary payload:
//!
//! ```text
//! dclust-checkpoint 1
//! phase pretrained|stage1|stage2
//! seed <u64>
//! latent_dim <d>
//! epoch <completed epochs>
//! encoder <in>x<out>:<relu|linear> ...
//! decoder <in>x<out>:<relu|linear> ...
//! parameters <scalar count>
//! optimizer none | adam <step> <lr> <beta1> <beta2> <epsilon>
//! payload_bytes <n>
//! ---
//! ```
//!
//! The payload is a flat run of little-endian `f64`. Parameters come first,
//! layer by layer (encoder then decoder; weight row-major, then bias). When
//! the optimizer line says `adam`, the first-moment tensors follow in the same
//! order, then the second-moment tensors.

use std::fmt;
use std::fs;
use std::io::{BufRead, Cursor, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::{Adam, AdamConfig};

const MAGIC_LINE: &str = "dclust-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec {
            input,
            output,
            activation,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:{}", self.input, self.output, self.activation)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::CorruptCheckpoint(format!("bad layer spec {s:?}"));
        let (dims, act) = s.split_once(':').ok_or_else(bad)?;
        let (i, o) = dims.split_once('x').ok_or_else(bad)?;
        let activation = match act {
            "relu" => Activation::Relu,
            "linear" => Activation::Linear,
            _ => return Err(bad()),
        };
        Ok(LayerSpec {
            input: i.parse().map_err(|_| bad())?,
            output: o.parse().map_err(|_| bad())?,
            activation,
        })
    }
}

/// Encoder and decoder layer chains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Mirror-image stack `input → hidden… → latent → …hidden → input`, ReLU on
    /// hidden layers and linear latent and output layers.
    pub fn symmetric(input: usize, hidden: &[usize], latent: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(latent);
        let chain = |dims: &[usize]| {
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let act = if i + 2 == dims.len() {
                        Activation::Linear
                    } else {
                        Activation::Relu
                    };
                    LayerSpec::new(w[0], w[1], act)
                })
                .collect::<Vec<_>>()
        };
        let encoder = chain(&dims);
        dims.reverse();
        let decoder = chain(&dims);
        ArchSpec { encoder, decoder }
    }

    /// The 784→256→60→256→784 MNIST default.
    pub fn mnist_default() -> Self {
        ArchSpec::symmetric(784, &[256], 60)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(0, |l| l.input)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.output)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one layer".into());
        }
        for (name, chain) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for l in chain.iter() {
                if l.input == 0 || l.output == 0 {
                    return bad(format!("{name} layer {l} has a zero dimension"));
                }
            }
            for w in chain.windows(2) {
                if w[0].output != w[1].input {
                    return bad(format!("{name} layers {} and {} do not chain", w[0], w[1]));
                }
            }
        }
        let d = self.latent_dim();
        if self.decoder[0].input != d {
            return bad(format!(
                "decoder input {} differs from latent dim {d}",
                self.decoder[0].input
            ));
        }
        let p = self.input_dim();
        if self.decoder.last().map(|l| l.output) != Some(p) {
            return bad(format!("decoder output differs from input dim {p}"));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [(l.input, l.output), (1, l.output)])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    /// input × output
    pub weight: Matrix,
    /// 1 × output
    pub bias: Matrix,
}

/// Training phase recorded in a checkpoint manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrained,
    Stage1,
    Stage2,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrained => "pretrained",
            Phase::Stage1 => "stage1",
            Phase::Stage2 => "stage2",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Phase::Pretrained),
            "stage1" => Ok(Phase::Stage1),
            "stage2" => Ok(Phase::Stage2),
            other => Err(Error::CorruptCheckpoint(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub arch: ArchSpec,
    pub seed: u64,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

/// Graph handles for every parameter tensor, in [`Autoencoder::params`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl Autoencoder {
    /// He-uniform weights (bound √(6/fan_in)), zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |specs: &[LayerSpec]| {
            specs
                .iter()
                .map(|&spec| {
                    let bound = (6.0 / spec.input as f64).sqrt();
                    let data = (0..spec.input * spec.output)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Dense {
                        spec,
                        weight: Matrix::from_vec(spec.input, spec.output, data)
                            .expect("shape from spec"),
                        bias: Matrix::zeros(1, spec.output),
                    }
                })
                .collect::<Vec<_>>()
        };
        let encoder = make(&arch.encoder);
        let decoder = make(&arch.decoder);
        Ok(Autoencoder {
            arch,
            seed,
            encoder,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.arch.param_shapes()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }

    /// Places every parameter on `g` as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|m| g.parameter(m.clone())).collect(),
        }
    }

    /// Places every parameter on `g` as a constant (frozen network).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|m| g.constant(m.clone())).collect(),
        }
    }

    /// Latent batch `Z = f(X; θ_e)`, before row normalization.
    pub fn encode(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        let p = self.input_dim();
        if g.value(x).cols() != p {
            return Err(Error::dim(
                "encode",
                format!("input has {} columns, model expects {p}", g.value(x).cols()),
            ));
        }
        run_layers(g, &self.encoder, &params.vars[..2 * self.encoder.len()], x)
    }

    /// Reconstruction `X̂ = g(Z; θ_d)`.
    pub fn decode(&self, g: &mut Graph, params: &BoundParams, z: Var) -> Result<Var> {
        let d = self.latent_dim();
        if g.value(z).cols() != d {
            return Err(Error::dim(
                "decode",
                format!("latent has {} columns, model expects {d}", g.value(z).cols()),
            ));
        }
        run_layers(g, &self.decoder, &params.vars[2 * self.encoder.len()..], z)
    }

    /// Encodes a data matrix without recording gradients.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        const CHUNK: usize = 2048;
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "embed",
                format!("input has {} columns, model expects {}", x.cols(), self.input_dim()),
            ));
        }
        let mut out = Vec::with_capacity(x.rows() * self.latent_dim());
        let idx: Vec<usize> = (0..x.rows()).collect();
        for chunk in idx.chunks(CHUNK) {
            let mut g = Graph::new();
            let params = self.bind_frozen(&mut g);
            let xv = g.constant(x.select_rows(chunk));
            let z = self.encode(&mut g, &params, xv)?;
            out.extend_from_slice(g.value(z).as_slice());
        }
        Matrix::from_vec(x.rows(), self.latent_dim(), out)
    }
}

fn run_layers(g: &mut Graph, layers: &[Dense], vars: &[Var], input: Var) -> Result<Var> {
    let mut h = input;
    for (layer, pv) in layers.iter().zip(vars.chunks(2)) {
        let lin = g.matmul(h, pv[0])?;
        h = g.add_bias(lin, pv[1])?;
        if layer.spec.activation == Activation::Relu {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub phase: Phase,
    pub seed: u64,
    pub latent_dim: usize,
    pub epoch: usize,
    pub arch: ArchSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Autoencoder,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(model: Autoencoder, phase: Phase, epoch: usize, optimizer: Option<Adam>) -> Self {
        Checkpoint {
            manifest: Manifest {
                phase,
                seed: model.seed,
                latent_dim: model.latent_dim(),
                epoch,
                arch: model.arch.clone(),
            },
            model,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.manifest;
        let join = |ls: &[LayerSpec]| {
            ls.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        };
        let n_params = self.model.num_params();
        let opt_line = match &self.optimizer {
            None => "none".to_string(),
            Some(a) => format!(
                "adam {} {} {} {} {}",
                a.step,
                a.config.learning_rate,
                a.config.beta1,
                a.config.beta2,
                a.config.epsilon
            ),
        };
        let n_values = n_params * if self.optimizer.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(512 + 8 * n_values);
        let header = format!(
            "{MAGIC_LINE}\nphase {}\nseed {}\nlatent_dim {}\nepoch {}\nencoder {}\ndecoder {}\nparameters {}\noptimizer {}\npayload_bytes {}\n---\n",
            m.phase,
            m.seed,
            m.latent_dim,
            m.epoch,
            join(&m.arch.encoder),
            join(&m.arch.decoder),
            n_params,
            opt_line,
            8 * n_values
        );
        out.extend_from_slice(header.as_bytes());
        let mut tensors: Vec<&Matrix> = self.model.params();
        if let Some(a) = &self.optimizer {
            tensors.extend(a.first.iter());
            tensors.extend(a.second.iter());
        }
        for t in tensors {
            for &v in t.as_slice() {
                out.write_f64::<LittleEndian>(v).expect("write to Vec");
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let mut cur = Cursor::new(bytes);
        let mut fields: Vec<(String, String)> = Vec::new();
        let mut first = true;
        loop {
            let mut line = String::new();
            let n = cur
                .read_line(&mut line)
                .map_err(|_| corrupt("manifest is not valid text"))?;
            if n == 0 {
                return Err(corrupt("manifest terminator missing"));
            }
            let line = line.trim_end_matches('\n');
            if first {
                if line != MAGIC_LINE {
                    return Err(corrupt("not a dclust checkpoint"));
                }
                first = false;
                continue;
            }
            if line == "---" {
                break;
            }
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            fields.push((k.to_string(), v.to_string()));
        }
        let get = |key: &str| {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("manifest lacks {key}")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad value for {key}")))
        };
        let layers = |key: &str| -> Result<Vec<LayerSpec>> {
            get(key)?.split_whitespace().map(str::parse).collect()
        };
        let arch = ArchSpec {
            encoder: layers("encoder")?,
            decoder: layers("decoder")?,
        };
        arch.validate()
            .map_err(|e| Error::CorruptCheckpoint(format!("inconsistent architecture: {e}")))?;
        let manifest = Manifest {
            phase: get("phase")?.parse()?,
            seed: num("seed")?,
            latent_dim: num("latent_dim")? as usize,
            epoch: num("epoch")? as usize,
            arch,
        };
        if manifest.latent_dim != manifest.arch.latent_dim() {
            return Err(corrupt("latent_dim disagrees with encoder output"));
        }
        let shapes = manifest.arch.param_shapes();
        let n_params: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if num("parameters")? as usize != n_params {
            return Err(corrupt("parameter count disagrees with architecture"));
        }
        let opt_fields: Vec<&str> = get("optimizer")?.split_whitespace().collect();
        let adam_header = match opt_fields.as_slice() {
            ["none"] => None,
            ["adam", step, lr, b1, b2, eps] => {
                let f = |s: &str| s.parse::<f64>().map_err(|_| corrupt("bad optimizer field"));
                Some((
                    step.parse::<u64>().map_err(|_| corrupt("bad optimizer step"))?,
                    AdamConfig {
                        learning_rate: f(lr)?,
                        beta1: f(b1)?,
                        beta2: f(b2)?,
                        epsilon: f(eps)?,
                    },
                ))
            }
            _ => return Err(corrupt("bad optimizer line")),
        };
        let expected = 8 * n_params * if adam_header.is_some() { 3 } else { 1 };
        if num("payload_bytes")? as usize != expected {
            return Err(corrupt("payload size disagrees with architecture"));
        }
        let remaining = bytes.len() - cur.position() as usize;
        if remaining < expected {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated payload: {remaining} of {expected} bytes"
            )));
        }
        if remaining > expected {
            return Err(corrupt("trailing bytes after payload"));
        }

        let read_tensors = |cur: &mut Cursor<&[u8]>| -> Result<Vec<Matrix>> {
            shapes
                .iter()
                .map(|&(r, c)| {
                    let mut data = vec![0.0; r * c];
                    cur.read_f64_into::<LittleEndian>(&mut data)
                        .map_err(|_| corrupt("truncated payload"))?;
                    if data.iter().any(|v| !v.is_finite()) {
                        return Err(corrupt("non-finite parameter"));
                    }
                    Matrix::from_vec(r, c, data)
                })
                .collect()
        };
        let params = read_tensors(&mut cur)?;
        let optimizer = match adam_header {
            None => None,
            Some((step, config)) => Some(Adam {
                config,
                step,
                first: read_tensors(&mut cur)?,
                second: read_tensors(&mut cur)?,
            }),
        };

        let mut it = params.into_iter();
        let mut layers_from = |specs: &[LayerSpec]| {
            specs
                .iter()
                .map(|&spec| Dense {
                    spec,
                    weight: it.next().expect("count checked"),
                    bias: it.next().expect("count checked"),
                })
                .collect::<Vec<_>>()
        };
        let encoder = layers_from(&manifest.arch.encoder);
        let decoder = layers_from(&manifest.arch.decoder);
        let model = Autoencoder {
            arch: manifest.arch.clone(),
            seed: manifest.seed,
            encoder,
            decoder,
        };
        Ok(Checkpoint {
            manifest,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads and checks that the stored model has the expected input width.
    pub fn load_for_input(path: impl AsRef<Path>, input_dim: usize) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.model.input_dim() != input_dim {
            return Err(Error::SpecMismatch(format!(
                "checkpoint expects {} input features, data has {input_dim}",
                ck.model.input_dim()
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Autoencoder {
        Autoencoder::init(ArchSpec::symmetric(6, &[5], 3), 17).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Autoencoder::init(ArchSpec::symmetric(20, &[8], 4), 5).unwrap();
        let b = Autoencoder::init(ArchSpec::symmetric(20, &[8], 4), 5).unwrap();
        assert_eq!(a, b);
        let c = Autoencoder::init(ArchSpec::symmetric(20, &[8], 4), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mnist_default_shape() {
        let m = Autoencoder::init(ArchSpec::mnist_default(), 0).unwrap();
        assert_eq!(m.latent_dim(), 60);
        assert_eq!(m.input_dim(), 784);
        assert_eq!(m.arch.encoder[0].activation, Activation::Relu);
        assert_eq!(m.arch.encoder[1].activation, Activation::Linear);
        assert_eq!(m.arch.decoder[1].activation, Activation::Linear);
    }

    #[test]
    fn parameter_count() {
        let m = Autoencoder::init(ArchSpec::symmetric(784, &[128], 60), 0).unwrap();
        let expected = 784 * 128 + 128 + 128 * 60 + 60 + 60 * 128 + 128 + 128 * 784 + 784;
        assert_eq!(m.num_params(), expected);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = small();
        for l in &m.encoder {
            let bound = (6.0 / l.spec.input as f64).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.as_slice().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let arch = ArchSpec {
            encoder: vec![LayerSpec::new(6, 4, Activation::Relu), LayerSpec::new(5, 3, Activation::Linear)],
            decoder: vec![LayerSpec::new(3, 6, Activation::Linear)],
        };
        assert!(matches!(Autoencoder::init(arch, 0), Err(Error::Config(_))));
        let arch = ArchSpec {
            encoder: vec![LayerSpec::new(6, 3, Activation::Linear)],
            decoder: vec![LayerSpec::new(3, 5, Activation::Linear)],
        };
        assert!(Autoencoder::init(arch, 0).is_err());
    }

    #[test]
    fn encode_decode_shapes() {
        let m = small();
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let x = g.constant(Matrix::filled(4, 6, 0.3));
        let z = m.encode(&mut g, &p, x).unwrap();
        assert_eq!(g.value(z).shape(), (4, 3));
        let xh = m.decode(&mut g, &p, z).unwrap();
        assert_eq!(g.value(xh).shape(), (4, 6));

        let wrong = g.constant(Matrix::zeros(4, 5));
        assert!(m.encode(&mut g, &p, wrong).is_err());
        assert!(m.decode(&mut g, &p, x).is_err());
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let mut m = small();
        for t in m.params_mut() {
            *t = Matrix::zeros(t.rows(), t.cols());
        }
        let z = m.embed(&Matrix::filled(3, 6, 0.7)).unwrap();
        assert_eq!(z, Matrix::zeros(3, 3));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = small();
        let mut adam = Adam::new(AdamConfig::default(), &m.param_shapes());
        adam.step = 7;
        adam.first[0].as_mut_slice()[0] = 0.125;
        adam.second[3].as_mut_slice()[1] = 1e-300;
        for phase in [Phase::Pretrained, Phase::Stage1, Phase::Stage2] {
            let ck = Checkpoint::new(m.clone(), phase, 3, Some(adam.clone()));
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.manifest.phase, phase);
        }
        let ck = Checkpoint::new(m.clone(), Phase::Pretrained, 0, None);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        for (a, b) in ck.model.params().iter().zip(back.model.params()) {
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = Checkpoint::new(small(), Phase::Pretrained, 0, None).to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        match Checkpoint::from_bytes(cut) {
            Err(Error::CorruptCheckpoint(msg)) => assert!(msg.contains("truncated")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Checkpoint::from_bytes(b"garbage"),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn unknown_phase_is_corrupt() {
        let bytes = Checkpoint::new(small(), Phase::Stage1, 0, None).to_bytes();
        let mut patched = bytes.clone();
        let pos = bytes.windows(6).position(|w| w == b"stage1").unwrap();
        patched[pos + 5] = b'9';
        assert!(matches!(
            Checkpoint::from_bytes(&patched),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn file_round_trip_and_spec_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(small(), Phase::Stage2, 9, None);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load_for_input(&path, 7),
            Err(Error::SpecMismatch(_))
        ));
    }
}
