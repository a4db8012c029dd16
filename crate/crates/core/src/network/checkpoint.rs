//! Checkpoint persistence: little-endian binary with a magic string, a
//! format version, and a CRC-32 trailer. Parameter bits round-trip exactly,
//! so a reloaded network reproduces forward outputs bit for bit.

use std::path::Path;

use crate::bytes::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::normalization::{RunningMode, RunningStats};
use crate::numerics::{Matrix, Vector};

use super::{LayerSpec, LinearParams, Network};

const CHECKPOINT_MAGIC: &[u8; 4] = b"TTBN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: u64,
    pub frozen_bn: bool,
}

/// Everything the network needs to be rebuilt: architecture, weights,
/// normalization affine parameters with the source running track, and how
/// the model was trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub specs: Vec<LayerSpec>,
    pub linears: Vec<LinearParams>,
    pub bn: Vec<BnSnapshot>,
    pub meta: TrainMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnSnapshot {
    pub gamma: Vector,
    pub beta: Vector,
    pub running_mu: Vector,
    pub running_var: Vector,
    pub n_tracked: u64,
    pub mode: RunningMode,
    pub epsilon: f64,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: TrainMeta) -> Self {
        Self {
            specs: net.specs().to_vec(),
            linears: net.linears().to_vec(),
            bn: net
                .bn_states()
                .iter()
                .map(|layer| BnSnapshot {
                    gamma: layer.affine.gamma.clone(),
                    beta: layer.affine.beta.clone(),
                    running_mu: layer.source_running.mu.clone(),
                    running_var: layer.source_running.var.clone(),
                    n_tracked: layer.source_running.n_tracked,
                    mode: layer.source_running.mode,
                    epsilon: layer.epsilon,
                })
                .collect(),
            meta,
        }
    }

    /// Rebuild the network. Testing tracks start fresh; the variant and
    /// statistics source are left at their defaults for the caller to
    /// configure.
    pub fn build_network(&self) -> Result<Network> {
        let mut net = Network::with_seed(&self.specs, 0)?;
        if net.linears().len() != self.linears.len() || net.bn_states().len() != self.bn.len() {
            return Err(Error::InvalidSpec {
                reason: "checkpoint parameter counts do not match its architecture".into(),
            });
        }
        for (dst, src) in net.linears_mut().iter_mut().zip(self.linears.iter()) {
            *dst = src.clone();
        }
        for (dst, src) in net.bn_states_mut().iter_mut().zip(self.bn.iter()) {
            dst.affine.gamma = src.gamma.clone();
            dst.affine.beta = src.beta.clone();
            dst.source_running = RunningStats {
                mu: src.running_mu.clone(),
                var: src.running_var.clone(),
                n_tracked: src.n_tracked,
                mode: src.mode,
            };
            dst.epsilon = src.epsilon;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(CHECKPOINT_MAGIC);
        w.put_u32(CHECKPOINT_VERSION);
        w.put_u64(self.meta.seed);
        w.put_u64(self.meta.epochs);
        w.put_u8(self.meta.frozen_bn as u8);

        w.put_u64(self.specs.len() as u64);
        for spec in &self.specs {
            match *spec {
                LayerSpec::Linear { input, output } => {
                    w.put_u8(0);
                    w.put_u64(input as u64);
                    w.put_u64(output as u64);
                }
                LayerSpec::BatchNorm { dim } => {
                    w.put_u8(1);
                    w.put_u64(dim as u64);
                }
                LayerSpec::Relu => w.put_u8(2),
                LayerSpec::SoftmaxHead { classes } => {
                    w.put_u8(3);
                    w.put_u64(classes as u64);
                }
            }
        }

        w.put_u64(self.linears.len() as u64);
        for params in &self.linears {
            w.put_u64(params.weight.rows() as u64);
            w.put_u64(params.weight.cols() as u64);
            for &v in params.weight.data() {
                w.put_f64(v);
            }
            w.put_f64_slice(params.bias.as_slice());
        }

        w.put_u64(self.bn.len() as u64);
        for snap in &self.bn {
            w.put_f64_slice(snap.gamma.as_slice());
            w.put_f64_slice(snap.beta.as_slice());
            w.put_f64_slice(snap.running_mu.as_slice());
            w.put_f64_slice(snap.running_var.as_slice());
            w.put_u64(snap.n_tracked);
            match snap.mode {
                RunningMode::Cma => w.put_u8(0),
                RunningMode::Ema { momentum } => {
                    w.put_u8(1);
                    w.put_f64(momentum);
                }
            }
            w.put_f64(snap.epsilon);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new_checked(bytes, path)?;
        if r.get_bytes(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "checkpoint",
            });
        }
        let version = r.get_u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let meta = TrainMeta {
            seed: r.get_u64("seed")?,
            epochs: r.get_u64("epochs")?,
            frozen_bn: r.get_u8("frozen flag")? != 0,
        };

        let spec_count = r.get_u64("spec count")? as usize;
        let mut specs = Vec::with_capacity(spec_count);
        for _ in 0..spec_count {
            let spec = match r.get_u8("layer tag")? {
                0 => LayerSpec::Linear {
                    input: r.get_u64("linear input")? as usize,
                    output: r.get_u64("linear output")? as usize,
                },
                1 => LayerSpec::BatchNorm {
                    dim: r.get_u64("bn dim")? as usize,
                },
                2 => LayerSpec::Relu,
                3 => LayerSpec::SoftmaxHead {
                    classes: r.get_u64("classes")? as usize,
                },
                tag => {
                    return Err(Error::Truncated {
                        path: path.to_path_buf(),
                        detail: format!("unknown layer tag {tag}"),
                    })
                }
            };
            specs.push(spec);
        }

        let linear_count = r.get_u64("linear count")? as usize;
        let mut linears = Vec::with_capacity(linear_count);
        for _ in 0..linear_count {
            let rows = r.get_u64("weight rows")? as usize;
            let cols = r.get_u64("weight cols")? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.get_f64("weight")?);
            }
            let bias = Vector::from_vec(r.get_f64_vec("bias")?);
            linears.push(LinearParams {
                weight: Matrix::from_vec(rows, cols, data)?,
                bias,
            });
        }

        let bn_count = r.get_u64("bn count")? as usize;
        let mut bn = Vec::with_capacity(bn_count);
        for _ in 0..bn_count {
            let gamma = Vector::from_vec(r.get_f64_vec("gamma")?);
            let beta = Vector::from_vec(r.get_f64_vec("beta")?);
            let running_mu = Vector::from_vec(r.get_f64_vec("running mean")?);
            let running_var = Vector::from_vec(r.get_f64_vec("running var")?);
            let n_tracked = r.get_u64("batches tracked")?;
            let mode = match r.get_u8("mode tag")? {
                0 => RunningMode::Cma,
                1 => RunningMode::Ema {
                    momentum: r.get_f64("momentum")?,
                },
                tag => {
                    return Err(Error::Truncated {
                        path: path.to_path_buf(),
                        detail: format!("unknown running mode tag {tag}"),
                    })
                }
            };
            let epsilon = r.get_f64("epsilon")?;
            bn.push(BnSnapshot {
                gamma,
                beta,
                running_mu,
                running_var,
                n_tracked,
                mode,
                epsilon,
            });
        }
        r.finish()?;
        Ok(Self {
            specs,
            linears,
            bn,
            meta,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    Checkpoint::from_bytes(&bytes, path)
}
