use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerKind, NetworkSpec};
use super::Real;
use crate::error::{OocsError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OOCSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Weights and biases of one trainable node.
///
/// Conv weights are laid out `[ky][kx][c_in][filter]`, dense weights
/// `[in][unit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T> {
    pub node: String,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// All trainable arrays, one block per Conv2D/Dense node in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub blocks: Vec<ParamBlock<T>>,
}

impl<T: Real> Params<T> {
    pub fn total_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weight.len() + b.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    node: b.node.clone(),
                    weight: vec![T::zero(); b.weight.len()],
                    bias: vec![T::zero(); b.bias.len()],
                })
                .collect(),
        }
    }

    pub fn block(&self, node: &str) -> Option<&ParamBlock<T>> {
        self.blocks.iter().find(|b| b.node == node)
    }

    pub fn block_mut(&mut self, node: &str) -> Option<&mut ParamBlock<T>> {
        self.blocks.iter_mut().find(|b| b.node == node)
    }

    /// Every scalar in a fixed order: block by block, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.blocks.iter().flat_map(|b| b.weight.iter().chain(b.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.weight.iter_mut().chain(b.bias.iter_mut()))
    }

    /// Mutable access to the `index`-th scalar in [`Params::values`] order.
    pub fn value_mut(&mut self, mut index: usize) -> Option<&mut T> {
        for b in &mut self.blocks {
            if index < b.weight.len() {
                return Some(&mut b.weight[index]);
            }
            index -= b.weight.len();
            if index < b.bias.len() {
                return Some(&mut b.bias[index]);
            }
            index -= b.bias.len();
        }
        None
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
                a.node == b.node && a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len()
            })
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        Params {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    node: b.node.clone(),
                    weight: conv(&b.weight),
                    bias: conv(&b.bias),
                })
                .collect(),
        }
    }
}

/// Zero-mean Gaussian entries with standard deviation `sqrt(2 / fan_in)`.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(OocsError::Domain("fan_in must be at least 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| OocsError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Ok((0..len).map(|_| normal.sample(&mut rng)).collect())
}

/// (weight length, bias length, fan_in) of every trainable node.
pub(crate) fn param_layout(spec: &NetworkSpec) -> Result<Vec<(String, usize, usize, usize)>> {
    let shapes = spec.shapes()?;
    let mut out = Vec::new();
    for node in &spec.nodes {
        let input = node
            .inputs
            .first()
            .and_then(|n| spec.index_of(n))
            .map(|i| shapes[i]);
        match node.kind {
            LayerKind::Conv2D { filters } => {
                let c_in = input.expect("conv has an input").c;
                out.push((node.name.clone(), 9 * c_in * filters, filters, 9 * c_in));
            }
            LayerKind::Dense { units } => {
                let fan_in = input.expect("dense has an input").len();
                out.push((node.name.clone(), fan_in * units, units, fan_in));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Exact number of trainable scalars. Fixed residual nodes contribute none.
pub fn param_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(param_layout(spec)?.iter().map(|(_, w, b, _)| w + b).sum())
}

/// He-initialized weights and zero biases. Each block draws from its own
/// stream derived from `seed` and the block position.
pub fn init_params<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<Params<T>> {
    let blocks = param_layout(spec)?
        .into_iter()
        .enumerate()
        .map(|(i, (node, wlen, blen, fan_in))| {
            let block_seed = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let weight = he_init(&[wlen], fan_in, block_seed)?
                .into_iter()
                .map(T::from_f64)
                .collect();
            Ok(ParamBlock {
                node,
                weight,
                bias: vec![T::zero(); blen],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Params { blocks })
}

/// Binary checkpoint: magic, format version, spec hash and block count, then
/// for every block its weight and bias arrays as little-endian `f32`, each
/// preceded by a `u64` length.
pub fn write_checkpoint<T: Real>(path: &Path, spec: &NetworkSpec, params: &Params<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + params.total_count() * 4 + params.blocks.len() * 16);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&spec.hash().to_le_bytes());
    buf.extend_from_slice(&(params.blocks.len() as u32).to_le_bytes());
    for b in &params.blocks {
        for arr in [&b.weight, &b.bias] {
            buf.extend_from_slice(&(arr.len() as u64).to_le_bytes());
            for v in arr.iter() {
                buf.extend_from_slice(&(Real::as_f64(*v) as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| OocsError::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path, spec: &NetworkSpec) -> Result<Params<T>> {
    let bytes = fs::read(path).map_err(|e| OocsError::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| OocsError::Truncated {
            path: path.to_path_buf(),
            expected: (pos + n) as u64,
            found: bytes.len() as u64,
        })?;
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(OocsError::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(OocsError::Format(format!("unsupported checkpoint version {version}")));
    }
    let hash = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    if hash != spec.hash() {
        return Err(OocsError::CheckpointMismatch {
            expected: spec.hash(),
            found: hash,
        });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let layout = param_layout(spec)?;
    if count != layout.len() {
        return Err(OocsError::Format(format!(
            "checkpoint has {count} blocks, spec needs {}",
            layout.len()
        )));
    }
    let mut blocks = Vec::with_capacity(count);
    for (node, wlen, blen, _) in layout {
        let mut arrays = Vec::with_capacity(2);
        for want in [wlen, blen] {
            let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            if len != want {
                return Err(OocsError::Format(format!(
                    "block `{node}`: array of {len} values, expected {want}"
                )));
            }
            let raw = take(len * 4)?;
            arrays.push(
                raw.chunks_exact(4)
                    .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect::<Vec<T>>(),
            );
        }
        let bias = arrays.pop().expect("bias");
        let weight = arrays.pop().expect("weight");
        blocks.push(ParamBlock { node, weight, bias });
    }
    if pos != bytes.len() {
        return Err(OocsError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Params { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_init_statistics() {
        let w = he_init(&[3, 3, 1, 32], 9, 42).unwrap();
        assert_eq!(w.len(), 288);
        let mean = w.iter().sum::<f64>() / 288.0;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 287.0).sqrt();
        assert!((0.35..=0.60).contains(&std), "{std}");
        assert_eq!(w, he_init(&[3, 3, 1, 32], 9, 42).unwrap());
        assert_ne!(w, he_init(&[3, 3, 1, 32], 9, 43).unwrap());
        let unit = he_init(&[20000], 2, 1).unwrap();
        let var = unit.iter().map(|v| v * v).sum::<f64>() / 20000.0;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        assert!(he_init(&[4], 0, 1).is_err());
    }

    fn dense_net() -> NetworkSpec {
        let mut s = NetworkSpec::new(1, 1, 128);
        s.chain("fc", LayerKind::Dense { units: 10 })
            .chain("loss", LayerKind::SoftmaxCE);
        s
    }

    #[test]
    fn counts() {
        assert_eq!(param_count(&dense_net()).unwrap(), 1290);
        let mut s = NetworkSpec::new(28, 28, 1);
        s.chain("conv", LayerKind::Conv2D { filters: 32 })
            .chain("flat", LayerKind::Flatten)
            .chain("fc", LayerKind::Dense { units: 10 })
            .chain("loss", LayerKind::SoftmaxCE);
        assert_eq!(param_count(&s).unwrap(), 320 + 28 * 28 * 32 * 10 + 10);
        let p: Params<f64> = init_params(&s, 0).unwrap();
        assert_eq!(p.total_count(), param_count(&s).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = dense_net();
        let p: Params<f32> = init_params(&spec, 3).unwrap();
        write_checkpoint(&path, &spec, &p).unwrap();
        let back: Params<f32> = read_checkpoint(&path, &spec).unwrap();
        assert_eq!(back, p);

        let mut other = NetworkSpec::new(1, 1, 128);
        other
            .chain("fc", LayerKind::Dense { units: 11 })
            .chain("loss", LayerKind::SoftmaxCE);
        assert!(matches!(
            read_checkpoint::<f32>(&path, &other),
            Err(OocsError::CheckpointMismatch { .. })
        ));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint::<f32>(&path, &spec).is_err());
    }
}
