use std::io::{Read, Write};

use super::{FeatureMap, Layer, ModelParams, RgcnError, BLOCKS};
use crate::graph::Relation;

const MAGIC: &[u8; 8] = b"CSRGCN01";

/// Little-endian binary layout:
///
/// ```text
/// magic "CSRGCN01"
/// u32 layer count L, u32 x (L + 1) dims, u32 relation count
/// u32 vocabulary size, then per entry u32 byte length + UTF-8
/// f64 x 4 numeric log-maxima
/// per layer: relation blocks in relation order, then self-loop, row-major f64
/// ```
pub fn write_params<W: Write>(p: &ModelParams, mut w: W) -> Result<(), RgcnError> {
    p.validate()?;
    w.write_all(MAGIC)?;
    let u32le = |x: usize| (x as u32).to_le_bytes();
    w.write_all(&u32le(p.layers.len()))?;
    for d in p.dims() {
        w.write_all(&u32le(d))?;
    }
    w.write_all(&u32le(Relation::COUNT))?;
    let vocab = p.features.vocabulary();
    w.write_all(&u32le(vocab.len()))?;
    for v in vocab {
        w.write_all(&u32le(v.len()))?;
        w.write_all(v.as_bytes())?;
    }
    for m in p.features.log_max() {
        w.write_all(&m.to_le_bytes())?;
    }
    for l in &p.layers {
        for x in &l.weights {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, RgcnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, RgcnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> RgcnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        RgcnError::Format("truncated file".into())
    } else {
        RgcnError::Io(e)
    }
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams, RgcnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(RgcnError::Format("bad magic".into()));
    }
    let n_layers = read_u32(&mut r)?;
    if n_layers == 0 || n_layers > 64 {
        return Err(RgcnError::Format(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers)
        .map(|_| read_u32(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    let rels = read_u32(&mut r)?;
    if rels != Relation::COUNT {
        return Err(RgcnError::Format(format!(
            "expected {} relations, file has {rels}",
            Relation::COUNT
        )));
    }
    let n_vocab = read_u32(&mut r)?;
    let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
    for _ in 0..n_vocab {
        let len = read_u32(&mut r)?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(truncated)?;
        vocab.push(String::from_utf8(buf).map_err(|e| RgcnError::Format(e.to_string()))?);
    }
    let mut log_max = [0.0; 4];
    for m in &mut log_max {
        *m = read_f64(&mut r)?;
    }
    let features = FeatureMap::new(vocab, log_max);
    if features.dim() != dims[0] {
        return Err(RgcnError::Format(format!(
            "input dim {} does not match vocabulary ({})",
            dims[0],
            features.dim()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for pair in dims.windows(2) {
        let mut l = Layer::zeros(pair[0], pair[1]);
        debug_assert_eq!(l.weights.len(), BLOCKS * pair[0] * pair[1]);
        for x in &mut l.weights {
            *x = read_f64(&mut r)?;
        }
        layers.push(l);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(RgcnError::Format("trailing bytes".into()));
    }
    let p = ModelParams { features, layers };
    p.validate()?;
    Ok(p)
}
