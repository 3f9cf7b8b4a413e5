//! Binary checkpoint: magic, little-endian header length, JSON header with
//! the network shape (`CnnSpec`), then every parameter as little-endian `f32` in tensor order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CnnSpec, MicroCnn, ModelError, Params, Scalar};

const MAGIC: &[u8; 8] = b"FRGCNN01";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: CnnSpec,
    params: usize,
}

pub fn save_checkpoint<T: Scalar>(model: &MicroCnn<T>, path: &Path) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let header = serde_json::to_vec(&Header {
        spec: model.spec.clone(),
        params: model.params.num_params(),
    })
    .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for t in model.params.tensors() {
        for &v in t {
            out.write_all(&(v.f64() as f32).to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<MicroCnn<T>, ModelError> {
    let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let mut input = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(io)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    header.spec.validate()?;
    let mut params = Params::<T>::zeros(&header.spec);
    if params.num_params() != header.params {
        return Err(ModelError::Checkpoint("parameter count does not match spec".into()));
    }
    let mut buf = [0u8; 4];
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            input.read_exact(&mut buf).map_err(io)?;
            *v = T::of(f32::from_le_bytes(buf) as f64);
        }
    }
    if input.read(&mut buf).map_err(io)? != 0 {
        return Err(ModelError::Checkpoint(format!("{}: trailing bytes", path.display())));
    }
    MicroCnn::from_params(header.spec, params)
}
