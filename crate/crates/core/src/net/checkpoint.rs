//! Parameter files.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! b"FLATCAD1"            8-byte magic
//! depth   u64            hidden layers
//! width   u64            hidden width
//! omega0  f64
//! for each layer (depth hidden layers, then the output layer):
//!     weight  f64 × out·in   row-major
//!     bias    f64 × out
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use super::{Layer, NetworkParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FLATCAD1";

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.depth() as u64).to_le_bytes());
    out.extend_from_slice(&(params.width() as u64).to_le_bytes());
    out.extend_from_slice(&params.omega0.to_le_bytes());
    for layer in &params.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<NetworkParams, String> {
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err("missing FLATCAD1 header".into());
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().unwrap() };
    let depth = u64::from_le_bytes(word(8)) as usize;
    let width = u64::from_le_bytes(word(16)) as usize;
    let omega0 = f64::from_le_bytes(word(24));
    if depth == 0 || width == 0 || depth > 1 << 16 || width > 1 << 20 {
        return Err(format!("implausible shape depth={depth} width={width}"));
    }
    let mut expected = 32usize;
    for l in 0..=depth {
        let in_dim = if l == 0 { 3 } else { width };
        let out_dim = if l == depth { 1 } else { width };
        expected += 8 * (out_dim * in_dim + out_dim);
    }
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let mut pos = 32;
    let mut next = || {
        let v = f64::from_le_bytes(word(pos));
        pos += 8;
        v
    };
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let in_dim = if l == 0 { 3 } else { width };
        let out_dim = if l == depth { 1 } else { width };
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), &mut next);
        let bias = Array1::from_shape_simple_fn(out_dim, &mut next);
        layers.push(Layer { weight, bias });
    }
    NetworkParams::from_layers(layers, omega0).map_err(|e| e.to_string())
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Human-readable dump of the parameters.
pub fn to_json(params: &NetworkParams) -> Value {
    let layers: Vec<Value> = params
        .layers
        .iter()
        .map(|l| {
            let rows: Vec<Vec<f64>> = l.weight.rows().into_iter().map(|r| r.to_vec()).collect();
            json!({ "weight": rows, "bias": l.bias.to_vec() })
        })
        .collect();
    json!({
        "depth": params.depth(),
        "width": params.width(),
        "omega0": params.omega0,
        "layers": layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_siren;

    #[test]
    fn bytes_round_trip_is_exact() {
        let p = init_siren(3, 7, 30.0, 5);
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..8], b"FLATCAD1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 7);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 30.0);
        assert_eq!(from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn first_weights_follow_header_row_major() {
        let p = init_siren(1, 2, 30.0, 5);
        let bytes = to_bytes(&p);
        let at = |i: usize| f64::from_le_bytes(bytes[32 + 8 * i..40 + 8 * i].try_into().unwrap());
        assert_eq!(at(0), p.layers[0].weight[[0, 0]]);
        assert_eq!(at(1), p.layers[0].weight[[0, 1]]);
        assert_eq!(at(3), p.layers[0].weight[[1, 0]]);
        assert_eq!(at(6), p.layers[0].bias[0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = init_siren(2, 4, 30.0, 5);
        let mut bytes = to_bytes(&p);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn json_has_all_layers() {
        let p = init_siren(2, 4, 30.0, 5);
        let v = to_json(&p);
        assert_eq!(v["layers"].as_array().unwrap().len(), 3);
        assert_eq!(v["width"], 4);
    }
}
