//! Checkpoints: a versioned JSON header naming every tensor, followed by
//! raw little-endian f32 payloads in header order. Stores parameters, the
//! Adadelta accumulators, and the config that produced the graph.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::lstm::{Smoother, SmootherConfig};
use crate::network::{Autoencoder, NetworkConfig};
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &str = "VCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    version: u32,
    kind: String,
    config: serde_json::Value,
    optimizer: AdadeltaConfig,
    tensors: Vec<TensorEntry>,
}

fn write_container(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    optimizer: AdadeltaConfig,
    tensors: &[(String, &Tensor<f32>)],
) -> Result<(), IoError> {
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        kind: kind.into(),
        config,
        optimizer,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    for (_, t) in tensors {
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| IoError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn read_container(
    path: &Path,
    expect_kind: &str,
) -> Result<(Header, Vec<Tensor<f32>>), IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header_line = String::new();
    r.read_line(&mut header_line)
        .map_err(|e| IoError::io(path, e))?;
    let header: Header =
        serde_json::from_str(header_line.trim_end()).map_err(|e| IoError::CorruptHeader {
            path: path.into(),
            message: e.to_string(),
        })?;
    if header.magic != MAGIC {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: format!("bad magic {:?}", header.magic),
        });
    }
    if header.version != VERSION {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: format!("unsupported version {}", header.version),
        });
    }
    if header.kind != expect_kind {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: format!("checkpoint kind {:?}, expected {expect_kind:?}", header.kind),
        });
    }
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 4)
        .sum();
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)
        .map_err(|e| IoError::io(path, e))?;
    if payload.len() < expected {
        return Err(IoError::TruncatedData {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IoError::TrailingData {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut offset = 0;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let values: Vec<f32> = payload[offset..offset + count * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += count * 4;
        tensors.push(Tensor::from_vec(&entry.shape, values).map_err(|e| IoError::Invalid {
            path: path.into(),
            message: e.to_string(),
        })?);
    }
    Ok((header, tensors))
}

fn collect_tensors<'a>(
    params: &'a ParamSet<f32>,
    optimizer: &'a AdadeltaState<f32>,
) -> Vec<(String, &'a Tensor<f32>)> {
    let (grad_sq, update_sq) = optimizer.accumulators();
    let mut out: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (i, (_, p)) in params.iter().enumerate() {
        out.push((p.name.clone(), &p.value));
        out.push((format!("{}#g2", p.name), &grad_sq[i]));
        out.push((format!("{}#dx2", p.name), &update_sq[i]));
    }
    out
}

fn split_tensors(
    path: &Path,
    header: &Header,
    tensors: Vec<Tensor<f32>>,
) -> Result<(ParamSet<f32>, Vec<Tensor<f32>>, Vec<Tensor<f32>>), IoError> {
    if header.tensors.len() % 3 != 0 {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: "tensor count is not a multiple of 3 (value, #g2, #dx2)".into(),
        });
    }
    let mut params: ParamSet<f32> = ParamSet::new();
    let mut grad_sq = Vec::new();
    let mut update_sq = Vec::new();
    for (chunk_meta, chunk) in header.tensors.chunks(3).zip(tensors.chunks(3)) {
        let base = &chunk_meta[0].name;
        if chunk_meta[1].name != format!("{base}#g2")
            || chunk_meta[2].name != format!("{base}#dx2")
        {
            return Err(IoError::CorruptHeader {
                path: path.into(),
                message: format!("accumulators for {base} out of order"),
            });
        }
        params.add(base.clone(), chunk[0].clone());
        grad_sq.push(chunk[1].clone());
        update_sq.push(chunk[2].clone());
    }
    Ok((params, grad_sq, update_sq))
}

pub fn write_autoencoder_checkpoint(
    path: impl AsRef<Path>,
    model: &Autoencoder<f32>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let config = serde_json::to_value(model.config())
        .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    write_container(
        path,
        "autoencoder",
        config,
        model.optimizer().config(),
        &collect_tensors(model.params(), model.optimizer()),
    )
}

pub fn read_autoencoder_checkpoint(path: impl AsRef<Path>) -> Result<Autoencoder<f32>, IoError> {
    let path = path.as_ref();
    let (header, tensors) = read_container(path, "autoencoder")?;
    let config: NetworkConfig =
        serde_json::from_value(header.config.clone()).map_err(|e| IoError::CorruptHeader {
            path: path.into(),
            message: format!("bad network config: {e}"),
        })?;
    let (params, grad_sq, update_sq) = split_tensors(path, &header, tensors)?;
    let mut optimizer = AdadeltaState::new(&params, header.optimizer);
    optimizer.restore(grad_sq, update_sq);
    Autoencoder::from_parts(config, params, optimizer).map_err(|e| IoError::Invalid {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn write_smoother_checkpoint(
    path: impl AsRef<Path>,
    smoother: &Smoother<f32>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let config = serde_json::to_value(smoother.config())
        .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    write_container(
        path,
        "smoother",
        config,
        smoother.optimizer().config(),
        &collect_tensors(smoother.params(), smoother.optimizer()),
    )
}

pub fn read_smoother_checkpoint(path: impl AsRef<Path>) -> Result<Smoother<f32>, IoError> {
    let path = path.as_ref();
    let (header, tensors) = read_container(path, "smoother")?;
    let config: SmootherConfig =
        serde_json::from_value(header.config.clone()).map_err(|e| IoError::CorruptHeader {
            path: path.into(),
            message: format!("bad smoother config: {e}"),
        })?;
    let (params, grad_sq, update_sq) = split_tensors(path, &header, tensors)?;
    let mut optimizer = AdadeltaState::new(&params, header.optimizer);
    optimizer.restore(grad_sq, update_sq);
    Smoother::from_parts(config, params, optimizer).map_err(|e| IoError::Invalid {
        path: path.into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Bbox;
    use crate::lstm::build_smoother;
    use crate::network::{build_network, NetworkConfig};

    #[test]
    fn autoencoder_checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = NetworkConfig::paper(1, 26)
            .unwrap()
            .with_max_channels(2)
            .with_fc_widths(8, 8)
            .with_seed(5);
        let model: Autoencoder<f32> = build_network(config).unwrap();
        write_autoencoder_checkpoint(&path, &model).unwrap();
        let back = read_autoencoder_checkpoint(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params().value_digest(), model.params().value_digest());
    }

    #[test]
    fn smoother_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let config = SmootherConfig {
            layers: 2,
            cells: 8,
            lookback: 5,
            vector_width: 6,
            norm_bbox: Bbox::new([-1.0; 3], [1.0; 3]),
            seed: 3,
        };
        let smoother: Smoother<f32> = build_smoother(config).unwrap();
        write_smoother_checkpoint(&path, &smoother).unwrap();
        let back = read_smoother_checkpoint(&path).unwrap();
        assert_eq!(back.config(), smoother.config());
        assert_eq!(
            back.params().value_digest(),
            smoother.params().value_digest()
        );
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = NetworkConfig::paper(1, 26)
            .unwrap()
            .with_max_channels(2)
            .with_fc_widths(8, 8);
        let model: Autoencoder<f32> = build_network(config).unwrap();
        write_autoencoder_checkpoint(&path, &model).unwrap();
        assert!(matches!(
            read_smoother_checkpoint(&path),
            Err(IoError::CorruptHeader { .. })
        ));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = NetworkConfig::paper(1, 26)
            .unwrap()
            .with_max_channels(2)
            .with_fc_widths(8, 8);
        let model: Autoencoder<f32> = build_network(config).unwrap();
        write_autoencoder_checkpoint(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_autoencoder_checkpoint(&path),
            Err(IoError::TruncatedData { .. })
        ));
    }
}
