//! Binary model checkpoints.
//!
//! Layout: magic `GNNP`, a one-byte architecture tag (0 = GCN, 1 = GAT),
//! a layer-dimension table (`num_layers`, `input_dim`, `hidden_dim`,
//! `num_classes`, then per layer `d_in`, `d_head`, `heads`), and the
//! parameter payloads as little-endian f64 in declaration order. Loading
//! cross-checks the table against the caller's [`ModelConfig`]; runtime
//! knobs (dropout, leaky slope) live in the config, not the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Arch, GatHead, GatLayer, GatParams, GcnLayer, GcnParams, Model, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GNNP";

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        let cfg = self.config();
        w.write_all(&[match cfg.arch {
            Arch::Gcn => 0u8,
            Arch::Gat => 1u8,
        }])?;
        for dim in [cfg.num_layers, self.input_dim(), cfg.hidden_dim, cfg.num_classes] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let dims = cfg.layer_dims(self.input_dim());
        for (l, &(d_in, d_out)) in dims.iter().enumerate() {
            let (d_head, heads) = match cfg.arch {
                Arch::Gcn => (d_out, 1),
                Arch::Gat => (cfg.head_dim(l), cfg.heads.as_ref().expect("gat")[l]),
            };
            for v in [d_in, d_head, heads] {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
        }
        for p in self.params_flat() {
            for &v in p.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads parameters saved by [`Model::save`], verifying that the file's
    /// architecture and dimension table match `cfg`.
    pub fn load(path: &Path, cfg: &super::ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: not a model checkpoint", path.display())));
        }
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag, path, "architecture tag")?;
        let arch = match tag[0] {
            0 => Arch::Gcn,
            1 => Arch::Gat,
            t => {
                return Err(Error::Format(format!(
                    "{}: unknown architecture tag {t}",
                    path.display()
                )))
            }
        };
        if arch != cfg.arch {
            return Err(Error::Config(format!(
                "checkpoint holds {arch:?} parameters but the config says {:?}",
                cfg.arch
            )));
        }
        let num_layers = read_u64(&mut r, path, "num_layers")? as usize;
        let input_dim = read_u64(&mut r, path, "input_dim")? as usize;
        let hidden_dim = read_u64(&mut r, path, "hidden_dim")? as usize;
        let num_classes = read_u64(&mut r, path, "num_classes")? as usize;
        if num_layers != cfg.num_layers
            || hidden_dim != cfg.hidden_dim
            || num_classes != cfg.num_classes
        {
            return Err(Error::Config(format!(
                "checkpoint dimensions (layers {num_layers}, hidden {hidden_dim}, classes {num_classes}) \
                 do not match the config ({}, {}, {})",
                cfg.num_layers, cfg.hidden_dim, cfg.num_classes
            )));
        }
        let expected_dims = cfg.layer_dims(input_dim);
        let mut table = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let d_in = read_u64(&mut r, path, "layer d_in")? as usize;
            let d_head = read_u64(&mut r, path, "layer d_head")? as usize;
            let heads = read_u64(&mut r, path, "layer heads")? as usize;
            let (want_head, want_heads) = match cfg.arch {
                Arch::Gcn => (expected_dims[l].1, 1),
                Arch::Gat => (cfg.head_dim(l), cfg.heads.as_ref().expect("gat")[l]),
            };
            if d_in != expected_dims[l].0 || d_head != want_head || heads != want_heads {
                return Err(Error::Config(format!(
                    "layer {l} table ({d_in}, {d_head}, {heads}) does not match the config \
                     ({}, {want_head}, {want_heads})",
                    expected_dims[l].0
                )));
            }
            table.push((d_in, d_head, heads));
        }

        let params = match cfg.arch {
            Arch::Gcn => ModelParams::Gcn(GcnParams {
                layers: table
                    .iter()
                    .map(|&(d_in, d_out, _)| {
                        Ok(GcnLayer {
                            weight: read_matrix(&mut r, path, d_in, d_out)?,
                            bias: read_matrix(&mut r, path, 1, d_out)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            }),
            Arch::Gat => ModelParams::Gat(GatParams {
                layers: table
                    .iter()
                    .enumerate()
                    .map(|(l, &(d_in, d_head, heads))| {
                        let head_params = (0..heads)
                            .map(|_| {
                                Ok(GatHead {
                                    weight: read_matrix(&mut r, path, d_in, d_head)?,
                                    a_src: read_matrix(&mut r, path, d_head, 1)?,
                                    a_dst: read_matrix(&mut r, path, d_head, 1)?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let bias_cols = if l + 1 == num_layers { d_head } else { d_head * heads };
                        Ok(GatLayer {
                            heads: head_params,
                            bias: read_matrix(&mut r, path, 1, bias_cols)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            }),
        };

        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format(format!(
                "{}: trailing bytes after the parameter payload",
                path.display()
            )));
        }
        Model::new(cfg.clone(), input_dim, params)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("{}: truncated {what}: {e}", path.display())))
}

fn read_u64(r: &mut impl Read, path: &Path, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path, what)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_matrix(r: &mut impl Read, path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    read_exact(r, &mut buf, path, "parameter payload")?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{}: non-finite parameter value", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Format(format!("{}: bad parameter shape: {e}", path.display())))
}
