//! Model checkpoints.
//!
//! Layout, all integers little-endian `u32`: magic `BAAF`, version, tensor
//! count, then per tensor the name length, UTF-8 name, rank, extents and
//! `f32` values. A trailing block (length + UTF-8 text) carries the model
//! configuration so a checkpoint is self-describing.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::{model_from_text, model_to_text};
use crate::model::{Model, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BAAF";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_string<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))
}

fn put_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(model: &Model, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, model.params().len() as u32)?;
    for (name, p) in model.params().iter() {
        put_string(w, name)?;
        put_u32(w, p.tensor.rank() as u32)?;
        for &e in p.tensor.shape() {
            put_u32(w, e as u32)?;
        }
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    put_string(w, &model_to_text(model.config()))?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the model it describes.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("missing BAAF magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Incompatible { found: version, expected: VERSION });
    }
    let count = get_u32(r)? as usize;
    let mut tensors = ParamStore::new();
    for _ in 0..count {
        let name = get_string(r)?;
        let rank = get_u32(r)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| get_u32(r).map(|e| e as usize)).collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| get_u32(r).map(f32::from_bits)).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        tensors.insert(name, t, true);
    }
    let config = model_from_text(&get_string(r)?)?;
    let mut model = Model::new(config, 0)?;
    model.params_mut().load_values(&tensors)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(&mut BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::model::{Level, ModelConfig, Variant};
    use crate::train::{prepare_samples, train, TrainConfig};

    fn trained() -> Model {
        let cfg = ModelConfig {
            levels: vec![Level { divisor: 4, dim: 8 }, Level { divisor: 16, dim: 16 }],
            k: 6,
            head_dims: vec![16, 8],
            num_classes: 4,
            aug_loss_weights: vec![0.1, 0.3],
            variant: Variant { knn_dilation: 2, ..Variant::default() },
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg, 4).unwrap();
        let cloud = gen_synthetic(&SyntheticSpec { points: 256, num_classes: 4, ..SyntheticSpec::default() }).unwrap();
        let tc = TrainConfig { epochs: 1, crop_size: 128, crops_per_cloud: 2, ..TrainConfig::default() };
        let samples = prepare_samples(&model, &[cloud], &tc).unwrap();
        train(&mut model, &samples, &tc, &mut |_| Ok(())).unwrap();
        model
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = trained();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params().len(), model.params().len());
        for (name, p) in model.params().iter() {
            let q = back.params().get(name).unwrap();
            assert_eq!(q.trainable, p.trainable, "{name}");
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&q.tensor), bits(&p.tensor), "{name}");
        }
        let cloud = gen_synthetic(&SyntheticSpec { points: 200, num_classes: 4, seed: 9, ..SyntheticSpec::default() }).unwrap();
        let input = cloud.input_features(6).unwrap();
        let a = model.predict(&model.geometry(&cloud.positions).unwrap(), &input).unwrap();
        let b = back.predict(&back.geometry(&cloud.positions).unwrap(), &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().config(), model.config());
    }

    #[test]
    fn rejects_foreign_or_damaged_files() {
        let model = trained();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();

        let mut newer = buf.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&mut newer.as_slice()), Err(Error::Incompatible { found: 2, expected: 1 })));

        let mut foreign = buf.clone();
        foreign[0] = b'X';
        assert!(matches!(read_checkpoint(&mut foreign.as_slice()), Err(Error::Format(_))));

        let cut = &buf[..buf.len() / 2];
        assert!(matches!(read_checkpoint(&mut &cut[..]), Err(Error::Format(_))));
    }
}
