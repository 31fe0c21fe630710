//! Versioned binary checkpoint container: named f64 tensors (with optimizer
//! moments), named byte blobs (vocabulary, labels), and a JSON config
//! describing the run. Round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamTensor;

const MAGIC: &[u8; 4] = b"DMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<ParamTensor>,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value) -> Self {
        Checkpoint {
            config,
            tensors: Vec::new(),
            blobs: BTreeMap::new(),
        }
    }

    pub fn add_tensor(&mut self, t: ParamTensor) {
        self.tensors.push(t);
    }

    pub fn tensor(&self, name: &str) -> Result<&ParamTensor> {
        self.tensors
            .iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor \"{name}\"")))
    }

    pub fn add_blob(&mut self, name: &str, data: Vec<u8>) {
        self.blobs.insert(name.to_string(), data);
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .get(name)
            .map(|b| b.as_slice())
            .ok_or_else(|| Error::Data(format!("checkpoint has no blob \"{name}\"")))
    }

    pub fn blob_str(&self, name: &str) -> Result<&str> {
        std::str::from_utf8(self.blob(name)?)
            .map_err(|_| Error::Data(format!("checkpoint blob \"{name}\" is not UTF-8")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e: std::io::Error| Error::io(path, e);

        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        write_bytes(&mut w, &config).map_err(io)?;

        w.write_all(&(self.tensors.len() as u64).to_le_bytes()).map_err(io)?;
        for t in &self.tensors {
            write_bytes(&mut w, t.name().as_bytes()).map_err(io)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            write_f64s(&mut w, t.values()).map_err(io)?;
            let (m, v) = t.moments();
            write_f64s(&mut w, m).map_err(io)?;
            write_f64s(&mut w, v).map_err(io)?;
        }

        w.write_all(&(self.blobs.len() as u64).to_le_bytes()).map_err(io)?;
        for (name, data) in &self.blobs {
            write_bytes(&mut w, name.as_bytes()).map_err(io)?;
            write_bytes(&mut w, data).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut r = BufReader::new(file);
        let io = |e: std::io::Error| Error::io(path, e);
        let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let config_bytes = read_bytes(&mut r).map_err(io)?;
        let config: serde_json::Value = serde_json::from_slice(&config_bytes)
            .map_err(|e| bad(&format!("invalid config JSON: {e}")))?;

        let n_tensors = read_u64(&mut r).map_err(io)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = String::from_utf8(read_bytes(&mut r).map_err(io)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = read_u32(&mut r).map_err(io)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r).map_err(io)? as usize);
            }
            let values = read_f64s(&mut r).map_err(io)?;
            let m = read_f64s(&mut r).map_err(io)?;
            let v = read_f64s(&mut r).map_err(io)?;
            let mut t = ParamTensor::from_values(&name, &shape, values)?;
            t.set_moments(m, v)?;
            tensors.push(t);
        }

        let n_blobs = read_u64(&mut r).map_err(io)? as usize;
        let mut blobs = BTreeMap::new();
        for _ in 0..n_blobs {
            let name = String::from_utf8(read_bytes(&mut r).map_err(io)?)
                .map_err(|_| bad("blob name is not UTF-8"))?;
            let data = read_bytes(&mut r).map_err(io)?;
            blobs.insert(name, data);
        }

        Ok(Checkpoint {
            config,
            tensors,
            blobs,
        })
    }
}

fn write_bytes(w: &mut impl Write, data: &[u8]) -> std::io::Result<()> {
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(data)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for &x in values {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_bytes(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut data = vec![0u8; len];
    r.read_exact(&mut data)?;
    Ok(data)
}

fn read_f64s(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ck = Checkpoint::new(serde_json::json!({"lr": 1e-3, "mode": "s+i"}));
        let mut t = ParamTensor::zeros("layer.w", &[3, 4]);
        for v in t.values_mut() {
            *v = rng.gen_range(-1.0..1.0) * 1e-7; // awkward magnitudes on purpose
        }
        t.grad_mut()[0] = 123.0; // grads are transient and must not round-trip
        ck.add_tensor(t.clone());
        ck.add_blob("vocab", b"<pad>\t0\n".to_vec());

        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        let back = Checkpoint::load(f.path()).unwrap();

        assert_eq!(back.config["mode"], "s+i");
        let rt = back.tensor("layer.w").unwrap();
        assert_eq!(rt.shape(), &[3, 4]);
        for (a, b) in rt.values().iter().zip(t.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(rt.grad().iter().all(|g| *g == 0.0));
        assert_eq!(back.blob_str("vocab").unwrap(), "<pad>\t0\n");

        // byte-identical on re-save
        let f2 = tempfile::NamedTempFile::new().unwrap();
        back.save(f2.path()).unwrap();
        assert_eq!(
            std::fs::read(f.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );
    }

    #[test]
    fn rejects_garbage_and_missing_files() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(f.path()).is_err());
        let err = Checkpoint::load("/nonexistent/model.ckpt").unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
