//! Binary checkpoints: magic `DSDE`, version 1, little-endian payloads.
//!
//! Values are stored as 32-bit floats. Together with single-precision
//! rounding inside the optimizer this makes save/load/resume produce
//! bit-identical training trajectories.

use std::fs;
use std::path::Path;

use crate::decsde::TransformKind;
use crate::kernel::{ParamSet, Rng, Tensor};
use crate::nmt::{ModelConfig, TieMode};

use super::adam::OptimizerState;
use super::TrainError;

const MAGIC: &[u8; 4] = b"DSDE";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: Vec::with_capacity(1 << 16),
        }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u8(t.rank() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f32(v as f32);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Corrupt("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, TrainError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TrainError::Corrupt("bad utf-8 string".into()))
    }
    fn tensor(&mut self) -> Result<Tensor, TrainError> {
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f32()? as f64);
        }
        Tensor::from_vec(&shape, data)
            .map_err(|e| TrainError::Corrupt(format!("bad tensor: {e}")))
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub languages: Vec<(String, TransformKind)>,
    pub params: Vec<(String, Tensor)>,
    pub opt_step: u64,
    pub opt_m: Vec<Tensor>,
    pub opt_v: Vec<Tensor>,
    pub rng_state: u64,
    pub epoch: usize,
    pub global_step: u64,
    pub best_dev_ppl: f64,
    pub params_version: u64,
    /// Named references to companion files (vocabularies, merges, n-grams).
    pub artifacts: Vec<(String, String)>,
}

fn write_model_config(w: &mut Writer, c: &ModelConfig) {
    w.u32(c.enc_layers as u32);
    w.u32(c.dec_layers as u32);
    w.u32(c.heads as u32);
    w.u32(c.dim as u32);
    w.u32(c.ffn_dim as u32);
    w.f64(c.dropout_p);
    w.str(c.embed_mode.as_str());
    w.str(c.tie_mode.as_str());
    w.u32(c.max_len as u32);
    w.u32(c.latent as u32);
}

fn read_model_config(r: &mut Reader) -> Result<ModelConfig, TrainError> {
    Ok(ModelConfig {
        enc_layers: r.u32()? as usize,
        dec_layers: r.u32()? as usize,
        heads: r.u32()? as usize,
        dim: r.u32()? as usize,
        ffn_dim: r.u32()? as usize,
        dropout_p: r.f64()?,
        embed_mode: crate::decsde::EmbedMode::parse(&r.str()?)
            .map_err(|e| TrainError::Corrupt(e.to_string()))?,
        tie_mode: TieMode::parse(&r.str()?).map_err(|e| TrainError::Corrupt(e.to_string()))?,
        max_len: r.u32()? as usize,
        latent: r.u32()? as usize,
    })
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        model_config: &ModelConfig,
        languages: &[(String, TransformKind)],
        params: &ParamSet,
        opt: &OptimizerState,
        rng: &Rng,
        epoch: usize,
        global_step: u64,
        best_dev_ppl: f64,
        artifacts: &[(String, String)],
    ) -> Self {
        Checkpoint {
            model_config: model_config.clone(),
            languages: languages.to_vec(),
            params: params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            opt_step: opt.step,
            opt_m: opt.m.clone(),
            opt_v: opt.v.clone(),
            rng_state: rng.state(),
            epoch,
            global_step,
            best_dev_ppl,
            params_version: params.version(),
            artifacts: artifacts.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        write_model_config(&mut w, &self.model_config);
        w.u32(self.languages.len() as u32);
        for (code, kind) in &self.languages {
            w.str(code);
            match kind {
                TransformKind::LowRank { rank } => {
                    w.u8(0);
                    w.u32(*rank as u32);
                }
                TransformKind::Full => {
                    w.u8(1);
                    w.u32(0);
                }
                TransformKind::None => {
                    w.u8(2);
                    w.u32(0);
                }
            }
        }
        w.u32(self.params.len() as u32);
        for (name, value) in &self.params {
            w.str(name);
            w.tensor(value);
        }
        w.u64(self.opt_step);
        for t in self.opt_m.iter().chain(self.opt_v.iter()) {
            w.tensor(t);
        }
        w.u64(self.rng_state);
        w.u64(self.epoch as u64);
        w.u64(self.global_step);
        w.f64(self.best_dev_ppl);
        w.u64(self.params_version);
        w.u32(self.artifacts.len() as u32);
        for (k, v) in &self.artifacts {
            w.str(k);
            w.str(v);
        }
        fs::write(path, &w.buf).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let buf =
            fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        let mut r = Reader::new(&buf);
        if r.take(4)? != MAGIC {
            return Err(TrainError::Corrupt("bad magic; not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Corrupt(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let model_config = read_model_config(&mut r)?;
        let n_langs = r.u32()? as usize;
        let mut languages = Vec::with_capacity(n_langs);
        for _ in 0..n_langs {
            let code = r.str()?;
            let tag = r.u8()?;
            let rank = r.u32()? as usize;
            let kind = match tag {
                0 => TransformKind::LowRank { rank },
                1 => TransformKind::Full,
                2 => TransformKind::None,
                other => {
                    return Err(TrainError::Corrupt(format!(
                        "unknown transform tag {other}"
                    )))
                }
            };
            languages.push((code, kind));
        }
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.str()?;
            let value = r.tensor()?;
            params.push((name, value));
        }
        let opt_step = r.u64()?;
        let mut opt_m = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            opt_m.push(r.tensor()?);
        }
        let mut opt_v = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            opt_v.push(r.tensor()?);
        }
        let rng_state = r.u64()?;
        let epoch = r.u64()? as usize;
        let global_step = r.u64()?;
        let best_dev_ppl = r.f64()?;
        let params_version = r.u64()?;
        let n_art = r.u32()? as usize;
        let mut artifacts = Vec::with_capacity(n_art);
        for _ in 0..n_art {
            let k = r.str()?;
            let v = r.str()?;
            artifacts.push((k, v));
        }
        Ok(Checkpoint {
            model_config,
            languages,
            params,
            opt_step,
            opt_m,
            opt_v,
            rng_state,
            epoch,
            global_step,
            best_dev_ppl,
            params_version,
            artifacts,
        })
    }

    /// Copies stored values into a freshly built model's parameters and
    /// optimizer. Names and shapes must match exactly.
    pub fn restore(
        &self,
        params: &mut ParamSet,
        opt: &mut OptimizerState,
    ) -> Result<Rng, TrainError> {
        if params.len() != self.params.len() {
            return Err(TrainError::Mismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, (name, value)) in self.params.iter().enumerate() {
            let id = params.ids().nth(i).unwrap();
            let p = params.get_mut(id);
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(TrainError::Mismatch(format!(
                    "parameter {i}: model has {:?}{:?}, checkpoint has {name:?}{:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
        opt.step = self.opt_step;
        opt.m = self.opt_m.clone();
        opt.v = self.opt_v.clone();
        while params.version() < self.params_version {
            params.bump_version();
        }
        Ok(Rng::from_state(self.rng_state))
    }
}
